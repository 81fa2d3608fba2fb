"""Concatenated turbo + autoencoder link and BER sweeps.

The outer turbo code protects a block of ``K`` information bits.  For the
learned scheme the coded bits are zero-padded to a whole number of
autoencoder subblocks, every subblock passes through the same inner model,
and the soft estimates are turned into LLRs and handed back to the turbo
decoder in coded-bit order.  Two baselines send the turbo codeword straight
through the symbol-rate chain: an unquantized receiver with Gaussian LLRs
and a one-bit receiver with binary-symmetric LLRs.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import autoencoder as ae
from . import rf, turbo
from .oracle import wilson_interval

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "turbo_soft_unquantized", "turbo_hard_onebit")
CSV_HEADER = ["scheme", "modulation", "ebn0_db", "penalty_db", "bits", "errors", "ber", "ci_low", "ci_high", "seed"]
EARLY_STOP_CI = 1e-6
ROUND_BLOCKS = 8

SCALES = {
    "desk": {"block_length": 1024, "max_bits": 2 * 10**6},
    "paper": {"block_length": 6144, "max_bits": 2 * 10**8},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scheme: str = "proposed"
    modulation: str = "qpsk"
    block_length: int = 1024
    iterations: int = 5
    subblock: int = 64
    oversampling: int = 4
    alpha: float = 1.0
    width_factor: int = 20
    span_symbols: int = 16
    train_snr_db: float = 4.0
    per_point_models: bool = False
    epochs_step1: int = 30
    epochs_step2: int = 200
    store_size: int = 2048
    calibration_blocks: int = 200
    ebn0_grid: tuple = (-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    min_bit_errors: int = 200
    max_bits: int = 2 * 10**6
    seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    model_path: str = ""

    def __post_init__(self):
        self.ebn0_grid = tuple(float(e) for e in np.atleast_1d(self.ebn0_grid))
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.iterations not in (2, 5):
            raise ConfigError("turbo iterations must be 2 or 5")
        if not self.ebn0_grid or np.any(np.diff(self.ebn0_grid) <= 0):
            raise ConfigError("Eb/N0 grid must be non-empty and strictly increasing")
        if self.min_bit_errors < 1 or self.max_bits < self.block_length:
            raise ConfigError("need min_bit_errors >= 1 and max_bits >= one block")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        rf.ModulationSpec(self.modulation)
        turbo.TurboSpec(self.block_length)
        self.ae_config()

    @property
    def low_confidence(self):
        return self.min_bit_errors < 100

    @property
    def mod(self):
        return rf.ModulationSpec(self.modulation)

    @property
    def turbo_spec(self):
        return turbo.TurboSpec(self.block_length, iterations=self.iterations)

    def ae_config(self, train_snr_db=None):
        return ae.AeConfig(
            subblock=self.subblock, oversampling=self.oversampling, width_factor=self.width_factor,
            alpha=self.alpha, train_snr_db=self.train_snr_db if train_snr_db is None else train_snr_db,
            code_rate=self.turbo_spec.rate, modulation=self.modulation, epochs_step1=self.epochs_step1,
            epochs_step2=self.epochs_step2, store_size=self.store_size, span_symbols=self.span_symbols,
            seed=self.seed)

    def penalty_db(self):
        if self.scheme != "proposed":
            return 0.0
        return rf.snr_penalty_db(self.oversampling, self.alpha)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["ebn0_grid"] = list(self.ebn0_grid)
        return d

    def digest(self, *keys):
        blob = json.dumps({k: self.to_dict()[k] for k in keys} if keys else self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def scaled(cls, scale="desk", **overrides):
        if scale not in SCALES:
            raise ConfigError(f"unknown scale {scale!r}")
        return cls(**{**SCALES[scale], **overrides})


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment.  Returns a dict of typed values."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, fields[key].default, value)
    return out


def _coerce(key, default, value):
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(float(v) for v in value.replace(",", " ").split())
        if isinstance(default, int):
            return int(float(value)) if float(value).is_integer() else int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def load_config(path=None, scale="desk", **overrides):
    values = {}
    if path:
        with open(path) as fh:
            values = parse_config_text(fh.read())
    return ExperimentConfig.scaled(scale, **{**values, **overrides})


@dataclass
class BerRecord:
    scheme: str
    modulation: str
    ebn0_db: float
    penalty_db: float
    bits: int
    errors: int
    ber: float
    ci_low: float
    ci_high: float
    seed: int
    low_confidence: bool = False

    def __post_init__(self):
        if self.bits and not math.isclose(self.ber, self.errors / self.bits):
            raise ValueError("ber must equal errors / bits")

    @classmethod
    def from_counts(cls, scheme, modulation, ebn0_db, penalty_db, bits, errors, seed, low_confidence=False):
        lo, hi = wilson_interval(errors, bits)
        return cls(scheme, modulation, float(ebn0_db), float(penalty_db), int(bits), int(errors),
                   errors / bits if bits else 0.0, lo, hi, int(seed), low_confidence)

    def csv_row(self):
        return [getattr(self, name) for name in CSV_HEADER]


# ----------------------------------------------------------------------------
# concatenated link
# ----------------------------------------------------------------------------


@dataclass
class InnerLink:
    """A trained inner model plus the calibration for one operating SNR."""

    model: ae.AeModel
    calibration: ae.Calibration
    chain: ae.PhysicalChain = field(default=None, repr=False)

    def __post_init__(self):
        self.chain = self.chain or ae.PhysicalChain(self.model.config)


def subblock_count(config):
    """Subblocks per turbo codeword (the last one zero-padded)."""
    acfg = config.ae_config()
    return math.ceil(config.turbo_spec.coded_length / acfg.bits_per_block)


def pad_coded(bits, config):
    total = subblock_count(config) * config.ae_config().bits_per_block
    out = np.zeros(total, dtype=np.int64)
    out[: bits.size] = bits
    return out


def concat_encode(info, config, model):
    """Info bits -> power-normalized transmit blocks ``(subblocks, GN)``."""
    spec = config.turbo_spec
    info = np.asarray(info, dtype=np.int64)
    if info.size != spec.block_length:
        raise ValueError(f"expected {spec.block_length} info bits, got {info.size}")
    coded = turbo.turbo_encode(info, spec).bits
    s = ae.bits_to_input(pad_coded(coded, config), model.config)
    return ae.ae_encode(model, s)


def concat_decode(r, config, link):
    """One-bit samples of all subblocks -> decoded info bits and coded-bit LLRs."""
    spec = config.turbo_spec
    s_hat = ae.ae_decode(link.model, r)
    llr = ae.extract_llr(s_hat, link.calibration, link.model.config.mod)[: spec.coded_length]
    return turbo.maxlogmap_decode(llr, spec).bits, llr


def _proposed_block(config, link, snr, rng):
    info = rng.integers(0, 2, config.block_length)
    xn = concat_encode(info, config, link.model)
    r, _ = ae.ae_channel(link.model, xn, rng, snr=snr, chain=link.chain)
    bits, _ = concat_decode(r, config, link)
    return int(np.sum(bits != info))


def _baseline_block(config, snr, rng, hard):
    spec, mod = config.turbo_spec, config.mod
    info = rng.integers(0, 2, config.block_length)
    coded = turbo.turbo_encode(info, spec).bits
    s = rf.map_bits_to_symbols(coded, mod)
    pulse = rf.PulseSpec(config.alpha, config.span_symbols, 1)
    y, n0 = rf.pulse_chain(s.to_complex(), pulse, rng, snr=snr)
    y = rf.IqSignal.from_complex(y)
    if hard:
        llr = turbo.llr_from_hard(rf.one_bit_quantize(y), rf.sign_crossover(snr, mod), mod)
    else:
        llr = turbo.llr_from_soft(y, n0, mod)
    return int(np.sum(turbo.maxlogmap_decode(llr, spec).bits != info))


def block_rng(seed, point, block):
    return np.random.default_rng(np.random.SeedSequence([seed, 100 + point, block]))


# ----------------------------------------------------------------------------
# models and calibration
# ----------------------------------------------------------------------------


class ModelCache:
    """Trained inner models and calibrations, optionally persisted under a directory."""

    def __init__(self, directory=None):
        self.directory = directory
        self.models = {}
        self.calibrations = {}

    def _path(self, kind, key, ext):
        if not self.directory:
            return None
        os.makedirs(os.path.join(self.directory, kind), exist_ok=True)
        return os.path.join(self.directory, kind, f"{key}.{ext}")

    def model(self, acfg):
        key = hashlib.sha256(json.dumps(acfg.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
        if key in self.models:
            return self.models[key]
        path = self._path("models", key, "ckpt")
        if path and os.path.exists(path):
            with open(path, "rb") as fh:
                model = ae.AeModel.from_bytes(fh.read())
        else:
            log.info("training inner model at %.1f dB", acfg.train_snr_db)
            model, _ = ae.train_two_step(acfg)
            if path:
                with open(path, "wb") as fh:
                    fh.write(model.to_bytes())
        self.models[key] = model
        return model

    def calibration(self, model, ebn0_db, n_blocks, seed):
        ident = json.dumps([model.config.to_dict(), float(ebn0_db), n_blocks, seed], sort_keys=True)
        key = hashlib.sha256(ident.encode()).hexdigest()[:16]
        if key in self.calibrations:
            return self.calibrations[key]
        path = self._path("calibration", key, "npz")
        if path and os.path.exists(path):
            with np.load(path) as z:
                cal = ae.Calibration(z["mu"], z["sigma2"])
        else:
            cal = ae.calibrate_residual(model, model.config.snr(ebn0_db), n_blocks, seed)
            if path:
                np.savez(path, mu=cal.mu, sigma2=cal.sigma2)
        self.calibrations[key] = cal
        return cal


def inner_link(config, ebn0_db, cache=None, model=None):
    """Model and calibration for an operating Eb/N0 (after the penalty shift)."""
    cache = cache or ModelCache()
    if model is None:
        train_snr = ebn0_db if config.per_point_models else config.train_snr_db
        model = cache.model(config.ae_config(train_snr))
    cal = cache.calibration(model, ebn0_db, config.calibration_blocks, config.seed)
    return InnerLink(model, cal)


# ----------------------------------------------------------------------------
# sweep
# ----------------------------------------------------------------------------


def simulate_point(config, point, ebn0_db, link=None, pool=None):
    """Bit errors at one grid point under the stopping rule; returns a :class:`BerRecord`."""
    penalty = config.penalty_db()
    operating = ebn0_db - penalty
    snr = rf.SnrSpec(operating, config.turbo_spec.rate, config.mod.bits_per_symbol)

    def one(block):
        rng = block_rng(config.seed, point, block)
        if config.scheme == "proposed":
            return _proposed_block(config, link, snr, rng)
        return _baseline_block(config, snr, rng, config.scheme == "turbo_hard_onebit")

    K = config.block_length
    errors = bits = block = 0
    while bits < config.max_bits and errors < config.min_bit_errors:
        n = min(ROUND_BLOCKS, math.ceil((config.max_bits - bits) / K))
        idx = range(block, block + n)
        counts = list(pool.map(one, idx)) if pool else [one(b) for b in idx]
        errors += sum(counts)
        bits += n * K
        block += n
        if errors == 0 and wilson_interval(0, bits)[1] < EARLY_STOP_CI:
            break
    return BerRecord.from_counts(config.scheme, config.modulation, ebn0_db, penalty, bits, errors,
                                 config.seed, config.low_confidence)


def run_ber_sweep(config, cache=None, model=None, progress=None):
    records = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for point, ebn0 in enumerate(config.ebn0_grid):
            link = None
            if config.scheme == "proposed":
                link = inner_link(config, ebn0 - config.penalty_db(), cache, model)
            rec = simulate_point(config, point, ebn0, link, pool)
            records.append(rec)
            if progress:
                progress(rec)
    finally:
        if pool:
            pool.shutdown()
    return records


# ----------------------------------------------------------------------------
# outputs
# ----------------------------------------------------------------------------

PLOT_SCRIPT = '''"""Plot BER against Eb/N0 from a sweep CSV: python {name} results.csv [out.png]"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
dst = sys.argv[2] if len(sys.argv) > 2 else src.rsplit(".", 1)[0] + ".png"
curves = defaultdict(list)
with open(src) as fh:
    for row in csv.DictReader(fh):
        curves[(row["scheme"], row["modulation"])].append(
            (float(row["ebn0_db"]), float(row["ber"]), float(row["ci_low"]), float(row["ci_high"])))
fig, ax = plt.subplots(figsize=(6, 4.5))
for (scheme, mod), pts in sorted(curves.items()):
    pts.sort()
    x = [p[0] for p in pts]
    y = [max(p[1], 1e-9) for p in pts]
    lo = [max(p[1] - p[2], 0.0) for p in pts]
    hi = [p[3] - p[1] for p in pts]
    ax.errorbar(x, y, yerr=[lo, hi], marker="o", capsize=2, label=scheme + " " + mod)
ax.set_yscale("log")
ax.set_xlabel("Eb/N0 (dB)")
ax.set_ylabel("BER")
ax.grid(True, which="both", alpha=0.3)
if curves:
    ax.legend()
fig.tight_layout()
fig.savefig(dst)
'''


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected CSV header")
    return rows[1:]


def emit_outputs(records, config, out_dir=None, stem="ber", started_utc=None):
    """Write CSV, JSON and a plot script; returns the paths written."""
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{stem}.{ext}") for k, ext in
             (("csv", "csv"), ("json", "json"))}
    paths["plot"] = os.path.join(out_dir, f"plot_{stem}.py")
    write_csv(records, paths["csv"])
    payload = {
        "config": config.to_dict(),
        "records": [dataclasses.asdict(r) for r in records],
        "version": __version__,
        "started_utc": started_utc or utc_now(),
    }
    with open(paths["json"], "w") as fh:
        json.dump(payload, fh, indent=2)
    with open(paths["plot"], "w") as fh:
        fh.write(PLOT_SCRIPT.format(name=os.path.basename(paths["plot"]), csv=f"{stem}.csv"))
    return paths


def load_results(path):
    with open(path) as fh:
        payload = json.load(fh)
    config = ExperimentConfig(**payload["config"])
    records = [BerRecord(**r) for r in payload["records"]]
    return config, records, payload


def utc_now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
