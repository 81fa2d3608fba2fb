"""One-bit quantized AWGN channel autoencoder with two-step training.

Dimension chain for a subblock of ``N`` rail values::

    s (N) -> W_e1 + ReLU (GN) -> power normalize -> RRC at T/G -> AWGN
      -> matched filter -> sign (GN) -> W_e2 (GN) -> sign = l1 (GN)
      -> 3 x [dense KN + batch norm + ReLU] -> dense N (linear) = s_hat

Consecutive precoder outputs form complex samples ``(x[2k], x[2k+1]) = (I, Q)``;
each subblock is sent as its own burst.

Training follows the two-step policy:

1. a frozen random map ``theta1`` produces ``l1 = sign(phi1(theta1 s) + n1)``
   and the decoder is fitted to recover ``s`` from ``l1``; the final
   ``(l0, l1, n1)`` triples are stored;
2. ``W_e1`` and ``W_e2`` are fitted through the physical chain so that the
   pre-quantization output of ``W_e2`` regresses onto the stored ``l1``.
   The in-chain sign is crossed with a straight-through estimator.

Rail values: QPSK uses ``s = 1 - 2 b``.  16-QAM uses the rail levels of
:func:`onebit_codec.rf.bits_to_rails` scaled to unit power, ``{+-1, +-3}/sqrt 5``,
each carrying a (sign, amplitude) bit pair.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .rf import ModulationSpec, PulseSpec, SnrSpec, chain_matrices
from .turbo import rail_llrs_gaussian

SIGMA_FLOOR = 1e-9
MIN_CALIBRATION_SAMPLES = 1000


class UntrainedModelError(RuntimeError):
    pass


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AeConfig:
    subblock: int = 64
    oversampling: int = 4
    width_factor: int = 20
    alpha: float = 1.0
    train_snr_db: float = 4.0
    code_rate: float = 1.0 / 3.0
    modulation: str = "qpsk"
    epochs_step1: int = 30
    epochs_step2: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    store_size: int = 2048
    step1_activation: str = "linear"
    ste: str = "clipped"
    span_symbols: int = 16
    seed: int = 0

    def __post_init__(self):
        mod = ModulationSpec(self.modulation)
        if not self.width_factor > self.oversampling >= 1:
            raise ValueError("need K > G >= 1")
        if self.subblock % mod.bits_per_symbol or self.subblock % 2:
            raise ValueError(f"subblock {self.subblock} not divisible by {mod.bits_per_symbol}")
        if self.step1_activation not in ("linear", "relu"):
            raise ValueError("step-1 activation must be 'linear' or 'relu'")
        if self.ste not in ("identity", "clipped"):
            raise ValueError("ste must be 'identity' or 'clipped'")
        for name in ("epochs_step1", "epochs_step2", "batch_size", "store_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def mod(self):
        return ModulationSpec(self.modulation)

    @property
    def tx_dim(self):
        return self.oversampling * self.subblock

    @property
    def hidden(self):
        return self.width_factor * self.subblock

    @property
    def bits_per_block(self):
        return self.subblock * self.mod.bits_per_rail

    @property
    def pulse(self):
        return PulseSpec(self.alpha, self.span_symbols, self.oversampling)

    def snr(self, ebn0_db=None):
        e = self.train_snr_db if ebn0_db is None else ebn0_db
        return SnrSpec(e, self.code_rate, self.mod.bits_per_symbol)

    def to_dict(self):
        return asdict(self)


# ----------------------------------------------------------------------------
# rail values
# ----------------------------------------------------------------------------


def rail_levels(mod):
    """AE input levels indexed like :attr:`ModulationSpec.rail_levels`, unit mean power."""
    return mod.rail_levels * math.sqrt(2.0)


def bits_to_input(bits, config):
    """Coded bits -> AE input blocks of shape ``(blocks, N)``."""
    mod = config.mod
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    if bits.size % config.bits_per_block:
        raise ValueError(f"bit count {bits.size} not a multiple of {config.bits_per_block}")
    levels = rail_levels(mod)
    if mod.bits_per_rail == 1:
        idx = bits
    else:
        pairs = bits.reshape(-1, 2)
        idx = 2 * pairs[:, 0] + pairs[:, 1]
    return levels[idx].reshape(-1, config.subblock)


def random_input(rng, blocks, config):
    bits = rng.integers(0, 2, blocks * config.bits_per_block)
    return bits_to_input(bits, config)


# ----------------------------------------------------------------------------
# model
# ----------------------------------------------------------------------------


@dataclass
class TrainingPairStore:
    """``(l0, l1, n1)`` triples captured in the final step-1 epoch."""

    l0: np.ndarray
    l1: np.ndarray
    n1: np.ndarray

    def __post_init__(self):
        if len(self.l0) != len(self.l1) or len(self.l1) != len(self.n1):
            raise ValueError("one l1 and one noise realization per l0")
        if not np.all(np.abs(self.l1) == 1.0):
            raise ValueError("stored l1 values must be +-1")

    def __len__(self):
        return len(self.l0)


@dataclass
class AeModel:
    config: AeConfig
    theta1: np.ndarray
    bias1: np.ndarray
    encoder1: nn.Network
    encoder2: nn.Network
    decoder: nn.Network
    history: dict = field(default_factory=lambda: {"step1": [], "step2": []})
    trained: bool = False

    def step1_map(self, s, n1):
        z = s @ self.theta1.T + self.bias1
        if self.config.step1_activation == "relu":
            z = np.maximum(z, 0.0)
        return nn.sign(z + n1)

    def to_bytes(self):
        meta = {"config": self.config.to_dict(), "history": self.history, "trained": self.trained}
        step1 = nn.Network([nn.Dense(self.config.subblock, self.config.tx_dim, rng=0)])
        step1.layers[0].W[...] = self.theta1
        step1.layers[0].b[...] = self.bias1[:, None]
        return nn.dump_networks({"theta1": step1, "encoder1": self.encoder1,
                                 "encoder2": self.encoder2, "decoder": self.decoder}, meta)

    @classmethod
    def from_bytes(cls, blob):
        nets, meta = nn.load_networks(blob)
        t1 = nets["theta1"].layers[0]
        return cls(AeConfig(**meta["config"]), t1.W.copy(), t1.b[:, 0].copy(), nets["encoder1"],
                   nets["encoder2"], nets["decoder"], meta["history"], meta["trained"])


def build_model(config):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    n, gn, kn = config.subblock, config.tx_dim, config.hidden
    theta1 = nn.init_gaussian((gn, n), 1.0 / math.sqrt(n), rng)
    bias1 = np.zeros(gn)
    enc1 = nn.Network([nn.Dense(n, gn, "relu", rng=rng)])
    enc1.layers[0].W[...] = theta1
    enc2 = nn.Network([nn.Dense(gn, gn, "linear", rng=rng)])
    enc2.layers[0].W[...] = np.eye(gn)
    dec = nn.Network([
        nn.Dense(gn, kn, "relu", batch_norm=True, rng=rng),
        nn.Dense(kn, kn, "relu", batch_norm=True, rng=rng),
        nn.Dense(kn, kn, "relu", batch_norm=True, rng=rng),
        nn.Dense(kn, n, "linear", rng=rng),
    ])
    return AeModel(config, theta1, bias1, enc1, enc2, dec)


# ----------------------------------------------------------------------------
# differentiable physical chain
# ----------------------------------------------------------------------------


class PhysicalChain:
    """Batched, matrix-form RF chain for one burst of ``GN/2`` complex samples."""

    def __init__(self, config):
        self.config = config
        self.n = config.tx_dim // 2
        self.H, self.F = chain_matrices(config.pulse, self.n)

    @staticmethod
    def normalize(x):
        """Unit mean complex power per row; returns ``(xn, scale)``."""
        scale = np.sqrt(2.0 * np.mean(x * x, axis=1, keepdims=True))
        if np.any(scale == 0):
            raise ValueError("cannot normalize an all-zero precoder output")
        return x / scale, scale

    @staticmethod
    def normalize_backward(dxn, xn, scale):
        m = xn.shape[1]
        return (dxn - (2.0 / m) * np.sum(dxn * xn, axis=1, keepdims=True) * xn) / scale

    def energy_per_period(self, xn):
        """Mean transmitted waveform energy per symbol period (``x^T H x`` per rail)."""
        e = np.einsum("bi,ij,bj->", xn[:, 0::2], self.H, xn[:, 0::2])
        e += np.einsum("bi,ij,bj->", xn[:, 1::2], self.H, xn[:, 1::2])
        periods = xn.shape[0] * self.n / self.config.oversampling
        return e / periods

    def noise(self, rng, batch, n0):
        w = rng.standard_normal((2, batch, self.F.shape[1]))
        out = np.empty((batch, 2 * self.n))
        std = math.sqrt(n0 / 2.0)
        out[:, 0::2] = std * (w[0] @ self.F.T)
        out[:, 1::2] = std * (w[1] @ self.F.T)
        return out

    def received(self, xn, noise):
        y = np.empty_like(xn)
        y[:, 0::2] = xn[:, 0::2] @ self.H.T
        y[:, 1::2] = xn[:, 1::2] @ self.H.T
        return y + noise

    def received_backward(self, dy):
        dx = np.empty_like(dy)
        dx[:, 0::2] = dy[:, 0::2] @ self.H
        dx[:, 1::2] = dy[:, 1::2] @ self.H
        return dx

    def n0(self, xn, snr):
        return self.energy_per_period(xn) / snr.esn0


def precode(model, s):
    """Precoder output and its power-normalized version."""
    x, cache = model.encoder1.forward(s, mode="eval")
    xn, scale = PhysicalChain.normalize(x)
    return x, xn, scale, cache


def ae_encode(model, s):
    """Power-normalized transmit samples ``(blocks, GN)`` in ``(I, Q)`` pair order."""
    _require_trained(model)
    s = nn.as_tensor(s, cols=model.config.subblock, name="AE input")
    return precode(model, s)[1]


def ae_channel(model, xn, rng, snr=None, n0=None, chain=None):
    """One-bit receiver samples for transmit blocks ``xn``; returns ``(r, n0)``."""
    chain = chain or PhysicalChain(model.config)
    if n0 is None:
        n0 = chain.n0(xn, snr) if snr is not None else 0.0
    rng = np.random.default_rng(rng)
    noise = chain.noise(rng, len(xn), n0) if n0 > 0 else 0.0
    return nn.sign(chain.received(xn, noise)), n0


def ae_decode(model, r):
    """Soft estimates ``s_hat`` (blocks, N) from one-bit receiver samples."""
    _require_trained(model)
    r = nn.as_tensor(r, cols=model.config.tx_dim, name="one-bit samples")
    l1 = nn.sign(model.encoder2.predict(r))
    return model.decoder.predict(l1)


def _require_trained(model):
    if not model.trained:
        raise UntrainedModelError("model has not completed two-step training")


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------


def _check_finite(loss, step, epoch):
    if not math.isfinite(loss):
        raise DivergenceError(f"{step} loss became non-finite at epoch {epoch}")


@contextlib.contextmanager
def _diverges_as(step, epoch):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            yield
    except nn.NonFiniteError as exc:
        raise DivergenceError(f"{step} training diverged at epoch {epoch}: {exc}") from exc


def step1_noise_std(config):
    """Per-unit std of ``n1``: unit-power units at per-rail SNR ``Es/N0``."""
    return 1.0 / math.sqrt(config.snr().esn0)


def train_decoder_step1(config, seed=None, model=None, log=None):
    """Fit the decoder behind a frozen random encoder; returns ``(model, store)``."""
    seed = config.seed if seed is None else seed
    model = model or build_model(config)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    opt = nn.Optimizer(nn.OptimizerConfig("adam", config.learning_rate))
    sigma = step1_noise_std(config)
    l1_all = np.empty((config.store_size, config.tx_dim))
    n1_all = np.empty_like(l1_all)
    for epoch in range(config.epochs_step1):
        # fresh blocks every epoch; a fixed set is memorized by the wide decoder
        data = random_input(rng, config.store_size, config)
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), config.batch_size):
            idx = order[start:start + config.batch_size]
            s = data[idx]
            n1 = sigma * rng.standard_normal((len(idx), config.tx_dim))
            l1 = model.step1_map(s, n1)
            with _diverges_as("step-1", epoch):
                out, cache = model.decoder.forward(l1)
                loss = nn.loss_mse(out, s)
                grads, _ = model.decoder.backward(cache, nn.mse_grad(out, s))
                opt.step_network(model.decoder, grads)
            total += loss * len(idx)
            if epoch == config.epochs_step1 - 1:
                l1_all[idx], n1_all[idx] = l1, n1
        mean = total / len(data)
        _check_finite(mean, "step-1", epoch)
        model.history["step1"].append(mean)
        if log:
            log(f"step1 epoch {epoch + 1}: mse {mean:.5f}")
    return model, TrainingPairStore(data.copy(), l1_all, n1_all)


def encoder_loss_and_grads(model, chain, s, target, noise):
    """Step-2 MSE and encoder gradients for one batch with a given channel noise."""
    cfg = model.config
    x, c1 = model.encoder1.forward(s, mode="train")
    xn, scale = chain.normalize(x)
    y = chain.received(xn, noise)
    r = nn.sign(y)
    out, c2 = model.encoder2.forward(r, mode="train")
    loss = nn.loss_mse(out, target)
    g2, dr = model.encoder2.backward(c2, nn.mse_grad(out, target))
    dy = dr if cfg.ste == "identity" else dr * (np.abs(y) <= 1.0)
    dxn = chain.received_backward(dy)
    dx = chain.normalize_backward(dxn, xn, scale)
    g1, _ = model.encoder1.backward(c1, dx)
    return loss, g1, g2


def train_encoder_step2(model, store, config=None, seed=None, log=None):
    """Fit ``W_e1`` and ``W_e2`` through the physical chain onto the stored ``l1``."""
    config = config or model.config
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    chain = PhysicalChain(config)
    snr = config.snr()
    xn0, _ = chain.normalize(model.encoder1.forward(store.l0, mode="eval")[0])
    opt1 = nn.Optimizer(nn.OptimizerConfig("adam", config.learning_rate))
    opt2 = nn.Optimizer(nn.OptimizerConfig("adam", config.learning_rate))
    for epoch in range(config.epochs_step2):
        order = rng.permutation(len(store))
        total = 0.0
        for start in range(0, len(store), config.batch_size):
            idx = order[start:start + config.batch_size]
            n0 = chain.n0(xn0[idx], snr)
            noise = chain.noise(rng, len(idx), n0)
            with _diverges_as("step-2", epoch):
                loss, g1, g2 = encoder_loss_and_grads(model, chain, store.l0[idx], store.l1[idx], noise)
                opt1.step_network(model.encoder1, g1)
                opt2.step_network(model.encoder2, g2)
            total += loss * len(idx)
        mean = total / len(store)
        _check_finite(mean, "step-2", epoch)
        model.history["step2"].append(mean)
        if log:
            log(f"step2 epoch {epoch + 1}: mse {mean:.5f}")
        with _diverges_as("step-2", epoch):
            xn0, _ = chain.normalize(model.encoder1.forward(store.l0, mode="eval")[0])
    model.trained = True
    return model


def train_two_step(config, log=None):
    model, store = train_decoder_step1(config, log=log)
    train_encoder_step2(model, store, log=log)
    return model, store


# ----------------------------------------------------------------------------
# inference helpers
# ----------------------------------------------------------------------------


def sparsity(model, s=None):
    """Fraction of precoder units that are exactly zero on ``s`` (default: all-ones block)."""
    if s is None:
        s = np.ones((1, model.config.subblock))
    x, _ = model.encoder1.forward(nn.as_tensor(s), mode="eval")
    return float(np.mean(x == 0.0))


def run_blocks(model, s, snr, rng, n0=None):
    """Full inner link: encode, RF chain, one-bit receiver, decode.  Returns ``(s_hat, n0)``."""
    xn = ae_encode(model, s)
    r, n0 = ae_channel(model, xn, rng, snr=snr, n0=n0)
    return ae_decode(model, r), n0


@dataclass(frozen=True)
class Calibration:
    """Gaussian residual model ``s_hat = mu * s + N(0, sigma2)`` per position."""

    mu: np.ndarray
    sigma2: np.ndarray


def fit_gaussian_residual(s_hat, s, per_position=True):
    s_hat = np.asarray(s_hat, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if s_hat.size < MIN_CALIBRATION_SAMPLES:
        raise ValueError(f"need at least {MIN_CALIBRATION_SAMPLES} samples to calibrate")
    axis = 0 if per_position else None
    mu = np.sum(s_hat * s, axis=axis) / np.sum(s * s, axis=axis)
    resid = s_hat - mu * s
    sigma2 = np.maximum(np.mean(resid * resid, axis=axis), SIGMA_FLOOR)
    shape = s.shape[1:] if per_position else ()
    return Calibration(np.broadcast_to(mu, shape).copy(), np.broadcast_to(sigma2, shape).copy())


def calibrate_residual(model, snr, n_blocks, seed, per_position=True):
    """Fit the Gaussian residual model on fresh blocks at the operating SNR."""
    if n_blocks * model.config.subblock < MIN_CALIBRATION_SAMPLES:
        raise ValueError(f"need at least {MIN_CALIBRATION_SAMPLES} calibration samples")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    s = random_input(rng, n_blocks, model.config)
    s_hat, _ = run_blocks(model, s, snr, rng)
    return fit_gaussian_residual(s_hat, s, per_position)


def extract_llr(s_hat, calibration, mod=ModulationSpec("qpsk")):
    """Bit LLRs (positive means 0) from soft estimates, flattened in bit order."""
    s_hat = np.asarray(s_hat, dtype=np.float64)
    mu = np.broadcast_to(calibration.mu, s_hat.shape)
    sigma2 = np.broadcast_to(calibration.sigma2, s_hat.shape)
    if np.any(sigma2 <= 0):
        raise ValueError("residual variance must be positive")
    if mod.bits_per_rail == 1:
        return (2.0 * mu * s_hat / sigma2).reshape(-1)
    # divide out mu so the max-log demapper sees the nominal levels
    y = (s_hat / mu).reshape(-1)
    var = (sigma2 / (mu * mu)).reshape(-1, 1)
    return rail_llrs_gaussian(y, math.sqrt(2.0), var, mod).reshape(-1)
