"""Command line entry point: ``onebit-codec <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import autoencoder as ae
from . import capacity, harness, oracle, turbo

log = logging.getLogger("onebit_codec")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _experiment(args, **overrides):
    extra = {k: v for k, v in overrides.items() if v is not None}
    if args.seed is not None:
        extra["seed"] = args.seed
    if args.workers is not None:
        extra["workers"] = args.workers
    if args.out_dir is not None:
        extra["out_dir"] = args.out_dir
    return harness.load_config(args.config, args.scale, **extra)


def _out_dir(args, config=None):
    path = args.out_dir or (config.out_dir if config else "results")
    os.makedirs(path, exist_ok=True)
    return path


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_capacity(args):
    seed = args.seed or 0
    out = _out_dir(args)
    grid = np.arange(args.start, args.stop + 1e-9, args.step)
    points = capacity.capacity_curve(grid, samples=args.samples, seed=seed, convention=args.convention)
    path = os.path.join(out, "capacity.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ebn0_db", "gamma_db", "capacity_bits", "std_err"])
        for p in points:
            w.writerow([repr(round(p.ebn0_db, 12)), repr(p.gamma_db), repr(p.c_bits_per_use), repr(p.std_error)])
    thresholds = [dataclasses.asdict(capacity.min_snr_for_rate(r, samples=args.samples, seed=seed,
                                                                convention=args.convention))
                  for r in args.rates]
    _write_json(os.path.join(out, "min_snr.json"), {"samples": args.samples, "seed": seed,
                                                     "thresholds": thresholds})
    for t in thresholds:
        print(f"rate {t['rate']:.4f}: gamma_min {t['gamma_db']:.3f} dB, Eb/N0 {t['ebn0_db']:.3f} dB")
    return 0


def cmd_train(args):
    config = _experiment(args, modulation=args.modulation, oversampling=args.oversampling)
    out = _out_dir(args, config)
    acfg = config.ae_config()
    model, store = ae.train_two_step(acfg, log=log.info)
    ckpt = os.path.join(out, "model.ckpt")
    with open(ckpt, "wb") as fh:
        fh.write(model.to_bytes())
    rng = np.random.default_rng(np.random.SeedSequence([acfg.seed, 5]))
    payload = {
        "config": acfg.to_dict(),
        "step1_mse": model.history["step1"],
        "step2_mse": model.history["step2"],
        "sparsity_all_ones": ae.sparsity(model),
        "sparsity_random_inputs": ae.sparsity(model, ae.random_input(rng, 256, acfg)),
        "store_size": len(store),
    }
    _write_json(os.path.join(out, "train_log.json"), payload)
    print(f"step-2 mse {payload['step2_mse'][-1]:.4f}, sparsity {payload['sparsity_all_ones']:.3f}; wrote {ckpt}")
    return 0


def cmd_ber(args):
    config = _experiment(args, scheme=args.scheme, modulation=args.modulation)
    out = _out_dir(args, config)
    model = None
    if config.scheme == "proposed" and config.model_path:
        with open(config.model_path, "rb") as fh:
            model = ae.AeModel.from_bytes(fh.read())
    cache = harness.ModelCache(os.path.join(out, "cache"))
    started = harness.utc_now()

    def progress(r):
        print(f"{r.scheme} {r.modulation} {r.ebn0_db:6.2f} dB  ber {r.ber:.3e}  "
              f"[{r.ci_low:.2e}, {r.ci_high:.2e}]  {r.errors}/{r.bits}")

    records = harness.run_ber_sweep(config, cache=cache, model=model, progress=progress)
    stem = f"ber_{config.scheme}_{config.modulation}"
    harness.emit_outputs(records, config, out, stem=stem, started_utc=started)
    return 0


def cmd_oracle(args):
    out = _out_dir(args)
    seed = args.seed or 0
    if args.oracle_command == "ml-gap":
        code = oracle.TinyCode.random_gaussian(args.k, args.n, 10 ** (args.gamma_db / 10), seed)
        rep = oracle.theorem1_gap(code, seed=seed, steps=args.steps, eval_samples=args.eval_samples)
        payload = {"k": args.k, "n": args.n, "gamma_db": args.gamma_db, "seed": seed, **rep.to_dict()}
        _write_json(os.path.join(out, "oracle_ml_gap.json"), payload)
        print(f"ML error {rep.ml_error_prob:.5f}, trained {rep.trained_decoder_error:.5f}, "
              f"relative gap {rep.relative_gap:+.3%}")
    else:
        kern = oracle.arcsine_kernel_check(widths=args.kernel_widths, samples=args.samples, seed=seed)
        gp = oracle.gaussianity_test(widths=args.widths, draws=args.draws, seed=seed)
        payload = {"kernel": kern.to_dict(), "gaussianity": gp.to_dict()}
        _write_json(os.path.join(out, "oracle_gp.json"), json.loads(json.dumps(payload, default=str)))
        for w in gp.widths:
            print(f"width {w:5d}: excess kurtosis {gp.excess_kurtosis[w]:+.4f}, KS {gp.ks_statistic[w]:.4f}")
    return 0


def cmd_turbo_selftest(args):
    out = _out_dir(args)
    seed = args.seed or 0
    workers = args.workers or 1
    results = []
    ok = True
    for K in args.block_lengths:
        spec = turbo.TurboSpec(K)
        rng = np.random.default_rng(np.random.SeedSequence([seed, K]))
        info = rng.integers(0, 2, (args.blocks, K))
        coded = turbo.encode_many(info, spec)
        decoded = turbo.decode_many(10.0 * (1 - 2 * coded), spec, workers=workers)
        errors = int(np.sum(decoded != info))
        ok &= errors == 0
        results.append({"block_length": K, "blocks": args.blocks, "bit_errors": errors})
        print(f"K={K:5d}: {args.blocks} noiseless blocks, {errors} bit errors")
    _write_json(os.path.join(out, "turbo_selftest.json"), {"seed": seed, "results": results, "passed": bool(ok)})
    return 0 if ok else 1


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value experiment file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--workers", type=int, help="worker threads")
    scale = common.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="scale", action="store_const", const="desk",
                       help="desk-scale defaults (K=1024)")
    scale.add_argument("--paper-scale", dest="scale", action="store_const", const="paper",
                       help="paper-scale defaults (K=6144)")
    common.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    common.set_defaults(scale="desk")

    parser = argparse.ArgumentParser(prog="onebit-codec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", parents=[common], help="one-bit AWGN capacity curve and thresholds")
    p.add_argument("--start", type=float, default=-10.0, help="first Eb/N0 point, dB")
    p.add_argument("--stop", type=float, default=30.0, help="last Eb/N0 point, dB")
    p.add_argument("--step", type=float, default=1.0, help="grid spacing, dB")
    p.add_argument("--samples", type=int, default=10**6, help="Monte Carlo samples")
    p.add_argument("--rates", type=_floats, default=[1 / 3, 1 / 2], help="comma-separated code rates for thresholds")
    p.add_argument("--convention", choices=sorted(capacity.EBN0_CONVENTIONS), default=capacity.DEFAULT_CONVENTION,
                   help="Eb/N0 axis convention")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("train", parents=[common], help="two-step autoencoder training")
    p.add_argument("--modulation", choices=["qpsk", "qam16"])
    p.add_argument("--oversampling", type=int, help="oversampling factor G")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ber", parents=[common], help="BER sweep for one scheme")
    p.add_argument("--scheme", choices=harness.SCHEMES)
    p.add_argument("--modulation", choices=["qpsk", "qam16"])
    p.set_defaults(func=cmd_ber)

    p = sub.add_parser("oracle", help="desk-scale ground-truth checks")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    q = osub.add_parser("ml-gap", parents=[common], help="trained one-hot decoder against exact ML")
    q.add_argument("--k", type=int, default=4, help="message bits")
    q.add_argument("--n", type=int, default=8, help="channel uses")
    q.add_argument("--gamma-db", type=float, default=6.0, help="transmit SNR, dB")
    q.add_argument("--steps", type=int, default=8000, help="decoder training steps")
    q.add_argument("--eval-samples", type=int, default=10**6, help="Monte Carlo evaluation blocks")
    q.set_defaults(func=cmd_oracle)
    q = osub.add_parser("gp", parents=[common], help="arcsine kernel and output Gaussianity")
    q.add_argument("--kernel-widths", type=_ints, default=[64, 1024], help="sign-layer widths for the kernel check")
    q.add_argument("--widths", type=_ints, default=[64, 128, 256, 512, 1024], help="widths for the Gaussianity test")
    q.add_argument("--samples", type=int, default=10**6, help="kernel samples per rho")
    q.add_argument("--draws", type=int, default=10**5, help="network draws per width")
    q.set_defaults(func=cmd_oracle)

    p = sub.add_parser("turbo-selftest", parents=[common], help="noiseless turbo round trip")
    p.add_argument("--block-lengths", type=_ints, default=[40, 1024, 6144], help="comma-separated K values")
    p.add_argument("--blocks", type=int, default=100, help="random blocks per K")
    p.set_defaults(func=cmd_turbo_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
