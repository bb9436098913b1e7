"""Command-line interface.

Exit codes: 0 success, 1 hard error, 2 partial result (some layer skipped
because it was infeasible or failed).
"""
import argparse
import logging
import math
from pathlib import Path
import sys

import numpy as np

from . import io as lwio
from .calibration import (
    DEFAULT_BINS,
    PredictionSet,
    apply_temperature,
    bin_stats,
    ece,
    fit_temperature,
    reliability_data,
)
from .conv import FactorizedLayer, conv2d_forward, forward_sequence
from .cpd import AlsOptions
from .epc import EpcConfig
from .planner import CompressConfig, ModelManifest, compress_model

logger = logging.getLogger("lwck")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def sci4(value):
    """Four significant digits, compact exponent: 2.118e-2."""
    if value == 0:
        return "0.000e0"
    mant, exp = f"{value:.3e}".split("e")
    return f"{mant}e{int(exp)}"


def trunc4(value):
    """Truncate (not round) to four significant digits: 1.82994 -> 1.829."""
    if value <= 0 or not math.isfinite(value):
        return f"{value:.4g}"
    mag = math.floor(math.log10(value))
    decimals = max(0, 3 - mag)
    scale = 10.0 ** (3 - mag)
    truncated = math.floor(value * scale + 1e-9) / scale
    return f"{truncated:.{decimals}f}"


# -- compress -------------------------------------------------------------------


def cmd_compress(args):
    try:
        entries = lwio.read_manifest(args.manifest, strict=args.strict)
        weights = lwio.load_weights(entries)
        manifest = ModelManifest([spec for spec, _ in entries], weights)
    except (lwio.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    epc = None
    if not args.no_epc:
        epc = EpcConfig(delta=args.epc_delta, norm_threshold=args.epc_threshold)
    skip = ("*",) if args.skip and "*" in args.skip else tuple(args.skip or ())
    cfg = CompressConfig(
        rank_threshold=args.rank_threshold,
        epc=epc,
        als=AlsOptions(max_iters=args.max_iters, seed=args.seed),
        skip=skip,
        force=args.force,
        epc_relative=args.epc_relative,
        threads=args.threads,
    )
    plan, factorized = compress_model(manifest, cfg)

    out = Path(args.out)
    weight_paths = {}
    for layers in factorized.values():
        for layer in layers:
            path = out / "weights" / f"{layer.spec.name}.lwt"
            lwio.write_tensor(layer.weights, path)
            weight_paths[layer.spec.name] = path
    lwio.write_plan(plan, out / "plan.json", weight_paths)

    for rec in plan.records:
        detail = f"rank {rec.rank}, speedup {rec.speedup:.3f}" if rec.method != "skip" else rec.reason
        print(f"{rec.name}: {rec.method} ({detail})")
    t = plan.totals
    print(f"params {t['params_before']} -> {t['params_after']}, speedup {t['speedup']:.3f}")
    print(f"plan written to {out / 'plan.json'}")
    return EXIT_PARTIAL if any(r.infeasible for r in plan.records) else EXIT_OK


# -- speedup report ---------------------------------------------------------------


def format_speedup_report(plan):
    header = f"{'layer':<24}{'method':<10}{'GFLOPs':>12}  {'sub-layer':<10}{'GFLOPs':>12}{'speedup':>10}"
    lines = [header]
    if plan.records:
        lines.append("-" * len(header))
    for rec in plan.records:
        before = sci4(rec.flops_before / 1e9)
        subs = rec.sublayers or [{"flops": rec.flops_after}]
        for i, sub in enumerate(subs):
            label = f"layer {i}" if rec.sublayers else "-"
            lw = sci4(sub["flops"] / 1e9)
            if i == 0:
                lines.append(f"{rec.name:<24}{rec.method:<10}{before:>12}  {label:<10}{lw:>12}{trunc4(rec.speedup):>10}")
            else:
                lines.append(f"{'':<24}{'':<10}{'':>12}  {label:<10}{lw:>12}{'':>10}")
    if plan.records:
        t = plan.totals
        lines.append("-" * len(header))
        lines.append(
            f"{'total':<24}{'':<10}{sci4(t['flops_before'] / 1e9):>12}  {'':<10}"
            f"{sci4(t['flops_after'] / 1e9):>12}{trunc4(t['speedup']):>10}"
        )
    return "\n".join(lines)


def cmd_speedup_report(args):
    try:
        plan = lwio.read_plan(args.plan, strict=args.strict)
    except (lwio.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(format_speedup_report(plan))
    return EXIT_OK


# -- calibrate ----------------------------------------------------------------------


def cmd_calibrate(args):
    try:
        preds = lwio.read_predictions(args.predictions)
    except (lwio.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    bins = bin_stats(preds, args.bins)
    print(f"ECE: {100 * ece(bins):.2f}%")
    if args.out:
        lwio.write_reliability_csv(reliability_data(bins), args.out)
    if args.fit_temperature:
        try:
            t = fit_temperature(preds, t_min=args.t_min, t_max=args.t_max)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        scaled = PredictionSet(apply_temperature(preds.logits, t), preds.p, preds.logits)
        scaled_bins = bin_stats(scaled, args.bins)
        print(f"Temperature: {t:.4f}")
        print(f"ECE after scaling: {100 * ece(scaled_bins):.2f}%")
        if args.out:
            out = Path(args.out)
            lwio.write_reliability_csv(reliability_data(scaled_bins), out.with_name(out.stem + ".scaled.csv"))
    return EXIT_OK


# -- verify ---------------------------------------------------------------------------


def _load_sublayers(rec):
    layers = []
    for sub in rec.sublayers:
        if "weights" not in sub:
            raise lwio.FormatError(f"{rec.name}: sub-layer {sub['spec'].name} has no weights file")
        layers.append(FactorizedLayer(sub["kind"], sub["spec"], lwio.read_tensor(sub["weights"])))
    return layers


def cmd_verify(args):
    try:
        entries = lwio.read_manifest(args.manifest, strict=args.strict)
        weights = lwio.load_weights(entries)
        plan = lwio.read_plan(args.plan, strict=args.strict)
    except (lwio.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    specs = {spec.name: spec for spec, _ in entries}
    rng = np.random.default_rng(args.input_seed)
    ok = True
    for rec in plan.records:
        if rec.method == "skip":
            print(f"{rec.name}: skipped ({rec.reason})")
            continue
        spec = specs.get(rec.name)
        if spec is None:
            print(f"error: plan layer {rec.name!r} is not in the manifest", file=sys.stderr)
            return EXIT_ERROR
        try:
            layers = _load_sublayers(rec)
            x = rng.standard_normal((spec.in_channels,) + spec.input_hw)
            ref = conv2d_forward(x, spec, weights[rec.name])
            got = forward_sequence(x, layers)
        except (lwio.FormatError, OSError, ValueError) as exc:
            print(f"error: {rec.name}: {exc}", file=sys.stderr)
            return EXIT_ERROR
        if got.shape != ref.shape:
            print(f"error: {rec.name}: output {got.shape} != reference {ref.shape}", file=sys.stderr)
            return EXIT_ERROR
        max_abs = float(np.max(np.abs(got - ref)))
        ref_norm = float(np.linalg.norm(ref))
        rel = float(np.linalg.norm(got - ref) / ref_norm) if ref_norm > 0 else max_abs
        passed = max_abs <= args.tol and rel <= args.tol
        ok &= passed
        print(f"{rec.name}: max_abs={max_abs:.3e} rel={rel:.3e} {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_ERROR


# -- entry point -------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--strict", action="store_true", help="reject unknown JSON fields")
    parser = argparse.ArgumentParser(prog="lwck", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", parents=[common], help="factorize the layers of a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory for plan.json and weights/")
    p.add_argument("--epc-delta", type=float, default=0.0, help="correction error budget (absolute)")
    p.add_argument("--epc-relative", action="store_true", help="read --epc-delta as a fraction of ||kernel||")
    p.add_argument("--epc-threshold", type=float, default=None,
                   help="sensitivity that triggers correction (default 10*||kernel||^2)")
    p.add_argument("--no-epc", action="store_true", help="plain CP-ALS for D > 1 layers")
    p.add_argument("--rank-threshold", type=float, default=0.1, help="max kernel relative error")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip", action="append", metavar="PATTERN", help="layer name glob; repeatable")
    p.add_argument("--force", action="store_true", help="keep rewrites that add parameters")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: LWCK_THREADS)")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("speedup-report", parents=[common], help="print the per-layer FLOP table of a plan")
    p.add_argument("plan")
    p.set_defaults(func=cmd_speedup_report)

    p = sub.add_parser("calibrate", parents=[common], help="ECE and reliability data for a predictions file")
    p.add_argument("predictions")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--fit-temperature", action="store_true")
    p.add_argument("--t-min", type=float, default=0.05)
    p.add_argument("--t-max", type=float, default=20.0)
    p.add_argument("--out", help="reliability CSV path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify", parents=[common], help="compare factorized layers against the originals")
    p.add_argument("manifest")
    p.add_argument("plan")
    p.add_argument("--input-seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
