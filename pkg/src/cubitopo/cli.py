"""Batch-oriented command line: barcode | betti | optimize | evaluate |
phantom | bench | loss.

Exit codes: 0 success, 1 compute failure, 2 usage or validation error.
All outputs are deterministic for fixed inputs and seed; --threads (or the
CUBITOPO_THREADS environment variable) changes timing only.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import npyio
from .grid import GridShape, ScalarField, binarize
from .loss import combined_loss, load_prior, topo_loss
from .metrics import betti_oracle, evaluate_case, write_report_json, format_report_csv
from .optimize import OptimizerConfig, post_process, write_trace_csv
from .persistence import barcode_of_field, write_barcode_csv
from .phantom import Defect, PhantomSpec, batch, write_case


class UsageError(Exception):
    pass


def _parse_spacing(text, ndim):
    if not text:
        return None
    parts = [float(x) for x in text.split(",")]
    if len(parts) != ndim:
        raise UsageError(f"--spacing needs {ndim} comma-separated values")
    return parts


def _threads(args):
    return args.threads if getattr(args, "threads", None) else None


def cmd_barcode(args):
    fld = npyio.load_field(args.field)
    bc = barcode_of_field(fld, args.construction, args.max_dim, os.path.basename(args.field))
    write_barcode_csv(bc, args.out, points=args.points)
    print(f"{len(bc)} bars -> {args.out}")
    return 0


def cmd_betti(args):
    fld = npyio.load_field(args.field)
    vec = betti_oracle(binarize(fld, args.threshold), args.construction)
    doc = {"threshold": args.threshold, "construction": args.construction, "betti": list(vec)}
    if args.out:
        with open(args.out, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    print(json.dumps(doc))
    return 0


def cmd_optimize(args):
    seg = npyio.load_prob_stack(args.probs)
    prior = load_prior(args.prior)
    cfg = OptimizerConfig(
        iterations=args.iters,
        learning_rate=args.lr,
        lam=args.lam,
        construction=args.construction,
        seed=args.seed,
        threads=_threads(args),
    )
    final, trace = post_process(seg, prior, cfg, clamp=args.clamp)
    npyio.save_prob_stack(args.out, final)
    if args.trace:
        write_trace_csv(trace, args.trace)
    print(
        f"L_TP {trace.combined[0]:.6g} -> {trace.combined[-1]:.6g} "
        f"over {len(trace)} iterations -> {args.out}"
    )
    return 0


def cmd_evaluate(args):
    prior = load_prior(args.prior)
    pred = npyio.load_labels(args.pred, K=prior.K)
    gt = npyio.load_labels(args.gt, K=prior.K)
    spacing = _parse_spacing(args.spacing, pred.shape.ndim)
    report = evaluate_case(pred, gt, prior, args.construction, spacing)
    if args.report:
        write_report_json([report], args.report)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(format_report_csv([report]))
    print(json.dumps({"BE": report.BE, "TS": report.TS, "gDSC": report.gdsc}))
    return 0


def cmd_loss(args):
    seg = npyio.load_prob_stack(args.probs)
    prior = load_prior(args.prior)
    if args.reference:
        ref = npyio.load_prob_stack(args.reference)
        breakdown, grad = combined_loss(seg, ref, prior, args.lam, args.construction, _threads(args))
    else:
        breakdown, grad = topo_loss(seg, prior, args.construction, _threads(args))
    doc = {
        "L_topo": breakdown.total,
        "L_mse": breakdown.mse,
        "lambda": breakdown.lam,
        "L_TP": breakdown.combined,
        "terms": {f"{k}:{d}": [b, a, z] for (k, d), (b, a, z) in sorted(breakdown.per_term.items())},
    }
    if args.out_grad:
        np.save(args.out_grad, grad.data)
    if args.out_json:
        with open(args.out_json, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    print(json.dumps({"L_topo": doc["L_topo"], "L_TP": doc["L_TP"]}))
    return 0


def _parse_defect(text) -> Defect:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"defect spec {text!r} is not TYPE:CLASS[:MAGNITUDE]")
    mag = float(parts[2]) if len(parts) == 3 else 2.0
    try:
        return Defect(parts[0], parts[1], mag)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_phantom(args):
    defects = tuple(_parse_defect(d) for d in args.defect or ())
    shape = None
    if args.shape:
        shape = GridShape([int(x) for x in args.shape.split(",")])
    spec = PhantomSpec(args.task, shape=shape, seed=args.seed, defects=defects, softness=args.softness)
    cases = batch(spec, args.n)
    for i, (seg, labels, prior) in enumerate(cases):
        write_case(os.path.join(args.out, f"case_{i:04d}"), seg, labels, prior)
    print(f"{len(cases)} cases -> {args.out}")
    return 0


def cmd_bench(args):
    rng = np.random.default_rng(args.seed)
    dims = tuple(int(x) for x in args.size.split("x"))
    fld = ScalarField(GridShape(dims), rng.random(dims))
    barcode_of_field(fld, args.construction)  # warm the jit cache
    times = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        barcode_of_field(fld, args.construction)
        times.append((time.perf_counter() - t0) * 1000.0)
    doc = {
        "size": args.size,
        "construction": args.construction,
        "barcode_ms": {"best": min(times), "mean": sum(times) / len(times), "runs": times},
    }
    if args.out:
        with open(args.out, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    print(json.dumps({"size": args.size, "barcode_ms_best": min(times)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cubitopo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, construction=True, threads=False):
        if construction:
            sp.add_argument("--construction", choices=["v", "t", "V", "T"], default="v", type=str)
        if threads:
            sp.add_argument("--threads", type=int, default=0)

    sp = sub.add_parser("barcode", help="persistence barcode of a field -> CSV")
    sp.add_argument("field")
    sp.add_argument("--max-dim", type=int, default=None, dest="max_dim")
    sp.add_argument("--out", required=True)
    sp.add_argument("--points", action="store_true", help="append critical grid indices")
    common(sp)
    sp.set_defaults(fn=cmd_barcode)

    sp = sub.add_parser("betti", help="oracle Betti numbers of a thresholded field")
    sp.add_argument("field")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(fn=cmd_betti)

    sp = sub.add_parser("optimize", help="topology-prior post-processing of a probability stack")
    sp.add_argument("probs")
    sp.add_argument("--prior", required=True)
    sp.add_argument("--lambda", type=float, default=1000.0, dest="lam")
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--iters", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trace")
    sp.add_argument("--clamp", action="store_true", help="clip zero probabilities before log")
    common(sp, threads=True)
    sp.set_defaults(fn=cmd_optimize)

    sp = sub.add_parser("evaluate", help="metrics of a prediction vs ground truth and prior")
    sp.add_argument("pred")
    sp.add_argument("gt")
    sp.add_argument("--prior", required=True)
    sp.add_argument("--spacing", default="")
    sp.add_argument("--report", help="JSON report path")
    sp.add_argument("--csv", help="CSV report path")
    common(sp)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("loss", help="topological loss and gradient of a probability stack")
    sp.add_argument("probs")
    sp.add_argument("--prior", required=True)
    sp.add_argument("--reference", help="adds the similarity term against this stack")
    sp.add_argument("--lambda", type=float, default=1000.0, dest="lam")
    sp.add_argument("--out-grad", dest="out_grad")
    sp.add_argument("--out-json", dest="out_json")
    common(sp, threads=True)
    sp.set_defaults(fn=cmd_loss)

    sp = sub.add_parser("phantom", help="generate synthetic cases")
    sp.add_argument("--task", choices=["shortaxis2d", "wholeheart3d"], default="shortaxis2d")
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--shape", help="comma-separated extents")
    sp.add_argument("--softness", type=float, default=0.15)
    sp.add_argument("--defect", action="append", help="TYPE:CLASS[:MAGNITUDE], repeatable")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_phantom)

    sp = sub.add_parser("bench", help="barcode wall-time of a random field")
    sp.add_argument("--size", default="352x352", help="e.g. 352x352 or 192x160x160")
    sp.add_argument("--repeat", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    if hasattr(args, "construction"):
        args.construction = args.construction.upper()
    if hasattr(args, "iters") and args.iters < 1:
        print("error: --iters must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # genuine compute failure
        print(f"compute error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
