"""``hdica`` command line: simulate, fit, eval, infer, experiment.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import experiments
from .fastica import DegenerateDataError, FastIcaConfig, fit
from .inference import (
    Contrast,
    GaussianComponentError,
    SourceMoments,
    confidence_intervals,
    losses,
)
from .init import InitMethod
from .robust_moments import CatoniError
from .simulate import Scenario, SourceSpec, generate
from .tabular import DataError, dump_json, load_json, read_matrix, write_matrix, write_records
from .tensorops import SpectralError
from .whiten import SingularCovarianceError, WhitenPlan, unwhiten_columns, whiten

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
INIT_CHOICES = {"projection": "projection_slicing", "slicing": "sample_slicing",
                "random": "random_unit", "naive": "naive_matricization"}
MIXING_CHOICES = {"identity": "identity", "haar": "haar_orthogonal",
                  "haar_orthogonal": "haar_orthogonal", "conditioned": "conditioned"}
NUMERIC_ERRORS = (SingularCovarianceError, SpectralError, DegenerateDataError,
                  CatoniError, GaussianComponentError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _level(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t]


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HDICA_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        source = SourceSpec.parse(args.dist)
    except ValueError as exc:
        raise UsageError(str(exc))
    scn = Scenario(args.d, args.n, source, MIXING_CHOICES[args.mixing], args.seed,
                   condition=args.cond)
    X, A, S = generate(scn)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"x{j + 1}" for j in range(args.d)] if args.header else None
    write_matrix(out / "data.csv", X, names)
    write_matrix(out / "mixing.csv", A, names)
    write_matrix(out / "sources.csv", S, [f"s{j + 1}" for j in range(args.d)] if args.header else None)
    meta = scn.as_dict()
    meta["files"] = {k: str(out / f"{k}.csv") for k in ("data", "mixing", "sources")}
    sys.stdout.write(dump_json(meta))
    return EXIT_OK


def _whiten_plan(spec: str) -> WhitenPlan:
    if spec.startswith("known:"):
        return WhitenPlan("known", sigma=read_matrix(spec[len("known:"):]))
    mode = {"in-sample": "in_sample"}.get(spec, spec)
    if mode not in ("split", "none", "in_sample"):
        raise UsageError(f"unknown --prewhiten value {spec!r}")
    return WhitenPlan(mode)


def cmd_fit(args) -> int:
    X = read_matrix(args.input, header=args.header)
    n, d = X.shape
    plan = _whiten_plan(args.prewhiten)
    if plan.sigma is not None and plan.sigma.shape != (d, d):
        raise DataError(f"known covariance has shape {plan.sigma.shape}, data has d = {d}")
    cfg = FastIcaConfig(T=args.T, init=InitMethod(INIT_CHOICES[args.init], L=args.L),
                        seed=args.seed)
    wres = whiten(X, plan)
    est = fit(wres.whitened, cfg, np.random.default_rng(args.seed))
    if plan.mode != "none":
        est = unwhiten_columns(est, wres)
    result = {
        "schema": 1,
        "d": d,
        "n": n,
        "n_fit": int(len(wres.fit_rows)),
        "A_hat": est.A_hat,
        "kappa_hat": est.kappa_hat,
        "iters_used": est.iters_used,
        "config": {"init": args.init, "L": cfg.init.slices_for(d), "T": cfg.iterations_for(d),
                   "conv_tol": cfg.conv_tol, "prewhiten": args.prewhiten, "seed": args.seed},
        "diagnostics": {
            "init": [{"method": c.method, "slice_singular_value": c.slice_singular_value,
                      "slice_index": c.slice_index} for c in est.init_diagnostics],
            "flags": est.flags,
            "max_offdiag_inner": est.max_offdiag_inner,
            "whitening": {"mode": plan.mode, "cov_rows": int(len(wres.cov_rows)),
                          "mean": wres.mean},
        },
        "error": est.error,
    }
    text = dump_json(result, args.out)
    if args.out is None:
        sys.stdout.write(text)
    if est.error:
        print(f"hdica fit: {est.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _load_estimate(path: str) -> np.ndarray:
    if str(path).endswith(".json"):
        res = load_json(path)
        if "A_hat" not in res:
            raise DataError(f"{path}: no A_hat field")
        A = np.array(res["A_hat"], dtype=float)
    else:
        A = read_matrix(path)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
        raise DataError(f"{path}: expected a complete square matrix")
    return A


def cmd_eval(args) -> int:
    A_hat = _load_estimate(args.estimate)
    A = read_matrix(args.truth, header=args.header)
    if A.shape != A_hat.shape:
        raise DataError(f"dimension mismatch: estimate {A_hat.shape}, truth {A.shape}")
    rep = losses(A_hat, A)
    if args.format == "csv":
        sys.stdout.write("ell_M,ell_A\n")
        sys.stdout.write(f"{rep.ell_M!r},{rep.ell_A!r}\n")
    else:
        sys.stdout.write(dump_json({
            "schema": 1, "ell_M": rep.ell_M, "ell_A": rep.ell_A,
            "permutation_M": (rep.permutation_M + 1).tolist(),
            "permutation_A": (rep.permutation_A + 1).tolist()}))
    return EXIT_OK


def read_contrasts(path, d: int) -> List[Contrast]:
    """One contrast per row: ``entry,i,j`` | ``linear,j,u_1..u_d`` |
    ``bilinear,u_1..u_d,v_1..v_d`` (indices 1-based)."""
    import csv

    out = []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row]
            if not row or not row[0] or row[0].startswith("#"):
                continue
            tag, vals = row[0].lower(), row[1:]
            try:
                nums = [float(v) for v in vals]
            except ValueError:
                raise DataError(f"{path}: row {r}: non-numeric contrast entry") from None

            def index(x):
                if x != int(x) or not 1 <= x <= d:
                    raise DataError(f"{path}: row {r}: index {x:g} outside 1..{d}")
                return int(x) - 1

            if tag == "entry" and len(nums) == 2:
                out.append(Contrast("entry", i=index(nums[0]), j=index(nums[1])))
            elif tag == "linear" and len(nums) == d + 1:
                out.append(Contrast("linear", j=index(nums[0]), u=np.array(nums[1:])))
            elif tag == "bilinear" and len(nums) == 2 * d:
                out.append(Contrast("bilinear", u=np.array(nums[:d]), v=np.array(nums[d:])))
            elif tag in ("entry", "linear", "bilinear"):
                raise DataError(f"{path}: row {r}: wrong number of values for {tag!r} with d = {d}")
            else:
                raise DataError(f"{path}: row {r}: unknown contrast type {row[0]!r}")
    return out


def cmd_infer(args) -> int:
    res = load_json(args.result)
    A_hat = _load_estimate(args.result)
    d = A_hat.shape[0]
    X = read_matrix(args.data, header=args.header)
    if X.shape[1] != d:
        raise DataError(f"dimension mismatch: data has {X.shape[1]} columns, estimate d = {d}")
    n = args.n or int(res.get("n_fit") or X.shape[0])
    if args.moments == "plugin":
        moments = SourceMoments.plugin(np.linalg.solve(A_hat, X.T).T)
    elif args.moments.startswith("analytic:"):
        try:
            moments = SourceMoments.from_family(SourceSpec.parse(args.moments[len("analytic:"):]))
        except ValueError as exc:
            raise UsageError(str(exc))
    else:
        raise UsageError(f"--moments must be 'plugin' or 'analytic:<family>', got {args.moments!r}")
    contrasts = read_contrasts(args.contrasts, d)
    report = confidence_intervals(A_hat, n, moments, contrasts, args.level)
    out = report.as_dict()
    out["moments"] = {"source": moments.source, "ES4": moments.ES4, "ES6": moments.ES6}
    text = dump_json(out, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        preset = experiments.make_preset(args.preset, full=args.full, reps=args.reps,
                                         ds=args.d, ns=args.n, methods=args.methods)
    except ValueError as exc:
        raise UsageError(str(exc))
    records = experiments.run_preset(preset, seed=args.seed, threads=args.threads)
    summary = experiments.summarize(records)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "records.csv", experiments.RECORD_FIELDS, records)
    write_records(out / "summary.csv", experiments.SUMMARY_FIELDS, summary)
    failed = sum(1 for r in records if r["error"])
    sys.stdout.write(dump_json({"preset": preset.name, "reps": preset.reps,
                                "cells": len(preset.cells), "records": len(records),
                                "failed": failed, "records_csv": str(out / "records.csv"),
                                "summary_csv": str(out / "summary.csv")}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hdica", description="High-dimensional ICA toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--d", type=_positive, required=True)
    s.add_argument("--n", type=_positive, required=True)
    s.add_argument("--dist", default="laplace",
                   help="laplace | uniform | rademacher | gauss_rademacher:<alpha> | student_t:<df>")
    s.add_argument("--mixing", choices=sorted(MIXING_CHOICES), default="haar")
    s.add_argument("--cond", type=float, default=3.0, help="condition number for --mixing conditioned")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--header", action="store_true")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="estimate the mixing matrix")
    f.add_argument("--input", required=True)
    f.add_argument("--header", action="store_true", help="input has a header row")
    f.add_argument("--init", choices=sorted(INIT_CHOICES), default="projection")
    f.add_argument("--L", type=_positive, default=None)
    f.add_argument("--T", type=int, default=None)
    f.add_argument("--prewhiten", default="split",
                   help="split | known:<covariance.csv> | none | in-sample")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="losses of an estimate against the truth")
    e.add_argument("--estimate", required=True, help="result JSON or matrix CSV")
    e.add_argument("--truth", required=True)
    e.add_argument("--header", action="store_true")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="confidence intervals for contrasts of the estimate")
    i.add_argument("--result", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--header", action="store_true")
    i.add_argument("--contrasts", required=True)
    i.add_argument("--level", type=_level, default=0.95)
    i.add_argument("--moments", default="plugin", help="plugin | analytic:<family>")
    i.add_argument("--n", type=_positive, default=None, help="override the sample size")
    i.add_argument("--out", default=None)
    i.set_defaults(func=cmd_infer)

    x = sub.add_parser("experiment", help="run a Monte-Carlo preset")
    x.add_argument("preset", choices=experiments.PRESETS)
    x.add_argument("--reps", type=_positive, default=None)
    x.add_argument("--out-dir", default="results")
    x.add_argument("--threads", type=_positive, default=_default_threads())
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--full", action="store_true", help="large grid (d up to 150, n up to 30000)")
    x.add_argument("--d", type=_int_list, default=None, help="comma-separated dimensions")
    x.add_argument("--n", type=_int_list, default=None, help="comma-separated sample sizes")
    x.add_argument("--methods", type=lambda t: t.split(","), default=None)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hdica {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"hdica {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"hdica {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"hdica {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
