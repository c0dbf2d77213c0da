"""Monte-Carlo experiment presets producing tidy record and summary tables.

Every replication draws its data and its algorithm randomness from keyed
streams (see :func:`hdica.simulate.keyed_rng`), and records are sorted before
they are written, so the output does not depend on the number of workers.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fastica import FastIcaConfig, MixingEstimate, directional_kurtosis, fit, refine
from .inference import align, losses
from .init import InitMethod, initialize
from .simulate import Scenario, SourceSpec, generate, keyed_rng
from .whiten import WhitenPlan, unwhiten_columns, whiten

METHOD_KINDS = {
    "projection": "projection_slicing",
    "slicing": "sample_slicing",
    "random": "random_unit",
    "naive": "naive_matricization",
}
BREAKDOWN_PROXY = "sample_kurtosis"
_METHOD_KEY = 1 << 20  # stream keys for algorithm randomness start here

RECORD_FIELDS = [
    "scenario", "preset", "d", "n", "method", "rep", "seed",
    "ell_M", "ell_A", "inner_12", "max_overlap", "inner_products",
    "wall_time", "error",
]
SUMMARY_METRICS = ("ell_M", "ell_A", "inner_12", "max_overlap")
SUMMARY_FIELDS = ["scenario", "d", "n", "method", "metric", "count", "errors",
                  "q25", "median", "q75"]


@dataclass(frozen=True)
class Cell:
    d: int
    n: int
    methods: Tuple[str, ...]
    source: str = "laplace"
    mixing: str = "haar_orthogonal"
    prewhiten: str = "none"
    first_only: bool = False  # estimate only the first component

    def scenario_id(self, preset: str) -> str:
        return f"{preset}-d{self.d}-n{self.n}"


@dataclass(frozen=True)
class Preset:
    name: str
    cells: Tuple[Cell, ...]
    reps: int

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")


ALL_METHODS = ("projection", "slicing", "random", "naive")


def _grid(ds, ns, methods, **kw) -> Tuple[Cell, ...]:
    return tuple(Cell(d, n, tuple(methods), **kw) for d in ds for n in ns)


def _breakdown_cells(ds) -> Tuple[Cell, ...]:
    cells = []
    for d in ds:
        cells.append(Cell(d, 400, (BREAKDOWN_PROXY,), first_only=True))
        cells.append(Cell(d, 4 * d * d, ("projection",), first_only=True))
    return tuple(cells)


def make_preset(name: str, full: bool = False, reps: Optional[int] = None,
                ds: Optional[Sequence[int]] = None, ns: Optional[Sequence[int]] = None,
                methods: Optional[Sequence[str]] = None) -> Preset:
    """Desk-scale grid by default, the published grid with ``full=True``."""
    pair = "slicing", "projection"
    if name == "method_comparison":
        p = Preset(name, _grid([25], [500, 1500, 2000], ALL_METHODS), 200 if full else 50)
    elif name == "clt_histograms":
        p = (Preset(name, _grid([50], [6000], ["projection"]), 500) if full
             else Preset(name, _grid([25], [2000], ["projection"]), 200))
    elif name == "init_comparison_grid":
        p = (Preset(name, _grid(range(90, 151, 10), range(10000, 24001, 2000), pair), 200)
             if full else Preset(name, _grid([10, 20, 30], [1000, 2000, 4000], pair), 20))
    elif name == "dim_sweep":
        p = (Preset(name, _grid(range(90, 151, 10), [24000], pair), 200) if full
             else Preset(name, _grid([10, 20, 30, 40, 50], [4000], pair), 20))
    elif name == "n_sweep":
        p = (Preset(name, _grid([150], range(24000, 30001, 1000), pair), 200) if full
             else Preset(name, _grid([25], [1000, 2000, 3000, 4000], pair), 20))
    elif name == "kurtosis_breakdown":
        p = Preset(name, _breakdown_cells([10, 20, 40, 80] if full else [10, 20, 40]),
                   100 if full else 25)
    else:
        raise ValueError(f"unknown preset {name!r}")
    cells = p.cells
    if ds is not None or ns is not None:
        ds = list(ds) if ds is not None else sorted({c.d for c in cells})
        ns = list(ns) if ns is not None else sorted({c.n for c in cells})
        template = cells[0]
        cells = tuple(replace(template, d=d, n=n) for d in ds for n in ns)
    if methods is not None:
        unknown = set(methods) - set(METHOD_KINDS) - {BREAKDOWN_PROXY}
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        cells = tuple(replace(c, methods=tuple(methods)) for c in cells)
    return Preset(name, cells, reps if reps is not None else p.reps)


PRESETS = ("method_comparison", "clt_histograms", "init_comparison_grid",
           "dim_sweep", "n_sweep", "kurtosis_breakdown")


# ---------------------------------------------------------------------------
# one replication
# ---------------------------------------------------------------------------

def method_rng(seed: int, rep: int, method: str) -> np.random.Generator:
    names = list(METHOD_KINDS) + [BREAKDOWN_PROXY]
    return keyed_rng(seed, rep, _METHOD_KEY, names.index(method))


def estimate(X: np.ndarray, method: str, rng: np.random.Generator,
             prewhiten: str = "none", sigma=None, T: Optional[int] = None,
             first_only: bool = False) -> MixingEstimate:
    """Whiten (optionally), run one initializer + fixed-point pipeline, unwhiten."""
    plan = WhitenPlan(prewhiten, sigma=sigma)
    wres = whiten(X, plan)
    if method == BREAKDOWN_PROXY:
        est = sample_kurtosis_direction(wres.whitened, rng, T)
    elif first_only:
        est = first_direction(wres.whitened, METHOD_KINDS[method], rng, T)
    else:
        est = fit(wres.whitened, FastIcaConfig(T=T, init=InitMethod(METHOD_KINDS[method])), rng)
    return unwhiten_columns(est, wres) if prewhiten != "none" else est


def first_direction(Z: np.ndarray, kind: str, rng, T: Optional[int] = None) -> MixingEstimate:
    d = Z.shape[1]
    cfg = FastIcaConfig(T=T, init=InitMethod(kind))
    cand = initialize(Z, cfg.init, rng)
    a, t = refine(Z, cand.direction, cfg.iterations_for(d), cfg.conv_tol)
    return _single(a, directional_kurtosis(Z, a), t, d, [cand])


def sample_kurtosis_direction(Z: np.ndarray, rng, T: Optional[int] = None) -> MixingEstimate:
    """Proxy for the maximizer of |sample excess kurtosis| over the sphere.

    All four initializers are refined by the fixed-point map on the raw data;
    the candidate with the largest |sample kurtosis| wins.
    """
    best = None
    for kind in METHOD_KINDS.values():
        e = first_direction(Z, kind, rng, T)
        if best is None or abs(e.kappa_hat[0]) > abs(best.kappa_hat[0]):
            best = e
    return best


def _single(a, k, t, d, diags) -> MixingEstimate:
    A = np.full((d, d), np.nan)
    A[:, 0] = a
    kap = np.full(d, np.nan)
    kap[0] = k
    iters = np.zeros(d, dtype=int)
    iters[0] = t
    return MixingEstimate(A, kap, iters, diags)


def score(est: MixingEstimate, A: np.ndarray, first_only: bool) -> Dict[str, object]:
    """Losses and overlaps of an estimate against the truth."""
    A_unit = A / np.linalg.norm(A, axis=0)
    a1 = est.A_hat[:, 0]
    out: Dict[str, object] = {
        "max_overlap": float(np.abs(A_unit.T @ (a1 / np.linalg.norm(a1))).max())}
    if first_only:
        return out
    rep = losses(est.A_hat, A)
    al = align(est.A_hat / np.linalg.norm(est.A_hat, axis=0), A_unit)
    diag = np.einsum("ij,ij->j", al.aligned_A_hat, A_unit)
    out.update(ell_M=rep.ell_M, ell_A=rep.ell_A,
               inner_12=float(al.aligned_A_hat[:, 0] @ A_unit[:, 1]) if A.shape[0] > 1 else float("nan"),
               inner_products=";".join(f"{v:.6g}" for v in diag))
    return out


def run_replication(preset: str, cell: Cell, rep: int, seed: int) -> List[dict]:
    """All methods of ``cell`` on one shared dataset."""
    scn = Scenario(cell.d, cell.n, SourceSpec.parse(cell.source), cell.mixing, seed, rep)
    X, A, _ = generate(scn)
    records = []
    for method in cell.methods:
        rec = {"scenario": cell.scenario_id(preset), "preset": preset, "d": cell.d,
               "n": cell.n, "method": method, "rep": rep, "seed": seed, "error": ""}
        t0 = time.perf_counter()
        try:
            est = estimate(X, method, method_rng(seed, rep, method), cell.prewhiten,
                           first_only=cell.first_only)
            if est.error:
                rec["error"] = est.error
            else:
                rec.update(score(est, A, cell.first_only or method == BREAKDOWN_PROXY))
        except Exception as exc:  # recorded per row; the run continues
            rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["wall_time"] = time.perf_counter() - t0
        records.append(rec)
    return records


def _run_task(args):
    return run_replication(*args)


def run_preset(preset: Preset, seed: int = 0, threads: int = 1) -> List[dict]:
    tasks = [(preset.name, cell, rep, seed) for cell in preset.cells for rep in range(preset.reps)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))))
    else:
        chunks = [_run_task(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    order = {c.scenario_id(preset.name): i for i, c in enumerate(preset.cells)}
    records.sort(key=lambda r: (order[r["scenario"]], r["method"], r["rep"]))
    return records


def summarize(records: Sequence[dict]) -> List[dict]:
    """Quartiles of each metric per (scenario, method) cell."""
    groups: Dict[tuple, List[dict]] = {}
    for r in records:
        groups.setdefault((r["scenario"], r["d"], r["n"], r["method"]), []).append(r)
    rows = []
    for (scen, d, n, method), recs in groups.items():
        errors = sum(1 for r in recs if r.get("error"))
        for metric in SUMMARY_METRICS:
            vals = np.array([r[metric] for r in recs
                             if r.get(metric) is not None and not r.get("error")
                             and np.isfinite(r[metric])], dtype=float)
            if vals.size == 0:
                continue
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            rows.append({"scenario": scen, "d": d, "n": n, "method": method,
                         "metric": metric, "count": int(vals.size), "errors": errors,
                         "q25": float(q25), "median": float(med), "q75": float(q75)})
    return rows
