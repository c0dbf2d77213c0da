"""Deflationary fixed-point ICA on whitened data.

Each component is initialized (by default with projection slicing), refined
by the kurtosis fixed-point map a <- a - (1/3n) sum X_i (a^T X_i)^3 followed by
normalization, and then removed from the data by projection.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.linalg import null_space

from .init import InitCandidate, InitMethod, initialize
from .tensorops import PopulationTensor, check_data, check_unit, cubic_contraction

Source = Union[np.ndarray, PopulationTensor]

SPURIOUS_KURTOSIS = 0.05
REINIT_BUDGET = 3
COLLAPSE_VARIANCE = 1e-10


class DegenerateDataError(ArithmeticError):
    """The fixed-point update collapsed to the zero vector."""


def default_T(d: int) -> int:
    return max(20, math.ceil(4 * math.log(d)))


@dataclass(frozen=True)
class FastIcaConfig:
    T: Optional[int] = None
    conv_tol: float = 1e-9
    init: InitMethod = InitMethod()
    deflation: str = "data_projection"
    seed: Optional[int] = 0

    def __post_init__(self):
        if self.T is not None and self.T < 0:
            raise ValueError("T must be non-negative")
        if self.conv_tol < 0:
            raise ValueError("conv_tol must be non-negative")
        if self.deflation != "data_projection":
            raise ValueError("only data_projection deflation is supported")

    def iterations_for(self, d: int) -> int:
        return default_T(d) if self.T is None else self.T


@dataclass
class MixingEstimate:
    A_hat: np.ndarray
    kappa_hat: np.ndarray
    iters_used: np.ndarray
    init_diagnostics: List[InitCandidate] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def d(self) -> int:
        return self.A_hat.shape[0]

    @property
    def n_components(self) -> int:
        return int(np.sum(np.all(np.isfinite(self.A_hat), axis=0)))

    @property
    def max_offdiag_inner(self) -> float:
        """Largest |<a_i, a_j>| over i != j among the recovered columns."""
        A = self.A_hat[:, np.all(np.isfinite(self.A_hat), axis=0)]
        if A.shape[1] < 2:
            return 0.0
        G = np.abs(A.T @ A)
        np.fill_diagonal(G, 0.0)
        return float(G.max())


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def _cubic(source: Source, a: np.ndarray) -> np.ndarray:
    if isinstance(source, PopulationTensor):
        return source.cubic(a)
    return cubic_contraction(source, a)


def _normalize(v: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(v)
    if not np.isfinite(nrm) or nrm <= 1e-300:
        raise DegenerateDataError("fixed-point update produced a zero vector")
    return v / nrm


def fixed_point_step(data: Source, a) -> np.ndarray:
    """normalize(a - (1/3n) sum_i X_i (a^T X_i)^3)."""
    if not isinstance(data, PopulationTensor):
        data = check_data(data, min_rows=1)
    a = check_unit(a, data.d if isinstance(data, PopulationTensor) else data.shape[1])
    return _normalize(a - _cubic(data, a) / 3.0)


def deflate(data: Source, a) -> Source:
    """Replace every row X_i by X_i - (a^T X_i) a."""
    if isinstance(data, PopulationTensor):
        return data.deflated(a)
    a = np.asarray(a, dtype=float)
    return data - np.outer(data @ a, a)


def directional_kurtosis(source: Source, a: np.ndarray) -> float:
    """Sample (or exact) excess kurtosis (1/n) sum (a^T X_i)^4 - 3."""
    if isinstance(source, PopulationTensor):
        return source.contract(a, a, a, a) - 3.0
    s = source @ a
    return float(np.mean(s ** 4) - 3.0)


def refine(source: Source, a0: np.ndarray, T: int, conv_tol: float):
    """Run up to T fixed-point steps; returns (direction, steps taken)."""
    a = a0
    for t in range(1, T + 1):
        nxt = _normalize(a - _cubic(source, a) / 3.0)
        done = 1.0 - abs(float(nxt @ a)) <= conv_tol
        a = nxt
        if done:
            return a, t
    return a, T


# ---------------------------------------------------------------------------
# full loop
# ---------------------------------------------------------------------------

def _complement_basis(found: List[np.ndarray], d: int) -> np.ndarray:
    if not found:
        return np.eye(d)
    return null_space(np.array(found))


def _reduce(source: Source, Q: np.ndarray) -> Source:
    if isinstance(source, PopulationTensor):
        return source.reduced(Q)
    return source @ Q


def _check_rank(reduced: Source, j: int, flags: List[str]) -> None:
    if isinstance(reduced, PopulationTensor):
        return
    lam = np.linalg.eigvalsh(reduced.T @ reduced / reduced.shape[0])
    if lam[-1] <= COLLAPSE_VARIANCE:
        raise DegenerateDataError("deflated data has collapsed to zero")
    if lam[0] <= COLLAPSE_VARIANCE:
        flags.append(f"component {j}: deflated data has a near-zero variance direction")


def fit(data: Source, cfg: FastIcaConfig = FastIcaConfig(),
        rng: Optional[np.random.Generator] = None) -> MixingEstimate:
    """Estimate all d mixing directions of whitened data.

    Initialization and refinement for component j run in coordinates of the
    orthogonal complement Q of the directions already found.  There the
    deflated data has identity covariance, and the columns stay orthogonal:
    the normalization in each step divides by a norm that is small when the
    remaining kurtosis is weak, which would otherwise amplify round-off along
    removed directions geometrically.
    """
    if isinstance(data, PopulationTensor):
        source: Source = data
        d = data.d
    else:
        source = check_data(data).copy()
        d = source.shape[1]
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    T = cfg.iterations_for(d)

    A_hat = np.full((d, d), np.nan)
    kappa = np.full(d, np.nan)
    iters = np.zeros(d, dtype=int)
    diags: List[InitCandidate] = []
    flags: List[str] = []
    found: List[np.ndarray] = []
    error = None

    for j in range(d):
        Q = _complement_basis(found, d)
        m = Q.shape[1]
        try:
            reduced = _reduce(source, Q)
            _check_rank(reduced, j, flags)
            if m == 1:
                cand = InitCandidate(np.ones(1), method="last_direction")
                a, t = Q[:, 0], 0
                k = directional_kurtosis(reduced, np.ones(1))
            else:
                best = None
                for attempt in range(REINIT_BUDGET + 1):
                    cand = initialize(reduced, cfg.init, rng)
                    b, t = refine(reduced, cand.direction, T, cfg.conv_tol)
                    a = Q @ b
                    k = directional_kurtosis(reduced, b)
                    if best is None or abs(k) > abs(best[2]):
                        best = (cand, a, k, t)
                    if abs(k) >= SPURIOUS_KURTOSIS or T == 0:
                        break
                else:
                    flags.append(f"component {j}: |kurtosis| below {SPURIOUS_KURTOSIS} "
                                 f"after {REINIT_BUDGET} re-initializations")
                cand, a, k, t = best
        except (DegenerateDataError, np.linalg.LinAlgError) as exc:
            error = f"component {j}: {exc}"
            warnings.warn(f"fit stopped early: {error}", RuntimeWarning)
            break
        A_hat[:, j] = a
        kappa[j] = k
        iters[j] = t
        diags.append(cand)
        found.append(a)
        source = deflate(source, a)

    est = MixingEstimate(A_hat, kappa, iters, diags, flags, error)
    if est.n_components == d and est.max_offdiag_inner > 0.2:
        est.flags.append(f"columns far from orthogonal (max |<a_i,a_j>| = "
                         f"{est.max_offdiag_inner:.3f})")
    return est
