"""Matricized fourth-moment estimators and robust directional kurtosis."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensorops import (
    PopulationTensor,
    check_data,
    check_unit,
    kron_rows,
    m0_matvec,
    rank_d_spectral,
    row_chunks,
)

KINDS = ("sample_raw", "bias_corrected_H", "projected_M", "population")


class CatoniError(ArithmeticError):
    pass


@dataclass
class CumulantOperator:
    """Symmetric operator on R^{d^2} built from data without forming d^2 x d^2.

    ``sample_raw`` is the matricized sample moment (1/n) sum Y_i Y_i^T with
    Y_i = X_i (x) X_i.  ``bias_corrected_H`` replaces the plug-in mean term by
    its known value: (1/n) sum (Y_i - Ybar)(Y_i - Ybar)^T + vec(I) vec(I)^T.
    ``projected_M`` is U K U^T where K = U^T (H1 - M0) U is cached, which is the
    same map as P (H1 - M0) P with P = U U^T.
    """

    kind: str
    d: int
    X: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    m0_subtracted: bool = False
    core: Optional[np.ndarray] = None
    population: Optional[PopulationTensor] = None
    _ybar: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind == "projected_M":
            if self.U is None or self.core is None:
                raise ValueError("projected_M needs a basis U and its core matrix")
            gram = self.U.T @ self.U
            if np.abs(gram - np.eye(gram.shape[0])).max() > 1e-10:
                raise ValueError("projection basis is not orthonormal")

    @property
    def dim(self) -> int:
        return self.d * self.d

    def _moment_apply(self, V: np.ndarray, centered: bool) -> np.ndarray:
        X = self.X
        n = X.shape[0]
        out = np.zeros_like(V)
        ybar = self._ybar if centered else None
        for sl in row_chunks(n, self.d):
            Y = kron_rows(X[sl])
            if ybar is not None:
                Y -= ybar
            out += Y.T @ (Y @ V)
        return out / n

    def apply(self, V) -> np.ndarray:
        """Apply to a d^2-vector or to the columns of a d^2 x k block."""
        V = np.asarray(V, dtype=float)
        single = V.ndim == 1
        V = V.reshape(self.dim, -1)
        if self.kind == "projected_M":
            out = self.U @ (self.core @ (self.U.T @ V))
        elif self.kind == "population":
            out = self.population.cumulant_apply(V)
        else:
            out = self._moment_apply(V, centered=self.kind == "bias_corrected_H")
            if self.kind == "bias_corrected_H":
                vi = np.eye(self.d).reshape(-1)
                out += np.outer(vi, vi @ V)
            if self.m0_subtracted:
                out -= m0_matvec(V, self.d)
        return out[:, 0] if single else out

    __call__ = apply

    def slices(self, G: np.ndarray) -> np.ndarray:
        """Slices unvec(op vec G_l) for a stack G of shape (L, d, d)."""
        L = G.shape[0]
        B = self.apply(G.reshape(L, -1).T)
        return B.T.reshape(L, self.d, self.d)

    def minus_m0(self) -> "CumulantOperator":
        if self.kind in ("projected_M", "population") or self.m0_subtracted:
            return self
        return CumulantOperator(self.kind, self.d, X=self.X, m0_subtracted=True,
                                _ybar=self._ybar)

    def to_dense(self) -> np.ndarray:
        """Dense d^2 x d^2 matrix, for testing at small d."""
        return self.apply(np.eye(self.dim))


def build_sample_raw(X) -> CumulantOperator:
    X = check_data(X, min_rows=1)
    return CumulantOperator("sample_raw", X.shape[1], X=X)


def build_H(X) -> CumulantOperator:
    """Bias-corrected matricized fourth moment of (whitened) data."""
    X = check_data(X)
    n, d = X.shape
    ybar = (X.T @ X / n).reshape(-1)
    return CumulantOperator("bias_corrected_H", d, X=X, _ybar=ybar)


def population_operator(pop: PopulationTensor) -> CumulantOperator:
    """Exact matricized cumulant M4 - M0 of a population law."""
    return CumulantOperator("population", pop.d, population=pop, m0_subtracted=True)


def project_operator(op: CumulantOperator, U: np.ndarray) -> CumulantOperator:
    """P op P with P = U U^T, stored as U (U^T op U) U^T."""
    core = U.T @ op.apply(U)
    core = (core + core.T) / 2
    return CumulantOperator("projected_M", op.d, X=op.X, U=U, m0_subtracted=True,
                            core=core)


def build_projected_M(X1, X2, rng: np.random.Generator, oversample: int = 10,
                      power_iters: int = 2, tol: float | None = None) -> CumulantOperator:
    """Sample-split estimate P (H1 - M0) P, P the top-d projection of H2 - M0.

    X1 supplies the operator that is projected, X2 supplies the projection.
    """
    X1, X2 = check_data(X1), check_data(X2)
    if X1.shape[1] != X2.shape[1]:
        raise ValueError("both halves must have the same dimension")
    d = X1.shape[1]
    h2 = build_H(X2).minus_m0()
    spec = rank_d_spectral(h2, d * d, d, rng, oversample=oversample,
                           power_iters=power_iters, tol=tol, check=False)
    return project_operator(build_H(X1).minus_m0(), spec.U)


def projected_from_population(pop: PopulationTensor, rng: np.random.Generator,
                              tol: float = 1e-12) -> CumulantOperator:
    """Noise-free analogue of :func:`build_projected_M` (both halves exact)."""
    op = population_operator(pop)
    spec = rank_d_spectral(op, pop.d ** 2, pop.d, rng, tol=tol, check=False)
    return project_operator(op, spec.U)


def split_halves(X: np.ndarray):
    """First floor(n/2) rows and the rest."""
    h = X.shape[0] // 2
    return X[:h], X[h:]


# ---------------------------------------------------------------------------
# directional kurtosis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CatoniConfig:
    alpha: Optional[float] = None  # None selects the plug-in scale
    delta: float = 0.01
    influence: str = "narrowest"
    max_bisections: int = 200

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.influence != "narrowest":
            raise ValueError(f"unsupported influence function {self.influence!r}")


@dataclass(frozen=True)
class KurtosisEstimate:
    direction: np.ndarray
    theta_hat: float
    method: str
    alpha: Optional[float] = None
    iterations: int = 0

    @property
    def kappa_hat(self) -> float:
        return self.theta_hat - 3.0


def catoni_psi(x):
    """sign(x) log(1 + |x| + x^2/2)."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.sign(x) * np.log1p(ax + 0.5 * ax * ax)


def catoni_alpha(values: np.ndarray, delta: float) -> float:
    v = max(float(np.var(values, ddof=1)) if values.size > 1 else 0.0, 1e-12)
    return math.sqrt(2.0 * math.log(2.0 / delta) / (values.size * v))


def catoni_mean(values, cfg: CatoniConfig = CatoniConfig()):
    """Root of sum psi(alpha (v_i - theta)) = 0 by bisection.

    Returns ``(theta, alpha, iterations)``.
    """
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    alpha = cfg.alpha if cfg.alpha is not None else catoni_alpha(v, cfg.delta)
    if lo == hi:
        return lo, alpha, 0

    def objective(theta):
        return float(catoni_psi(alpha * (v - theta)).sum())

    f_lo, f_hi = objective(lo), objective(hi)
    if f_lo < 0 or f_hi > 0:
        raise CatoniError(f"no sign change on [{lo}, {hi}]: {f_lo}, {f_hi}")
    for it in range(1, cfg.max_bisections + 1):
        mid = 0.5 * (lo + hi)
        if objective(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * (1.0 + abs(mid)):
            return 0.5 * (lo + hi), alpha, it
    raise CatoniError(f"bisection did not converge in {cfg.max_bisections} steps "
                      f"(bracket width {hi - lo:.3g})")


def catoni_theta(X, u, cfg: CatoniConfig = CatoniConfig()) -> KurtosisEstimate:
    """Robust estimate of E (u^T X)^4."""
    X = check_data(X, min_rows=1)
    u = check_unit(u, X.shape[1])
    theta, alpha, its = catoni_mean((X @ u) ** 4, cfg)
    return KurtosisEstimate(u, theta, "catoni", alpha=alpha, iterations=its)


def sample_kurtosis(X, u) -> KurtosisEstimate:
    X = check_data(X, min_rows=1)
    u = check_unit(u, X.shape[1])
    return KurtosisEstimate(u, float(np.mean((X @ u) ** 4)), "sample")
