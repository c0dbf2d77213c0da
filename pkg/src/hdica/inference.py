"""Alignment, losses, and normal-approximation inference for mixing matrices."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.special import gammainc, ndtri

ENTRY_MARGIN = 1e-6


class GaussianComponentError(ValueError):
    """A component with zero excess kurtosis has no finite asymptotic variance."""


# ---------------------------------------------------------------------------
# alignment and losses
# ---------------------------------------------------------------------------

def _unit_columns(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(A)):
        raise ValueError("columns must be finite and non-zero")
    return A / norms


def sin2_matrix(A_hat, A_true) -> np.ndarray:
    """Entry [k, l] = sin^2 of the angle between true column k and estimate l.

    Uses 4 sin^2 = |b - s a|^2 |b + s a|^2 with s = sign(a^T b), which is
    exact for b = +-a and keeps full precision for tiny angles, where
    1 - cos^2 bottoms out near sqrt(machine epsilon).
    """
    A = _unit_columns(A_true)
    B = _unit_columns(A_hat)
    sA = A[:, :, None] * np.where(A.T @ B < 0, -1.0, 1.0)[None, :, :]
    minus = B[:, None, :] - sA
    plus = B[:, None, :] + sA
    s2 = np.einsum("ikl,ikl->kl", minus, minus) * np.einsum("ikl,ikl->kl", plus, plus) / 4
    return np.clip(s2, 0.0, 1.0)


@dataclass
class Alignment:
    permutation: np.ndarray  # true column k is matched with estimated column permutation[k]
    signs: np.ndarray
    aligned_A_hat: np.ndarray


def align(A_hat, A_true) -> Alignment:
    """Signed permutation of A_hat maximizing sum_j <a_hat_pi(j), a_j>^2."""
    A_hat = np.asarray(A_hat, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    inner = A_true.T @ A_hat
    _, perm = linear_sum_assignment(-(inner ** 2))
    picked = inner[np.arange(len(perm)), perm]
    signs = np.where(picked < 0, -1.0, 1.0)
    return Alignment(perm, signs, A_hat[:, perm] * signs)


def bottleneck_assignment(cost: np.ndarray):
    """Permutation minimizing max_k cost[k, perm[k]] (exact).

    Binary search over the distinct cost values; feasibility of a threshold is
    a perfect matching in the bipartite graph of entries not above it.
    """
    values = np.unique(cost)
    lo, hi = 0, len(values) - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        graph = csr_matrix((cost <= values[mid]).astype(np.int8))
        match = maximum_bipartite_matching(graph, perm_type="column")
        if np.all(match >= 0):
            best, hi = match, mid - 1
        else:
            lo = mid + 1
    return values[lo], np.asarray(best)


@dataclass
class LossReport:
    ell_M: float
    ell_A: float
    permutation_M: np.ndarray
    permutation_A: np.ndarray

    def as_dict(self) -> dict:
        return {"ell_M": self.ell_M, "ell_A": self.ell_A,
                "permutation_M": self.permutation_M.tolist(),
                "permutation_A": self.permutation_A.tolist()}


def losses(A_hat, A_true) -> LossReport:
    """Worst-case and root-mean-square sine losses over permutations."""
    S2 = sin2_matrix(A_hat, A_true)
    d = S2.shape[0]
    rows, perm_a = linear_sum_assignment(S2)
    ell_a = float(np.sqrt(S2[rows, perm_a].sum() / d))
    worst, perm_m = bottleneck_assignment(np.sqrt(S2))
    return LossReport(float(worst), min(ell_a, float(worst)), perm_m, perm_a)


# ---------------------------------------------------------------------------
# source moments
# ---------------------------------------------------------------------------

@dataclass
class SourceMoments:
    """Third, fourth and sixth moments of unit-variance sources (per component)."""

    ES3: np.ndarray
    ES4: np.ndarray
    ES6: np.ndarray
    source: str = "analytic"

    def __post_init__(self):
        self.ES3, self.ES4, self.ES6 = (np.atleast_1d(np.asarray(v, dtype=float))
                                        for v in (self.ES3, self.ES4, self.ES6))

    @property
    def kappa4(self) -> np.ndarray:
        return self.ES4 - 3.0

    @property
    def var_S3(self) -> np.ndarray:
        return self.ES6 - self.ES3 ** 2

    def at(self, j: int, d: Optional[int] = None):
        """(ES4, var_S3, kappa4, ES6) of component j (broadcasting scalars)."""
        pick = (lambda v: v[0] if v.size == 1 else v[j])
        return pick(self.ES4), pick(self.var_S3), pick(self.kappa4), pick(self.ES6)

    def ratio(self, j: int) -> float:
        _, var3, kappa, _ = self.at(j)
        if kappa == 0:
            raise GaussianComponentError(f"component {j} has zero excess kurtosis")
        return float(var3 / kappa ** 2)

    @classmethod
    def from_family(cls, spec) -> "SourceMoments":
        return cls(spec.ES3, spec.ES4, spec.ES6, source=f"analytic:{spec.family}")

    @classmethod
    def plugin(cls, S_hat) -> "SourceMoments":
        """Empirical moments of standardized recovered sources (columns)."""
        S = np.asarray(S_hat, dtype=float)
        S = (S - S.mean(axis=0)) / S.std(axis=0)
        return cls((S ** 3).mean(axis=0), (S ** 4).mean(axis=0), (S ** 6).mean(axis=0),
                   source="plugin")


# ---------------------------------------------------------------------------
# asymptotic variances
# ---------------------------------------------------------------------------

def sigma_linear(u, j: int, A, moments: SourceMoments) -> float:
    """Asymptotic sd of sqrt(n) u^T (a_hat_j - a_j)."""
    u = np.asarray(u, dtype=float)
    a = np.asarray(A, dtype=float)[:, j]
    perp = float(u @ u - (u @ a) ** 2)
    return float(np.sqrt(max(perp, 0.0) * moments.ratio(j)))


def sigma_entry(i: int, j: int, A, moments: SourceMoments,
                margin: float = ENTRY_MARGIN) -> float:
    """Asymptotic sd of sqrt(n) (a_hat_ij - a_ij)."""
    aij = float(np.asarray(A, dtype=float)[i, j])
    slack = 1.0 - aij * aij
    if slack < margin * (1 - 1e-6):
        raise ValueError(f"|a_{i}{j}| = {abs(aij):.9f} is too close to 1")
    return float(np.sqrt(slack * moments.ratio(j)))


def joint_covariance(us, A, moments: SourceMoments) -> np.ndarray:
    """Covariance of sqrt(n) (u_j^T a_hat_j)_j; ``us`` holds u_j as column j."""
    U = np.asarray(us, dtype=float)
    A = np.asarray(A, dtype=float)
    d = A.shape[1]
    if U.shape != A.shape:
        raise ValueError("need one length-d vector per component")
    ES4 = np.array([moments.at(j)[0] for j in range(d)])
    kappa = np.array([moments.at(j)[2] for j in range(d)])
    if np.any(kappa == 0):
        raise GaussianComponentError("a component has zero excess kurtosis")
    UA = U.T @ A  # [i, j] = u_i^T a_j
    w = ES4 / kappa
    S = UA * UA.T * np.outer(w, w)
    for j in range(d):
        S[j, j] = sigma_linear(U[:, j], j, A, moments) ** 2
    return S


def sigma_bilinear(u, v, A, moments: SourceMoments) -> float:
    """Asymptotic sd of sqrt(n) u^T (A_hat - A) v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    A = np.asarray(A, dtype=float)
    d = A.shape[1]
    r = np.array([moments.ratio(j) for j in range(d)])
    terms = v ** 2 * r
    D = terms.sum() - terms
    ua = A.T @ u
    return float(np.sqrt(max(float(ua @ (D * ua)), 0.0)))


# ---------------------------------------------------------------------------
# reference distributions
# ---------------------------------------------------------------------------

def chi2_cdf(x, dof) -> np.ndarray:
    """Chi-square CDF via the regularized lower incomplete gamma function."""
    x = np.asarray(x, dtype=float)
    return gammainc(dof / 2.0, np.maximum(x, 0.0) / 2.0)


def normal_quantile(p) -> float:
    if not 0 < p < 1:
        raise ValueError("probability must lie in (0, 1)")
    return float(ndtri(p))


def chi2_alignment(a_hat_j, a_j, n: int, moments: SourceMoments, j: int = 0,
                   form: str = "full"):
    """Alignment statistic and its chi-square reference CDF.

    ``form="full"`` is n kappa^2 / E[(S^3)^2] (1 - <a_hat, a>^2) against
    chi^2_d.  ``form="complement"`` standardizes by Var(S^3) instead and uses
    d - 1 degrees of freedom, the dimension of the orthogonal complement in
    which the error of a unit vector lives.  For symmetric sources the two
    statistics coincide and only the reference law differs.

    Returns ``(statistic, cdf, dof)``.
    """
    a_hat_j = np.asarray(a_hat_j, dtype=float)
    a_j = np.asarray(a_j, dtype=float)
    if n <= 0:
        raise ValueError("n must be positive")
    d = a_j.shape[0]
    c = float(a_hat_j @ a_j) / (np.linalg.norm(a_hat_j) * np.linalg.norm(a_j))
    gap = max(0.0, 1.0 - c * c)
    _, var3, kappa, ES6 = moments.at(j)
    if form == "full":
        stat, dof = n * kappa ** 2 / ES6 * gap, d
    elif form == "complement":
        stat, dof = n * kappa ** 2 / var3 * gap, d - 1
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(stat), float(chi2_cdf(stat, dof)), dof


# ---------------------------------------------------------------------------
# confidence intervals
# ---------------------------------------------------------------------------

@dataclass
class Contrast:
    kind: str  # "linear", "entry" or "bilinear"
    j: Optional[int] = None
    i: Optional[int] = None
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def label(self) -> str:
        if self.kind == "entry":
            return f"entry {self.i + 1} {self.j + 1}"
        if self.kind == "linear":
            return f"linear col {self.j + 1}"
        return "bilinear"


@dataclass
class Interval:
    contrast: Contrast
    estimate: float
    sigma: float
    lower: float
    upper: float

    def as_dict(self) -> dict:
        c = self.contrast
        out = {"type": c.kind, "label": c.label(), "estimate": self.estimate,
               "sigma": self.sigma, "interval": [self.lower, self.upper]}
        if c.i is not None:
            out["i"] = c.i + 1
        if c.j is not None:
            out["j"] = c.j + 1
        return out


@dataclass
class InferenceReport:
    level: float
    n: int
    intervals: List[Interval] = field(default_factory=list)
    joint_covariance: Optional[np.ndarray] = None
    chi2_alignment: Optional[list] = None
    warnings: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {"schema": 1, "level": self.level, "n": self.n,
               "intervals": [iv.as_dict() for iv in self.intervals],
               "warnings": self.warnings}
        if self.joint_covariance is not None:
            out["joint_covariance"] = self.joint_covariance.tolist()
        if self.chi2_alignment is not None:
            out["chi2_alignment"] = self.chi2_alignment
        return out


def confidence_intervals(A_hat, n: int, moments: SourceMoments,
                         contrasts: Sequence[Contrast], level: float = 0.95,
                         A_var=None) -> InferenceReport:
    """estimate +- z sigma / sqrt(n) for each contrast.

    Variances are evaluated at ``A_var`` (default: the estimate itself).
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if n <= 0:
        raise ValueError("n must be positive")
    A_hat = np.asarray(A_hat, dtype=float)
    A_var = A_hat if A_var is None else np.asarray(A_var, dtype=float)
    z = normal_quantile((1 + level) / 2)
    report = InferenceReport(level=level, n=n)
    d = A_hat.shape[0]
    for c in contrasts:
        if c.kind == "linear":
            est = float(c.u @ A_hat[:, c.j])
            sigma = sigma_linear(c.u, c.j, A_var, moments)
        elif c.kind == "entry":
            est = float(A_hat[c.i, c.j])
            sigma = sigma_entry(c.i, c.j, A_var, moments)
        elif c.kind == "bilinear":
            if c.u.shape != (d,) or c.v.shape != (d,):
                raise ValueError("bilinear contrast vectors must have length d")
            est = float(c.u @ A_hat @ c.v)
            sigma = sigma_bilinear(c.u, c.v, A_var, moments)
        else:
            raise ValueError(f"unknown contrast type {c.kind!r}")
        if sigma == 0:
            msg = f"{c.label()}: zero asymptotic variance, interval is degenerate"
            report.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning)
        half = z * sigma / np.sqrt(n)
        report.intervals.append(Interval(c, est, sigma, est - half, est + half))
    return report
