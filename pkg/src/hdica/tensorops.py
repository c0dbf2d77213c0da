"""Matrix-free fourth-moment contractions, the Gaussian baseline tensor and a
randomized spectral solver for symmetric operators on R^{d^2}.

Vectorization convention: a d x d matrix V is identified with the length d^2
vector ``V.reshape(-1)`` (row-major), so the (i, j) entry sits at ``i*d + j``.
The (12)(34) matricization of a fourth-order tensor T is the d^2 x d^2 matrix
with entry ``[(i, j), (k, l)] = T[i, j, k, l]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

D_MAX_DENSE = 12
# rows of X (x) X materialized at once is capped at this many float64 entries
_CHUNK_ENTRIES = 1 << 22


class DimensionError(ValueError):
    """Raised when array shapes do not conform."""


class SpectralError(ArithmeticError):
    """Raised when the randomized spectral solver cannot proceed."""


def check_data(X, min_rows: int = 2) -> np.ndarray:
    """Validate an n x d sample matrix and return it as a float64 array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"data must be a 2-d array, got shape {X.shape}")
    n, d = X.shape
    if n < min_rows or d < 2:
        raise DimensionError(f"data needs n >= {min_rows} and d >= 2, got n={n}, d={d}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite entries")
    return X


def check_unit(u, d: int, tol: float = 1e-8, name: str = "u") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (d,):
        raise DimensionError(f"{name} must have shape ({d},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite entries")
    if abs(np.linalg.norm(u) - 1.0) > tol:
        raise ValueError(f"{name} must be a unit vector (norm {np.linalg.norm(u):.3g})")
    return u


def row_chunks(n: int, d: int):
    """Yield slices of rows such that each chunk of X (x) X fits the budget."""
    step = max(1, _CHUNK_ENTRIES // max(1, d * d))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def kron_rows(X: np.ndarray) -> np.ndarray:
    """Rows Y_i = vec(X_i X_i^T), shape (n, d^2)."""
    n, d = X.shape
    return (X[:, :, None] * X[:, None, :]).reshape(n, d * d)


# ---------------------------------------------------------------------------
# sample moment contractions
# ---------------------------------------------------------------------------

def contract4(X, *directions):
    """Contract the sample fourth-moment tensor with up to four directions.

    The directions are applied to the trailing modes, so with k directions the
    result has order 4 - k: ``(1/n) sum_i X_i^{(x)(4-k)} prod_m (u_m^T X_i)``.
    Three directions give a vector, two a d x d matrix, four a scalar.  Nothing
    of size d^4 is ever formed.
    """
    X = check_data(X, min_rows=1)
    n, d = X.shape
    if not 1 <= len(directions) <= 4:
        raise ValueError("provide between one and four directions")
    weights = np.ones(n)
    for m, u in enumerate(directions):
        u = check_unit(u, d, name=f"direction {m}")
        weights = weights * (X @ u)
    free = 4 - len(directions)
    if free == 0:
        return float(weights.mean())
    if free == 1:
        return X.T @ weights / n
    if free == 2:
        return (X * weights[:, None]).T @ X / n
    return np.einsum("n,ni,nj,nk->ijk", weights, X, X, X, optimize=True) / n


def cubic_contraction(X: np.ndarray, a: np.ndarray) -> np.ndarray:
    """(1/n) sum_i X_i (a^T X_i)^3 without input validation (hot loop)."""
    s = X @ a
    return X.T @ (s * s * s) / X.shape[0]


# ---------------------------------------------------------------------------
# Gaussian baseline M0
# ---------------------------------------------------------------------------

def m0_contract(u) -> float:
    """<M0, u o u o u o u> = 3 ||u||^4."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise DimensionError("u must be a vector")
    return 3.0 * float(u @ u) ** 2


def m0_apply(V, cov=None) -> np.ndarray:
    """Matricized M0 applied to vec(V), returned unvectorized.

    With the identity baseline this is ``tr(V) I + V + V^T``.  A covariance
    ``cov`` gives the baseline of a Gaussian with that covariance:
    ``<cov, V> cov + cov V cov + cov V^T cov``.  A trailing batch axis is
    allowed, V of shape (d, d, k).
    """
    V = np.asarray(V, dtype=float)
    if V.ndim not in (2, 3) or V.shape[0] != V.shape[1]:
        raise DimensionError(f"V must be (d, d) or (d, d, k), got {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("V contains non-finite entries")
    d = V.shape[0]
    Vt = np.swapaxes(V, 0, 1)
    if cov is None:
        tr = np.trace(V, axis1=0, axis2=1)
        eye = np.eye(d) if V.ndim == 2 else np.eye(d)[:, :, None]
        return tr * eye + V + Vt
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (d, d):
        raise DimensionError("cov must be d x d")
    inner = np.einsum("ij,ij...->...", cov, V)
    if V.ndim == 2:
        return inner * cov + cov @ (V + Vt) @ cov
    sandwich = np.einsum("ij,jlk,lm->imk", cov, V + Vt, cov)
    return inner[None, None, :] * cov[:, :, None] + sandwich


def m0_matvec(v: np.ndarray, d: int) -> np.ndarray:
    """M0 matricization applied to a block of d^2-vectors (columns)."""
    single = v.ndim == 1
    V = v.reshape(d, d, -1)
    out = m0_apply(V).reshape(d * d, -1)
    return out[:, 0] if single else out


def m0_dense(d: int) -> np.ndarray:
    """Dense M0 with entries d_ij d_kl + d_ik d_jl + d_il d_jk."""
    eye = np.eye(d)
    return (np.einsum("ij,kl->ijkl", eye, eye) + np.einsum("ik,jl->ijkl", eye, eye)
            + np.einsum("il,jk->ijkl", eye, eye))


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------

_PERMS = list(itertools.permutations(range(4)))


@dataclass(frozen=True)
class DenseTensor4:
    """Fully symmetric d x d x d x d array, only for small d."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 4 or len(set(e.shape)) != 1:
            raise DimensionError(f"expected a d^4 array, got shape {e.shape}")
        if e.shape[0] > D_MAX_DENSE:
            raise DimensionError(f"dense tensors limited to d <= {D_MAX_DENSE}")
        sym = sum(np.transpose(e, p) for p in _PERMS) / len(_PERMS)
        object.__setattr__(self, "entries", sym)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def contract(self, *directions):
        """Same contraction pattern as :func:`contract4`, on the dense array."""
        out = self.entries
        for u in reversed(directions):
            out = out @ np.asarray(u, dtype=float)
        return float(out) if out.ndim == 0 else out

    def matricize(self) -> np.ndarray:
        return self.entries.reshape(self.d ** 2, self.d ** 2)

    def slice(self, W) -> np.ndarray:
        """T x_{3,4} W."""
        return np.einsum("ijkl,kl->ij", self.entries, W)


def dense_oracle_build(X) -> DenseTensor4:
    X = check_data(X, min_rows=1)
    if X.shape[1] > D_MAX_DENSE:
        raise DimensionError(f"dense oracle limited to d <= {D_MAX_DENSE}, got d={X.shape[1]}")
    return DenseTensor4(np.einsum("ni,nj,nk,nl->ijkl", X, X, X, X) / X.shape[0])


# ---------------------------------------------------------------------------
# population (ODECO + Gaussian baseline) tensor
# ---------------------------------------------------------------------------

class PopulationTensor:
    """Exact fourth moment of X = B S with independent unit-variance sources.

    ``M4 = sum_k kappa_k b_k o b_k o b_k o b_k + M0(cov)`` with ``cov = B B^T``.
    Deflating by a direction a replaces B with (I - a a^T) B, which is exactly
    what happens to the law of X under data deflation.
    """

    def __init__(self, B, kappa):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.kappa = np.asarray(kappa, dtype=float)
        if self.B.shape[1] != self.kappa.shape[0]:
            raise DimensionError("B needs one column per kurtosis value")

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.B @ self.B.T

    def contract(self, *directions):
        """Contraction of the fourth moment tensor along trailing modes."""
        if not 1 <= len(directions) <= 4:
            raise ValueError("provide between one and four directions")
        return self._contract(directions)

    def _contract(self, directions):
        us = [np.asarray(u, dtype=float) for u in directions]
        proj = [self.B.T @ u for u in us]
        w = self.kappa * np.prod(proj, axis=0)
        C = self.cov
        cu = [C @ u for u in us]
        k = len(us)
        if k == 4:
            base = (us[0] @ cu[1]) * (us[2] @ cu[3]) + (us[0] @ cu[2]) * (us[1] @ cu[3]) \
                + (us[0] @ cu[3]) * (us[1] @ cu[2])
            return float(w.sum() + base)
        if k == 3:
            base = cu[0] * (us[1] @ cu[2]) + cu[1] * (us[0] @ cu[2]) + cu[2] * (us[0] @ cu[1])
            return self.B @ w + base
        if k == 2:
            base = (us[0] @ cu[1]) * C + np.outer(cu[0], cu[1]) + np.outer(cu[1], cu[0])
            return (self.B * w) @ self.B.T + base
        raise ValueError("single-direction population contraction is not supported")

    def cubic(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return self.contract(a, a, a)

    def cumulant_apply(self, V: np.ndarray) -> np.ndarray:
        """(M4 - M0(cov)) matricized, applied to columns of a d^2 x k block."""
        d = self.d
        single = V.ndim == 1
        V = V.reshape(d * d, -1)
        Kb = np.einsum("ik,jk->ijk", self.B, self.B).reshape(d * d, -1)
        out = Kb @ (self.kappa[:, None] * (Kb.T @ V))
        return out[:, 0] if single else out

    def deflated(self, a) -> "PopulationTensor":
        a = np.asarray(a, dtype=float)
        return PopulationTensor(self.B - np.outer(a, a @ self.B), self.kappa)

    def reduced(self, Q) -> "PopulationTensor":
        """Law of Q^T X for an orthonormal d x m basis Q."""
        return PopulationTensor(Q.T @ self.B, self.kappa)

    def dense(self) -> DenseTensor4:
        d = self.d
        T = np.einsum("k,ik,jk,lk,mk->ijlm", self.kappa, self.B, self.B, self.B, self.B)
        C = self.cov
        T = T + np.einsum("ij,kl->ijkl", C, C) + np.einsum("ik,jl->ijkl", C, C) \
            + np.einsum("il,jk->ijkl", C, C)
        if d > D_MAX_DENSE:
            raise DimensionError(f"dense tensors limited to d <= {D_MAX_DENSE}")
        return DenseTensor4(T)


# ---------------------------------------------------------------------------
# randomized spectral solver
# ---------------------------------------------------------------------------

@dataclass
class SpectralResult:
    U: np.ndarray
    eigenvalues: np.ndarray
    residual: float
    rank_deficient: bool = False


def check_symmetric(op: Callable, dim: int, rng: np.random.Generator,
                    pairs: int = 3, tol: float = 1e-8) -> float:
    """Probabilistic symmetry test; returns the worst relative asymmetry."""
    V = rng.standard_normal((dim, pairs))
    W = rng.standard_normal((dim, pairs))
    OV, OW = op(V), op(W)
    worst = 0.0
    for p in range(pairs):
        lhs, rhs = V[:, p] @ OW[:, p], OV[:, p] @ W[:, p]
        scale = np.linalg.norm(OV[:, p]) * np.linalg.norm(W[:, p]) + np.linalg.norm(
            OW[:, p]) * np.linalg.norm(V[:, p])
        if scale > 0:
            worst = max(worst, abs(lhs - rhs) / scale)
    if worst > tol:
        raise SpectralError(f"operator is not symmetric (relative asymmetry {worst:.2e})")
    return worst


def rank_d_spectral(op: Callable[[np.ndarray], np.ndarray], dim: int, rank: int,
                    rng: np.random.Generator, oversample: int = 10,
                    power_iters: int = 2, tol: float | None = None,
                    max_iters: int = 200, check: bool = True) -> SpectralResult:
    """Top-``rank`` eigenpairs (by magnitude) of a symmetric operator.

    ``op`` maps a ``dim x k`` block to a ``dim x k`` block.  Randomized subspace
    iteration with re-orthonormalization after every application, followed by
    Rayleigh-Ritz.  If ``tol`` is given, iteration continues past
    ``power_iters`` until ``||op U - U diag(lam)||_F / ||lam|| <= tol``.
    """
    if not 1 <= rank <= dim:
        raise ValueError(f"rank must be in [1, {dim}], got {rank}")
    if check:
        check_symmetric(op, dim, rng)
    k = min(dim, rank + oversample)
    Q, _ = np.linalg.qr(op(rng.standard_normal((dim, k))))
    its = 0
    while True:
        for _ in range(power_iters if its == 0 else 1):
            Q, _ = np.linalg.qr(op(Q))
        its += 1
        AQ = op(Q)
        T = Q.T @ AQ
        lam, W = np.linalg.eigh((T + T.T) / 2)
        order = np.argsort(-np.abs(lam))[:rank]
        lam, W = lam[order], W[:, order]
        U = Q @ W
        resid = np.linalg.norm(AQ @ W - U * lam) / max(np.linalg.norm(lam), np.finfo(float).tiny)
        if tol is None or resid <= tol or its >= max_iters:
            break
        Q = np.linalg.qr(AQ)[0]
    scale = np.abs(lam).max() if lam.size else 0.0
    deficient = bool(scale == 0 or np.abs(lam[-1]) <= 1e-12 * scale)
    return SpectralResult(U=U, eigenvalues=lam, residual=float(resid), rank_deficient=deficient)
