"""Prewhitening, including the sample-split scheme."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .fastica import MixingEstimate
from .tensorops import check_data

EIG_FLOOR = 1e-10
MODES = ("split", "known", "none", "in_sample")


class SingularCovarianceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class WhitenPlan:
    mode: str = "split"
    split_fraction: float = 0.5
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown whitening mode {self.mode!r}")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.mode == "known" and self.sigma is None:
            raise ValueError("known mode needs a covariance matrix")


@dataclass
class WhitenResult:
    whitened: np.ndarray
    sigma_half: np.ndarray
    sigma_inv_half: np.ndarray
    mean: np.ndarray
    cov_rows: np.ndarray
    fit_rows: np.ndarray


def sqrt_pair(sigma: np.ndarray, eig_floor: float = EIG_FLOOR):
    """Symmetric square root of a covariance and its inverse."""
    sigma = np.asarray(sigma, dtype=float)
    sigma = (sigma + sigma.T) / 2
    lam, V = np.linalg.eigh(sigma)
    top = lam.max()
    if top <= 0:
        raise SingularCovarianceError("covariance has no positive eigenvalue")
    bad = lam < eig_floor * top
    if np.any(bad):
        raise SingularCovarianceError(
            f"covariance is numerically singular: eigenvalue {lam[bad].min():.3e} "
            f"is below {eig_floor:g} x {top:.3e}")
    root = np.sqrt(lam)
    half = (V * root) @ V.T
    inv_half = (V / root) @ V.T
    return (half + half.T) / 2, (inv_half + inv_half.T) / 2


def whiten(data, plan: WhitenPlan = WhitenPlan()) -> WhitenResult:
    """Whiten data according to ``plan``.

    In split mode the first ceil(n * split_fraction) rows estimate the
    covariance and column mean; the remaining rows are centered with that mean,
    whitened and returned.  Known mode uses the supplied covariance and does
    not center.
    """
    X = check_data(data)
    n, d = X.shape
    rows = np.arange(n)
    if plan.mode == "none":
        eye = np.eye(d)
        return WhitenResult(X.copy(), eye, eye.copy(), np.zeros(d), rows[:0], rows)
    if plan.mode == "known":
        half, inv_half = sqrt_pair(plan.sigma)
        return WhitenResult(X @ inv_half, half, inv_half, np.zeros(d), rows[:0], rows)
    if plan.mode == "split":
        n1 = int(np.ceil(n * plan.split_fraction))
        if n1 < 2 or n - n1 < 2:
            raise ValueError(f"cannot split {n} rows with fraction {plan.split_fraction}")
        cov_rows, fit_rows = rows[:n1], rows[n1:]
    else:
        cov_rows, fit_rows = rows, rows
    mu = X[cov_rows].mean(axis=0)
    Xc = X[cov_rows] - mu
    sigma = Xc.T @ Xc / len(cov_rows)
    half, inv_half = sqrt_pair(sigma)
    return WhitenResult((X[fit_rows] - mu) @ inv_half, half, inv_half, mu, cov_rows, fit_rows)


def unwhiten_columns(est: MixingEstimate, result: WhitenResult) -> MixingEstimate:
    """Map whitened-space directions back: a_j <- Sigma^{1/2} a_j."""
    if est.A_hat.shape[0] != result.sigma_half.shape[0]:
        raise ValueError("dimension mismatch between estimate and whitening")
    return replace(est, A_hat=result.sigma_half @ est.A_hat)
