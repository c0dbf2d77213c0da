"""Initial directions for the fixed-point iteration.

``projection_slicing`` is the sample-split, projected moment estimate sliced
along random Gaussian weights; the other three are the usual baselines.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .robust_moments import (
    CumulantOperator,
    build_projected_M,
    build_sample_raw,
    population_operator,
    projected_from_population,
    split_halves,
)
from .tensorops import PopulationTensor, check_data, rank_d_spectral

L_CAP = 400
KINDS = ("projection_slicing", "sample_slicing", "random_unit", "naive_matricization")


@dataclass(frozen=True)
class InitMethod:
    kind: str = "projection_slicing"
    L: Optional[int] = None
    L_cap: int = L_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown initializer {self.kind!r}; expected one of {KINDS}")
        if self.L is not None and self.L < 1:
            raise ValueError("L must be at least 1")

    def slices_for(self, d: int) -> int:
        return self.L if self.L is not None else min(d * d, self.L_cap)


@dataclass
class InitCandidate:
    direction: np.ndarray
    slice_singular_value: Optional[float] = None
    slice_index: Optional[int] = None
    singular_values: Optional[np.ndarray] = None
    method: str = ""


def canonical_sign(u: np.ndarray) -> np.ndarray:
    """Flip u so that its largest-magnitude entry is positive."""
    u = u / np.linalg.norm(u)
    return u if u[np.argmax(np.abs(u))] >= 0 else -u


def top_slice(op: CumulantOperator, L: int, rng: np.random.Generator,
              method: str) -> InitCandidate:
    """Best of L random slices unvec(op vec G_l) by leading singular value.

    Every slice is symmetric, so singular values are absolute eigenvalues and
    the leading left singular vector is the matching eigenvector.
    """
    d = op.d
    G = rng.standard_normal((L, d, d))
    B = op.slices(G)
    B = (B + np.swapaxes(B, 1, 2)) / 2
    sigma = np.abs(np.linalg.eigvalsh(B)).max(axis=1)
    best = int(np.argmax(sigma))
    lam, vecs = np.linalg.eigh(B[best])
    u = vecs[:, np.argmax(np.abs(lam))]
    return InitCandidate(canonical_sign(u), float(sigma[best]), best, sigma, method)


def init_projection_slicing(op: CumulantOperator, L: int,
                            rng: np.random.Generator) -> InitCandidate:
    if op.kind != "projected_M":
        raise ValueError("projection slicing needs a projected_M operator")
    return top_slice(op, L, rng, "projection_slicing")


def init_sample_slicing(data, L: int, rng: np.random.Generator) -> InitCandidate:
    """Slices of the raw sample cumulant (sample moment minus M0)."""
    if isinstance(data, CumulantOperator):
        op = data.minus_m0()
    elif isinstance(data, PopulationTensor):
        op = population_operator(data)
    else:
        op = build_sample_raw(data).minus_m0()
    return top_slice(op, L, rng, "sample_slicing")


def init_random_unit(d: int, rng: np.random.Generator) -> InitCandidate:
    if d < 1:
        raise ValueError("d must be positive")
    g = rng.standard_normal(d)
    while not np.any(g):
        g = rng.standard_normal(d)
    return InitCandidate(g / np.linalg.norm(g), method="random_unit")


def init_naive_matricization(data, rng: Optional[np.random.Generator] = None
                             ) -> InitCandidate:
    """Leading left singular vector of the reshaped top eigenvector of the
    matricized raw sample cumulant."""
    if rng is None:
        rng = np.random.default_rng(0)
    if isinstance(data, CumulantOperator):
        op = data.minus_m0()
    elif isinstance(data, PopulationTensor):
        op = population_operator(data)
    else:
        op = build_sample_raw(data).minus_m0()
    d = op.d
    spec = rank_d_spectral(op, d * d, 1, rng, tol=1e-10, max_iters=50, check=False)
    U1 = spec.U[:, 0].reshape(d, d)
    left, s, _ = np.linalg.svd((U1 + U1.T) / 2)
    return InitCandidate(canonical_sign(left[:, 0]), float(s[0]), method="naive_matricization")


def initialize(source, method: InitMethod, rng: np.random.Generator) -> InitCandidate:
    """Run one initializer on data (n x m array) or a population law."""
    pop = isinstance(source, PopulationTensor)
    d = source.d if pop else check_data(source).shape[1]
    if method.kind == "random_unit":
        return init_random_unit(d, rng)
    if method.kind == "naive_matricization":
        return init_naive_matricization(source, rng)
    L = method.slices_for(d)
    if method.kind == "sample_slicing":
        return init_sample_slicing(source, L, rng)
    if pop:
        op = projected_from_population(source, rng)
    else:
        op = build_projected_M(*split_halves(source), rng)
    return init_projection_slicing(op, L, rng)
