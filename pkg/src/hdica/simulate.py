"""Synthetic ICA data: unit-variance source families and random mixing.

Random streams are Philox counter-based generators keyed by
``SeedSequence(seed, spawn_key=key)``, so a (seed, replication, component)
triple always maps to the same stream regardless of scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

FAMILIES = ("laplace_unit", "uniform_unit", "rademacher", "gauss_rademacher", "student_t")
MIXINGS = ("identity", "haar_orthogonal", "explicit", "conditioned")
_ALIASES = {"laplace": "laplace_unit", "uniform": "uniform_unit", "t": "student_t"}


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SourceSpec:
    family: str = "laplace_unit"
    alpha: float = 0.5  # gauss_rademacher mixing weight
    df: float = 10.0    # student_t degrees of freedom

    def __post_init__(self):
        fam = _ALIASES.get(self.family, self.family)
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise ValueError(f"unknown source family {self.family!r}")
        if fam == "gauss_rademacher" and not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if fam == "student_t" and self.df < 9:
            raise ValueError("student_t needs df >= 9 for a finite eighth moment")

    @classmethod
    def parse(cls, text: str) -> "SourceSpec":
        """'laplace', 'gauss_rademacher:0.8', 'student_t:12', ..."""
        name, _, arg = text.partition(":")
        name = _ALIASES.get(name, name)
        if not arg:
            return cls(name)
        if name == "gauss_rademacher":
            return cls(name, alpha=float(arg))
        if name == "student_t":
            return cls(name, df=float(arg))
        raise ValueError(f"family {name!r} takes no parameter")

    @property
    def label(self) -> str:
        if self.family == "gauss_rademacher":
            return f"gauss_rademacher:{self.alpha:g}"
        if self.family == "student_t":
            return f"student_t:{self.df:g}"
        return self.family

    # analytic moments of the unit-variance law
    ES3 = 0.0

    @property
    def ES4(self) -> float:
        f = self.family
        if f == "laplace_unit":
            return 6.0
        if f == "uniform_unit":
            return 1.8
        if f == "rademacher":
            return 1.0
        if f == "gauss_rademacher":
            a2 = self.alpha ** 2
            return -2 * a2 * a2 + 4 * a2 + 1
        nu = self.df
        return 3 * (nu - 2) / (nu - 4)

    @property
    def ES6(self) -> float:
        f = self.family
        if f == "laplace_unit":
            return 90.0
        if f == "uniform_unit":
            return 27.0 / 7.0
        if f == "rademacher":
            return 1.0
        if f == "gauss_rademacher":
            a2 = self.alpha ** 2
            b2 = 1 - a2
            return b2 ** 3 + 15 * a2 * b2 ** 2 + 45 * a2 ** 2 * b2 + 15 * a2 ** 3
        nu = self.df
        return 15 * (nu - 2) ** 2 / ((nu - 4) * (nu - 6))

    @property
    def kappa4(self) -> float:
        return self.ES4 - 3.0

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        f = self.family
        if f == "laplace_unit":
            return rng.laplace(0.0, 1 / math.sqrt(2), size)
        if f == "uniform_unit":
            r = math.sqrt(3.0)
            return rng.uniform(-r, r, size)
        if f == "rademacher":
            return rng.choice([-1.0, 1.0], size)
        if f == "gauss_rademacher":
            a = self.alpha
            signs = rng.choice([-1.0, 1.0], size)
            return a * rng.standard_normal(size) + math.sqrt(1 - a * a) * signs
        nu = self.df
        return rng.standard_t(nu, size) * math.sqrt((nu - 2) / nu)


def sample_haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian, R's diagonal made positive."""
    if d < 1:
        raise ValueError("d must be positive")
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def conditioned_mixing(d: int, cond: float, rng: np.random.Generator) -> np.ndarray:
    """U diag(s) V^T with Haar U, V and singular values log-spaced in [1, cond]."""
    if cond < 1:
        raise ValueError("condition number must be at least 1")
    U = sample_haar_orthogonal(d, rng)
    V = sample_haar_orthogonal(d, rng)
    s = np.geomspace(1.0, cond, d) if d > 1 else np.ones(1)
    return (U * s) @ V.T


@dataclass(frozen=True)
class Scenario:
    d: int
    n: int
    source: Union[SourceSpec, Tuple[SourceSpec, ...]] = SourceSpec()
    mixing: str = "haar_orthogonal"
    seed: int = 0
    rep: int = 0
    matrix: Optional[np.ndarray] = None  # explicit mixing
    condition: float = 3.0               # conditioned mixing

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be positive")
        if self.mixing not in MIXINGS:
            raise ValueError(f"unknown mixing {self.mixing!r}")
        if isinstance(self.source, (list, tuple)) and len(self.source) != self.d:
            raise ValueError("need one source spec per component")
        if self.mixing == "explicit":
            if self.matrix is None or np.shape(self.matrix) != (self.d, self.d):
                raise ValueError("explicit mixing needs a d x d matrix")

    def sources(self) -> Sequence[SourceSpec]:
        if isinstance(self.source, SourceSpec):
            return (self.source,) * self.d
        return tuple(self.source)

    def as_dict(self) -> dict:
        out = {"d": self.d, "n": self.n, "sources": [s.label for s in self.sources()],
               "mixing": self.mixing, "seed": self.seed, "rep": self.rep}
        if self.mixing == "conditioned":
            out["condition"] = self.condition
        return out


def mixing_matrix(scn: Scenario) -> np.ndarray:
    d = scn.d
    if scn.mixing == "identity":
        return np.eye(d)
    if scn.mixing == "explicit":
        return np.array(scn.matrix, dtype=float)
    rng = keyed_rng(scn.seed, scn.rep, d)  # key d is never a component index
    if scn.mixing == "haar_orthogonal":
        return sample_haar_orthogonal(d, rng)
    return conditioned_mixing(d, scn.condition, rng)


def generate(scn: Scenario):
    """Return (X, A, S) with S of shape (n, d) and X = S A^T."""
    S = np.empty((scn.n, scn.d))
    for j, spec in enumerate(scn.sources()):
        S[:, j] = spec.sample(keyed_rng(scn.seed, scn.rep, j), scn.n)
    A = mixing_matrix(scn)
    X = S.copy() if scn.mixing == "identity" else S @ A.T
    return X, A, S
