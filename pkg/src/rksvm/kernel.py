"""Polynomial and Gaussian RBF kernels and their Gram matrices."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from rksvm.dataset import Dataset, population_std

FAMILIES = ("polynomial", "gaussian_rbf")
_FAMILY_ALIASES = {"poly": "polynomial", "rbf": "gaussian_rbf", "gaussian": "gaussian_rbf"}


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family with its parameters.

    ``polynomial`` evaluates ``(coef + <x, x'>) ** degree`` (homogeneous when
    ``coef == 0``); ``gaussian_rbf`` evaluates
    ``exp(-||x - x'||^2 / (2 alpha^2))``. Parameters of the other family are
    ignored.
    """

    family: str
    degree: int = 1
    coef: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        family = _FAMILY_ALIASES.get(self.family, self.family)
        if family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "coef", float(self.coef))
        object.__setattr__(self, "alpha", float(self.alpha))
        if family == "polynomial":
            if self.degree < 1:
                raise KernelError("polynomial degree must be >= 1")
            if self.coef < 0:
                raise KernelError("polynomial coef must be >= 0")
        elif not self.alpha > 0:
            raise KernelError("RBF alpha must be > 0")

    @classmethod
    def polynomial(cls, degree: int, coef: float = 0.0) -> "KernelSpec":
        return cls("polynomial", degree=degree, coef=coef)

    @classmethod
    def rbf(cls, alpha: float) -> "KernelSpec":
        return cls("gaussian_rbf", alpha=alpha)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)

    def label(self) -> str:
        if self.family == "gaussian_rbf":
            return f"rbf(alpha={self.alpha:.6g})"
        kind = "hom" if self.coef == 0 else "inhom"
        return f"{kind}_poly(d={self.degree}, c={self.coef:.6g})"


def evaluate(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise KernelError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    if spec.family == "polynomial":
        return float((spec.coef + x @ x2) ** spec.degree)
    diff = x - x2
    return float(np.exp(-(diff @ diff) / (2.0 * spec.alpha**2)))


def cross_gram(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Matrix of kernel values between the rows of ``X`` and the rows of ``Y``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.family == "polynomial":
        return (spec.coef + X @ Y.T) ** spec.degree
    # Pairwise differences (not the |x|^2 + |y|^2 - 2<x, y> expansion) keep identical rows at distance exactly 0.
    sq = cdist(X, Y, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.alpha**2))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    spec: KernelSpec

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def diag_sqrt(self) -> np.ndarray:
        """Feature-space norms ``sqrt(K_jj)`` of the training points."""
        return np.sqrt(np.maximum(np.diag(self.entries), 0.0))


def gram(spec: KernelSpec, X: np.ndarray) -> GramMatrix:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 1:
        raise KernelError("need at least one row")
    K = cross_gram(spec, X, X)
    # Symmetrize away rounding in the polynomial matrix product.
    K = 0.5 * (K + K.T)
    K.setflags(write=False)
    return GramMatrix(K, spec)


def default_alpha(train: Dataset) -> float:
    """Largest per-feature population standard deviation of the training data.

    Serves as the RBF width and as the additive constant of inhomogeneous
    polynomial kernels when none is given.
    """
    if train.n < 1:
        raise KernelError("need at least one feature")
    value = float(population_std(train.features).max())
    if not value > 0:
        raise KernelError("all features are constant; alpha must be > 0")
    return value
