"""Feature-space radii for l_p-bounded input perturbations.

A point ``x`` perturbed by ``sigma`` with ``||sigma||_p <= eta`` moves in the
kernel's feature space by ``||phi(x + sigma) - phi(x)||``. The closed forms
here bound that displacement for polynomial and Gaussian RBF kernels; the
exact displacement of a given ``sigma`` is available through
:func:`feature_perturbation_norm` and serves as the check on the bounds.

Norm exponents are plain floats with ``INF`` (``math.inf``) standing for the
max-norm; every function branches on it explicitly rather than relying on
float limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from rksvm.dataset import Dataset, population_std
from rksvm.kernel import KernelSpec, evaluate

INF = math.inf
MAX_DEGREE = 10


def parse_norm(value) -> float:
    """Accept 1, 2, 1.5, "inf", "infinity" or math.inf; reject p < 1."""
    if isinstance(value, str):
        text = value.strip().lower()
        p = INF if text in ("inf", "infinity", "oo") else float(text)
    else:
        p = float(value)
    if math.isnan(p) or p < 1:
        raise ValueError(f"norm exponent must be >= 1, got {value!r}")
    return p


def format_norm(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:g}"


def lp_norm(x, p: float) -> float:
    x = np.abs(np.asarray(x, dtype=float).ravel())
    if math.isinf(p):
        return float(x.max(initial=0.0))
    if p == 1:
        return float(x.sum())
    if p == 2:
        return float(np.sqrt(x @ x))
    scale = x.max(initial=0.0)
    if scale == 0:
        return 0.0
    return float(scale * ((x / scale) ** p).sum() ** (1.0 / p))


def norm_constant(n: int, p: float) -> float:
    """Smallest ``C`` with ``||v||_2 <= C ||v||_p`` for every ``v`` in R^n."""
    p = parse_norm(p)
    if n < 1:
        raise ValueError("n must be positive")
    if p <= 2:
        return 1.0
    if math.isinf(p):
        return math.sqrt(n)
    return n ** ((p - 2) / (2 * p))


def _check_degree(d: int) -> int:
    d = int(d)
    if not 1 <= d <= MAX_DEGREE:
        raise ValueError(f"polynomial degree must lie in [1, {MAX_DEGREE}], got {d}")
    return d


def delta_polynomial(x_norm2: float, eta: float, n: int, p: float, d: int, c: float) -> float:
    """Radius bound for the kernel ``(c + <x, x'>)^d`` at a point of Euclidean norm ``x_norm2``."""
    d = _check_degree(d)
    if x_norm2 < 0 or eta < 0 or c < 0:
        raise ValueError("x_norm2, eta and c must be nonnegative")
    step = norm_constant(n, p) * eta
    if d == 1:
        return step
    homogeneous = sum(math.comb(d, k) * x_norm2 ** (d - k) * step**k for k in range(1, d + 1))
    if c == 0:
        return homogeneous
    mixed = 0.0
    for k in range(1, d):
        inner = sum(math.comb(d - k, j) * x_norm2 ** (d - k - j) * step**j for j in range(1, d - k + 1))
        mixed += math.comb(d, k) * c**k * inner**2
    return math.sqrt(homogeneous**2 + mixed)


def delta_rbf(eta: float, n: int, p: float, alpha: float) -> float:
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    step = norm_constant(n, p) * eta
    # 2 - 2 exp(-t) written with expm1 keeps precision for small radii.
    return math.sqrt(-2.0 * math.expm1(-(step**2) / (2.0 * alpha**2)))


def feature_perturbation_norm(spec: KernelSpec, x, sigma) -> float:
    """Exact ``||phi(x + sigma) - phi(x)||`` through kernel evaluations only."""
    x = np.asarray(x, dtype=float).ravel()
    sigma = np.asarray(sigma, dtype=float).ravel()
    moved = x + sigma
    k_moved = evaluate(spec, moved, moved)
    k_orig = evaluate(spec, x, x)
    sq = k_moved - 2.0 * evaluate(spec, moved, x) + k_orig
    if sq < 0:
        if sq < -1e-12 * max(1.0, abs(k_moved) + abs(k_orig)):
            raise ArithmeticError(f"negative squared feature distance {sq!r}; kernel is not positive semidefinite")
        return 0.0
    return math.sqrt(sq)


def sample_in_ball(rng: np.random.Generator, n: int, p: float, radius: float, *, on_surface: bool = False) -> np.ndarray:
    """Draw a vector with ``||v||_p <= radius``.

    The direction comes from independent generalized-Gaussian coordinates
    ``sign * Gamma(1/p)^(1/p)`` (uniform coordinates for the max-norm), which
    makes ``v / ||v||_p`` follow the cone measure of the unit sphere. The
    radius is ``radius * U^(1/n)`` so that the draw is uniform in the ball,
    or exactly ``radius`` when ``on_surface`` is set.
    """
    if math.isinf(p):
        z = rng.uniform(-1.0, 1.0, size=n)
    else:
        z = rng.gamma(1.0 / p, 1.0, size=n) ** (1.0 / p) * rng.choice((-1.0, 1.0), size=n)
    norm = lp_norm(z, p)
    while norm == 0:
        z = rng.uniform(-1.0, 1.0, size=n)
        norm = lp_norm(z, p)
    scale = radius if on_surface else radius * rng.uniform() ** (1.0 / n)
    return z * (scale / norm)


@dataclass(frozen=True, eq=False)
class UncertaintyConfig:
    """Per-point input radii ``eta`` and, once derived, feature radii ``delta``."""

    p: float
    eta: np.ndarray
    rho: Mapping = None
    delta: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "p", parse_norm(self.p))
        eta = np.asarray(self.eta, dtype=float)
        if np.any(eta < 0):
            raise ValueError("eta must be nonnegative")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "rho", dict(self.rho or {}))
        if self.delta is not None:
            object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))


def calibrate_eta(train: Dataset, rho_per_class: Mapping, p: float = 2.0) -> UncertaintyConfig:
    """Radius of each point = its class's rho times the class's largest feature std.

    A class with a single training point has zero spread and therefore
    gets ``eta = 0``.
    """
    missing = [c for c in train.class_ids if c in set(train.labels.tolist()) and c not in rho_per_class]
    if missing:
        raise ValueError(f"no rho given for classes {missing}")
    eta = np.zeros(train.m)
    for c in train.class_ids:
        members = train.labels == c
        if not members.any():
            continue
        rho = float(rho_per_class[c])
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        spread = float(population_std(train.features[members]).max())
        eta[members] = rho * spread
    return UncertaintyConfig(p=p, eta=eta, rho=dict(rho_per_class))


def derive_delta(cfg: UncertaintyConfig, spec: KernelSpec, X: np.ndarray) -> UncertaintyConfig:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != cfg.eta.shape[0]:
        raise ValueError(f"eta has {cfg.eta.shape[0]} entries for {X.shape[0]} points")
    n = X.shape[1]
    if spec.family == "gaussian_rbf":
        delta = [delta_rbf(e, n, cfg.p, spec.alpha) for e in cfg.eta]
    else:
        norms = np.sqrt((X * X).sum(axis=1))
        delta = [delta_polynomial(r, e, n, cfg.p, spec.degree, spec.coef) for r, e in zip(norms, cfg.eta)]
    return replace(cfg, delta=np.array(delta, dtype=float))
