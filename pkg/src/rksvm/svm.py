"""Two-step kernel SVM training, deterministic and robust, binary and one-versus-all.

Training first solves a linear program for the expansion coefficients ``u``
and an initial intercept ``gamma``; the slacks then fix a strip of candidate
intercepts, and a grid search over that strip picks the final intercept ``b``
with the fewest training misclassifications. A point ``x`` is scored by
``f(x) = sum_i k(x, x_i) y_i u_i - b`` and assigned to the positive class iff
``f(x) > 0``.

LP variable layout, shared by every builder in this module::

    u[0..m-1]  gamma  xi[0..m-1]  s[0..m-1]  [s_inf]

``u`` and ``gamma`` are free, the rest nonnegative. ``s`` bounds ``|u|``
componentwise and ``s_inf`` bounds ``max |u|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rksvm.dataset import Dataset
from rksvm.kernel import GramMatrix, KernelSpec, cross_gram, gram as build_gram
from rksvm.lp import LpProblem, LpSolution, solve_lp

DEFAULT_NMAX = 10_000
# RBF Gram matrices are often numerically singular; HiGHS handles them, the dense simplex may not.
TRAINING_LP_METHOD = "highs"
_GRID_CHUNK = 2048


class TrainingError(RuntimeError):
    pass


def parse_q(q) -> float:
    if isinstance(q, str):
        q = math.inf if q.strip().lower() in ("inf", "infinity") else float(q)
    q = float(q)
    if q not in (1.0, math.inf):
        raise ValueError(f"q must be 1 or inf for the LP models, got {q!r}")
    return q


def _entries(gram) -> np.ndarray:
    return gram.entries if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=float)


def margin_block(K: np.ndarray, y: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Rows ``y_i sum_j K_ij y_j u_j - y_i gamma + xi_i - delta_i sum_j sqrt(K_jj) s_j`` over ``(u, gamma, xi, s)``."""
    m = K.shape[0]
    sqrt_diag = np.sqrt(np.maximum(np.diag(K), 0.0))
    block = np.empty((m, 3 * m + 1))
    block[:, :m] = y[:, None] * K * y[None, :]
    block[:, m] = -y
    block[:, m + 1 : 2 * m + 1] = np.eye(m)
    # "+ 0.0" turns the -0.0 products of a zero radius into +0.0.
    block[:, 2 * m + 1 :] = -np.outer(delta, sqrt_diag) + 0.0
    return block


def _check_inputs(K, y, nu, delta):
    m = K.shape[0]
    if K.shape != (m, m):
        raise ValueError("Gram matrix must be square")
    if y.shape != (m,) or not np.all(np.abs(y) == 1):
        raise ValueError("labels must be a vector of +1/-1 with one entry per point")
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    if delta is not None and (delta.shape != (m,) or np.any(delta < 0)):
        raise ValueError("delta must be a nonnegative vector with one entry per point")
    if np.any(np.diag(K) < 0):
        raise ValueError("Gram matrix has a negative diagonal entry")


def _variable_names(m: int, q: float) -> tuple:
    names = (
        tuple(f"u[{j}]" for j in range(m))
        + ("gamma",)
        + tuple(f"xi[{i}]" for i in range(m))
        + tuple(f"s[{j}]" for j in range(m))
    )
    return names + (("s_inf",) if math.isinf(q) else ())


def _absolute_value_rows(m: int, n_vars: int, q: float) -> np.ndarray:
    eye = np.eye(m)
    s_rows = np.zeros((2 * m, n_vars))
    s_rows[:m, :m] = eye
    s_rows[m:, :m] = -eye
    s_rows[:, 2 * m + 1 : 3 * m + 1] = np.vstack([eye, eye])
    if not math.isinf(q):
        return s_rows
    inf_rows = np.zeros((2 * m, n_vars))
    inf_rows[:m, :m] = eye
    inf_rows[m:, :m] = -eye
    inf_rows[:, 3 * m + 1] = 1.0
    return np.vstack([s_rows, inf_rows])


def assemble_robust_lp(gram, labels, nu: float, delta, q_norm=1) -> LpProblem:
    """Linear program of the robust training step.

    Each margin row is tightened by ``delta_i * sum_j sqrt(K_jj) s_j``, the
    worst case over a feature-space ball of radius ``delta_i``. With
    ``q_norm=1`` the objective is ``sum(s) + nu sum(xi)``; with ``q_norm=inf``
    it is ``s_inf + nu sum(xi)``.
    """
    K = _entries(gram)
    y = np.asarray(labels, dtype=float)
    delta = np.asarray(delta, dtype=float)
    q = parse_q(q_norm)
    _check_inputs(K, y, nu, delta)
    m = K.shape[0]
    n_vars = 3 * m + 1 + (1 if math.isinf(q) else 0)

    c = np.zeros(n_vars)
    c[m + 1 : 2 * m + 1] = nu
    if math.isinf(q):
        c[3 * m + 1] = 1.0
    else:
        c[2 * m + 1 : 3 * m + 1] = 1.0

    margin = np.zeros((m, n_vars))
    margin[:, : 3 * m + 1] = margin_block(K, y, delta)
    abs_rows = _absolute_value_rows(m, n_vars, q)
    rows = np.vstack([margin, abs_rows])
    senses = (">=",) * rows.shape[0]
    rhs = np.concatenate([np.ones(m), np.zeros(abs_rows.shape[0])])
    lower = np.concatenate([np.full(m + 1, -np.inf), np.zeros(n_vars - m - 1)])
    return LpProblem(c, rows, senses, rhs, lower, np.full(n_vars, np.inf), _variable_names(m, q))


def assemble_deterministic_lp(gram, labels, nu: float, q_norm=1) -> LpProblem:
    """Nominal training program, written out without any uncertainty terms."""
    K = _entries(gram)
    y = np.asarray(labels, dtype=float)
    q = parse_q(q_norm)
    _check_inputs(K, y, nu, None)
    m = K.shape[0]
    n_vars = 3 * m + 1 + (1 if math.isinf(q) else 0)

    c = np.zeros(n_vars)
    c[m + 1 : 2 * m + 1] = nu
    if math.isinf(q):
        c[3 * m + 1] = 1.0
    else:
        c[2 * m + 1 : 3 * m + 1] = 1.0

    margin = np.zeros((m, n_vars))
    for i in range(m):
        for j in range(m):
            margin[i, j] = y[i] * K[i, j] * y[j]
        margin[i, m] = -y[i]
        margin[i, m + 1 + i] = 1.0
    rows = np.vstack([margin, _absolute_value_rows(m, n_vars, q)])
    rhs = np.concatenate([np.ones(m), np.zeros(rows.shape[0] - m)])
    lower = np.concatenate([np.full(m + 1, -np.inf), np.zeros(n_vars - m - 1)])
    return LpProblem(c, rows, (">=",) * rows.shape[0], rhs, lower, np.full(n_vars, np.inf), _variable_names(m, q))


def compute_omegas(labels, xi) -> tuple[float, float]:
    """Largest signed slack per side: ``max(y * xi)`` and ``max(-y * xi)``."""
    y = np.asarray(labels, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return float(np.max(y * xi)) + 0.0, float(np.max(-y * xi)) + 0.0


def search_interval(gamma: float, omegas: tuple[float, float]) -> tuple[float, float]:
    omega_pos, omega_neg = omegas
    return gamma + 1.0 - omega_neg, gamma - 1.0 + omega_pos


def misclassification_counts(scores, labels, penalty, b_values) -> np.ndarray:
    """Training-error counts for each candidate intercept.

    Point ``i`` counts at intercept ``b`` when
    ``y_i b - y_i scores_i + penalty_i > 0`` (strictly).
    """
    y = np.asarray(labels, dtype=float)
    base = -y * np.asarray(scores, dtype=float) + np.asarray(penalty, dtype=float)
    b_values = np.atleast_1d(np.asarray(b_values, dtype=float))
    out = np.empty(b_values.shape[0], dtype=np.int64)
    for start in range(0, b_values.shape[0], _GRID_CHUNK):
        chunk = b_values[start : start + _GRID_CHUNK]
        out[start : start + _GRID_CHUNK] = ((chunk[:, None] * y[None, :] + base[None, :]) > 0).sum(axis=1)
    return out


def intercept_search(gram, labels, u, gamma: float, omegas, delta=None, n_max: int = DEFAULT_NMAX) -> float:
    """Intercept with the fewest training misclassifications on the strip grid.

    The strip ``[gamma + 1 - omega_neg, gamma - 1 + omega_pos]`` is cut into
    ``n_max`` equal pieces and all ``n_max + 1`` endpoints are scored; the
    smallest minimizer wins. An empty strip (both sides already separated)
    returns ``gamma``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    K = _entries(gram)
    y = np.asarray(labels, dtype=float)
    u = np.asarray(u, dtype=float)
    lo, hi = search_interval(gamma, omegas)
    if lo > hi:
        return float(gamma)
    grid = np.linspace(lo, hi, n_max + 1)
    scores = K @ (y * u)
    penalty = _penalty(K, u, delta)
    counts = misclassification_counts(scores, y, penalty, grid)
    return float(grid[int(np.argmin(counts))])


def _penalty(K: np.ndarray, u: np.ndarray, delta) -> np.ndarray:
    if delta is None:
        return np.zeros(K.shape[0])
    delta = np.asarray(delta, dtype=float)
    return delta * float(np.sqrt(np.maximum(np.diag(K), 0.0)) @ np.abs(u))


@dataclass(eq=False)
class TrainedClassifier:
    """Binary classifier; ``labels`` holds the +1/-1 coding of ``support_points``."""

    u: np.ndarray
    gamma: float
    b: float
    omega_pos: float
    omega_neg: float
    xi: np.ndarray
    support_points: np.ndarray
    labels: np.ndarray
    spec: KernelSpec
    q_norm: float = 1.0
    delta: np.ndarray = None
    nu: float = 1.0
    lp_objective: float = float("nan")
    positive_class: object = 1
    negative_class: object = -1
    transform: dict | None = None

    def __post_init__(self):
        m = len(self.u)
        self.u = np.asarray(self.u, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        self.support_points = np.atleast_2d(np.asarray(self.support_points, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float)
        self.delta = np.zeros(m) if self.delta is None else np.asarray(self.delta, dtype=float)
        self._active = np.flatnonzero(self.u != 0)

    @property
    def n_features(self) -> int:
        return self.support_points.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"classifier expects {self.n_features} features, got {X.shape[1]}")
        active = self._active
        if active.size == 0:
            values = np.full(X.shape[0], -self.b)
        else:
            weights = self.labels[active] * self.u[active]
            values = cross_gram(self.spec, X, self.support_points[active]) @ weights - self.b
        return values[0] if single else values

    def search_interval(self) -> tuple[float, float]:
        return search_interval(self.gamma, (self.omega_pos, self.omega_neg))

    def to_dict(self) -> dict:
        return {
            "kind": "binary",
            "u": self.u.tolist(),
            "gamma": self.gamma,
            "b": self.b,
            "omega_pos": self.omega_pos,
            "omega_neg": self.omega_neg,
            "xi": self.xi.tolist(),
            "support_points": self.support_points.tolist(),
            "labels": self.labels.tolist(),
            "kernel": self.spec.to_dict(),
            "q_norm": "inf" if math.isinf(self.q_norm) else self.q_norm,
            "delta": self.delta.tolist(),
            "nu": self.nu,
            "lp_objective": self.lp_objective,
            "positive_class": self.positive_class,
            "negative_class": self.negative_class,
            "transform": self.transform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedClassifier":
        return cls(
            u=d["u"],
            gamma=d["gamma"],
            b=d["b"],
            omega_pos=d["omega_pos"],
            omega_neg=d["omega_neg"],
            xi=d["xi"],
            support_points=d["support_points"],
            labels=d["labels"],
            spec=KernelSpec.from_dict(d["kernel"]),
            q_norm=parse_q(d["q_norm"]),
            delta=d["delta"],
            nu=d["nu"],
            lp_objective=d["lp_objective"],
            positive_class=d["positive_class"],
            negative_class=d["negative_class"],
            transform=d.get("transform"),
        )


def binary_coding(data: Dataset) -> tuple[np.ndarray, object, object]:
    """Map labels to +1/-1.

    Labels that already are 1 and -1 keep their meaning; otherwise the first
    entry of ``class_ids`` becomes the positive class.
    """
    if data.n_classes != 2:
        raise ValueError(f"binary training needs exactly 2 classes, found {data.n_classes}")
    ids = data.class_ids
    if set(ids) == {1, -1}:
        pos, neg = 1, -1
    else:
        pos, neg = ids
    return np.where(data.labels == pos, 1.0, -1.0), pos, neg


def fit_coded(
    K: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    nu: float,
    q_norm=1,
    delta=None,
    n_max: int = DEFAULT_NMAX,
    lp_method: str = TRAINING_LP_METHOD,
) -> TrainedClassifier:
    """Both training steps on a precomputed Gram matrix and +1/-1 labels."""
    q = parse_q(q_norm)
    m = K.shape[0]
    if delta is None or not np.any(np.asarray(delta) > 0):
        problem = assemble_deterministic_lp(K, y, nu, q)
        delta = np.zeros(m)
    else:
        delta = np.asarray(delta, dtype=float)
        problem = assemble_robust_lp(K, y, nu, delta, q)
    solution = solve_lp(problem, method=lp_method)
    if not solution.optimal:
        # Large slacks always give a feasible point and the objective is bounded by 0.
        raise TrainingError(f"training LP ended with status {solution.status!r}")
    u, gamma, xi = _unpack(solution, m)
    omegas = compute_omegas(y, xi)
    b = intercept_search(K, y, u, gamma, omegas, delta, n_max)
    return TrainedClassifier(
        u=u,
        gamma=gamma,
        b=b,
        omega_pos=omegas[0],
        omega_neg=omegas[1],
        xi=xi,
        support_points=X,
        labels=y,
        spec=spec,
        q_norm=q,
        delta=delta,
        nu=nu,
        lp_objective=solution.objective_value,
    )


def _unpack(solution: LpSolution, m: int):
    x = solution.variable_values
    u = x[:m].copy()
    gamma = float(x[m]) + 0.0
    xi = np.maximum(x[m + 1 : 2 * m + 1], 0.0)
    return u, gamma, xi


def train_binary(
    train: Dataset,
    spec: KernelSpec,
    nu: float,
    q_norm=1,
    delta=None,
    n_max: int = DEFAULT_NMAX,
    gram: GramMatrix | None = None,
    lp_method: str = TRAINING_LP_METHOD,
) -> TrainedClassifier:
    y, pos, neg = binary_coding(train)
    K = _entries(gram) if gram is not None else build_gram(spec, train.features).entries
    clf = fit_coded(K, train.features, y, spec, nu, q_norm, delta, n_max, lp_method)
    clf.positive_class, clf.negative_class = pos, neg
    return clf


def predict(clf: TrainedClassifier, x) -> np.ndarray | int:
    """+1 where the decision value is strictly positive, -1 elsewhere (boundary included)."""
    values = clf.decision_function(x)
    out = np.where(values > 0, 1, -1)
    return int(out) if np.ndim(values) == 0 else out


def predict_classes(clf: TrainedClassifier, X) -> np.ndarray:
    coded = np.atleast_1d(predict(clf, np.atleast_2d(X)))
    return np.array([clf.positive_class if v == 1 else clf.negative_class for v in coded])


@dataclass(eq=False)
class MulticlassClassifier:
    """One-versus-all ensemble: ``classifiers[l]`` separates ``class_ids[l]`` from the rest."""

    classifiers: list
    class_ids: tuple
    transform: dict | None = field(default=None)

    def __post_init__(self):
        self.class_ids = tuple(self.class_ids)
        if len(self.classifiers) != len(self.class_ids):
            raise ValueError("need exactly one classifier per class")

    def decision_values(self, X) -> np.ndarray:
        """Matrix of ``f_l(x)`` with one column per class."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([clf.decision_function(X) for clf in self.classifiers])

    def to_dict(self) -> dict:
        return {
            "kind": "multiclass",
            "class_ids": list(self.class_ids),
            "classifiers": [c.to_dict() for c in self.classifiers],
            "transform": self.transform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MulticlassClassifier":
        return cls([TrainedClassifier.from_dict(c) for c in d["classifiers"]], tuple(d["class_ids"]), d.get("transform"))


def train_multiclass(
    train: Dataset,
    spec: KernelSpec,
    nu: float,
    q_norm=1,
    deltas=None,
    n_max: int = DEFAULT_NMAX,
    gram: GramMatrix | None = None,
    lp_method: str = TRAINING_LP_METHOD,
) -> MulticlassClassifier:
    """One binary problem per class on the shared Gram matrix.

    ``deltas`` is either one radius vector shared by all problems (radii are a
    property of the points) or a mapping from class id to a vector.
    """
    counts = train.class_counts()
    absent = [c for c, k in counts.items() if k == 0]
    if absent:
        raise ValueError(f"classes {absent} have no training points")
    if train.n_classes < 2:
        raise ValueError("need at least 2 classes")
    K = _entries(gram) if gram is not None else build_gram(spec, train.features).entries
    classifiers = []
    for c in train.class_ids:
        y = np.where(train.labels == c, 1.0, -1.0)
        delta = deltas.get(c) if isinstance(deltas, dict) else deltas
        clf = fit_coded(K, train.features, y, spec, nu, q_norm, delta, n_max, lp_method)
        clf.positive_class, clf.negative_class = c, None
        classifiers.append(clf)
    return MulticlassClassifier(classifiers, train.class_ids)


def predict_multiclass(clf: MulticlassClassifier, x):
    """Class with the largest decision value; ties go to the earliest class id."""
    values = clf.decision_values(x)
    winners = np.argmax(values, axis=1)
    labels = [clf.class_ids[k] for k in winners]
    return labels[0] if np.ndim(x) == 1 else np.array(labels)


def training_error(model, data: Dataset) -> float:
    """Fraction of ``data`` the model misclassifies."""
    predicted = predict_labels(model, data.features)
    return float(np.mean(predicted != data.labels))


def predict_labels(model, X) -> np.ndarray:
    if isinstance(model, MulticlassClassifier):
        return np.atleast_1d(predict_multiclass(model, np.atleast_2d(X)))
    return predict_classes(model, X)


def model_from_dict(d: dict):
    return MulticlassClassifier.from_dict(d) if d.get("kind") == "multiclass" else TrainedClassifier.from_dict(d)
