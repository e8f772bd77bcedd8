"""Dense linear programming and the second-order cone standard form.

The default engine of :func:`solve_lp` is a two-phase revised simplex method that keeps an explicit
basis inverse, updated by rank-one pivots and refactorized periodically.
Pricing is Dantzig's most-negative reduced cost; after a run of degenerate
pivots it falls back to Bland's smallest-index rule until the objective moves
again, which rules out cycling. HiGHS (through scipy) is available as a second
engine for programs too ill-conditioned for an explicit basis inverse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SENSES = (">=", "<=", "=")
FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
HARRIS_TOL = 1e-9
STABLE_PIVOT = 1e-7
REFACTOR_EVERY = 64
DEGENERATE_RUN = 20


class NumericalError(RuntimeError):
    """The simplex method lost accuracy (singular basis or iteration blow-up)."""


@dataclass(frozen=True, eq=False)
class LpProblem:
    """``min objective @ x`` subject to ``A x (sense) rhs`` and ``lower <= x <= upper``."""

    objective: np.ndarray
    constraint_matrix: np.ndarray
    constraint_senses: tuple
    rhs: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    var_names: tuple = field(default=())

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.shape[0]
        A = np.asarray(self.constraint_matrix, dtype=float).reshape(-1, n)
        senses = tuple(self.constraint_senses)
        b = np.asarray(self.rhs, dtype=float).ravel()
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if len(senses) != A.shape[0] or b.shape[0] != A.shape[0]:
            raise ValueError("constraint matrix, senses and rhs disagree on the number of rows")
        if lower.shape[0] != n or upper.shape[0] != n:
            raise ValueError("bounds must have one entry per variable")
        if any(s not in SENSES for s in senses):
            raise ValueError(f"senses must be among {SENSES}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("objective, matrix and rhs must be finite")
        if np.any(lower == np.inf) or np.any(upper == -np.inf) or np.any(lower > upper):
            raise ValueError("inconsistent variable bounds")
        for arr in (c, A, b, lower, upper):
            arr.setflags(write=False)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraint_matrix", A)
        object.__setattr__(self, "constraint_senses", senses)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "var_names", tuple(self.var_names))

    @property
    def n_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def n_rows(self) -> int:
        return self.constraint_matrix.shape[0]

    def violation(self, x: np.ndarray) -> float:
        """Largest absolute violation of any row or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = float(np.max(np.maximum(self.lower - x, x - self.upper), initial=0.0))
        lhs = self.constraint_matrix @ x
        for sense, value, target in zip(self.constraint_senses, lhs, self.rhs):
            gap = target - value if sense == ">=" else value - target if sense == "<=" else abs(value - target)
            worst = max(worst, gap)
        return worst

    def to_dict(self) -> dict:
        return {
            "objective": self.objective.tolist(),
            "rows": self.constraint_matrix.tolist(),
            "senses": list(self.constraint_senses),
            "rhs": self.rhs.tolist(),
            "lower": [None if math.isinf(v) else v for v in self.lower.tolist()],
            "upper": [None if math.isinf(v) else v for v in self.upper.tolist()],
            "var_names": list(self.var_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LpProblem":
        n = len(d["objective"])
        return cls(
            d["objective"],
            np.array(d["rows"], dtype=float).reshape(-1, n),
            d["senses"],
            d["rhs"],
            [-np.inf if v is None else v for v in d["lower"]],
            [np.inf if v is None else v for v in d["upper"]],
            tuple(d.get("var_names", ())),
        )


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: str
    objective_value: float
    variable_values: np.ndarray
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _StandardForm:
    """``min c z, A z = b, z >= 0, b >= 0`` plus the map back to the original variables.

    Original variable ``x_j`` equals ``offset_j + sum_k pos[j,k] z_k``; each
    ``x_j`` uses one column, or two for free variables.
    """

    def __init__(self, problem: LpProblem):
        n = problem.n_vars
        cols = []  # (original index, sign)
        self.offset = np.zeros(n)
        extra_rows = []  # (column, upper bound) for doubly bounded variables
        for j in range(n):
            lo, hi = problem.lower[j], problem.upper[j]
            if np.isfinite(lo):
                self.offset[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    extra_rows.append((len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                self.offset[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        n_struct = len(cols)
        self.cols = cols
        # Columns k and twin[k] are the two halves of one free variable.
        self.twin = {}
        for k in range(1, n_struct):
            if cols[k][0] == cols[k - 1][0]:
                self.twin[k], self.twin[k - 1] = k - 1, k

        A0 = problem.constraint_matrix
        T = np.zeros((n, n_struct))
        for k, (j, sign) in enumerate(cols):
            T[j, k] = sign
        A = A0 @ T
        b = problem.rhs - A0 @ self.offset
        senses = list(problem.constraint_senses)
        if extra_rows:
            bound_rows = np.zeros((len(extra_rows), n_struct))
            for r, (k, _) in enumerate(extra_rows):
                bound_rows[r, k] = 1.0
            A = np.vstack([A, bound_rows])
            b = np.concatenate([b, [ub for _, ub in extra_rows]])
            senses += ["<="] * len(extra_rows)

        n_rows = A.shape[0]
        n_slack = sum(s != "=" for s in senses)
        full = np.zeros((n_rows, n_struct + n_slack))
        full[:, :n_struct] = A
        slack_of_row = {}
        k = n_struct
        for i, s in enumerate(senses):
            if s == "<=":
                full[i, k] = 1.0
            elif s == ">=":
                full[i, k] = -1.0
            if s != "=":
                slack_of_row[i] = k
                k += 1
        # Zero-rhs ">=" rows are flipped too, so their slack can start in the basis.
        flip = (b < 0) | ((b == 0) & (np.array(senses) == ">="))
        full[flip] *= -1.0
        b = np.where(flip, -b, b)

        self.A = full
        self.b = b
        self.c = np.concatenate([problem.objective @ T, np.zeros(n_slack)])
        self.const = float(problem.objective @ self.offset)
        self.T = T
        self.n_struct = n_struct
        # A slack with +1 after the sign flip can start in the basis.
        self.slack_basis = {i: k for i, k in slack_of_row.items() if full[i, k] > 0}

    def recover(self, z: np.ndarray) -> np.ndarray:
        return self.offset + self.T @ z[: self.n_struct]


class _Simplex:
    def __init__(self, A: np.ndarray, b: np.ndarray, basis: list[int], max_iter: int, twin: dict | None = None):
        self.A = A
        self.b = b
        self.twin = twin or {}
        self.basis = list(basis)
        self.max_iter = max_iter
        self.iterations = 0
        self._refactor()

    def _refactor(self):
        B = self.A[:, self.basis]
        try:
            self.B_inv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular basis matrix") from exc
        if not np.all(np.isfinite(self.B_inv)):
            raise NumericalError("non-finite basis inverse")
        self.x_B = self.B_inv @ self.b
        self.x_B[np.abs(self.x_B) < 1e-13] = 0.0
        self.since_refactor = 0

    def run(self, c: np.ndarray, allowed: np.ndarray) -> str:
        """Pivot to optimality for cost ``c``; columns outside ``allowed`` never enter."""
        degenerate = 0
        bland = False
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        rejected = np.zeros(self.A.shape[1], dtype=bool)
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalError(f"no convergence after {self.iterations} pivots")
            y = c[self.basis] @ self.B_inv
            reduced = c - y @ self.A
            reduced[self.basis] = 0.0
            blocked = rejected.copy()
            for k in self.basis:
                if k in self.twin:
                    # The mirror column of a basic split half is exactly dependent on it.
                    blocked[self.twin[k]] = True
            candidates = np.flatnonzero(allowed & ~blocked & (reduced < -OPT_TOL * scale))
            if candidates.size == 0:
                if rejected.any():
                    raise NumericalError("only unstable pivots remain")
                return "optimal"
            q = int(candidates[0]) if bland else int(candidates[np.argmin(reduced[candidates])])

            col = self.B_inv @ self.A[:, q]
            r, theta = self._ratio_test(col, bland)
            unstable = r >= 0 and col[r] < STABLE_PIVOT * float(np.abs(col).max())
            if (r < 0 or unstable) and self.since_refactor > 0:
                # Re-derive from a fresh factorization before trusting a ray or a tiny pivot.
                self._refactor()
                continue
            if r < 0:
                return "unbounded"
            if unstable:
                rejected[q] = True
                continue

            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self._pivot(r, q, col)
            rejected[:] = False

    def _ratio_test(self, col: np.ndarray, bland: bool) -> tuple[int, float]:
        """Leaving row for entering column ``col``; -1 if the column is a ray.

        Outside Bland mode this is Harris's two-pass test: the step may
        overshoot the exact minimum ratio by ``HARRIS_TOL`` if that buys a
        larger, better-conditioned pivot element.
        """
        threshold = max(PIVOT_TOL, 1e-11 * float(np.abs(col).max()))
        rows = np.flatnonzero(col > threshold)
        if rows.size == 0:
            return -1, 0.0
        x = np.maximum(self.x_B[rows], 0.0)
        ratios = x / col[rows]
        if bland:
            theta = ratios.min()
            ties = rows[ratios <= theta + 1e-12 * max(1.0, theta)]
            r = int(min(ties, key=lambda i: self.basis[i]))
        else:
            relaxed = ((x + HARRIS_TOL) / col[rows]).min()
            ok = rows[ratios <= relaxed]
            r = int(ok[np.argmax(col[ok])])
        return r, max(self.x_B[r], 0.0) / col[r]

    def _pivot(self, r: int, q: int, col: np.ndarray):
        self.iterations += 1
        piv = col[r]
        theta = max(self.x_B[r], 0.0) / piv
        self.x_B -= theta * col
        self.x_B[r] = theta
        row = self.B_inv[r] / piv
        self.B_inv -= np.outer(col, row)
        self.B_inv[r] = row
        self.basis[r] = q
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self._refactor()

    def solution(self, n_cols: int) -> np.ndarray:
        self._refactor()
        z = np.zeros(n_cols)
        z[self.basis] = np.maximum(self.x_B, 0.0)
        return z


METHODS = ("simplex", "highs", "auto")


def solve_lp(problem: LpProblem, max_iter: int | None = None, method: str = "simplex") -> LpSolution:
    """Solve ``problem`` to a basic optimal solution.

    Returns status ``"optimal"``, ``"infeasible"`` or ``"unbounded"``.

    ``method="simplex"`` runs the dense revised simplex of this module and
    raises :class:`NumericalError` when the basis degenerates numerically.
    ``"highs"`` hands the problem to the HiGHS dual simplex shipped with
    scipy, whose LU factorization and scaling cope with the badly
    conditioned Gram blocks of RBF training programs. ``"auto"`` tries the
    dense simplex first and falls back to HiGHS on a numerical failure.
    """
    if method not in METHODS:
        raise ValueError(f"unknown LP method {method!r}; expected one of {METHODS}")
    if method == "highs":
        return _solve_highs(problem)
    if method == "auto":
        try:
            return _solve_dense(problem, max_iter)
        except NumericalError:
            return _solve_highs(problem)
    return _solve_dense(problem, max_iter)


def _solve_highs(problem: LpProblem) -> LpSolution:
    from scipy.optimize import linprog

    A, b = problem.constraint_matrix, problem.rhs
    senses = np.array(problem.constraint_senses)
    ge, le, eq = senses == ">=", senses == "<=", senses == "="
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([b[le], -b[ge]])
    bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(problem.lower, problem.upper)]
    res = linprog(
        problem.objective,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A[eq] if eq.any() else None,
        b_eq=b[eq] if eq.any() else None,
        bounds=bounds,
        method="highs-ds",
    )
    nan_x = np.full(problem.n_vars, np.nan)
    iterations = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        return LpSolution("optimal", float(problem.objective @ x), x, iterations)
    if res.status == 2:
        return LpSolution("infeasible", np.nan, nan_x, iterations)
    if res.status == 3:
        return LpSolution("unbounded", -np.inf, nan_x, iterations)
    raise NumericalError(f"HiGHS stopped without a verdict: {res.message}")


def _solve_dense(problem: LpProblem, max_iter: int | None) -> LpSolution:
    sf = _StandardForm(problem)
    A, b = sf.A, sf.b
    n_rows, n_cols = A.shape
    if max_iter is None:
        max_iter = 50 * (n_rows + n_cols) + 1000
    nan_x = np.full(problem.n_vars, np.nan)

    if n_rows == 0:
        if np.any(sf.c < -OPT_TOL):
            return LpSolution("unbounded", -np.inf, nan_x)
        x = sf.recover(np.zeros(n_cols))
        return LpSolution("optimal", float(problem.objective @ x), x)

    need_art = [i for i in range(n_rows) if i not in sf.slack_basis]
    A_ext = np.hstack([A, np.zeros((n_rows, len(need_art)))])
    basis = [sf.slack_basis.get(i, -1) for i in range(n_rows)]
    for k, i in enumerate(need_art):
        A_ext[i, n_cols + k] = 1.0
        basis[i] = n_cols + k
    n_ext = A_ext.shape[1]
    is_art = np.zeros(n_ext, dtype=bool)
    is_art[n_cols:] = True

    simplex = _Simplex(A_ext, b, basis, max_iter, sf.twin)
    if need_art:
        phase1_cost = is_art.astype(float)
        if simplex.run(phase1_cost, np.ones(n_ext, dtype=bool)) != "optimal":
            raise NumericalError("phase 1 reported an unbounded ray")
        infeasibility = float(phase1_cost[simplex.basis] @ simplex.x_B)
        if infeasibility > FEAS_TOL * max(1.0, float(np.abs(b).max())):
            return LpSolution("infeasible", np.nan, nan_x, simplex.iterations)
        _drive_out_artificials(simplex, is_art)

    cost = np.concatenate([sf.c, np.zeros(n_ext - n_cols)])
    status = simplex.run(cost, ~is_art)
    if status == "unbounded":
        return LpSolution("unbounded", -np.inf, nan_x, simplex.iterations)
    z = simplex.solution(n_ext)
    x = sf.recover(z[:n_cols])
    return LpSolution("optimal", float(problem.objective @ x), x, simplex.iterations)


def _drive_out_artificials(simplex: _Simplex, is_art: np.ndarray) -> None:
    """Swap zero-level artificials out of the basis where a real column can take over.

    Rows where no real column has a nonzero entry are redundant; their
    artificial stays basic at zero and, being barred from re-entering, never moves.
    """
    for r, var in enumerate(list(simplex.basis)):
        if not is_art[var]:
            continue
        row = simplex.B_inv[r] @ simplex.A
        row[is_art] = 0.0
        row[simplex.basis] = 0.0
        q = int(np.argmax(np.abs(row)))
        if abs(row[q]) > 1e-7:
            col = simplex.B_inv @ simplex.A[:, q]
            simplex._pivot(r, q, col)


@dataclass(frozen=True, eq=False)
class SocpStandardForm:
    """Linear rows plus second-order cones ``x[head] >= ||x[tail]||_2``."""

    linear: LpProblem
    cones: tuple

    def __post_init__(self):
        cones = tuple((int(h), tuple(int(t) for t in tail)) for h, tail in self.cones)
        n = self.linear.n_vars
        for head, tail in cones:
            idx = (head, *tail)
            if len(set(idx)) != len(idx) or not all(0 <= i < n for i in idx):
                raise ValueError(f"cone {idx} has repeated or out-of-range variable indices")
        object.__setattr__(self, "cones", cones)

    def to_json(self) -> str:
        """Layout: the linear part's keys (objective, rows, senses, rhs, lower,
        upper with null for infinite, var_names) plus ``cones`` as a list of
        ``{"head": i, "tail": [j, ...]}`` meaning ``x_i >= ||x_tail||_2``."""
        d = {"format": "socp-standard-form/1", **self.linear.to_dict()}
        d["cones"] = [{"head": h, "tail": list(t)} for h, t in self.cones]
        return json.dumps(d, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SocpStandardForm":
        d = json.loads(text)
        if d.get("format") != "socp-standard-form/1":
            raise ValueError("not a socp-standard-form/1 document")
        return cls(LpProblem.from_dict(d), tuple((c["head"], tuple(c["tail"])) for c in d["cones"]))


def build_q2_socp(gram, labels, nu: float, delta) -> SocpStandardForm:
    """Robust training program with a squared-Euclidean penalty on the coefficients.

    Variables are ordered ``u (m), gamma, xi (m), s (m), r, t, v``. The
    objective ``r - v + nu * sum(xi)`` together with ``r + v = 1`` and
    ``r >= ||(t, v)||`` bounds ``r - v`` below by ``t^2 >= ||u||^2``.
    """
    from rksvm.svm import margin_block

    K = gram.entries if hasattr(gram, "entries") else np.asarray(gram, dtype=float)
    y = np.asarray(labels, dtype=float)
    delta = np.asarray(delta, dtype=float)
    m = K.shape[0]
    if y.shape != (m,) or delta.shape != (m,):
        raise ValueError("labels and delta must have one entry per training point")
    if nu < 0 or np.any(delta < 0):
        raise ValueError("nu and delta must be nonnegative")
    n_vars = 3 * m + 4
    r_idx, t_idx, v_idx = 3 * m + 1, 3 * m + 2, 3 * m + 3

    c = np.zeros(n_vars)
    c[m + 1 : 2 * m + 1] = nu
    c[r_idx], c[v_idx] = 1.0, -1.0

    margin = np.zeros((m, n_vars))
    margin[:, : 3 * m + 1] = margin_block(K, y, delta)
    abs_rows = np.zeros((2 * m, n_vars))
    eye = np.eye(m)
    abs_rows[:m, :m] = eye
    abs_rows[m:, :m] = -eye
    abs_rows[:, 2 * m + 1 : 3 * m + 1] = np.vstack([eye, eye])
    balance = np.zeros((1, n_vars))
    balance[0, r_idx] = balance[0, v_idx] = 1.0

    rows = np.vstack([margin, abs_rows, balance])
    senses = (">=",) * (3 * m) + ("=",)
    rhs = np.concatenate([np.ones(m), np.zeros(2 * m), [1.0]])
    lower = np.concatenate([np.full(m + 1, -np.inf), np.zeros(2 * m), [-np.inf, 0.0, -np.inf]])
    names = _names(m) + ("r", "t", "v")
    linear = LpProblem(c, rows, senses, rhs, lower, np.full(n_vars, np.inf), names)
    cones = ((t_idx, tuple(range(m))), (r_idx, (t_idx, v_idx)))
    return SocpStandardForm(linear, cones)


def _names(m: int) -> tuple:
    return (
        tuple(f"u[{j}]" for j in range(m))
        + ("gamma",)
        + tuple(f"xi[{i}]" for i in range(m))
        + tuple(f"s[{j}]" for j in range(m))
    )
