"""Repeated-holdout experiments and nonparametric comparison of classifiers.

An experiment draws ``repeats`` class-proportional partitions of a dataset
for each training fraction ``beta``. On every partition it fits the feature
transform on the training rows, picks ``nu`` from the grid by training error
and records the error on the held-out rows. Robust mode then revisits the
best deterministic transform/kernel pair and sweeps the uncertainty radius
``rho`` for every ball shape ``p``.

The statistics half ranks methods across datasets (Friedman test with the
Iman-Davenport F correction) and compares the best-ranked method with every
other one through Holm's step-down procedure.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from rksvm.bounds import INF, calibrate_eta, derive_delta, format_norm, parse_norm
from rksvm.dataset import (
    Dataset,
    SplitSpec,
    TRANSFORM_KINDS,
    _KIND_ALIASES,
    apply_transform,
    fit_transform,
    load_csv,
    proportional_split,
)
from rksvm.kernel import KernelSpec, default_alpha, gram
from rksvm.svm import DEFAULT_NMAX, parse_q, predict_labels, train_binary, train_multiclass

REPORT_FORMAT = "rksvm-experiment/1"


def default_nu_grid() -> tuple:
    return tuple(np.logspace(-3, 0, 5).tolist())


def default_rho_grid() -> tuple:
    return tuple(np.logspace(-7, -1, 7).tolist())


@dataclass(frozen=True)
class KernelTemplate:
    """A kernel whose data-dependent constant may be left to the training split.

    ``coef`` and ``alpha`` set to ``None`` mean "the largest feature standard
    deviation of the (transformed) training rows".
    """

    family: str
    degree: int = 1
    coef: float | None = 0.0
    alpha: float | None = None

    def __post_init__(self):
        # Validate family and degree once, with placeholder constants.
        spec = KernelSpec(self.family, self.degree, self.coef or 0.0, self.alpha or 1.0)
        object.__setattr__(self, "family", spec.family)
        object.__setattr__(self, "degree", spec.degree)

    def resolve(self, train: Dataset) -> KernelSpec:
        if self.family == "gaussian_rbf":
            alpha = default_alpha(train) if self.alpha is None else self.alpha
            return KernelSpec.rbf(alpha)
        coef = default_alpha(train) if self.coef is None else self.coef
        return KernelSpec.polynomial(self.degree, coef)

    def label(self) -> str:
        if self.family == "gaussian_rbf":
            return "rbf" if self.alpha is None else f"rbf(alpha={self.alpha:g})"
        names = {1: "linear", 2: "quadratic", 3: "cubic"}
        shape = names.get(self.degree, f"degree{self.degree}")
        if self.coef == 0:
            return f"hom_{shape}"
        return f"inhom_{shape}" if self.coef is None else f"inhom_{shape}(c={self.coef:g})"

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("coef", "alpha"):
            if d[key] is None:
                d[key] = "auto"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelTemplate":
        d = dict(d)
        for key in ("coef", "alpha"):
            if d.get(key) == "auto":
                d[key] = None
        return cls(**d)


SEVEN_KERNELS = (
    KernelTemplate("polynomial", 1, 0.0),
    KernelTemplate("polynomial", 2, 0.0),
    KernelTemplate("polynomial", 3, 0.0),
    KernelTemplate("polynomial", 1, None),
    KernelTemplate("polynomial", 2, None),
    KernelTemplate("polynomial", 3, None),
    KernelTemplate("gaussian_rbf"),
)


@dataclass(frozen=True)
class ExperimentConfig:
    data: str
    label_col: str | int = -1
    drop_cols: tuple = ()
    transforms: tuple = ("none",)
    kernels: tuple = (KernelTemplate("gaussian_rbf"),)
    q_norm: float = 1.0
    betas: tuple = (75.0,)
    repeats: int = 96
    nu_grid: tuple = field(default_factory=default_nu_grid)
    rho_grid: tuple = field(default_factory=default_rho_grid)
    p_list: tuple = (1.0, 2.0, INF)
    n_max: int = DEFAULT_NMAX
    seed: int = 0
    robust: bool = False
    workers: int = 1

    def __post_init__(self):
        transforms = tuple(_KIND_ALIASES.get(t, t) for t in self.transforms)
        bad = [t for t in transforms if t not in TRANSFORM_KINDS]
        if bad:
            raise ValueError(f"unknown transforms {bad}; expected some of {TRANSFORM_KINDS}")
        kernels = tuple(k if isinstance(k, KernelTemplate) else KernelTemplate.from_dict(k) for k in self.kernels)
        object.__setattr__(self, "transforms", transforms)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "drop_cols", tuple(self.drop_cols))
        object.__setattr__(self, "q_norm", parse_q(self.q_norm))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "nu_grid", tuple(sorted(float(v) for v in self.nu_grid)))
        object.__setattr__(self, "rho_grid", tuple(sorted(float(v) for v in self.rho_grid)))
        object.__setattr__(self, "p_list", tuple(parse_norm(p) for p in self.p_list))
        for name in ("transforms", "kernels", "betas", "nu_grid", "rho_grid", "p_list"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        for beta in self.betas:
            SplitSpec(beta, self.seed, 1)
        if any(v <= 0 for v in self.nu_grid):
            raise ValueError("nu values must be positive")
        if any(v < 0 for v in self.rho_grid):
            raise ValueError("rho values must be nonnegative")
        if self.repeats < 1 or self.n_max < 1 or self.workers < 1:
            raise ValueError("repeats, n_max and workers must be positive")

    def to_dict(self) -> dict:
        return {
            "data": str(self.data),
            "label_col": self.label_col,
            "drop_cols": list(self.drop_cols),
            "transforms": list(self.transforms),
            "kernels": [k.to_dict() for k in self.kernels],
            "q_norm": format_norm(self.q_norm),
            "betas": list(self.betas),
            "repeats": self.repeats,
            "nu_grid": list(self.nu_grid),
            "rho_grid": list(self.rho_grid),
            "p_list": [format_norm(p) for p in self.p_list],
            "n_max": self.n_max,
            "seed": self.seed,
            "robust": self.robust,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.get("kernels") == "all":
            d["kernels"] = SEVEN_KERNELS
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


class ExperimentError(RuntimeError):
    """A repeat failed; the message names the seed and repeat to replay it."""


# -- one repeat ---------------------------------------------------------------


def _fit(train: Dataset, spec: KernelSpec, nu: float, q: float, delta, n_max: int, G):
    if train.n_classes == 2:
        return train_binary(train, spec, nu, q, delta, n_max, gram=G)
    return train_multiclass(train, spec, nu, q, delta, n_max, gram=G)


def _errors(model, data: Dataset) -> tuple[float, list]:
    predicted = predict_labels(model, data.features)
    wrong = predicted != data.labels
    per_class = []
    for c in data.class_ids:
        members = data.labels == c
        per_class.append({"class": c, "error": float(wrong[members].mean()) if members.any() else None})
    return float(wrong.mean()), per_class


def select_nu(train: Dataset, test: Dataset, spec: KernelSpec, cfg: ExperimentConfig, delta=None) -> dict:
    """Grid-search ``nu`` by training error; ties keep the smallest ``nu``."""
    G = gram(spec, train.features)
    best = None
    for nu in cfg.nu_grid:
        model = _fit(train, spec, nu, cfg.q_norm, delta, cfg.n_max, G)
        train_error, _ = _errors(model, train)
        if best is None or train_error < best[0]:
            best = (train_error, nu, model)
    train_error, nu, model = best
    test_error, per_class = _errors(model, test)
    return {"nu": nu, "train_error": train_error, "test_error": test_error, "class_errors": per_class}


@dataclass(frozen=True)
class _Task:
    data: Dataset
    cfg: ExperimentConfig
    beta: float
    repeat: int
    robust_choice: tuple | None = None  # (transform, kernel index) for robust sweeps


def _run_repeat(task: _Task) -> dict:
    cfg = task.cfg
    try:
        train, test = proportional_split(task.data, SplitSpec(task.beta, cfg.seed, cfg.repeats), task.repeat)
        timings = {}
        records = []
        if task.robust_choice is None:
            for transform in cfg.transforms:
                tr, params = fit_transform(train, transform)
                te = apply_transform(test, params)
                for k, template in enumerate(cfg.kernels):
                    start = time.perf_counter()
                    spec = template.resolve(tr)
                    rec = select_nu(tr, te, spec, cfg)
                    timings[f"{transform}/{template.label()}"] = time.perf_counter() - start
                    records.append({"transform": transform, "kernel": k, "alpha": spec.alpha, "coef": spec.coef, **rec})
        else:
            transform, k = task.robust_choice
            tr, params = fit_transform(train, transform)
            te = apply_transform(test, params)
            spec = cfg.kernels[k].resolve(tr)
            for p in cfg.p_list:
                for rho in cfg.rho_grid:
                    start = time.perf_counter()
                    uncertainty = calibrate_eta(tr, {c: rho for c in tr.class_ids}, p)
                    delta = derive_delta(uncertainty, spec, tr.features).delta
                    rec = select_nu(tr, te, spec, cfg, delta)
                    timings[f"p={format_norm(p)}/rho={rho:.3g}"] = time.perf_counter() - start
                    records.append({"p": format_norm(p), "rho": rho, **rec})
        return {"repeat": task.repeat, "records": records, "timings": timings}
    except Exception as exc:
        raise ExperimentError(f"repeat {task.repeat} (seed {cfg.seed}, beta {task.beta:g}) failed: {exc}") from exc


def _map_repeats(tasks: list, workers: int) -> list:
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_repeat, tasks))
    else:
        results = [_run_repeat(t) for t in tasks]
    return sorted(results, key=lambda r: r["repeat"])


# -- aggregation --------------------------------------------------------------


def _summary(values: list) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0))}


def _class_means(per_repeat: list) -> list:
    classes = [entry["class"] for entry in per_repeat[0]]
    out = []
    for i, c in enumerate(classes):
        vals = [rep[i]["error"] for rep in per_repeat if rep[i]["error"] is not None]
        out.append({"class": c, "mean_error": float(np.mean(vals)) if vals else None})
    return out


def _collect(results: list, match) -> dict:
    rows = [rec for r in results for rec in r["records"] if match(rec)]
    return {
        "test_error": _summary([r["test_error"] for r in rows]),
        "train_error": _summary([r["train_error"] for r in rows]),
        "class_errors": _class_means([r["class_errors"] for r in rows]),
        "repeats": [
            {"repeat": res["repeat"], **{k: v for k, v in rec.items() if k not in ("transform", "kernel", "p", "rho")}}
            for res in results
            for rec in res["records"]
            if match(rec)
        ],
    }


def improvement_ratio(deterministic: float, robust: float) -> float:
    """Relative error reduction ``(det - robust) / det``; 0 when both are 0."""
    if deterministic < 0 or robust < 0:
        raise ValueError("errors must be nonnegative")
    if deterministic == 0:
        return 0.0 if robust == 0 else -math.inf
    return (deterministic - robust) / deterministic


def run_experiment(cfg: ExperimentConfig, data: Dataset | None = None) -> tuple[dict, dict]:
    """Run the protocol and return ``(report, timings)``.

    The report holds no wall-clock values, so equal seeds and configs give
    byte-identical JSON; timings come back separately.
    """
    if data is None:
        data = load_csv(cfg.data, cfg.label_col, cfg.drop_cols)
    report = {"format": REPORT_FORMAT, "config": cfg.to_dict(), "dataset": _describe(data), "runs": []}
    timings = {"runs": []}
    for beta in cfg.betas:
        start = time.perf_counter()
        det_results = _map_repeats([_Task(data, cfg, beta, r) for r in range(cfg.repeats)], cfg.workers)
        det_time = time.perf_counter() - start
        configs = []
        for transform in cfg.transforms:
            for k, template in enumerate(cfg.kernels):
                entry = _collect(det_results, lambda rec, t=transform, k=k: rec["transform"] == t and rec["kernel"] == k)
                configs.append({"transform": transform, "kernel": template.label(), "kernel_index": k, **entry})
        # Best pair by mean test error; the first listed wins ties.
        best = min(range(len(configs)), key=lambda i: configs[i]["test_error"]["mean"])
        run = {"beta": beta, "deterministic": configs, "best": {k: configs[best][k] for k in ("transform", "kernel")}}
        run_timing = {"beta": beta, "deterministic_s": det_time, "per_repeat": [r["timings"] for r in det_results]}

        if cfg.robust:
            choice = (configs[best]["transform"], configs[best]["kernel_index"])
            start = time.perf_counter()
            rob_results = _map_repeats([_Task(data, cfg, beta, r, choice) for r in range(cfg.repeats)], cfg.workers)
            run_timing["robust_s"] = time.perf_counter() - start
            robust = []
            best_per_p = {}
            for p in cfg.p_list:
                label = format_norm(p)
                sweep = []
                for rho in cfg.rho_grid:
                    entry = _collect(rob_results, lambda rec, pl=label, r=rho: rec["p"] == pl and rec["rho"] == r)
                    sweep.append({"rho": rho, **entry})
                winner = min(sweep, key=lambda s: s["test_error"]["mean"])
                best_per_p[label] = {"rho": winner["rho"], "test_error": winner["test_error"]}
                robust.append({"p": label, "sweep": sweep})
            det_mean = configs[best]["test_error"]["mean"]
            best_robust = min(v["test_error"]["mean"] for v in best_per_p.values())
            run["robust"] = robust
            run["robust_best"] = best_per_p
            run["improvement_ratio"] = improvement_ratio(det_mean, best_robust)
        report["runs"].append(run)
        timings["runs"].append(run_timing)
    return report, timings


def _describe(data: Dataset) -> dict:
    return {"m": data.m, "n": data.n, "class_counts": [{"class": c, "count": k} for c, k in data.class_counts().items()]}


# -- output -------------------------------------------------------------------


SUMMARY_COLUMNS = (
    "dataset",
    "beta",
    "transform",
    "kernel",
    "det_error",
    "det_std",
    "robust_p1",
    "robust_p2",
    "robust_pinf",
    "improvement_ratio",
    "time_s",
)


def summary_rows(report: dict, timings: dict | None = None) -> list[dict]:
    """One row per training fraction, for the best deterministic pair."""
    name = Path(report["config"]["data"]).stem
    rows = []
    for i, run in enumerate(report["runs"]):
        best = next(c for c in run["deterministic"] if c["transform"] == run["best"]["transform"] and c["kernel"] == run["best"]["kernel"])
        row = {
            "dataset": name,
            "beta": run["beta"],
            "transform": best["transform"],
            "kernel": best["kernel"],
            "det_error": best["test_error"]["mean"],
            "det_std": best["test_error"]["std"],
        }
        for p in ("1", "2", "inf"):
            hit = run.get("robust_best", {}).get(p)
            row[f"robust_p{p}"] = "" if hit is None else hit["test_error"]["mean"]
        row["improvement_ratio"] = run.get("improvement_ratio", "")
        if timings is not None:
            t = timings["runs"][i]
            row["time_s"] = round(t["deterministic_s"] + t.get("robust_s", 0.0), 3)
        else:
            row["time_s"] = ""
        rows.append(row)
    return rows


def emit_report(report: dict, out_dir: str | Path, timings: dict | None = None) -> dict:
    """Write ``report.json``, ``summary.csv`` and (if given) ``timings.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.json", "summary": out / "summary.csv"}
        paths["report"].write_text(report_json(report))
        with paths["summary"].open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            writer.writeheader()
            writer.writerows(summary_rows(report, timings))
        if timings is not None:
            paths["timings"] = out / "timings.json"
            paths["timings"].write_text(json.dumps(timings, indent=1, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return paths


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"


# -- rank statistics ----------------------------------------------------------


def _betacf(a: float, b: float, x: float, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if x == 0 or x == 1:
        return float(x)
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # The fraction converges fast on the side of the mean; use symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_survival(f: float, d1: float, d2: float) -> float:
    """``P(F > f)`` for the F distribution with ``(d1, d2)`` degrees of freedom."""
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


def normal_two_sided(z: float) -> float:
    """``2 * Phi(-|z|)``."""
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass(frozen=True)
class HolmRow:
    method: str
    mean_rank: float
    j: int
    z: float
    p_value: float
    threshold: float
    reject: bool


@dataclass(frozen=True)
class RankStats:
    methods: tuple
    mean_ranks: tuple
    n_datasets: int
    chi2_f: float
    f_f: float
    df: tuple
    p_value: float
    alpha: float | None = None
    holm: tuple = ()

    @property
    def n_methods(self) -> int:
        return len(self.methods)

    @property
    def best(self) -> str:
        return self.methods[int(np.argmin(self.mean_ranks))]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holm"] = [asdict(r) for r in self.holm]
        d["f_f"] = None if math.isinf(self.f_f) else self.f_f
        return d


def average_ranks(errors) -> np.ndarray:
    """Rank methods within each dataset (1 = lowest error), ties sharing the mean rank."""
    E = np.asarray(errors, dtype=float)
    if E.ndim != 2:
        raise ValueError("errors must be a datasets x methods matrix")
    return np.vstack([rankdata(row, method="average") for row in E])


def friedman_from_ranks(mean_ranks, n_datasets: int, methods=None) -> RankStats:
    R = np.asarray(mean_ranks, dtype=float)
    k, N = len(R), int(n_datasets)
    if k < 2 or N < 2:
        raise ValueError("need at least 2 datasets and 2 methods")
    methods = tuple(methods) if methods is not None else tuple(f"method{j + 1}" for j in range(k))
    if len(methods) != k:
        raise ValueError("one name per method required")
    chi2 = 12.0 * N / (k * (k + 1)) * (float(R @ R) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    denom = N * (k - 1) - chi2
    f_f = math.inf if denom <= 0 else (N - 1) * chi2 / denom
    df = (k - 1, (k - 1) * (N - 1))
    return RankStats(methods, tuple(R.tolist()), N, chi2, f_f, df, f_survival(f_f, *df))


def friedman_iman_davenport(errors, methods=None) -> RankStats:
    """Friedman test on a datasets x methods error matrix with the Iman-Davenport F form."""
    ranks = average_ranks(errors)
    if ranks.shape[0] < 2 or ranks.shape[1] < 2:
        raise ValueError("need at least 2 datasets and 2 methods")
    return friedman_from_ranks(ranks.mean(axis=0), ranks.shape[0], methods)


def holm_test(stats: RankStats, alpha: float = 0.05) -> RankStats:
    """Compare the best-ranked method with each other one, Holm step-down.

    Methods are ordered by mean rank; the one in position ``j`` (the best is
    position 1) is tested at ``alpha / (j - 1)``. Testing starts from the
    worst-ranked method (smallest p-value) and stops rejecting at the first
    p-value above its threshold.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k, N = stats.n_methods, stats.n_datasets
    order = sorted(range(k), key=lambda i: (stats.mean_ranks[i], i))
    best = stats.mean_ranks[order[0]]
    scale = math.sqrt(6.0 * N / (k * (k + 1)))
    rows = []
    for j, i in enumerate(order[1:], start=2):
        z = (best - stats.mean_ranks[i]) * scale
        rows.append([stats.methods[i], stats.mean_ranks[i], j, z, normal_two_sided(z), alpha / (j - 1)])
    still_rejecting = True
    out = []
    for row in sorted(rows, key=lambda r: r[4]):
        still_rejecting = still_rejecting and row[4] < row[5]
        out.append(HolmRow(*row, reject=still_rejecting))
    out.sort(key=lambda r: r.j)
    return replace(stats, alpha=alpha, holm=tuple(out))
