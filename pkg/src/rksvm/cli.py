"""Command line entry point: ``rksvm train|predict|experiment|ranktest|bounds``."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from rksvm import __version__, bench
from rksvm.bounds import calibrate_eta, delta_polynomial, delta_rbf, derive_delta, parse_norm
from rksvm.dataset import DatasetError, TransformParams, fit_transform, load_csv
from rksvm.kernel import KernelSpec, default_alpha, gram
from rksvm.svm import DEFAULT_NMAX, model_from_dict, parse_q, predict_labels

TRANSFORM_CHOICES = click.Choice(["none", "minmax", "min_max", "standardize"])


def _float_list(text: str | None) -> tuple | None:
    if text is None:
        return None
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from exc


def _label_col(value: str):
    return int(value) if value.lstrip("-").isdigit() else value


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@click.group()
@click.version_option(__version__)
def main():
    """Robust kernel SVMs trained by linear programming."""


def _optional_float(ctx, param, value):
    if value is None or str(value).lower() == "auto":
        return None
    try:
        return float(value)
    except ValueError as exc:
        raise click.BadParameter(f"expected a number or 'auto', got {value!r}") from exc


# -- train / predict ----------------------------------------------------------


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="Training CSV.")
@click.option("--label-col", default="-1", show_default=True, help="Label column name or index.")
@click.option("--drop-col", multiple=True, help="Column to ignore (repeatable).")
@click.option("--kernel", type=click.Choice(["poly", "rbf"]), default="rbf", show_default=True)
@click.option("--degree", type=int, default=1, show_default=True)
@click.option("--coef", default="0", callback=_optional_float, help="Polynomial constant c, or 'auto'.")
@click.option("--alpha", default="auto", callback=_optional_float, help="RBF width, or 'auto'.")
@click.option("--q", "q_norm", type=click.Choice(["1", "inf"]), default="1", show_default=True)
@click.option("--p", "p_norm", type=click.Choice(["1", "2", "inf"]), default="2", show_default=True)
@click.option("--rho", type=float, default=0.0, show_default=True, help="Uncertainty level; 0 trains the deterministic model.")
@click.option("--nu-grid", default="1e-3,5.62341325e-3,3.16227766e-2,1.77827941e-1,1", show_default=True)
@click.option("--transform", type=TRANSFORM_CHOICES, default="none", show_default=True)
@click.option("--nmax", type=int, default=DEFAULT_NMAX, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Model JSON (stdout if omitted).")
def train(data, label_col, drop_col, kernel, degree, coef, alpha, q_norm, p_norm, rho, nu_grid, transform, nmax, out):
    """Fit a classifier, choosing nu from the grid by training error."""
    dataset = load_csv(data, _label_col(label_col), [_label_col(c) for c in drop_col])
    train_set, params = fit_transform(dataset, transform)
    if kernel == "rbf":
        spec = KernelSpec.rbf(default_alpha(train_set) if alpha is None else alpha)
    else:
        spec = KernelSpec.polynomial(degree, default_alpha(train_set) if coef is None else coef)
    delta = None
    if rho < 0:
        raise click.BadParameter("rho must be nonnegative", param_hint="--rho")
    if rho > 0:
        cfg = calibrate_eta(train_set, {c: rho for c in train_set.class_ids}, parse_norm(p_norm))
        delta = derive_delta(cfg, spec, train_set.features).delta
    nus = sorted(_float_list(nu_grid))
    if not nus:
        raise click.BadParameter("empty grid", param_hint="--nu-grid")
    G = gram(spec, train_set.features)
    best = None
    for nu in nus:
        model = bench._fit(train_set, spec, nu, parse_q(q_norm), delta, nmax, G)
        err = float(np.mean(predict_labels(model, train_set.features) != train_set.labels))
        if best is None or err < best[0]:
            best = (err, model)
    err, model = best
    model.transform = params.to_dict()
    _write_json(model.to_dict(), out)
    click.echo(f"trained {spec.label()} nu={model_nu(model):g} training error {err:.4f}", err=True)


def model_nu(model) -> float:
    return model.classifiers[0].nu if hasattr(model, "classifiers") else model.nu


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--label-col", default="-1", show_default=True)
@click.option("--drop-col", multiple=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Predictions CSV (stdout if omitted).")
def predict(model_path, data, label_col, drop_col, out):
    """Label the rows of a CSV; prints the error rate when labels are present."""
    model = model_from_dict(json.loads(Path(model_path).read_text()))
    dataset = load_csv(data, _label_col(label_col), [_label_col(c) for c in drop_col])
    X = dataset.features
    if model.transform is not None:
        X = TransformParams.from_dict(model.transform).apply(X)
    predicted = predict_labels(model, X)
    handle = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.writer(handle)
        writer.writerow(["row", "predicted", "label"])
        for i, (p, y) in enumerate(zip(predicted.tolist(), dataset.labels.tolist())):
            writer.writerow([i, p, y])
    finally:
        if out:
            handle.close()
    click.echo(f"error {float(np.mean(predicted != dataset.labels)):.4f}", err=True)


# -- experiment ---------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config; flags override it.")
@click.option("--data", type=click.Path(exists=True, dir_okay=False))
@click.option("--label-col")
@click.option("--drop-col", multiple=True)
@click.option("--kernel", type=click.Choice(["poly", "rbf", "all"]))
@click.option("--degree", type=int)
@click.option("--coef", help="Polynomial constant c, or 'auto'.")
@click.option("--alpha", help="RBF width, or 'auto'.")
@click.option("--q", "q_norm", type=click.Choice(["1", "inf"]))
@click.option("--p", "p_list", multiple=True, type=click.Choice(["1", "2", "inf"]), help="Ball shape (repeatable).")
@click.option("--rho", "rho_grid", help="Comma-separated rho grid.")
@click.option("--nu-grid", help="Comma-separated nu grid.")
@click.option("--transform", "transforms", multiple=True, type=TRANSFORM_CHOICES, help="Transform (repeatable).")
@click.option("--beta", "betas", multiple=True, type=float, help="Training percentage (repeatable).")
@click.option("--repeats", type=int)
@click.option("--nmax", type=int)
@click.option("--seed", type=int)
@click.option("--robust/--no-robust", default=None, help="Also sweep rho and p.")
@click.option("--workers", type=int, help="Processes running repeats in parallel.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
def experiment(config_path, out, **flags):
    """Repeated-holdout experiment; writes report.json, summary.csv and timings.json."""
    settings = json.loads(Path(config_path).read_text()) if config_path else {}
    kernel_flags = {k: flags.pop(k) for k in ("kernel", "degree", "coef", "alpha")}
    if flags["label_col"] is not None:
        flags["label_col"] = _label_col(flags["label_col"])
    if flags["drop_col"]:
        flags["drop_cols"] = [_label_col(c) for c in flags["drop_col"]]
    flags.pop("drop_col")
    flags["nu_grid"] = _float_list(flags["nu_grid"])
    flags["rho_grid"] = _float_list(flags["rho_grid"])
    for key in ("nmax",):
        if flags[key] is not None:
            flags["n_max"] = flags[key]
        flags.pop(key)
    for key, value in flags.items():
        if value is None or value == ():
            continue
        settings[key] = list(value) if isinstance(value, tuple) else value
    if kernel_flags["kernel"] is not None:
        settings["kernels"] = _kernel_templates(**kernel_flags)
    if "data" not in settings:
        raise click.UsageError("--data is required (directly or through --config)")
    try:
        cfg = bench.ExperimentConfig.from_dict(settings)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"invalid experiment config: {exc}") from exc
    report, timings = bench.run_experiment(cfg)
    paths = bench.emit_report(report, out, timings)
    for row in bench.summary_rows(report, timings):
        click.echo(
            f"beta={row['beta']:g} {row['transform']}/{row['kernel']}: "
            f"error {100 * row['det_error']:.2f}% +/- {100 * row['det_std']:.2f}"
        )
    click.echo(f"wrote {', '.join(str(p) for p in paths.values())}", err=True)


def _kernel_templates(kernel, degree, coef, alpha) -> list:
    if kernel == "all":
        return list(bench.SEVEN_KERNELS)
    auto = lambda v, default: default if v is None else (None if str(v).lower() == "auto" else float(v))  # noqa: E731
    if kernel == "rbf":
        return [bench.KernelTemplate("gaussian_rbf", alpha=auto(alpha, None))]
    return [bench.KernelTemplate("polynomial", degree or 1, coef=auto(coef, 0.0))]


# -- ranktest -----------------------------------------------------------------


@main.command()
@click.option("--errors", "errors_path", type=click.Path(exists=True, dir_okay=False),
              help="CSV with a header of method names, one row per dataset; a non-numeric first column is taken as dataset names.")
@click.option("--ranks", help="Comma-separated mean ranks, instead of --errors.")
@click.option("--n-datasets", type=int, help="Number of datasets behind --ranks.")
@click.option("--methods", help="Comma-separated method names for --ranks.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
def ranktest(errors_path, ranks, n_datasets, methods, alpha, out):
    """Friedman/Iman-Davenport test followed by Holm's comparisons against the best method."""
    if (errors_path is None) == (ranks is None):
        raise click.UsageError("give exactly one of --errors and --ranks")
    if errors_path:
        with open(errors_path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        header, body = rows[0], rows[1:]
        try:
            float(body[0][0])
            names = header
        except ValueError:
            names = header[1:]
            body = [r[1:] for r in body]
        stats = bench.friedman_iman_davenport(np.array(body, dtype=float), names)
    else:
        if n_datasets is None:
            raise click.UsageError("--ranks needs --n-datasets")
        names = methods.split(",") if methods else None
        stats = bench.friedman_from_ranks(_float_list(ranks), n_datasets, names)
    stats = bench.holm_test(stats, alpha)
    _write_json(stats.to_dict(), out)


# -- bounds -------------------------------------------------------------------


@main.command()
@click.option("--kernel", type=click.Choice(["poly", "rbf"]), required=True)
@click.option("--degree", type=int, default=1, show_default=True)
@click.option("--coef", type=float, default=0.0, show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--p", "p_norm", type=click.Choice(["1", "2", "inf"]), default="2", show_default=True)
@click.option("--eta", type=float, required=True, help="Input-space radius.")
@click.option("--n", "n_features", type=int, required=True, help="Number of features.")
@click.option("--x-norm", type=float, default=0.0, show_default=True, help="Euclidean norm of the point (polynomial only).")
def bounds(kernel, degree, coef, alpha, p_norm, eta, n_features, x_norm):
    """Print the feature-space radius for an input-space perturbation ball."""
    p = parse_norm(p_norm)
    if kernel == "rbf":
        value = delta_rbf(eta, n_features, p, alpha)
    else:
        value = delta_polynomial(x_norm, eta, n_features, p, degree, coef)
    click.echo(repr(value))


def run():  # pragma: no cover - console script wrapper
    try:
        main()
    except DatasetError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":  # pragma: no cover
    run()
