import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rksvm.dataset import Dataset
from rksvm.kernel import KernelSpec, gram
from rksvm.lp import solve_lp
from rksvm.svm import (
    MulticlassClassifier,
    TrainedClassifier,
    TrainingError,
    assemble_deterministic_lp,
    assemble_robust_lp,
    compute_omegas,
    fit_coded,
    intercept_search,
    misclassification_counts,
    model_from_dict,
    parse_q,
    predict,
    predict_classes,
    predict_multiclass,
    search_interval,
    train_binary,
    train_multiclass,
    training_error,
)

LINEAR = KernelSpec.polynomial(1, 0.0)


def toy():
    return Dataset(np.array([[1.0], [-1.0]]), np.array([1, -1]))


def random_instance(rng, m=None):
    m = m or int(rng.integers(3, 9))
    X = rng.normal(size=(m, 2))
    y = np.where(rng.random(m) < 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    spec = KernelSpec.rbf(rng.uniform(0.5, 2.0)) if rng.random() < 0.5 else KernelSpec.polynomial(int(rng.integers(1, 4)), rng.uniform(0, 1))
    return X, y, spec


def test_parse_q():
    assert parse_q("inf") == np.inf
    assert parse_q(1) == 1.0
    with pytest.raises(ValueError):
        parse_q(2)


def test_toy_deterministic_solution():
    clf = train_binary(toy(), LINEAR, nu=10.0)
    assert clf.lp_objective == pytest.approx(1.0)
    assert clf.u.sum() == pytest.approx(1.0)
    assert clf.gamma == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(clf.xi, 0, atol=1e-9)
    # Empty strip: b falls back to gamma.
    lo, hi = clf.search_interval()
    assert lo > hi and clf.b == clf.gamma
    assert predict(clf, [1.0]) == 1 and predict(clf, [-1.0]) == -1


def test_toy_robust_is_more_expensive():
    det = train_binary(toy(), LINEAR, nu=10.0)
    rob = train_binary(toy(), LINEAR, nu=10.0, delta=np.array([0.1, 0.1]))
    assert rob.lp_objective > det.lp_objective + 1e-6


@pytest.mark.parametrize("q", [1, "inf"])
def test_zero_delta_lp_is_bitwise_deterministic(rng, q):
    X, y, spec = random_instance(rng)
    K = gram(spec, X)
    a = assemble_robust_lp(K, y, 0.3, np.zeros(len(y)), q)
    b = assemble_deterministic_lp(K, y, 0.3, q)
    assert a.constraint_matrix.tobytes() == b.constraint_matrix.tobytes()
    assert a.rhs.tobytes() == b.rhs.tobytes()
    assert a.objective.tobytes() == b.objective.tobytes()
    assert a.constraint_senses == b.constraint_senses


def test_lp_input_validation():
    K = gram(LINEAR, np.array([[1.0], [-1.0]]))
    with pytest.raises(ValueError, match="nu"):
        assemble_robust_lp(K, [1, -1], -1.0, [0, 0])
    with pytest.raises(ValueError, match="delta"):
        assemble_robust_lp(K, [1, -1], 1.0, [0, -0.1])
    with pytest.raises(ValueError, match="labels"):
        assemble_robust_lp(K, [1, 0], 1.0, [0, 0])


def test_omegas():
    assert compute_omegas([1, -1], [0.5, 0.2]) == (0.5, 0.2)
    assert compute_omegas([1, -1], [0.0, 0.0]) == (0.0, 0.0)
    assert compute_omegas([1, 1], [1.0, 2.0]) == (2.0, -1.0)


def test_single_point_strip():
    K = np.eye(2)
    b = intercept_search(K, np.array([1.0, -1.0]), np.zeros(2), 0.3, (1.5, 0.5), n_max=7)
    assert b == pytest.approx(0.3 + 1 - 0.5)


def test_four_point_search_against_brute_force():
    # Decision scores f_i = (K y u)_i fixed by hand; labels put one point on the wrong side.
    K = np.eye(4)
    y = np.array([1.0, 1.0, -1.0, -1.0])
    u = np.array([2.0, 0.5, 1.0, 0.2])
    scores = K @ (y * u)  # 2, 0.5, -1, -0.2
    gamma, omegas = 0.0, (2.0, 2.0)  # strip [-1, 1]
    b = intercept_search(K, y, u, gamma, omegas, n_max=40)
    grid = np.linspace(-1, 1, 41)
    counts = [sum((yi * g - yi * s) > 0 for yi, s in zip(y, scores)) for g in grid]
    assert min(counts) < max(counts)
    assert b == grid[int(np.argmin(counts))]
    assert counts[int(np.argmin(counts))] == 0


def test_misclassification_counts_boundary_convention():
    # A point with score exactly b is not counted on the positive side (strict inequality).
    counts = misclassification_counts([1.0], [1.0], [0.0], [1.0, 1.5])
    np.testing.assert_array_equal(counts, [0, 1])


def test_xor_needs_quadratic_kernel():
    X = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    data = Dataset(X, np.array([1, 1, -1, -1]))
    quad = train_binary(data, KernelSpec.polynomial(2, 0.0), nu=1.0)
    assert training_error(quad, data) == 0.0
    lin = train_binary(data, LINEAR, nu=1.0)
    assert training_error(lin, data) >= 0.25


def test_nu_zero_is_well_defined():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    data = Dataset(X, np.array([1, -1, 1, -1]))
    clf = train_binary(data, LINEAR, nu=0.0)
    assert np.all(clf.u == 0)
    assert predict_classes(clf, X).shape == (4,)


def test_boundary_point_goes_negative():
    clf = train_binary(toy(), LINEAR, nu=10.0)
    assert clf.b == 0.0
    assert clf.decision_function([0.0]) == 0.0
    assert predict(clf, [0.0]) == -1
    # Moving b and the evaluation point together leaves every label unchanged.
    d = clf.to_dict()
    d["b"] = clf.b - 0.5
    shifted = TrainedClassifier.from_dict(d)
    assert predict(shifted, [0.0]) == 1
    assert predict(shifted, [-0.5]) == -1


def test_dimension_mismatch():
    clf = train_binary(toy(), LINEAR, nu=10.0)
    with pytest.raises(ValueError, match="features"):
        predict(clf, [1.0, 2.0])


def test_label_coding_keeps_plus_one():
    data = Dataset(np.array([[-1.0], [1.0]]), np.array([-1, 1]))
    clf = train_binary(data, LINEAR, nu=10.0)
    assert clf.positive_class == 1
    np.testing.assert_array_equal(predict_classes(clf, data.features), [-1, 1])


def test_string_labels_first_is_positive():
    data = Dataset(np.array([[1.0], [-1.0], [2.0]]), np.array(["yes", "no", "yes"]))
    clf = train_binary(data, LINEAR, nu=10.0)
    assert clf.positive_class == "yes"
    assert training_error(clf, data) == 0.0


def clusters(rng):
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    X = np.vstack([c + 0.5 * rng.normal(size=(10, 2)) for c in centers])
    return Dataset(X, np.repeat(["a", "b", "c"], 10)), centers


def test_three_clusters_rbf(rng):
    data, centers = clusters(rng)
    model = train_multiclass(data, KernelSpec.rbf(2.0), nu=1.0)
    assert training_error(model, data) == 0.0
    np.testing.assert_array_equal(predict_multiclass(model, centers), ["a", "b", "c"])
    assert predict_multiclass(model, centers[1]) == "b"


def test_two_class_multiclass_agrees_with_binary():
    data = Dataset(np.array([[1.0], [2.0], [-1.0], [-2.0]]), np.array([1, 1, -1, -1]))
    multi = train_multiclass(data, LINEAR, nu=10.0)
    binary = train_binary(data, LINEAR, nu=10.0)
    grid = np.linspace(-3, 3, 25)[:, None]
    values = multi.decision_values(grid)
    np.testing.assert_allclose(values[:, 0], -values[:, 1], atol=1e-9)
    away = np.abs(values[:, 0]) > 1e-9
    np.testing.assert_array_equal(predict_multiclass(multi, grid)[away], predict_classes(binary, grid)[away])


def test_multiclass_ties_go_to_first_class():
    data, _ = clusters(np.random.default_rng(0))
    model = train_multiclass(data, KernelSpec.rbf(2.0), nu=1.0)
    for clf in model.classifiers:
        clf.u = np.zeros_like(clf.u)
        clf.__post_init__()
        clf.b = 0.0
    assert predict_multiclass(model, np.array([3.0, 3.0])) == "a"


def test_absent_class_rejected():
    data = Dataset(np.array([[1.0], [2.0]]), np.array(["a", "a"]), class_ids=("a", "b"))
    with pytest.raises(ValueError, match="no training points"):
        train_multiclass(data, LINEAR, nu=1.0)


def test_serialization_round_trip(rng):
    data, centers = clusters(rng)
    model = train_multiclass(data, KernelSpec.rbf(2.0), nu=1.0, deltas=np.full(data.m, 0.01))
    back = model_from_dict(json.loads(json.dumps(model.to_dict())))
    assert isinstance(back, MulticlassClassifier)
    np.testing.assert_array_equal(back.decision_values(centers), model.decision_values(centers))
    clf = train_binary(toy(), LINEAR, nu=10.0, q_norm="inf")
    again = model_from_dict(json.loads(json.dumps(clf.to_dict())))
    assert again.q_norm == np.inf and again.b == clf.b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, "inf"]), st.booleans())
def test_training_invariants(seed, q, robust):
    rng = np.random.default_rng(seed)
    X, y, spec = random_instance(rng)
    K = gram(spec, X).entries
    delta = rng.uniform(0, 0.2, size=len(y)) if robust else None
    clf = fit_coded(K, X, y, spec, nu=rng.uniform(0.1, 5), q_norm=q, delta=delta, n_max=200)
    assert np.all(clf.xi >= 0)
    lo, hi = clf.search_interval()
    penalty = (clf.delta * (np.sqrt(np.diag(K)) @ np.abs(clf.u)))
    scores = K @ (y * clf.u)
    if lo <= hi:
        assert lo - 1e-12 <= clf.b <= hi + 1e-12
        grid = np.linspace(lo, hi, 201)
        counts = misclassification_counts(scores, y, penalty, grid)
        best = misclassification_counts(scores, y, penalty, [clf.b])[0]
        assert best == counts.min()
    else:
        assert clf.b == clf.gamma
    # Slack consistency at the LP optimum.
    margin = y * scores - y * clf.gamma - penalty
    assert np.all(clf.xi >= np.maximum(0, 1 - margin) - 1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, "inf"]))
def test_robust_optimum_dominates(seed, q):
    rng = np.random.default_rng(seed)
    X, y, spec = random_instance(rng)
    K = gram(spec, X)
    delta = rng.uniform(0.01, 0.3, size=len(y))
    det = solve_lp(assemble_deterministic_lp(K, y, 1.0, q), method="highs")
    rob = solve_lp(assemble_robust_lp(K, y, 1.0, delta, q), method="highs")
    assert rob.objective_value >= det.objective_value - 1e-9


def test_training_error_raised_for_failed_lp(monkeypatch):
    import rksvm.svm as svm
    from rksvm.lp import LpSolution

    monkeypatch.setattr(svm, "solve_lp", lambda *a, **k: LpSolution("infeasible", np.nan, np.full(7, np.nan)))
    with pytest.raises(TrainingError):
        train_binary(toy(), LINEAR, nu=1.0)


def test_search_interval_formula():
    assert search_interval(0.5, (3.0, 1.0)) == (0.5, 2.5)
