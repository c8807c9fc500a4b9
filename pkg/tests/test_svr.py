import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbsd_inverse.dataset import Feature, FeatureSchema, FeatureTable
from pbsd_inverse.errors import (
    DimensionMismatch,
    InsufficientDof,
    NoConvergence,
    SchemaMismatch,
    ZeroMeanTarget,
    ZeroVarianceTarget,
)
from pbsd_inverse.svr import (
    KernelSpec,
    SvrHyperparams,
    compute_metrics,
    dual_objective,
    kernel_eval,
    kernel_matrix,
    load_model,
    predict,
    save_model,
    solve_dual,
    train_svr,
)

from conftest import unit_schema
from oracles import svr_dual_oracle


def table(x, y):
    x = np.asarray(x, dtype=float).reshape(len(y), -1)
    return FeatureTable(unit_schema(x.shape[1]), x, y)


def random_problem(seed, n=8, p=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    y = rng.normal(size=n)
    C = float(rng.uniform(0.5, 5.0))
    eps = float(rng.uniform(0.01, 0.3))
    K = kernel_matrix(KernelSpec("rbf", float(rng.uniform(0.2, 2.0))), x, x)
    return K, y, eps, C


# kernels --------------------------------------------------------------------

def test_kernel_examples():
    assert kernel_eval(KernelSpec("rbf", 0.7), [1.0, 2.0], [1.0, 2.0]) == 1.0
    assert kernel_eval(KernelSpec("linear"), [1, 2], [3, 4]) == 11.0
    assert kernel_eval(KernelSpec("rbf", 0.5), [0, 0], [math.sqrt(2), 0]) == pytest.approx(math.exp(-1), abs=1e-9)
    assert kernel_eval(KernelSpec("poly", degree=2, coef=1.0), [1, 1], [1, 2]) == 16.0


def test_kernel_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        kernel_eval(KernelSpec("linear"), [1, 2], [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        kernel_matrix(KernelSpec("linear"), np.ones((2, 2)), np.ones((2, 3)))


def test_default_gamma_is_one_over_p():
    x, z = np.array([0.0, 0, 0, 0]), np.array([1.0, 1, 0, 0])
    assert kernel_eval(KernelSpec("rbf"), x, z) == pytest.approx(math.exp(-0.5))


@pytest.mark.parametrize("spec", [KernelSpec("rbf", 0.3), KernelSpec("linear"), KernelSpec("poly", None, 3, 1.0)])
@pytest.mark.parametrize("seed", range(5))
def test_kernel_matrix_psd(spec, seed):
    x = np.random.default_rng(seed).normal(size=(12, 3))
    K = kernel_matrix(spec, x, x)
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * max(1.0, np.abs(K).max())
    assert K[2, 5] == pytest.approx(kernel_eval(spec, x[2], x[5]), rel=1e-12)


# dual solver ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_dual_matches_exhaustive_oracle(seed):
    K, y, eps, C = random_problem(seed)
    best, _ = svr_dual_oracle(K, y, eps, C)
    sol = solve_dual(K, y, eps, C, tol=1e-6)
    assert sol.objective() == pytest.approx(best, abs=1e-6)
    assert sol.objective() <= best + 1e-12
    assert sol.kkt_residuals().max() <= 1e-6
    assert abs(sol.theta.sum()) <= 1e-10
    assert np.all(np.abs(sol.theta) <= C)


@pytest.mark.parametrize("seed", range(3))
def test_working_set_rules_agree(seed):
    K, y, eps, C = random_problem(seed, n=30, p=3)
    a = solve_dual(K, y, eps, C, tol=1e-8)
    b = solve_dual(K, y, eps, C, tol=1e-8, working_set="max_violation")
    assert a.objective() == pytest.approx(b.objective(), abs=1e-10)
    with pytest.raises(ValueError):
        solve_dual(K, y, eps, C, working_set="random")


def test_dual_objective_formula():
    K = np.array([[2.0, 1.0], [1.0, 3.0]])
    y = np.array([1.0, -1.0])
    theta = np.array([0.5, -0.5])
    # y.theta = 1, eps |theta| = 0.1, theta K theta / 2 = (0.5 - 0.25 - 0.25 + 0.75) / 2 = 0.375
    assert dual_objective(K, y, 0.1, theta) == pytest.approx(1 - 0.1 - 0.375)


def test_no_convergence():
    K, y, eps, C = random_problem(1, n=40)
    with pytest.raises(NoConvergence) as info:
        solve_dual(K, y, eps, C * 100, tol=1e-12, max_iter=3)
    assert info.value.max_iter == 3


# training -------------------------------------------------------------------

def test_constant_targets():
    model = train_svr(table(np.arange(6.0), np.full(6, 7.3)))
    assert model.n_support == 0
    np.testing.assert_array_equal(model.predict(np.array([[-100.0], [3.0], [1e5]])), 7.3)


def test_linear_realizable_inside_tube():
    x = np.arange(1.0, 6.0)
    t = table(x, 2 * x)
    tol = 1e-3
    model, sol = train_svr(t, SvrHyperparams(1e3, 0.01, KernelSpec("linear")), tol=tol, return_solution=True)
    # epsilon is in target-std units: convert the tube back to raw units
    tube = (0.01 + tol) * model.target_scaler[1]
    assert np.all(np.abs(model.predict(t) - 2 * x) <= tube + 1e-12)
    sv_rows = model.standardizer.inverse_transform(model.support_vectors)
    assert np.all(np.abs(model.predict(sv_rows)[:, None] - 2 * sv_rows) <= tube + 1e-12)


def test_model_invariants():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(60, 3))
    y = np.sin(3 * x[:, 0]) + x[:, 1] ** 2 + 0.05 * rng.normal(size=60)
    hp = SvrHyperparams(5.0, 0.1)
    model, sol = train_svr(table(x, y), hp, tol=1e-4, return_solution=True)
    assert np.all(np.abs(model.dual_coefficients) <= hp.C)
    assert np.all(np.abs(model.dual_coefficients) > 0)
    assert abs(model.dual_coefficients.sum()) <= 1e-6 * hp.C * model.n_support
    assert sol.kkt_residuals().max() <= 1e-4


def test_bias_from_free_vectors():
    rng = np.random.default_rng(8)
    x = rng.uniform(size=(40, 2))
    y = x[:, 0] - x[:, 1] + 0.1 * rng.normal(size=40)
    model, sol = train_svr(table(x, y), SvrHyperparams(2.0, 0.2), tol=1e-8, return_solution=True)
    free = (np.abs(sol.theta) > 0) & (np.abs(sol.theta) < 2.0 - 1e-9)
    assert free.any()
    r = sol.y - sol.K @ sol.theta
    np.testing.assert_allclose(r[free] - 0.2 * np.sign(sol.theta[free]), sol.bias, atol=1e-6)


def test_support_vectors_shrink_with_epsilon():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(80, 2))
    t = table(x, np.cos(2 * x[:, 0]) + x[:, 1] + 0.1 * rng.normal(size=80))
    counts = [train_svr(t, SvrHyperparams(3.0, e), tol=1e-6).n_support for e in (0.0, 0.05, 0.2, 0.5, 1.0)]
    assert counts == sorted(counts, reverse=True)


def test_predictions_permutation_invariant():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(50, 3))
    y = x @ [1.0, -2.0, 0.5] + 0.1 * rng.normal(size=50)
    perm = rng.permutation(50)
    probe = rng.uniform(size=(20, 3))
    a = train_svr(table(x, y), tol=1e-10).predict(probe)
    b = train_svr(table(x[perm], y[perm]), tol=1e-10).predict(probe)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_persistence_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(40, 2))
    t = table(x, x[:, 0] * 3 + rng.normal(size=40) * 0.1)
    model = train_svr(t, SvrHyperparams(4.0, 0.05, KernelSpec("rbf", 0.8)))
    save_model(model, tmp_path / "m.json")
    again = load_model(tmp_path / "m.json", expected_schema=t.schema)
    probe = rng.uniform(size=(100, 2))
    np.testing.assert_array_equal(model.predict(probe), again.predict(probe))
    np.testing.assert_array_equal(model.predict(probe), model.predict(probe))
    assert json.loads((tmp_path / "m.json").read_text())["format"] == "pbsd-svr"


def test_load_rejects_other_schema(tmp_path):
    t = table(np.arange(10.0), np.arange(10.0) ** 2)
    save_model(train_svr(t), tmp_path / "m.json")
    # a superset schema with identical entries is accepted
    load_model(tmp_path / "m.json", expected_schema=unit_schema(2))
    other = FeatureSchema((Feature("x0", 0.0, 50.0, "design"),))
    with pytest.raises(SchemaMismatch):
        load_model(tmp_path / "m.json", expected_schema=other)


def test_predict_schema_mismatch():
    model = train_svr(table(np.arange(10.0), np.arange(10.0) ** 2))
    with pytest.raises(SchemaMismatch):
        predict(model, np.ones((3, 2)))


# metrics --------------------------------------------------------------------

def test_metrics_hand_example():
    m = compute_metrics([1, 2, 3, 4], [1, 2, 3, 5], 1)
    assert m.r2 == pytest.approx(0.8, abs=1e-12)
    assert m.adjusted_r2 == pytest.approx(0.7, abs=1e-12)
    assert m.normalized_rmse == pytest.approx(0.2, abs=1e-12)
    assert m.normalized_mae == pytest.approx(0.1, abs=1e-12)


def test_metrics_perfect_and_mean():
    y = np.array([2.0, 4.0, 9.0, 1.0])
    m = compute_metrics(y, y, 2)
    assert (m.adjusted_r2, m.normalized_rmse, m.normalized_mae) == (1.0, 0.0, 0.0)
    m = compute_metrics(y, np.full(4, y.mean()), 0)
    assert m.r2 == pytest.approx(0.0, abs=1e-15)
    assert m.adjusted_r2 == pytest.approx(0.0, abs=1e-15)


def test_metrics_errors():
    with pytest.raises(ZeroMeanTarget):
        compute_metrics([-1, 1], [0, 0], 0)
    with pytest.raises(ZeroVarianceTarget):
        compute_metrics([2, 2, 2], [1, 2, 3], 0)
    with pytest.raises(InsufficientDof):
        compute_metrics([1, 2, 3], [1, 2, 3], 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(-100, 100)), min_size=2, max_size=30))
def test_rmse_dominates_mae(pairs):
    y, y_hat = np.array(pairs).T
    m = compute_metrics(y, y_hat, 0) if np.ptp(y) > 0 else None
    if m is not None:
        assert m.normalized_rmse >= m.normalized_mae - 1e-12
