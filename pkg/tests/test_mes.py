import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import grid_minimize, truncated_sq_objective
from mesreg.data import CustomLink, Dataset, ModelSpec
from mesreg.exceptions import InsufficientExceedancesError, SingularityError
from mesreg.mes import fit_joint, fit_mes, mes_objective, subsample_ols
from mesreg.quantile import VarFit, fit_var
from mesreg.simulation import SimConfig, replication_rng, simulate_dgp, true_params


def fixed_var(ds, v):
    fitted = np.full(ds.n, float(v))
    return VarFit(np.array([float(v)]), fitted, np.asarray(ds.x) > fitted, 0.0)


def test_intercept_only_subsample_mean():
    x = np.arange(1.0, 6.0)
    ds = Dataset([10, 20, 30, 40, 50], x, np.ones((5, 1)), np.ones((5, 1)))
    fit = fit_mes(ds, ModelSpec(0.5), fixed_var(ds, 3.0))
    assert fit.theta_m[0] == 45.0
    assert fit.n_exceed == 2


def test_no_exceedances():
    x = np.arange(1.0, 6.0)
    ds = Dataset(x, x, np.ones((5, 1)), np.ones((5, 1)))
    with pytest.raises(InsufficientExceedancesError):
        fit_mes(ds, ModelSpec(0.5), fixed_var(ds, 10.0))


def test_singular_subsample():
    n = 40
    x = np.arange(n, dtype=float)
    z = np.c_[np.ones(n), (x > 30).astype(float)]
    ds = Dataset(x, x, np.ones((n, 1)), z)
    with pytest.raises(SingularityError):
        fit_mes(ds, ModelSpec(0.5), fixed_var(ds, 30.5))


@pytest.mark.parametrize("seed", range(4))
def test_matches_grid_oracle_n60(seed):
    cfg = SimConfig(n=60, beta=0.9)
    ds = simulate_dgp(cfg, replication_rng(200 + seed, 0))
    var_fit = fit_var(ds, ModelSpec(0.9))
    z, y = np.asarray(ds.z_m), np.asarray(ds.y)
    mask = np.asarray(var_fit.exceed_mask, dtype=float)
    truth = true_params(cfg).theta_m0
    oracle = grid_minimize(lambda th: truncated_sq_objective(th, z, y, mask), truth, 4.0)
    fit = fit_mes(ds, ModelSpec(0.9), var_fit)
    assert np.max(np.abs(fit.theta_m - oracle)) <= 1e-3


def test_final_loss_and_count_definitions():
    ds = simulate_dgp(SimConfig(n=500), replication_rng(1, 0))
    var_fit = fit_var(ds, ModelSpec(0.9))
    fit = fit_mes(ds, ModelSpec(0.9), var_fit)
    mask = np.asarray(var_fit.exceed_mask)
    e = np.asarray(ds.y) - fit.fitted
    assert fit.final_loss == np.mean(0.5 * mask * e * e)
    assert fit.n_exceed == int(mask.sum())
    assert fit.final_loss <= mes_objective(ds.y, np.zeros(ds.n), mask)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(40, 400))
def test_normal_equations(seed, n):
    rng = np.random.default_rng(seed)
    z = np.c_[np.ones(n), rng.normal(size=(n, 2))]
    y = rng.normal(size=n) * 10
    mask = rng.random(n) < 0.3
    if mask.sum() < 3:
        mask[:3] = True
    theta = subsample_ols(z, y, mask)
    grad = z[mask].T @ (y[mask] - z[mask] @ theta)
    assert np.linalg.norm(grad) <= 1e-8 * (1 + np.linalg.norm(y))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0), st.floats(-100, 100))
def test_affine_equivariance(seed, a, b):
    ds = simulate_dgp(SimConfig(n=300), replication_rng(seed, 0))
    var_fit = fit_var(ds, ModelSpec(0.9))
    base = fit_mes(ds, ModelSpec(0.9), var_fit).theta_m
    moved = fit_mes(ds.with_y(a * np.asarray(ds.y) + b), ModelSpec(0.9), var_fit).theta_m
    expected = a * base
    expected[0] += b
    assert np.allclose(moved, expected, rtol=1e-9, atol=1e-9 * (1 + abs(b)))


def test_second_step_leaves_var_untouched():
    ds = simulate_dgp(SimConfig(n=800), replication_rng(2, 0))
    alone = fit_var(ds, ModelSpec(0.9))
    joint = fit_joint(ds, ModelSpec(0.9))
    assert joint.theta_v.tobytes() == alone.theta_v.tobytes()


def test_es_special_case_intercept_only():
    rng = np.random.default_rng(5)
    x = rng.standard_t(5, size=400)
    one = np.ones((400, 1))
    fit = fit_joint(Dataset(x, x, one, one), ModelSpec(0.9))
    v = fit.theta_v[0]
    assert fit.theta_m[0] == x[x > v].mean()


def test_joint_fit_contents():
    ds = simulate_dgp(SimConfig(n=2000), replication_rng(3, 0))
    fit = fit_joint(ds, ModelSpec(0.9))
    assert fit.avar.shape == (6, 6)
    assert np.array_equal(fit.avar, fit.avar.T)
    assert np.linalg.eigvalsh(fit.avar).min() >= -1e-8 * np.trace(fit.avar)
    assert np.allclose(fit.se, np.sqrt(np.diag(fit.avar) / 2000))
    assert 0 <= fit.exceedance_count <= 2000
    assert fit.bandwidth > 0 and fit.converged
    assert fit.loss_values == (fit.var_fit.final_loss, fit.mes_fit.final_loss)


def test_inference_degrades_with_few_exceedances():
    rng = np.random.default_rng(0)
    n = 30
    x = rng.normal(size=n)
    z = np.c_[np.ones(n), rng.normal(size=n)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_joint(Dataset(x, x, z, z), ModelSpec(0.9))
    assert fit.avar is None and fit.se is None and not fit.inference_ok
    assert fit.warnings and any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_nonlinear_mes_link_matches_closed_form():
    ds = simulate_dgp(SimConfig(n=1000), replication_rng(6, 0))
    var_fit = fit_var(ds, ModelSpec(0.9))
    lin = fit_mes(ds, ModelSpec(0.9), var_fit)
    link = CustomLink(lambda z, th: z @ th, lambda z, th: z, dim=3, start=[0.0, 0.0, 0.0])
    nl = fit_mes(ds, ModelSpec(0.9, mes_link=link), var_fit)
    assert np.allclose(nl.theta_m, lin.theta_m, atol=1e-5)
    assert not nl.starts_disagree


@pytest.mark.slow
def test_slopes_within_three_se():
    cfg = SimConfig(n=4000, beta=0.9)
    truth = true_params(cfg).theta0
    hits = []
    for r in range(200):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_joint(simulate_dgp(cfg, replication_rng(77, r)), ModelSpec(0.9))
        est = np.r_[fit.theta_v, fit.theta_m]
        slopes = [1, 2, 4, 5]
        hits.append(np.all(np.abs(est[slopes] - truth[slopes]) <= 3 * fit.se[slopes]))
    # Frozen Monte Carlo value for these seeds. The lognormal covariate makes
    # the plug-in SEs undercover, so the rate sits well below 0.99.
    assert np.mean(hits) == pytest.approx(0.81, abs=0.03)
