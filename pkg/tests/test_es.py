import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mesreg.data import Dataset, ModelSpec
from mesreg.es import decompose, fit_es, lambda2_es
from mesreg.mes import fit_joint
from mesreg.simulation import SimConfig, replication_rng, simulate_dgp


def es_design(seed, n=600):
    ds = simulate_dgp(SimConfig(n=n), replication_rng(seed, 0))
    return np.asarray(ds.x), np.asarray(ds.z_v), np.asarray(ds.z_m)


@pytest.mark.parametrize("seed", range(3))
def test_point_estimates_equal_joint_fit(seed):
    x, zv, zm = es_design(seed)
    es = fit_es(x, zv, zm, 0.9)
    joint = fit_joint(Dataset(x, x, zv, zm), ModelSpec(0.9))
    assert es.theta_v.tobytes() == joint.theta_v.tobytes()
    assert es.theta_e.tobytes() == joint.theta_m.tobytes()


def test_intercept_only_is_tail_mean():
    x = np.random.default_rng(0).standard_t(4, size=1000)
    one = np.ones((1000, 1))
    es = fit_es(x, one, one, 0.95)
    v = es.theta_v[0]
    assert es.theta_e[0] == x[x > v].mean()
    assert es.theta_e[0] > v


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_es_dominates_var_on_exceedances(seed):
    x, zv, zm = es_design(seed, n=400)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        es = fit_es(x, zv, zm, 0.9)
    mask = es.var_fit.exceed_mask
    assert np.mean(es.mes_fit.fitted[mask] - es.var_fit.fitted[mask]) >= -1e-8


def test_es_inference_uses_es_cross_matrix():
    x, zv, zm = es_design(4, n=2000)
    es = fit_es(x, zv, zm, 0.9)
    ds = Dataset(x, x, zv, zm)
    expected = lambda2_es(ds, es.var_fit, es.mes_fit, es.bandwidth_info, ModelSpec(0.9))
    assert np.array_equal(es.diagnostics.Lambda2, expected)
    assert es.avar.shape == (6, 6) and np.all(np.isfinite(es.se))


def test_lambda2_es_zero_when_paths_coincide():
    x, zv, zm = es_design(5)
    es = fit_es(x, zv, zm, 0.9)
    same = replace(es.mes_fit, fitted=es.var_fit.fitted.copy())
    ds = Dataset(x, x, zv, zm)
    out = lambda2_es(ds, es.var_fit, same, es.bandwidth, ModelSpec(0.9))
    assert out.shape == (3, 3) and not np.any(out)


def test_lambda2_es_scalar_direct_sum():
    rng = np.random.default_rng(6)
    n = 300
    x = rng.normal(size=n)
    one = np.ones((n, 1))
    es = fit_es(x, one, one, 0.9)
    v, m, c = es.theta_v[0], es.theta_e[0], es.bandwidth
    total = 0.0
    for xt in x:
        if abs(xt - v) < c:
            total += (v - m) / (2.0 * c)
    expected = total / n
    got = lambda2_es(Dataset(x, x, one, one), es.var_fit, es.mes_fit, c)
    assert got[0, 0] == pytest.approx(expected, rel=1e-12)


def test_lambda2_es_empty_window():
    x, zv, zm = es_design(7)
    es = fit_es(x, zv, zm, 0.9)
    far = replace(es.var_fit, fitted=es.var_fit.fitted + 1e3)
    out = lambda2_es(Dataset(x, x, zv, zm), far, es.mes_fit, 0.1)
    assert not np.any(out)


def components(seed, n=1500, D=3):
    ds = simulate_dgp(SimConfig(n=n), replication_rng(seed, 0))
    rng = np.random.default_rng(seed)
    ys = np.asarray(ds.y)[:, None] * rng.uniform(0.5, 1.5, D) + rng.normal(size=(n, D))
    return ys, np.asarray(ds.z_v), np.asarray(ds.z_m)


@pytest.mark.parametrize("seed", range(3))
def test_decomposition_reconciles_with_constant_weights(seed):
    ys, zv, zm = components(seed)
    w = np.array([0.2, 0.5, 0.3])
    x = ys @ w
    dec = decompose(x, ys, w, zv, zm, 0.9)
    assert len(dec.components) == 3 and dec.constant_weights
    scale = np.abs(dec.es.theta_e).max()
    assert np.max(np.abs(dec.reconciliation)) <= 1e-10 * (1 + scale)
    assert np.allclose(dec.weighted_theta(), dec.es.theta_e, rtol=1e-10, atol=1e-10)
    for f in dec.components:
        assert np.array_equal(f.var_fit.exceed_mask, dec.es.var_fit.exceed_mask)


def test_decomposition_time_varying_weights():
    ys, zv, zm = components(3)
    n = ys.shape[0]
    t = np.linspace(0, 1, n)[:, None]
    w = np.c_[0.2 + 0.1 * t, 0.5 - 0.1 * t, 0.3 + 0 * t]
    x = (ys * w).sum(axis=1)
    dec = decompose(x, ys, w, zv, zm, 0.9, names=["a", "b", "c"])
    assert not dec.constant_weights
    assert np.allclose(dec.mean_weights, w.mean(axis=0))
    assert dec.names == ("a", "b", "c")


def test_decomposition_weight_shape_checked():
    ys, zv, zm = components(4, n=300)
    with pytest.raises(ValueError):
        decompose(ys.sum(axis=1), ys, [0.5, 0.5], zv, zm, 0.9)


@pytest.mark.slow
def test_growth_at_risk_slope_signs():
    # x_t = 0.5 + 0.6 x_{t-1} + (1 + 0.3 |x_{t-1}|) e_t with t5 noise: VaR and ES
    # slopes on the lagged value are positive.
    hits = 0
    reps = 200
    for r in range(reps):
        rng = np.random.default_rng([31, r])
        n = 600
        e = rng.standard_t(5, size=n + 101)
        x = np.zeros(n + 101)
        for t in range(1, n + 101):
            x[t] = 0.5 + 0.6 * x[t - 1] + (1 + 0.3 * abs(x[t - 1])) * e[t]
        x = x[100:]
        z = np.c_[np.ones(n), x[:-1]]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            es = fit_es(x[1:], z, z, 0.9)
        hits += es.theta_v[1] > 0 and es.theta_e[1] > 0
    assert hits / reps >= 0.95
