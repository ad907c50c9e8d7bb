"""MES-based risk contributions, equal-risk-contribution weights and backtests.

For portfolio losses ``x_t = sum_d w_d y_{t,d}`` the Euler contribution of
asset ``d`` is its MES ``E[w_d y_{t,d} | x_t >= VaR_t]``. Contributions are
forecast one step ahead from a VaR regression of ``x`` and MES regressions
of every ``w_d y_d`` on the same covariates, all fitted on rows ``s < t``.
Because the MES step is least squares on a shared exceedance set, the
contributions add up to the ES forecast of ``x``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ModelSpec, check_level
from .empirical import type1_quantile
from .exceptions import DimensionError, UpdateDomainError
from .mes import subsample_ols
from .quantile import fit_var

DEFAULT_TOL = 0.01
DEFAULT_MAX_ITER = 200
CLAMP_FRACTION = 1e-6


def _design(z, n):
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != n:
        raise DimensionError(f"covariates have {z.shape[0]} rows, losses have {n}")
    return z


@dataclass(frozen=True, eq=False)
class RiskForecast:
    contributions: np.ndarray
    es: float
    var: float
    n_exceed: int


def forecast_risk(returns, weights, z, beta, t_forecast) -> RiskForecast:
    """One-step-ahead VaR, ES and Euler contributions at row ``t_forecast``.

    Only rows ``s < t_forecast`` enter the fits; row ``t_forecast`` of ``z``
    supplies the forecast covariates.
    """
    y = np.asarray(returns, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n, D = y.shape
    z = _design(z, n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (D,):
        raise DimensionError(f"{w.size} weights for {D} assets")
    t = int(t_forecast)
    if not 0 < t < n:
        raise DimensionError(f"forecast row {t} outside 1..{n - 1}")
    ys = y[:t] * w
    x = ys.sum(axis=1)
    zs = z[:t]
    var_fit = fit_var(Dataset(x, x, zs, zs), ModelSpec(check_level(beta)))
    mask = np.asarray(var_fit.exceed_mask)
    theta = subsample_ols(zs, ys, mask)
    rc = z[t] @ theta
    theta_es = subsample_ols(zs, x, mask)
    return RiskForecast(rc, float(z[t] @ theta_es), float(z[t] @ var_fit.theta_v),
                        int(mask.sum()))


def risk_contributions(returns, weights, z, beta, t_forecast) -> np.ndarray:
    """Forecast Euler risk contributions ``RC_{t,d}`` (see :func:`forecast_risk`)."""
    return forecast_risk(returns, weights, z, beta, t_forecast).contributions


def spread(rc) -> float:
    rc = np.asarray(rc, dtype=float)
    return float(rc.max() - rc.min())


@dataclass(frozen=True, eq=False)
class PortfolioState:
    """Result of the ERC iteration at one forecast date.

    ``rc_forecasts`` and ``spread`` belong to the last contributions computed;
    ``weights`` is the vector after the final update, as in the fixed-point
    recursion. ``trace`` lists the spread of every pass and ``weight_trace``
    the weights entering every pass plus the returned ones.
    """
    weights: np.ndarray
    rc_forecasts: np.ndarray
    iterations: int
    spread: float
    trace: tuple = ()
    weight_trace: tuple = field(default=(), repr=False)
    es_forecasts: tuple = field(default=(), repr=False)
    clamped: bool = False
    converged: bool = True


def _update(w, rc):
    clamped = False
    if np.any(rc <= 0.0):
        pos = rc[rc > 0.0]
        if pos.size == 0:
            raise UpdateDomainError("every risk contribution is nonpositive",
                                    component=int(np.argmin(rc)))
        rc = np.maximum(rc, CLAMP_FRACTION * float(pos.mean()))
        clamped = True
    w_new = w / (2.0 * rc) + w / 2.0
    return w_new / w_new.sum(), clamped


def _check_simplex(w):
    if np.any(w < 0.0) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-12):
        raise UpdateDomainError("weights left the simplex", component=int(np.argmin(w)))


def erc_weights(returns, z, beta, t_forecast, tol=DEFAULT_TOL,
                max_iter=DEFAULT_MAX_ITER) -> PortfolioState:
    """Equal-risk-contribution weights by the damped reciprocal-RC recursion.

    Starting from equal weights, every pass re-estimates the contributions
    under the current weights and sets ``w <- w / (2 RC) + w / 2`` followed by
    normalisation. The loop stops once the largest pairwise difference of the
    contributions is at most ``tol``. Nonpositive contributions are clamped to
    a small positive value inside the update and flagged in ``clamped``.
    """
    y = np.asarray(returns, dtype=float)
    D = y.shape[1]
    w = np.full(D, 1.0 / D)
    rc = np.zeros(D)
    rc[0] = 1.0
    trace, weights_seen, es_seen = [], [w], []
    clamped_any = False
    it = 0
    while spread(rc) > tol and it < max_iter:
        fc = forecast_risk(y, w, z, beta, t_forecast)
        rc = fc.contributions
        trace.append(spread(rc))
        es_seen.append(fc.es)
        w, clamped = _update(w, rc)
        _check_simplex(w)
        weights_seen.append(w)
        clamped_any |= clamped
        it += 1
    sp = spread(rc)
    return PortfolioState(w, rc, it, sp, tuple(trace), tuple(weights_seen), tuple(es_seen),
                          clamped_any, sp <= tol)


@dataclass(frozen=True)
class Metrics:
    avg_return: float
    std: float
    var: float
    es: float
    sharpe: float | None
    rorac: float | None

    def as_dict(self):
        return {"avg_return": self.avg_return, "std": self.std, "var": self.var,
                "es": self.es, "sharpe": self.sharpe, "rorac": self.rorac}


def performance_metrics(portfolio_losses, beta) -> Metrics:
    """Average return, SD, empirical VaR/ES, Sharpe ratio and RORAC of a loss series.

    VaR is the type-1 empirical quantile and ES the mean of losses at or above
    it. Ratios whose denominator is zero are reported as ``None``.
    """
    loss = np.asarray(portfolio_losses, dtype=float)
    if loss.ndim != 1 or loss.size < 2:
        raise DimensionError("performance metrics need at least two losses")
    beta = check_level(beta)
    avg = -float(loss.mean())
    sd = float(loss.std(ddof=1))
    var = float(type1_quantile(loss, beta))
    es = float(loss[loss >= var].mean())
    return Metrics(avg, sd, var, es, avg / sd if sd > 0 else None,
                   avg / es if es != 0 else None)


@dataclass(frozen=True, eq=False)
class Backtest:
    dates: np.ndarray
    weights: np.ndarray
    losses: np.ndarray
    metrics: Metrics
    states: tuple = field(default=(), repr=False)

    @property
    def converged(self):
        return all(s.converged for s in self.states)


def backtest(returns, z, beta, dates, strategy="erc", tol=DEFAULT_TOL,
             max_iter=DEFAULT_MAX_ITER) -> Backtest:
    """Out-of-sample losses of the ``"erc"`` or ``"ew"`` portfolio at ``dates``."""
    y = np.asarray(returns, dtype=float)
    D = y.shape[1]
    dates = np.asarray(dates, dtype=int)
    W = np.empty((dates.size, D))
    states = []
    for i, t in enumerate(dates):
        if strategy == "ew":
            W[i] = 1.0 / D
        elif strategy == "erc":
            st = erc_weights(y, z, beta, int(t), tol, max_iter)
            states.append(st)
            W[i] = st.weights
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
    losses = np.einsum("ij,ij->i", W, y[dates])
    return Backtest(dates, W, losses, performance_metrics(losses, beta), tuple(states))
