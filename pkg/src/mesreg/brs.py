"""Rolling-window comparator: empirical MES over a trailing window, then OLS.

Kept as the baseline the two-step estimator is compared against. The
response ``Y*_t`` averages ``y_s`` over the window ``s = t-S, ..., t`` where
``x_s`` is at or above the window's type-1 empirical beta-quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import Dataset, check_level
from .empirical import type1_rank
from .exceptions import InsufficientExceedancesError, SingularityError, WindowError

DEFAULT_WINDOW = 250
_BLOCK = 2048


def min_window(beta):
    """Smallest number of points S + 1 a window needs to hold one exceedance on average."""
    return math.ceil(round(1.0 / (1.0 - beta), 9))


def brs_transform(y, x, S, beta):
    """Rolling empirical MES; element ``i`` belongs to time ``t = S + i``."""
    beta = check_level(beta)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    S = int(S)
    n = x.shape[0]
    if S < 1 or S + 1 < min_window(beta):
        raise WindowError(f"window of S + 1 = {S + 1} points is shorter than the "
                          f"{min_window(beta)} needed at beta = {beta}")
    if n <= S:
        raise WindowError(f"n = {n} must exceed the window parameter S = {S}")
    k = type1_rank(beta, S + 1) - 1
    xw = sliding_window_view(x, S + 1)
    yw = sliding_window_view(y, S + 1)
    out = np.empty(n - S)
    for lo in range(0, n - S, _BLOCK):
        xb = xw[lo:lo + _BLOCK]
        q = np.partition(xb, k, axis=1)[:, k]
        hit = xb >= q[:, None]
        out[lo:lo + _BLOCK] = (yw[lo:lo + _BLOCK] * hit).sum(axis=1) / hit.sum(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class BrsFit:
    theta: np.ndarray
    se_ols: np.ndarray
    y_star: np.ndarray
    window: int
    names: tuple = ()


def ols(z, y):
    """OLS with classical homoskedastic standard errors."""
    m, k = z.shape
    if m <= k:
        raise InsufficientExceedancesError(f"{m} observations for {k} regressors")
    theta, _, rank, _ = np.linalg.lstsq(z, y, rcond=None)
    if rank < k:
        raise SingularityError("regressor matrix is rank deficient", block="z_m")
    resid = y - z @ theta
    s2 = float(resid @ resid) / (m - k)
    cov = s2 * np.linalg.inv(z.T @ z)
    return theta, np.sqrt(np.clip(np.diag(cov), 0.0, None))


def fit_brs(dataset: Dataset, S=DEFAULT_WINDOW, beta=0.95) -> BrsFit:
    """Regress the rolling empirical MES on the MES covariates (rows t >= S)."""
    y_star = brs_transform(dataset.y, dataset.x, S, beta)
    theta, se = ols(np.asarray(dataset.z_m)[S:], y_star)
    return BrsFit(theta, se, y_star, int(S), dataset.m_names)
