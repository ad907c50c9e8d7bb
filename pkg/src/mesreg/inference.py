"""Plug-in estimates of the asymptotic covariance of the two-step estimator.

The stacked estimator is asymptotically normal with covariance
``Gamma M Gamma'`` where::

    Gamma = [[ L^-1,               0     ],
             [ -L1^-1 L2 L^-1,     L1^-1 ]]
    M     = blockdiag(V, M*)

``L`` (VaR Hessian) and ``L2`` (first-step propagation) involve the
conditional density of ``x`` at the VaR; both are estimated with a boxcar
kernel of half-width ``c_n`` (Hall-Sheather rule scaled by the MAD of the
first-step residuals).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .exceptions import (DegenerateBandwidthError, InferenceUnavailableError,
                         LevelError, SingularityError)

COND_LIMIT = 1e12


def hall_sheather(n, beta, alpha=0.05):
    """Hall-Sheather bandwidth on the probability scale."""
    z = norm.ppf(beta)
    return (n ** (-1.0 / 3.0) * norm.ppf(1.0 - alpha / 2.0) ** (2.0 / 3.0)
            * (1.5 * norm.pdf(z) ** 2 / (2.0 * z ** 2 + 1.0)) ** (1.0 / 3.0))


def mad(a):
    """Unscaled median absolute deviation from the median."""
    a = np.asarray(a, dtype=float)
    return float(np.median(np.abs(a - np.median(a))))


@dataclass(frozen=True)
class Bandwidth:
    c_n: float
    mad: float
    m_nbeta: float
    beta: float

    def recompute(self) -> float:
        return self.mad * (norm.ppf(self.beta + self.m_nbeta) - norm.ppf(self.beta - self.m_nbeta))


def bandwidth(var_residuals, beta, n=None) -> Bandwidth:
    """Kernel half-width ``c_n`` from the residuals ``x_t - v_t(theta_v)``."""
    r = np.asarray(var_residuals, dtype=float)
    n = r.shape[0] if n is None else int(n)
    if n < 2:
        raise DegenerateBandwidthError("bandwidth needs n >= 2")
    m = float(hall_sheather(n, beta))
    if not (0.0 < beta - m and beta + m < 1.0):
        raise LevelError(f"beta +/- m(n, beta) = {beta} +/- {m:.4f} leaves (0, 1); "
                         f"a larger sample is needed at this level")
    s = mad(r)
    if s == 0.0:
        raise DegenerateBandwidthError("all first-step residuals coincide (MAD = 0)")
    c = s * (norm.ppf(beta + m) - norm.ppf(beta - m))
    return Bandwidth(float(c), s, m, float(beta))


def _sym(a):
    return 0.5 * (a + a.T)


def _cond(a):
    if not np.any(a):
        return float("inf")
    s = np.linalg.svd(a, compute_uv=False)
    return float("inf") if s[-1] == 0.0 else float(s[0] / s[-1])


@dataclass(frozen=True, eq=False)
class FitDiagnostics:
    V: np.ndarray
    Lambda: np.ndarray
    M_star: np.ndarray
    Lambda1: np.ndarray
    Lambda2: np.ndarray
    cond_lambda: float
    cond_lambda1: float
    kernel_count: int

    @property
    def p(self):
        return self.V.shape[0]

    @property
    def q(self):
        return self.M_star.shape[0]


def kernel_weights(x, fitted_var, c_n):
    """Boxcar weights ``(2 c_n)^-1 1{|x - v| < c_n}``."""
    return (np.abs(np.asarray(x) - np.asarray(fitted_var)) < c_n) / (2.0 * c_n)


def estimate_matrices(dataset, spec, var_fit, mes_fit, bw) -> FitDiagnostics:
    beta = spec.beta
    n = dataset.n
    gv = np.asarray(spec.var_link.gradient(dataset.z_v, var_fit.theta_v), dtype=float)
    gm = np.asarray(spec.mes_link.gradient(dataset.z_m, mes_fit.theta_m), dtype=float)
    c = bw.c_n if isinstance(bw, Bandwidth) else float(bw)
    k = kernel_weights(dataset.x, var_fit.fitted, c)
    e = np.asarray(dataset.y) - mes_fit.fitted
    exceed = np.asarray(var_fit.exceed_mask, dtype=float)

    V = _sym(beta * (1.0 - beta) * (gv.T @ gv) / n)
    L = _sym((gv * k[:, None]).T @ gv / n)
    Ms = _sym((gm * (exceed * e * e)[:, None]).T @ gm / n)
    L1 = _sym((1.0 - beta) * (gm.T @ gm) / n)
    L2 = (gm * (e * k)[:, None]).T @ gv / n
    return FitDiagnostics(V, L, Ms, L1, L2, _cond(L), _cond(L1), int(np.count_nonzero(k)))


def _inverse(a, block):
    u, s, vt = np.linalg.svd(a)
    if s[0] == 0.0 or s[-1] == 0.0 or s[0] / s[-1] >= COND_LIMIT:
        raise SingularityError(f"{block} is singular or ill-conditioned "
                               f"(condition number {_cond(a):.3g})", block=block)
    return (vt.T / s) @ u.T


def gamma_matrix(diag: FitDiagnostics) -> np.ndarray:
    p, q = diag.p, diag.q
    Li = _inverse(diag.Lambda, "Lambda")
    L1i = _inverse(diag.Lambda1, "Lambda1")
    G = np.zeros((p + q, p + q))
    G[:p, :p] = Li
    G[p:, :p] = -L1i @ diag.Lambda2 @ Li
    G[p:, p:] = L1i
    return G


def sandwich(diag: FitDiagnostics) -> np.ndarray:
    """Asymptotic covariance ``Gamma M Gamma'`` (not yet divided by n)."""
    p, q = diag.p, diag.q
    G = gamma_matrix(diag)
    M = np.zeros((p + q, p + q))
    M[:p, :p] = diag.V
    M[p:, p:] = diag.M_star
    return _sym(G @ M @ G.T)


@dataclass(frozen=True, eq=False)
class InferenceReport:
    names: tuple
    estimates: np.ndarray
    se: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float

    def rows(self):
        for i, name in enumerate(self.names):
            yield (name, float(self.estimates[i]), float(self.se[i]), float(self.t_stats[i]),
                   float(self.p_values[i]), float(self.ci_lower[i]), float(self.ci_upper[i]))


def standard_errors(avar, n):
    return np.sqrt(np.clip(np.diag(avar), 0.0, None) / n)


def summarize(estimates, avar, n, level=0.95, names=None) -> InferenceReport:
    """Normal-reference t-statistics, p-values and confidence intervals."""
    if avar is None:
        raise InferenceUnavailableError("no asymptotic covariance available for this fit")
    if not 0.0 < level < 1.0:
        raise LevelError(f"confidence level must lie in (0, 1), got {level}")
    est = np.asarray(estimates, dtype=float)
    se = standard_errors(avar, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, est / se, np.copysign(np.inf, est))
    pv = 2.0 * norm.sf(np.abs(t))
    half = norm.ppf(1.0 - (1.0 - level) / 2.0) * se
    names = tuple(names) if names else tuple(f"theta{i}" for i in range(est.size))
    return InferenceReport(names, est, se, t, pv, est - half, est + half, level)


def report(joint_fit, level=0.95) -> InferenceReport:
    """Inference table for a fitted joint (or ES) model."""
    est = np.concatenate([joint_fit.theta_v, joint_fit.theta_m])
    return summarize(est, joint_fit.avar, joint_fit.n, level, joint_fit.names)
