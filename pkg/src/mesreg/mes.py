"""Second step: MES regression on the first-step VaR exceedances.

Given the VaR fit, the truncated squared-error objective

    (1/n) sum_t 1/2 1{x_t > v_t} (y_t - m_t(theta_m))^2

is smooth in ``theta_m``. For the linear link its minimiser is ordinary least
squares on the exceedance subsample.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import inference
from .data import Dataset, ModelSpec, is_linear, validate
from .exceptions import (ConvergenceError, DegenerateBandwidthError,
                         InsufficientExceedancesError, LevelError, SingularityError)
from .quantile import VarFit, _multistart, fit_var

MIN_EXCEED_FOR_INFERENCE = 5
MULTISTART_GAP = 1e-4


@dataclass(frozen=True, eq=False)
class MesFit:
    theta_m: np.ndarray
    fitted: np.ndarray
    n_exceed: int
    final_loss: float
    starts_disagree: bool = False


def mes_objective(y, fitted, exceed_mask):
    e = np.asarray(y) - np.asarray(fitted)
    return float(np.mean(0.5 * np.asarray(exceed_mask) * e * e))


def subsample_ols(z, y, mask):
    """Least squares of ``y`` on ``z`` over the rows selected by ``mask``.

    ``y`` may be a matrix, in which case every column is solved against the
    same design.
    """
    ze = z[mask]
    ye = y[mask]
    q = z.shape[1]
    if ze.shape[0] < q:
        raise InsufficientExceedancesError(
            f"{ze.shape[0]} exceedances cannot identify {q} MES parameters")
    if q == 1 and ze.shape[0] and ze[0, 0] != 0.0 and np.all(ze == ze[0, 0]):
        # one constant regressor: the solution is the subsample mean
        return np.reshape(ye.mean(axis=0) / ze[0, 0], (1,) + ye.shape[1:])
    theta, _, rank, _ = np.linalg.lstsq(ze, ye, rcond=None)
    if rank < q:
        raise SingularityError("MES design on the exceedance subsample is rank deficient",
                               block="z_m")
    return theta


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def fit_mes(dataset: Dataset, spec: ModelSpec, var_fit: VarFit) -> MesFit:
    mask = np.asarray(var_fit.exceed_mask)
    if mask.shape[0] != dataset.n:
        raise ValueError("var_fit was computed on a different dataset")
    y = np.asarray(dataset.y)
    z = np.asarray(dataset.z_m)
    n_exceed = int(mask.sum())
    link = spec.mes_link
    if is_linear(link):
        theta = np.array(subsample_ols(z, y, mask), dtype=float)
        fitted = z @ theta
        _freeze(theta, fitted)
        return MesFit(theta, fitted, n_exceed, mes_objective(y, fitted, mask))

    q = spec.dims(dataset)[1]
    if n_exceed < q:
        raise InsufficientExceedancesError(
            f"{n_exceed} exceedances cannot identify {q} MES parameters")
    w = mask.astype(float)
    n = dataset.n

    def fun(th):
        e = w * (y - np.asarray(link.value(z, th), float))
        g = np.asarray(link.gradient(z, th), float)
        return float(0.5 * np.mean(e * e)), -(g.T @ e) / n

    results = []
    for s in _multistart(link.start):
        res = minimize(fun, s, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 5000})
        if np.isfinite(res.fun):
            results.append((float(res.fun), res.x, res.nit < 5000))
    if not results:
        raise ConvergenceError("MES optimiser failed from every start", np.asarray(link.start))
    results.sort(key=lambda r: r[0])
    obj, theta, ok = results[0]
    if not ok:
        raise ConvergenceError("MES optimiser hit its iteration limit", theta)
    disagree = any(r[0] - obj > MULTISTART_GAP for r in results[1:])
    theta = np.array(theta, dtype=float)
    fitted = np.asarray(link.value(z, theta), dtype=float).copy()
    _freeze(theta, fitted)
    return MesFit(theta, fitted, n_exceed, mes_objective(y, fitted, mask), disagree)


@dataclass(frozen=True, eq=False)
class JointFit:
    theta_v: np.ndarray
    theta_m: np.ndarray
    bandwidth: float | None
    avar: np.ndarray | None
    se: np.ndarray | None
    exceedance_count: int
    converged: bool
    loss_values: tuple
    n: int
    names: tuple = ()
    diagnostics: inference.FitDiagnostics | None = None
    bandwidth_info: inference.Bandwidth | None = None
    var_fit: VarFit | None = None
    mes_fit: MesFit | None = None
    warnings: tuple = field(default_factory=tuple)

    @property
    def p(self):
        return self.theta_v.shape[0]

    @property
    def q(self):
        return self.theta_m.shape[0]

    @property
    def inference_ok(self):
        return self.avar is not None

    def report(self, level=0.95):
        return inference.report(self, level)


def run_inference(dataset, spec, var_fit, mes_fit, lambda2=None):
    """Bandwidth, plug-in matrices and sandwich, degrading instead of raising.

    ``lambda2`` optionally replaces the cross matrix (used by ES regressions);
    it is called as ``lambda2(bandwidth)``. Returns
    ``(bandwidth, diagnostics, avar, messages)``; any of the first three may be
    ``None`` when the corresponding stage could not be computed.
    """
    msgs = []
    q = mes_fit.theta_m.shape[0]
    if mes_fit.n_exceed < max(q, MIN_EXCEED_FOR_INFERENCE):
        msgs.append(f"only {mes_fit.n_exceed} exceedances; inference needs "
                    f"at least {max(q, MIN_EXCEED_FOR_INFERENCE)}")
        return None, None, None, tuple(msgs)
    try:
        bw = inference.bandwidth(np.asarray(dataset.x) - var_fit.fitted, spec.beta, dataset.n)
    except (DegenerateBandwidthError, LevelError) as exc:
        return None, None, None, (str(exc),)
    diag = inference.estimate_matrices(dataset, spec, var_fit, mes_fit, bw)
    if lambda2 is not None:
        diag = inference.FitDiagnostics(diag.V, diag.Lambda, diag.M_star, diag.Lambda1,
                                        lambda2(bw), diag.cond_lambda, diag.cond_lambda1,
                                        diag.kernel_count)
    if diag.kernel_count == 0:
        msgs.append("no observations inside the kernel window")
    try:
        avar = inference.sandwich(diag)
    except SingularityError as exc:
        msgs.append(str(exc))
        avar = None
    return bw, diag, avar, tuple(msgs)


def assemble(dataset, spec, var_fit, mes_fit, lambda2=None) -> JointFit:
    bw, diag, avar, msgs = run_inference(dataset, spec, var_fit, mes_fit, lambda2)
    for m in msgs:
        warnings.warn(m, RuntimeWarning, stacklevel=3)
    se = None if avar is None else inference.standard_errors(avar, dataset.n)
    names = (tuple(f"v:{c}" for c in _names(dataset.v_names, var_fit.theta_v.size))
             + tuple(f"m:{c}" for c in _names(dataset.m_names, mes_fit.theta_m.size)))
    return JointFit(
        theta_v=var_fit.theta_v,
        theta_m=mes_fit.theta_m,
        bandwidth=None if bw is None else bw.c_n,
        avar=avar,
        se=se,
        exceedance_count=var_fit.n_exceed,
        converged=var_fit.converged,
        loss_values=(var_fit.final_loss, mes_fit.final_loss),
        n=dataset.n,
        names=names,
        diagnostics=diag,
        bandwidth_info=bw,
        var_fit=var_fit,
        mes_fit=mes_fit,
        warnings=msgs,
    )


def _names(cols, k):
    return cols if len(cols) == k else tuple(str(j) for j in range(k))


def fit_joint(dataset: Dataset, spec: ModelSpec, var_fit: VarFit | None = None) -> JointFit:
    """Two-step fit with inference.

    Pass ``var_fit`` to reuse a first step (e.g. several outcomes sharing one
    distress series); otherwise it is computed here.
    """
    validate(dataset, spec)
    if var_fit is None:
        var_fit = fit_var(dataset, spec)
    mes_fit = fit_mes(dataset, spec, var_fit)
    return assemble(dataset, spec, var_fit, mes_fit)
