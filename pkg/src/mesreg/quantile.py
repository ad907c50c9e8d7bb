"""First step: VaR (quantile) regression by pinball-loss minimisation.

Linear links are solved in three stages:

1. a Huberised pinball objective, annealed over four smoothing levels and
   minimised with L-BFGS from a shifted least-squares start;
2. an exact descent over the vertices of the piecewise-linear objective
   (each vertex interpolates ``p`` observations), moving along the steepest
   descending edge with an exact line search until no edge descends;
3. a coordinate-wise exact line search that moves each coordinate to the
   left end of its flat minimising interval, which makes non-unique
   solutions deterministic.

Nonlinear links reuse stage 1 with a small deterministic multistart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .data import Dataset, ModelSpec, is_linear, validate
from .exceptions import ConvergenceError, DimensionError, SingularityError

SMOOTHING_LEVELS = (1e-1, 1e-2, 1e-3, 1e-4)
GTOL = 1e-8
N_PERTURBATIONS = 4
PERTURBATION_SCALE = 0.1


def pinball_loss(v, x, beta):
    """Pinball loss ``(1{x <= v} - beta) (v - x)``; vectorised over ``v`` and ``x``."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    out = ((x <= v).astype(float) - beta) * (v - x)
    return out if out.ndim else float(out)


def _huber_pinball(r, beta, eps):
    """Smoothed pinball loss of residuals ``r = x - v`` and its derivative in ``r``."""
    a = np.abs(r)
    w = np.where(r > 0, beta, 1.0 - beta)
    quad = a <= eps
    h = np.where(quad, r * r / (2.0 * eps), a - 0.5 * eps)
    dh = np.clip(r / eps, -1.0, 1.0)
    return w * h, w * dh


@dataclass(frozen=True, eq=False)
class VarFit:
    theta_v: np.ndarray
    fitted: np.ndarray
    exceed_mask: np.ndarray
    final_loss: float
    n_ties: int = 0
    iterations: int = 0
    converged: bool = True

    @property
    def n_exceed(self) -> int:
        return int(self.exceed_mask.sum())


def predict_var(theta_v, z_v, link=None):
    """Row-wise evaluation of the VaR link (linear by default)."""
    z = np.asarray(z_v, dtype=float)
    theta = np.asarray(theta_v, dtype=float)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    if link is None or is_linear(link):
        if z.shape[1] != theta.shape[0]:
            raise DimensionError(
                f"covariates have {z.shape[1]} columns but theta has {theta.shape[0]} entries")
        return z @ theta
    return np.asarray(link.value(z, theta), dtype=float)


def _objective(x, fitted, beta):
    return float(np.mean(pinball_loss(fitted, x, beta)))


def _tie_tol(x):
    return 1e-9 * (1.0 + float(np.max(np.abs(x))))


def _make_fit(x, fitted, theta, beta, iterations=0, converged=True):
    theta = np.array(theta, dtype=float)
    fitted = np.array(fitted, dtype=float)
    ties = int(np.sum(np.abs(x - fitted) <= _tie_tol(x)))
    for a in (theta, fitted):
        a.setflags(write=False)
    mask = x > fitted
    mask.setflags(write=False)
    return VarFit(theta, fitted, mask, _objective(x, fitted, beta), ties, iterations, converged)


# ---------------------------------------------------------------------------
# smoothed stage
# ---------------------------------------------------------------------------

def _smoothed_path(value_grad, theta0, beta, scale, x, maxiter=2000):
    """Anneal the Huberised objective; returns the last iterate and a status flag."""
    theta = np.asarray(theta0, dtype=float)
    ok = True
    for level in SMOOTHING_LEVELS:
        eps = level * scale

        def fun(th, eps=eps):
            fitted, grad_f = value_grad(th)
            loss, dl = _huber_pinball(x - fitted, beta, eps)
            return float(loss.mean()), -(grad_f.T @ dl) / x.shape[0]

        res = minimize(fun, theta, jac=True, method="L-BFGS-B",
                       options={"gtol": GTOL, "maxiter": maxiter, "ftol": 1e-15})
        theta = res.x
        ok = ok and res.nit < maxiter
    return theta, ok


def _scale(r):
    s = float(np.median(np.abs(r - np.median(r))))
    if s <= 0.0:
        s = float(np.mean(np.abs(r)))
    return s if s > 0.0 else 1.0


def _intercept_column(z):
    ones = np.all(z == 1.0, axis=0)
    return int(np.argmax(ones)) if ones.any() else None


def linear_start(z, x, beta):
    """Least-squares fit of ``x`` on ``z`` shifted by the beta-quantile of its residuals."""
    theta, *_ = np.linalg.lstsq(z, x, rcond=None)
    j = _intercept_column(z)
    if j is not None:
        theta = theta.copy()
        theta[j] += np.quantile(x - z @ theta, beta)
    return theta


# ---------------------------------------------------------------------------
# exact stage (linear links)
# ---------------------------------------------------------------------------

def _initial_basis(z, r):
    n, p = z.shape
    basis = []
    for i in np.argsort(np.abs(r), kind="stable"):
        cand = basis + [int(i)]
        if np.linalg.matrix_rank(z[cand]) == len(cand):
            basis = cand
            if len(basis) == p:
                return basis
    raise SingularityError("VaR covariate matrix is rank deficient", block="z_v")


def _vertex_descent(z, x, beta, theta, max_iter):
    n, p = z.shape
    basis = _initial_basis(z, x - z @ theta)
    tol_r = _tie_tol(x)
    for it in range(max_iter):
        zh = z[basis]
        theta = np.linalg.solve(zh, x[basis])
        r = x - z @ theta
        r[basis] = 0.0
        nonbasis = np.ones(n, dtype=bool)
        nonbasis[basis] = False
        active = nonbasis & (np.abs(r) > tol_r)
        degenerate = nonbasis & ~active
        psi = np.where(r[active] > 0, beta, beta - 1.0)
        a = -(z[active].T @ psi)
        dirs = np.linalg.inv(zh)  # column j moves basis residual j only
        zd = z[degenerate] @ dirs  # u-values of degenerate points per direction
        deg_plus = np.where(zd < 0, beta * -zd, (1.0 - beta) * zd).sum(axis=0)
        deg_minus = np.where(zd > 0, beta * zd, (1.0 - beta) * -zd).sum(axis=0)
        g_plus = a @ dirs + deg_plus + (1.0 - beta)
        g_minus = -(a @ dirs) + deg_minus + beta
        g = np.concatenate([g_plus, g_minus])
        k = int(np.argmin(g))
        gscale = 1.0 + float(np.abs(z).sum(axis=0).max())
        if g[k] >= -1e-12 * gscale:
            return theta, basis, it
        j = k % p
        d = dirs[:, j] if k < p else -dirs[:, j]
        u = z @ d
        with np.errstate(divide="ignore", invalid="ignore"):
            s = r / u
        cand = np.flatnonzero(active & (u != 0) & (s > 0))
        if cand.size == 0:
            raise ConvergenceError("descent direction without a breakpoint", theta)
        order = cand[np.argsort(s[cand], kind="stable")]
        slope = g[k] + np.cumsum(np.abs(u[order]))
        stop = int(np.argmax(slope >= 0)) if (slope >= 0).any() else order.size - 1
        basis[j] = int(order[stop])
    raise ConvergenceError(f"vertex descent did not terminate in {max_iter} pivots", theta)


def _left_endpoint_polish(z, x, beta, theta):
    """Move each coordinate to the left end of its 1-d minimising interval."""
    theta = theta.copy()
    r = x - z @ theta
    f0 = float(np.sum(pinball_loss(x - r, x, beta)))
    for k in range(z.shape[1]):
        u = z[:, k]
        nz = u != 0
        if not nz.any():
            continue
        t = r[nz] / u[nz]
        w = np.abs(u[nz])
        tau = np.where(u[nz] > 0, beta, 1.0 - beta)
        order = np.argsort(t, kind="stable")
        total = float(np.sum(w * tau))
        right_slope = np.cumsum(w[order]) - total
        hit = right_slope >= -1e-10 * float(w.sum())
        if not hit.any():
            continue
        step = float(t[order][int(np.argmax(hit))])
        if step >= 0.0:
            continue
        r_new = r - step * u
        f_new = float(np.sum(pinball_loss(x - r_new, x, beta)))
        if f_new <= f0 + 1e-12 * (1.0 + abs(f0)):
            theta[k] += step
            r, f0 = r_new, f_new
    return theta


def _fit_linear(z, x, beta):
    if np.linalg.matrix_rank(z) < z.shape[1]:
        raise SingularityError("VaR covariate matrix is rank deficient", block="z_v")
    theta0 = linear_start(z, x, beta)
    scale = _scale(x - z @ theta0)
    theta_s, _ = _smoothed_path(lambda th: (z @ th, z), theta0, beta, scale, x)
    theta, _, pivots = _vertex_descent(z, x, beta, theta_s, max_iter=10 * x.shape[0] + 100)
    theta = _left_endpoint_polish(z, x, beta, theta)
    return _make_fit(x, z @ theta, theta, beta, iterations=pivots)


def _multistart(start):
    start = np.asarray(start, dtype=float)
    rng = np.random.default_rng(0)
    starts = [start]
    for _ in range(N_PERTURBATIONS):
        base = np.where(start != 0.0, np.abs(start), 1.0)
        starts.append(start + PERTURBATION_SCALE * base * rng.standard_normal(start.shape))
    return starts


def _fit_nonlinear(link, z, x, beta):
    def value_grad(th):
        return np.asarray(link.value(z, th), float), np.asarray(link.gradient(z, th), float)

    scale = _scale(x - value_grad(np.asarray(link.start, float))[0])
    best = None
    all_ok = True
    for s in _multistart(link.start):
        theta, ok = _smoothed_path(value_grad, s, beta, scale, x)
        fitted = value_grad(theta)[0]
        if not np.all(np.isfinite(fitted)):
            continue
        obj = _objective(x, fitted, beta)
        if best is None or obj < best[0]:
            best = (obj, theta, fitted, ok)
        all_ok = all_ok and ok
    if best is None:
        raise ConvergenceError("every start produced non-finite fitted values",
                               np.asarray(link.start, float))
    if not best[3]:
        raise ConvergenceError("VaR optimiser hit its iteration limit", best[1])
    return _make_fit(x, best[2], best[1], beta, converged=all_ok)


def fit_var(dataset: Dataset, spec: ModelSpec) -> VarFit:
    """Minimise the mean pinball loss of ``x`` over the VaR parameters."""
    validate(dataset, spec)
    x = np.asarray(dataset.x)
    z = np.asarray(dataset.z_v)
    if is_linear(spec.var_link):
        return _fit_linear(z, x, spec.beta)
    return _fit_nonlinear(spec.var_link, z, x, spec.beta)
