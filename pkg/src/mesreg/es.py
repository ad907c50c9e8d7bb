"""Expected Shortfall regression (outcome equal to the distress variable)
and the ES-into-MES decomposition of a weighted aggregate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LINEAR, Dataset, ModelSpec, check_level, validate
from .inference import Bandwidth, kernel_weights
from .mes import JointFit, assemble, fit_joint, fit_mes
from .quantile import fit_var


@dataclass(frozen=True, eq=False)
class EsFit(JointFit):
    @property
    def theta_e(self):
        return self.theta_m


def lambda2_es(dataset, var_fit, es_fit, bw, spec=None):
    """Kernel estimate of the ES cross matrix ``E[(v - m) f_X(v) grad m grad v']``."""
    spec = spec or ModelSpec(0.5)
    theta_e = getattr(es_fit, "theta_m")
    gv = np.asarray(spec.var_link.gradient(dataset.z_v, var_fit.theta_v), dtype=float)
    gm = np.asarray(spec.mes_link.gradient(dataset.z_m, theta_e), dtype=float)
    c = bw.c_n if isinstance(bw, Bandwidth) else float(bw)
    k = kernel_weights(dataset.x, var_fit.fitted, c)
    gap = np.asarray(var_fit.fitted) - np.asarray(es_fit.fitted)
    return (gm * (gap * k)[:, None]).T @ gv / dataset.n


def es_dataset(x, z_v, z_e, v_names=(), e_names=()) -> Dataset:
    return Dataset(x, x, z_v, z_e, tuple(v_names), tuple(e_names))


def fit_es(x, z_v, z_e, beta, var_link=LINEAR, es_link=LINEAR) -> EsFit:
    """Two-step VaR/ES regression; point estimates follow the MES code path with y = x."""
    ds = x if isinstance(x, Dataset) else es_dataset(x, z_v, z_e)
    spec = ModelSpec(check_level(beta), var_link, es_link)
    validate(ds, spec)
    var_fit = fit_var(ds, spec)
    es_fit = fit_mes(ds, spec, var_fit)
    joint = assemble(ds, spec, var_fit, es_fit,
                     lambda2=lambda bw: lambda2_es(ds, var_fit, es_fit, bw, spec))
    return EsFit(**{f: getattr(joint, f) for f in joint.__dataclass_fields__})


@dataclass(frozen=True, eq=False)
class Decomposition:
    es: EsFit
    components: tuple
    names: tuple
    mean_weights: np.ndarray
    constant_weights: bool
    reconciliation: np.ndarray

    def weighted_theta(self):
        return sum(w * c.theta_m for w, c in zip(self.mean_weights, self.components))


def decompose(x, components, weights, z_v, z_m, beta, names=None, v_names=(),
              m_names=()) -> Decomposition:
    """Split the ES of ``x = sum_d w_d y_d`` into MES regressions of each ``y_d``.

    One VaR regression is fitted on ``x`` and shared by the ES regression and
    the ``D`` MES regressions, so all second steps use the same exceedance
    set. ``weights`` is a D-vector (constant) or an n x D matrix.
    ``reconciliation`` is ``theta_es - sum_d mean(w_d) theta_d``; it vanishes
    up to rounding when the weights are constant and ``x`` is exactly the
    weighted sum.
    """
    x = np.asarray(x, dtype=float)
    ys = np.asarray(components, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    D = ys.shape[1]
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        if w.shape[0] != D:
            raise ValueError(f"{w.shape[0]} weights for {D} components")
        constant = True
        wbar = w
    else:
        if w.shape != ys.shape:
            raise ValueError(f"weights shape {w.shape} does not match components {ys.shape}")
        constant = bool(np.all(w == w[0]))
        wbar = w.mean(axis=0)
    names = tuple(names) if names else tuple(f"y{d}" for d in range(D))

    es_ds = Dataset(x, x, z_v, z_m, tuple(v_names), tuple(m_names))
    spec = ModelSpec(check_level(beta))
    validate(es_ds, spec)
    var_fit = fit_var(es_ds, spec)
    es_mes = fit_mes(es_ds, spec, var_fit)
    joint = assemble(es_ds, spec, var_fit, es_mes,
                     lambda2=lambda bw: lambda2_es(es_ds, var_fit, es_mes, bw, spec))
    es = EsFit(**{f: getattr(joint, f) for f in joint.__dataclass_fields__})
    fits = tuple(fit_joint(es_ds.with_y(ys[:, d]), spec, var_fit=var_fit) for d in range(D))
    recon = es.theta_m - sum(wd * f.theta_m for wd, f in zip(wbar, fits))
    return Decomposition(es, fits, names, wbar, constant, recon)
