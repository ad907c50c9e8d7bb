"""Simulation design: heteroskedastic linear DGP with multivariate-t shocks,
its true (VaR, MES) parameters, and a reproducible Monte Carlo harness.

Covariates::

    xi_t  = 0.6 xi_{t-1} + e_xi,t          Z1_t = 0.3 + 0.4 exp(xi_t)
    Z2_t  = 0.75 Z2_{t-1} + e_Z,t

Outcomes::

    (X_t, Y_t) = g1 + g2 Z1_t + g3 Z2_t + (g4 + g5 Z1_t) (eps1_t, eps2_t)

with ``eps_t ~ t_df(0, Sigma)``. Replication ``r`` draws from its own Philox
stream keyed by ``(seed, r)``, so results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.stats import norm, t as student_t

from .brs import DEFAULT_WINDOW, fit_brs
from .data import Dataset, ModelSpec
from .exceptions import MesRegError, SimulationError
from .mes import fit_joint

XI_AR = 0.6
Z2_AR = 0.75
BURN_IN = 200
MAX_FAIL_SHARE = 0.05
PARAM_NAMES = ("theta1_v", "theta2_v", "theta3_v", "theta1_m", "theta2_m", "theta3_m")
SUMMARY_COLUMNS = ("parameter", "bias", "sd_emp", "sd_asy_mean", "coverage", "n_fail")
PAPER_SIGMA = ((1.0, 1.2), (1.2, 4.0))

# Monte Carlo estimates of E[eps2 | eps1 > q] for t_6(0, PAPER_SIGMA):
# (value, standard error), 10^7 antithetic draws, seed 20240601.
# Regenerate with `mesreg mes-oracle`.
MES_TILDE_TABLE = {
    (0.9, 6.0, PAPER_SIGMA): (2.622177220443893, 0.0026114606512390834),
    (0.95, 6.0, PAPER_SIGMA): (3.2490742276046163, 0.0040681583924224675),
    (0.975, 6.0, PAPER_SIGMA): (3.9007433703308076, 0.006377583208382803),
}


@dataclass(frozen=True)
class SimConfig:
    gamma: tuple = (1.0, 1.5, 2.0, 0.25, 0.5)
    sigma: tuple = PAPER_SIGMA
    df: float = 6.0
    n: int = 2000
    m_reps: int = 500
    beta: float = 0.9
    seed: int = 0

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (2, 2) or not np.allclose(s, s.T) or np.any(np.linalg.eigvalsh(s) <= 0):
            raise ValueError("sigma must be a symmetric positive definite 2x2 matrix")
        if len(self.gamma) != 5:
            raise ValueError("gamma must have five entries")
        object.__setattr__(self, "sigma", tuple(tuple(float(v) for v in row) for row in s))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))


@dataclass(frozen=True)
class TrueParams:
    theta_v0: np.ndarray
    theta_m0: np.ndarray
    q_tilde: float
    m_tilde: float

    @property
    def theta0(self):
        return np.concatenate([self.theta_v0, self.theta_m0])


def replication_rng(seed, r) -> np.random.Generator:
    """Independent counter-based stream for replication ``r``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(r),))))


def draw_innovations(rng, n, sigma=PAPER_SIGMA, df=6.0):
    """``n`` draws of ``t_df(0, sigma)`` as Gaussian / sqrt(chi2_df / df)."""
    chol = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    g = rng.standard_normal((n, 2)) @ chol.T
    w = np.sqrt(rng.chisquare(df, n) / df)
    return g / w[:, None]


def _ar1(rng, phi, n):
    x0 = rng.standard_normal() / math.sqrt(1.0 - phi * phi)
    e = rng.standard_normal(BURN_IN + n)
    path, _ = lfilter([1.0], [1.0, -phi], e, zi=[phi * x0])
    return path[BURN_IN:]


def simulate_dgp(config: SimConfig, rng) -> Dataset:
    g1, g2, g3, g4, g5 = config.gamma
    n = config.n
    xi = _ar1(rng, XI_AR, n)
    z2 = _ar1(rng, Z2_AR, n)
    z1 = 0.3 + 0.4 * np.exp(xi)
    eps = draw_innovations(rng, n, config.sigma, config.df)
    loc = g1 + g2 * z1 + g3 * z2
    scale = g4 + g5 * z1
    z = np.column_stack([np.ones(n), z1, z2])
    names = ("intercept", "Z1", "Z2")
    return Dataset(y=loc + scale * eps[:, 1], x=loc + scale * eps[:, 0],
                   z_v=z, z_m=z, v_names=names, m_names=names)


def t_expected_shortfall(beta, df):
    """Upper-tail ES of the standard Student-t: E[T | T > q_beta]."""
    q = student_t.ppf(beta, df)
    return float(student_t.pdf(q, df) * (df + q * q) / ((df - 1.0) * (1.0 - beta)))


def mes_tilde(beta, df=6.0, sigma=PAPER_SIGMA):
    """Closed form of ``E[eps2 | eps1 > q_beta]`` for ``t_df(0, sigma)``.

    ``eps2 = (s12 / s11) eps1 + u`` with ``u`` independent of the first
    Gaussian component and zero-mean given the mixing variable, hence the
    MES is ``s12 / sqrt(s11)`` times the standard-t ES.
    """
    s = np.asarray(sigma, dtype=float)
    return float(s[0, 1] / math.sqrt(s[0, 0]) * t_expected_shortfall(beta, df))


def mes_tilde_monte_carlo(beta, df=6.0, sigma=PAPER_SIGMA, draws=10**7, seed=20240601,
                          chunk=10**6):
    """Antithetic Monte Carlo estimate of ``E[eps2 | eps1 > q]`` and its standard error."""
    s = np.asarray(sigma, dtype=float)
    q = math.sqrt(s[0, 0]) * student_t.ppf(beta, df)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    pairs = draws // 2
    num, den = [], []
    done = 0
    while done < pairs:
        m = min(chunk, pairs - done)
        e = draw_innovations(rng, m, s, df)
        hi, lo = e[:, 0] > q, -e[:, 0] > q
        num.append(e[:, 1] * hi - e[:, 1] * lo)
        den.append(hi.astype(float) + lo)
        done += m
    a = np.concatenate(num)
    b = np.concatenate(den)
    ratio = a.sum() / b.sum()
    se = math.sqrt(np.var(a - ratio * b, ddof=1) / a.size) / b.mean()
    return float(ratio), float(se)


def true_params(config: SimConfig) -> TrueParams:
    g1, g2, g3, g4, g5 = config.gamma
    s11 = config.sigma[0][0]
    q = float(math.sqrt(s11) * student_t.ppf(config.beta, config.df))
    if not math.isfinite(q):
        raise SimulationError(f"t quantile inversion failed at beta={config.beta}")
    m = mes_tilde(config.beta, config.df, config.sigma)
    return TrueParams(np.array([g1 + g4 * q, g2 + g5 * q, g3]),
                      np.array([g1 + g4 * m, g2 + g5 * m, g3]), q, m)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Replication:
    index: int
    ok: bool
    theta: np.ndarray | None = None
    se: np.ndarray | None = None
    exceedances: int = 0
    ties: int = 0
    avar_asym: float = float("nan")
    avar_min_eig_ratio: float = float("nan")
    error: str = ""


def replicate(config: SimConfig, r: int) -> Replication:
    ds = simulate_dgp(config, replication_rng(config.seed, r))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_joint(ds, ModelSpec(config.beta))
    except MesRegError as exc:
        return Replication(r, False, error=f"{type(exc).__name__}: {exc}")
    if fit.avar is None:
        return Replication(r, False, error="; ".join(fit.warnings))
    a = fit.avar
    norm_a = np.linalg.norm(a)
    asym = float(np.linalg.norm(a - a.T) / norm_a) if norm_a > 0 else 0.0
    eig_ratio = float(np.linalg.eigvalsh(a).min() / np.trace(a))
    return Replication(r, True, np.concatenate([fit.theta_v, fit.theta_m]), fit.se,
                       fit.exceedance_count, fit.var_fit.n_ties, asym, eig_ratio)


def map_replications(func, config, m_reps, threads=1):
    """Apply ``func(config, r)`` for ``r = 0..m_reps-1``; results in index order."""
    jobs = [(config, r) for r in range(m_reps)]
    if threads is None or threads <= 1 or m_reps <= 1:
        return [func(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(_Star(func), jobs, chunksize=max(1, m_reps // (4 * threads))))


class _Star:
    def __init__(self, func):
        self.func = func

    def __call__(self, args):
        return self.func(*args)


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    bias: float | None
    sd_emp: float | None
    sd_asy_mean: float | None
    coverage: float | None
    n_fail: int


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    config: SimConfig
    truth: TrueParams
    rows: tuple
    replications: tuple = field(repr=False)

    @property
    def ok(self):
        return [r for r in self.replications if r.ok]

    @property
    def estimates(self):
        return np.array([r.theta for r in self.ok]).reshape(-1, 6)

    @property
    def ses(self):
        return np.array([r.se for r in self.ok]).reshape(-1, 6)

    @property
    def n_fail(self):
        return sum(not r.ok for r in self.replications)

    def row(self, name) -> SummaryRow:
        return next(r for r in self.rows if r.parameter == name)

    def to_csv(self) -> str:
        return summary_csv(self.rows)

    def to_json(self) -> str:
        return summary_json(self)


def summarize_replications(reps, truth: TrueParams, level=0.95):
    ok = [r for r in reps if r.ok]
    n_fail = len(reps) - len(ok)
    theta0 = truth.theta0
    rows = []
    est = np.array([r.theta for r in ok]).reshape(-1, 6)
    se = np.array([r.se for r in ok]).reshape(-1, 6)
    zcrit = norm.ppf(1.0 - (1.0 - level) / 2.0)
    for j, name in enumerate(PARAM_NAMES):
        if est.shape[0] == 0:
            rows.append(SummaryRow(name, None, None, None, None, n_fail))
            continue
        bias = float(est[:, j].mean() - theta0[j])
        if est.shape[0] < 2:
            rows.append(SummaryRow(name, bias, None, float(se[:, j].mean()), None, n_fail))
            continue
        cover = np.abs(est[:, j] - theta0[j]) <= zcrit * se[:, j]
        rows.append(SummaryRow(name, bias, float(est[:, j].std(ddof=1)),
                               float(se[:, j].mean()), float(cover.mean()), n_fail))
    return tuple(rows)


def run_monte_carlo(config: SimConfig, threads=1) -> MonteCarloResult:
    """Simulate, fit and summarise ``config.m_reps`` replications.

    Failed fits are excluded and counted; more than 5% failures abort.
    """
    truth = true_params(config)
    reps = tuple(map_replications(replicate, config, config.m_reps, threads))
    n_fail = sum(not r.ok for r in reps)
    if n_fail > MAX_FAIL_SHARE * config.m_reps:
        first = next(r.error for r in reps if not r.ok)
        raise SimulationError(f"{n_fail} of {config.m_reps} replications failed "
                              f"(first error: {first})")
    return MonteCarloResult(config, truth, summarize_replications(reps, truth), reps)


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def summary_json(result: MonteCarloResult) -> str:
    cfg = result.config
    doc = {
        "schema_version": 1,
        "config": {"gamma": list(cfg.gamma), "sigma": [list(r) for r in cfg.sigma],
                   "df": cfg.df, "n": cfg.n, "m_reps": cfg.m_reps, "beta": cfg.beta,
                   "seed": cfg.seed},
        "truth": {"theta_v0": result.truth.theta_v0.tolist(),
                  "theta_m0": result.truth.theta_m0.tolist(),
                  "q_tilde": result.truth.q_tilde, "m_tilde": result.truth.m_tilde},
        "n_fail": result.n_fail,
        "rows": [{c: getattr(r, c) for c in SUMMARY_COLUMNS} for r in result.rows],
    }
    return json.dumps(doc, indent=2, sort_keys=False)


PAPER_GRID_BETAS = (0.9, 0.95, 0.975)
PAPER_GRID_NS = (500, 1000, 2000, 4000)


def run_grid(m_reps=5000, seed=0, threads=1, betas=PAPER_GRID_BETAS, ns=PAPER_GRID_NS):
    """All (beta, n) cells of the simulation table; returns ``{(beta, n): result}``."""
    return {(b, n): run_monte_carlo(SimConfig(n=n, m_reps=m_reps, beta=b, seed=seed), threads)
            for b in betas for n in ns}


# ---------------------------------------------------------------------------
# rolling-window comparator study
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ComparisonReplication:
    index: int
    ok: bool
    mes_theta: np.ndarray | None = None
    mes_se: np.ndarray | None = None
    brs_theta: np.ndarray | None = None
    brs_se: np.ndarray | None = None


def compare_replicate(config: SimConfig, r: int, window=DEFAULT_WINDOW):
    ds = simulate_dgp(config, replication_rng(config.seed, r))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_joint(ds, ModelSpec(config.beta))
        brs = fit_brs(ds, window, config.beta)
    except MesRegError:
        return ComparisonReplication(r, False)
    if fit.se is None:
        return ComparisonReplication(r, False)
    q = fit.q
    return ComparisonReplication(r, True, fit.theta_m, fit.se[-q:], brs.theta, brs.se_ols)


def run_brs_comparison(config: SimConfig, threads=1):
    """MES two-step vs rolling-window OLS on the same simulated samples."""
    reps = map_replications(compare_replicate, config, config.m_reps, threads)
    n_fail = sum(not r.ok for r in reps)
    if n_fail > MAX_FAIL_SHARE * config.m_reps:
        raise SimulationError(f"{n_fail} of {config.m_reps} comparison replications failed")
    return tuple(reps)
