"""Regressions under adverse conditions: two-step (VaR, MES) and (VaR, ES)
regressions with sandwich inference, a simulation harness, a rolling-window
comparator and MES-based equal-risk-contribution portfolios."""

from .brs import BrsFit, brs_transform, fit_brs
from .data import (LINEAR, CustomLink, Dataset, LinearLink, ModelSpec, load_csv, save_csv,
                   validate)
from .es import Decomposition, EsFit, decompose, fit_es
from .exceptions import (ConvergenceError, DataError, DegenerateBandwidthError, DimensionError,
                         EstimationError, InferenceUnavailableError,
                         InsufficientExceedancesError, LevelError, MesRegError, ParseError,
                         SchemaError, SimulationError, SingularityError, UpdateDomainError,
                         WindowError)
from .inference import FitDiagnostics, InferenceReport, bandwidth, sandwich
from .mes import JointFit, MesFit, fit_joint, fit_mes
from .portfolio import (PortfolioState, backtest, erc_weights, forecast_risk,
                        performance_metrics, risk_contributions)
from .quantile import VarFit, fit_var, pinball_loss, predict_var
from .simulation import (MonteCarloResult, SimConfig, TrueParams, run_monte_carlo,
                         simulate_dgp, true_params)

__version__ = "0.1.0"
