"""Moving-window GAM marginals + Gaussian copula weather field emulator."""

from .copula import SeparableCorrelation, fit_mle, matern52, neg_loglik, normal_scores
from .diagnostics import DiagnosticBundle, acf, empirical_variogram, pacf, summarize_scenarios
from .gam import FAMILIES, Family, WindowFit, fit_penalized, gcv_select, posterior_draws, predictive_draws
from .grid import Coordinates, CubeSchema, SpaceTimeCube, VariableDef, load_cube, save_cube, spatial_neighbors, temporal_window
from .simulate import ScenarioSet, kron_chol_mul, simulate_scenarios
from .windows import MarginalEnsemble, WindowConfig, empirical_cdf, empirical_quantile, fit_all_windows

__version__ = "0.1.0"

__all__ = [
    "Coordinates", "CubeSchema", "SpaceTimeCube", "VariableDef",
    "load_cube", "save_cube", "spatial_neighbors", "temporal_window",
    "FAMILIES", "Family", "WindowFit", "fit_penalized", "gcv_select",
    "posterior_draws", "predictive_draws",
    "MarginalEnsemble", "WindowConfig", "fit_all_windows",
    "empirical_cdf", "empirical_quantile",
    "SeparableCorrelation", "matern52", "normal_scores", "neg_loglik", "fit_mle",
    "ScenarioSet", "kron_chol_mul", "simulate_scenarios",
    "DiagnosticBundle", "acf", "pacf", "empirical_variogram", "summarize_scenarios",
    "__version__",
]
