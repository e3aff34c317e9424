"""Joint estimation of latent processes and sparse additive ODEs from
exponential-family observations."""

from .basis import BSplineBasis, TransformedBasis, latent_basis, make_bspline, uniform_bspline
from .dataset import Dataset, DataError, read_dataset, write_dataset
from .engine import FitResult, JadeConfig, JadeModel, JadeState, fit, fit_two_stage, select_and_fit, tune
from .evaluate import EvalReport, mse_components, mse_latent, network_rates
from .expfam import Family
from .simulate import PRESETS, TruthSpec, build_truth, solve_truth

__version__ = "0.1.0"
