"""Improved noise-subspace estimation for information-plus-noise models and its CLT."""
from .empirical import EmpiricalSpectrum, confinement_check, decompose, empirical_stieltjes
from .errors import BoundaryError, ConfigError, ConvergenceError, DomainError, GmusicError, SeparationError
from .estimators import (
    EstimateResult,
    RectContour,
    contour_build,
    eta_improved,
    eta_spiked,
    eta_traditional,
    eta_traditional_limit,
)
from .fluctuations import (
    CovarianceAssembly,
    KernelPack,
    VarianceTable,
    gamma_assemble,
    kernel_pack,
    mse_predict,
    vartheta_numeric,
    vartheta_spiked,
    vartheta_table,
    vartheta_trad,
)
from .model import (
    Realization,
    Scenario,
    SignalModel,
    SubspaceQuery,
    build_model,
    canonical_vector,
    eta_true,
    load_scenario,
    sample_realization,
)
from .montecarlo import CltReport, ks_normal, run_trials
from .spectrum import SpectralSupport, WPoint, density_eval, phi_eval, resolvent_diag, spiked_pack, support_compute, w_solve

__all__ = [name for name in dir() if not name.startswith("_")]
