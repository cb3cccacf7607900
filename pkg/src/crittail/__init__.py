"""Critical-case stochastic recursions: simulation and tail asymptotics.

The package studies the affine recursion X_n = A_n X_{n-1} + B_n and
its extremal companion X_n = max(A_n X_{n-1}, B_n) at the critical
tuning E|A|^alpha = 1 with noise whose alpha-moment diverges, where the
stationary tail follows the de Haan transform of the noise's slowly
varying profile.  Modules: ``regvar`` (slowly varying catalog, de Haan
transforms, heavy-tailed noise laws), ``models`` (coefficient laws,
calibration, tilted step laws), ``simulate`` (two-backend Monte Carlo
kernels), ``renewal`` (renewal-function construction and classical
checks), ``analysis`` (tail estimation and limit verification),
``cli`` (config-driven experiment runner).
"""

from ._backend import HAVE_NUMBA, backend_name
from .analysis import (
    AsymptoticReport,
    TailEstimate,
    coupled_constant,
    empirical_tail,
    first_order_ratio,
    holder_functional_estimate,
    ladder_checks,
    regime_compare,
    second_order_residual,
    wilson_interval,
)
from .models import (
    AtomStep,
    CalibrationError,
    ConstantCoeff,
    DegenerateNoise,
    ExpStep,
    GaussianStep,
    LogNormalCoeff,
    PerpetuityModel,
    TwoPointCoeff,
    assumption_audit,
    calibrate_coeff,
    log_moment2,
    make_tilted,
    rho,
    solve_alpha,
)
from .regvar import (
    HeavyTailLaw,
    LawError,
    SlowlyVaryingSpec,
    catalog_law,
    de_haan,
    truncated_moment,
)
from .renewal import (
    RenewalGrid,
    blackwell_check,
    boundary_checks,
    build_renewal,
    lth_functional_check,
    lth_integral_check,
    stieltjes_integral,
    stone_check,
)
from .simulate import (
    LadderBatch,
    SampleBatch,
    TruncationBias,
    run_batch,
    run_ladder_batch,
)

__version__ = "0.1.0"

__all__ = [
    "AsymptoticReport",
    "AtomStep",
    "CalibrationError",
    "ConstantCoeff",
    "DegenerateNoise",
    "ExpStep",
    "GaussianStep",
    "HAVE_NUMBA",
    "HeavyTailLaw",
    "LadderBatch",
    "LawError",
    "LogNormalCoeff",
    "PerpetuityModel",
    "RenewalGrid",
    "SampleBatch",
    "SlowlyVaryingSpec",
    "TailEstimate",
    "TruncationBias",
    "TwoPointCoeff",
    "assumption_audit",
    "backend_name",
    "blackwell_check",
    "boundary_checks",
    "build_renewal",
    "calibrate_coeff",
    "catalog_law",
    "coupled_constant",
    "de_haan",
    "empirical_tail",
    "first_order_ratio",
    "holder_functional_estimate",
    "ladder_checks",
    "log_moment2",
    "lth_functional_check",
    "lth_integral_check",
    "make_tilted",
    "regime_compare",
    "rho",
    "run_batch",
    "run_ladder_batch",
    "second_order_residual",
    "solve_alpha",
    "stieltjes_integral",
    "stone_check",
    "truncated_moment",
    "wilson_interval",
]
