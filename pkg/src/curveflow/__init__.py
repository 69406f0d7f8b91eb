"""Projection of HJM forward-curve dynamics onto finite-dimensional curve families."""

from .errors import (
    CurveflowError,
    DataFormatError,
    DegenerateBasis,
    FitFailed,
    IncompatibleGrid,
    InvalidArgument,
    InvalidTheta,
    NumericalBlowup,
    OutOfDomain,
    SingularWeighting,
)
from .function_space import (
    Curve,
    Grid,
    WeightFunction,
    antiderivative,
    curve_axpy,
    derivative_x,
    inner_product,
    make_grid,
    make_weight,
    norm_h,
    pointwise_mul,
)
from .manifold import (
    GramMatrix,
    ManifoldFamily,
    fit_curve,
    gram_matrix,
    make_affine_family,
    make_custom_family,
    make_exp_basis,
    make_exp_rate,
    make_nelson_siegel,
    project,
    tangent_basis,
)
from .hjm import (
    HjmPath,
    VolatilitySpec,
    frechet_directional,
    ito_drift,
    make_vol,
    simulate_hjm,
    strat_correction,
    strat_drift,
)
from .projection_dynamics import (
    CoordSDE,
    CoordSeries,
    diffusion_coeff,
    drift_coeff,
    ito_correction,
    reconstruct_curve,
    simulate_coords,
    simulate_paths,
    step_euler_ito,
    step_heun_strat,
)
from .estimation import (
    LongRunCov,
    MomentModel,
    ThetaSpace,
    gamma_hat,
    ls_estimate,
    newey_west,
    optimal_gmm,
    theta_space_for,
)

__version__ = "0.1.0"
