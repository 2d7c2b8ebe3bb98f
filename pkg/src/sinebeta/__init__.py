"""Monte Carlo laboratory for the counting statistics of a coupled family of
phase diffusions driven by one planar Brownian motion.

The package simulates the phase system whose winding numbers realize the
point-process counts, replays runs to extract martingales and brackets,
tilts the dynamics for rare-event estimates, and simulates the Gaussian
comparison field with matching covariance.
"""

from .model import (
    PACKAGE_VERSION,
    TWO_PI,
    ClockValue,
    ModelError,
    ModelParams,
    clock,
    decay_rate,
    diffusion_coeffs,
    drift_fraction,
    drift_rate,
    extreme_value_centering,
    martingale_growth_constant,
    max_growth_constant,
    one_sided_growth_constant,
    t_lambda,
    t_prime,
)
from .sde import (
    ArrayNoise,
    IntegrationError,
    NoiseStream,
    PhaseEnsemble,
    ReplayMismatchError,
    ScaledNoise,
    Schedule,
    StepPolicy,
    TiltBatch,
    TiltedPath,
    ZeroNoise,
    build_schedule,
    derive_stream,
    integrate_ensemble,
    integrate_tilted,
    integrate_tilted_batch,
    replay_noise_for,
    splitmix64,
)
from .stats import (
    CountingResult,
    CrossBracketTrace,
    LineFit,
    MartingaleTrace,
    TubeParams,
    counting_N,
    cross_bracket,
    cross_bracket_from_run,
    cross_bracket_heuristic,
    drift_subtraction_gap,
    exceedance_curve,
    fit_line,
    martingale_trace,
    max_deviation,
    one_sided_max,
    oscillatory_sup,
    paley_zygmund_bound,
    tail_residual,
    tube_indicator,
)
from .tilt import (
    Estimate,
    SxMoments,
    acceleration_tilt,
    compute_s_x,
    girsanov_log_weight,
    girsanov_weight,
    importance_estimate,
    run_tilted,
    s_x_moments,
    terminal_exceedance_direct,
    terminal_exceedance_tilted,
    tube_probability_under_q,
    untilted_weight_mean,
)
from .gaussian import (
    GaussianFieldSample,
    GaussianMaxSummary,
    QuadratureError,
    field_covariance_matrix,
    g_covariance,
    gaussian_max_diagnostic,
    simulate_field,
)
from .engine import (
    Aggregate,
    EngineFailureError,
    ReplicaSummary,
    ResultSet,
    RunConfig,
    SweepResult,
    corrected_predictor,
    load_summary,
    persist,
    persist_sweep,
    run,
    scaling_sweep,
)

__version__ = PACKAGE_VERSION
