"""Per-token scalar Kalman filtering of recurrent latent state."""

from .config import FilterConfig, exact_kalman_config
from .errors import FilterError, InvalidConfig, InvalidInput, MissingInput, ShapeError
from .filter import (
    FilterState,
    StepDiagnostics,
    compute_gain,
    fuse_state,
    init_state,
    predict_variance,
    step,
    update_variance_joseph,
)
from .noise import AdaptiveRParams, AttentionSummary, adaptive_measurement_noise
from .policies import (
    AdaptiveR,
    Filt3rFull,
    FixedBeta,
    FixedQ,
    NoEmaNorm,
    Overwrite,
    PeriodicReset,
    ResetP,
    UpdatePolicy,
    policy_from_dict,
    policy_step,
)
from .sim import StreamScenario, StreamTrace, Transition, evaluate, generate

__version__ = "0.1.0"
