"""Two-time correlation functions of open quantum systems from paired jump trajectories."""

from .errors import (ConfigError, ConvergenceError, DeadTrajectoryError, DegenerateError,
                     DegenerateInitialization, RateSingularityError, ResourceError,
                     StructuralError, TwoTimeError)
from .hilbert import (Operator, annihilation, basis, frobenius_distance, identity, inner,
                      norm_sq, tensor)
from .model import (DopoParams, LindbladModel, default_dt, dopo, driven_two_level,
                    liouvillian_apply, scaled_coupling_G, two_level_decay)
from .skew import (ENGINES, DoubledHilbert, GardinerZoller, MCDPair, Optimized, PairState,
                   SpecializedA, init_pair)
from .estimator import (CorrelationSeries, aggregate, error_bound, fit_tunneling_time,
                        kinsler_drummond_T, sample_correlator, spectrum)
from .oracle import exact_correlator, propagate_exact, steady_state
from .ensemble import EnsembleResult, Mixture, PureState, SampledStates, simulate

__version__ = "0.1.0"
