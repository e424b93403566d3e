"""Multilevel Monte Carlo with one importance sampling drift per level.

The drift of each level is fitted by sample average approximation and
Newton's method before the level is estimated on independent samples.
"""

from .estimators import (LevelPlan, LevelStats, MlisResult, aggregate_variance_ci,
                         estimate_level, estimate_mc, estimate_mc_is, estimate_mlis,
                         estimate_mlmc, level_plan, optimize_level)
from .models import (CorrelationError, Payoff, SdeModel, build_correlation, drift_diffusion,
                     local_vol, payoff_eval)
from .paths import (CoupledPathSample, Phase, RngStreamKey, euler_coupled_pair, euler_single,
                    sample_brownian_increments)
from .saa import (DegenerateSampleSet, NewtonDidNotConverge, NewtonOptions, WeightedSampleSet,
                  empirical_variance_v, girsanov_minus, girsanov_plus, newton_solve,
                  saa_objective)

__version__ = "0.1.0"
