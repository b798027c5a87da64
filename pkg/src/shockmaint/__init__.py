"""Condition-based maintenance of asset networks under compound-Poisson
degradation with unknown, heterogeneous parameters."""

__version__ = "0.1.0"

from . import instances
from .bayes import AssetBelief, PosteriorParams, point_estimates, posterior, predictive_logpmf, predictive_sample_period
from .dcl import DCLSettings, NNPolicy, label_state, restricted_actions, train_dcl
from .degradation import (AssetConfig, DegradationParams, PeriodSignal, PopulationPrior, period_signal_logpmf,
                          sample_params, sample_period)
from .evaluator import EvalReport, PairedReport, compare, episode_costs, evaluate, horizon_for
from .exact import (TabularPolicy, TruncationSpec, check_monotonicity, solve_single_asset_bmdp,
                    solve_underlying_mdp)
from .heuristics import ThresholdPolicy, optimize_thresholds
from .network import NetworkConfig, NetworkState
from .pipeline import build_replay, fit_priors, ingest, preprocess, split_pool, synthesize_pool
from .policy import Policy, VariantError
