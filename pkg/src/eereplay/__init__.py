"""Offline evaluation of Thompson-sampling exploration in multi-result ranking."""

from .bandit import (BetaParams, BucketLayout, LayoutKind, NoExploration, ThompsonState,
                     active_buckets, bucket_of, make_policy, sample_beta, select,
                     simulate_bernoulli, update)
from .logmodel import (Impression, LogFormatError, QueryLog, QueryRecord, ReplayConfig,
                       eligible_candidates, parse_log, read_log, write_log)
from .ranker import (RankerModel, TrainingExample, TrainingSet, build_training_set,
                     evaluate_ctr, predict, train)
from .replay import ExplorationRecord, FixedPosition, ReplaySummary, ctr_lift, replay_log, replay_query
from .synth import Distortion, GroundTruthModel, generate_logs, true_click_prob
from .weighting import WeightingKind, WeightingScheme, multinomial_prob, propensity_estimate, weight

__version__ = "0.1.0"
