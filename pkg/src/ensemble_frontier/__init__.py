"""When do ensembles of small classifiers beat single large models?

Tools to aggregate member predictions, trace accuracy-vs-cost ensemble
curves and their Pareto frontiers, simulate fanned-out inference, and search
small ensemble architecture spaces under a max-latency reward.
"""

__version__ = "0.1.0"

from .aggregation import AggregationKind, AggregationRule, arithmetic_mean, ensemble_accuracy, geometric_mean
from .cohort import CohortSpec, calibrate_signal, generate_cohort
from .cost import LatencyDist, ModelProfile, ensemble_flops, parallel_latency_ms, sequential_latency_ms
from .pareto import (
    CurvePoint,
    EnsembleCurve,
    build_ensemble_curve,
    crossover_cost,
    dominates,
    optimal_ensemble_size,
    pareto_frontier,
)
from .predictions import LabelSet, PredictionSet, load_prediction_dump, top1_accuracy
from .simulator import Scheduler, SimConfig, lpt_assign, simulate
