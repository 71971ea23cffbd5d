"""Off-policy evaluation estimators spanning trajectory and distribution importance sampling.

The spectrum estimator SOPE_n weights the reward at step ``t`` by a
state-action distribution ratio at step ``t-n`` times the last ``n`` action
likelihood ratios, so ``n = 0`` is distribution-ratio importance sampling and
``n = L`` is per-decision importance sampling. Exact dynamic-programming
oracles on small tabular MDPs make every identity checkable.
"""
__version__ = "0.1.0"

from .estimators import (
    FAMILIES,
    Estimate,
    EstimatorSpec,
    estimate_cwpdis,
    estimate_dr_sope,
    estimate_is,
    estimate_pdis,
    estimate_sis,
    estimate_sope,
    estimate_weighted_sis,
    estimate_wsope,
    evaluate,
    sope_weights,
    weight_wtn,
)
from .harness import ExperimentConfig, SweepReport, aggregate, emit_svg, run_sweep, write_csv
from .mdp import (
    Dataset,
    StaticPolicy,
    SupportError,
    TabularMdp,
    Trajectory,
    build_graph_env,
    build_toy_mc_env,
    make_static_policy,
    sample_dataset,
    sample_trajectory,
)
from .occupancy import (
    OccupancyTables,
    QTable,
    exact_j,
    exact_q,
    occupancy_avg,
    occupancy_stationary,
    occupancy_t,
    occupancy_tables,
    occupancy_trunc,
)
from .ratios import RatioTable, estimate_model, estimate_ratio, oracle_ratio, time_indexed_ratios

__all__ = [
    "__version__",
    "FAMILIES",
    "Dataset",
    "Estimate",
    "EstimatorSpec",
    "ExperimentConfig",
    "OccupancyTables",
    "QTable",
    "RatioTable",
    "StaticPolicy",
    "SupportError",
    "SweepReport",
    "TabularMdp",
    "Trajectory",
    "aggregate",
    "build_graph_env",
    "build_toy_mc_env",
    "emit_svg",
    "estimate_cwpdis",
    "estimate_dr_sope",
    "estimate_is",
    "estimate_model",
    "estimate_pdis",
    "estimate_ratio",
    "estimate_sis",
    "estimate_sope",
    "estimate_weighted_sis",
    "estimate_wsope",
    "evaluate",
    "exact_j",
    "exact_q",
    "make_static_policy",
    "occupancy_avg",
    "occupancy_stationary",
    "occupancy_t",
    "occupancy_tables",
    "occupancy_trunc",
    "oracle_ratio",
    "run_sweep",
    "sample_dataset",
    "sample_trajectory",
    "sope_weights",
    "time_indexed_ratios",
    "weight_wtn",
    "write_csv",
]
