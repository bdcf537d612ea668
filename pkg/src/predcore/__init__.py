"""Predictive coresets.

Weighted subsamples whose Dirichlet-process posterior-predictive
trajectories stay close to the full data's trajectories in Wasserstein
distance. The weights come from projected gradient descent on a
transport objective, averaged over urn trajectories.
"""

from .adaptive import ABCConfig, abc_acceptance, calibrate_epsilon, run_abc_chain, run_adaptive_coreset
from .downstream import (
    ComparisonRecord,
    DensityEstimate,
    LogitFit,
    assign_partition,
    compare_runs,
    default_grid,
    fit_logistic_map,
    fit_mixture_em,
    gibbs_mixture,
    kl_discretized,
    logit_l2_distance,
)
from .engine import (
    CoresetRunConfig,
    CoresetWeights,
    OptimizerConfig,
    RunReport,
    inner_optimize,
    load_weights_csv,
    materialize_coreset,
    run_predictive_coreset,
    save_weights_csv,
    select_support,
)
from .measures import (
    Dataset,
    EmpiricalMeasure,
    GroundMetric,
    Point,
    ShapeError,
    center_dataset,
    dist,
    empirical_from,
    load_dataset_csv,
    pairwise_distance,
    save_dataset_csv,
)
from .partitions import (
    MixtureSpec,
    Partition,
    cluster_point_estimate,
    extend_partition_crp,
    extract_subset,
    load_partition_csv,
    run_partition_coreset,
    sample_prior_clustering,
    save_partition_csv,
    variation_of_information,
)
from .transport import (
    CapacityError,
    Coupling,
    SolverPolicy,
    sinkhorn,
    transport_cost_gradient,
    wasserstein,
    wasserstein_exact,
)
from .urn import (
    BootstrapLogisticBase,
    DPConfig,
    GaussianMixtureBase,
    JointMixtureBase,
    UrnTrajectory,
    materialize,
    materialize_arrays,
    predictive_sample,
    sample_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "ABCConfig",
    "BootstrapLogisticBase",
    "CapacityError",
    "ComparisonRecord",
    "CoresetRunConfig",
    "CoresetWeights",
    "Coupling",
    "DPConfig",
    "Dataset",
    "DensityEstimate",
    "EmpiricalMeasure",
    "GaussianMixtureBase",
    "GroundMetric",
    "JointMixtureBase",
    "LogitFit",
    "MixtureSpec",
    "OptimizerConfig",
    "Partition",
    "Point",
    "RunReport",
    "ShapeError",
    "SolverPolicy",
    "UrnTrajectory",
    "__version__",
    "abc_acceptance",
    "assign_partition",
    "calibrate_epsilon",
    "center_dataset",
    "cluster_point_estimate",
    "compare_runs",
    "default_grid",
    "dist",
    "empirical_from",
    "extend_partition_crp",
    "extract_subset",
    "fit_logistic_map",
    "fit_mixture_em",
    "gibbs_mixture",
    "inner_optimize",
    "kl_discretized",
    "load_dataset_csv",
    "load_partition_csv",
    "load_weights_csv",
    "logit_l2_distance",
    "materialize",
    "materialize_arrays",
    "materialize_coreset",
    "pairwise_distance",
    "predictive_sample",
    "run_abc_chain",
    "run_adaptive_coreset",
    "run_partition_coreset",
    "run_predictive_coreset",
    "sample_prior_clustering",
    "sample_trajectory",
    "save_dataset_csv",
    "save_partition_csv",
    "save_weights_csv",
    "select_support",
    "sinkhorn",
    "transport_cost_gradient",
    "variation_of_information",
    "wasserstein",
    "wasserstein_exact",
]
