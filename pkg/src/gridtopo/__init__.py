"""gridtopo: learn radial grid topology and line impedances from terminal data.

A radial distribution grid is a tree of lines with per-line resistance r and
reactance x. Only terminal (leaf) nodes are metered; junctions are hidden.
Under a linearized power flow, second moments of terminal voltage magnitudes
and power injections determine an additive tree metric between terminals,
and recursive grouping rebuilds the tree — hidden junctions included — from
that metric. This package provides the simulator, the moment estimators, the
grouping engine, the end-to-end learner, and a benchmark harness.
"""
from .exceptions import (
    ConditioningError,
    Error,
    FormatError,
    GroupingStalledError,
    MetricUndefinedError,
    NegativeLengthWarning,
    NotAdditiveError,
    NoWitnessError,
    ValidationError,
)
from .grid import (
    REACTANCE,
    RESISTANCE,
    Edge,
    Grid,
    ReducedLaplacian,
    ValidationReport,
    ensure_valid,
    grid_from_dict,
    grid_to_dict,
    h_inverse_entry,
    load_grid,
    reduced_laplacian,
    save_grid,
    true_distance,
    validate_grid,
)
from .distances import DistanceMatrix, perturbed
from .moments import (
    MomentAccumulator,
    MomentSet,
    accumulate,
    conditioning_check,
    default_conditioning_threshold,
    estimate_distances,
    estimate_h_pair,
    load_moments,
    merge,
    node_determinants,
    save_moments,
)
from .lcpf import (
    SIM_CHUNK,
    InjectionSpec,
    MeasurementSet,
    analytic_moments,
    load_measurements,
    sample_injections,
    save_measurements,
    simulate,
    solve_lcpf,
)
from .grouping import (
    Block,
    LearnedTree,
    PairRelation,
    RGConfig,
    RGDiagnostics,
    TreeEdge,
    classify_pair_exact,
    classify_pair_sampled,
    coarsest_partition,
    neighborhood,
    phi,
    rg_exact,
    rg_sampled,
    tree_path_lengths,
)
from .learn import (
    LearnedGrid,
    assign_reactances,
    learn_from_moments,
    learn_from_samples,
    load_learned,
    save_learned,
)
from .bench import (
    EvalReport,
    ExperimentConfig,
    TrialResult,
    distance_rmse,
    edge_difference,
    edge_splits,
    evaluate,
    impedance_error,
    load_experiment_config,
    match_hidden_and_diff,
    random_radial_grid,
    run_experiment,
    save_experiment_config,
    summarize,
    tradeoff_report,
    write_results_csv,
    write_summary_json,
)

__version__ = "0.1.0"

__all__ = [
    "Block",
    "ConditioningError",
    "DistanceMatrix",
    "Edge",
    "Error",
    "EvalReport",
    "ExperimentConfig",
    "FormatError",
    "Grid",
    "GroupingStalledError",
    "InjectionSpec",
    "LearnedGrid",
    "LearnedTree",
    "MeasurementSet",
    "MetricUndefinedError",
    "MomentAccumulator",
    "MomentSet",
    "NegativeLengthWarning",
    "NotAdditiveError",
    "NoWitnessError",
    "PairRelation",
    "REACTANCE",
    "RESISTANCE",
    "RGConfig",
    "RGDiagnostics",
    "ReducedLaplacian",
    "SIM_CHUNK",
    "TreeEdge",
    "TrialResult",
    "ValidationError",
    "ValidationReport",
    "accumulate",
    "analytic_moments",
    "assign_reactances",
    "classify_pair_exact",
    "classify_pair_sampled",
    "coarsest_partition",
    "conditioning_check",
    "default_conditioning_threshold",
    "distance_rmse",
    "edge_difference",
    "edge_splits",
    "ensure_valid",
    "estimate_distances",
    "estimate_h_pair",
    "evaluate",
    "grid_from_dict",
    "grid_to_dict",
    "h_inverse_entry",
    "impedance_error",
    "learn_from_moments",
    "learn_from_samples",
    "load_experiment_config",
    "load_grid",
    "load_learned",
    "load_measurements",
    "load_moments",
    "match_hidden_and_diff",
    "merge",
    "neighborhood",
    "node_determinants",
    "perturbed",
    "phi",
    "random_radial_grid",
    "reduced_laplacian",
    "rg_exact",
    "rg_sampled",
    "run_experiment",
    "save_experiment_config",
    "save_grid",
    "save_learned",
    "save_measurements",
    "save_moments",
    "simulate",
    "solve_lcpf",
    "sample_injections",
    "summarize",
    "tradeoff_report",
    "tree_path_lengths",
    "true_distance",
    "validate_grid",
    "write_results_csv",
    "write_summary_json",
]
