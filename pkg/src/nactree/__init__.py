"""Nonparametric tree structure estimation for nested Archimedean copulas.

The package covers the full pipeline: rank-based dependence measures,
binary-tree builders (linkage and parsimony supertrees), collapse rules,
NAC samplers, tree distances, and a replicated performance-study harness.
"""

from .builders import (
    CharacterMatrix,
    SearchConfig,
    average_linkage,
    build_binary,
    build_character_matrix,
    fitch_score,
    nj_tree,
    nni_neighbors,
    supertree_njnni,
    supertree_rnix,
    trivariate_binary_estimate,
)
from .collapse import (
    CollapseConfig,
    annotate_mean_taus,
    collapse_kagg,
    collapse_kb,
    estimate_structure,
    node_tau_summary,
    parse_estimator,
    su_triple_test,
)
from .dependence import (
    DataError,
    Dataset,
    DependenceMatrix,
    KendallDistribution,
    PseudoObservations,
    dependence_matrix,
    empirical_kendall_distribution,
    hoeffding_d,
    independence_deviation,
    kendall_dist_distance,
    kendall_tau,
    pseudo_observations,
)
from .nac import (
    GeneratorSpec,
    NacError,
    NacSpec,
    check_nesting,
    psi,
    psi_inv,
    sample,
    tau_to_theta,
    theta_to_tau,
)
from .study import (
    StudyConfig,
    StudyResult,
    benchmark_configs,
    optimal_threshold,
    run_study,
    su_baseline_estimate,
)
from .trees import (
    CHERRY,
    FAN,
    RootedTree,
    TreeError,
    TripleSet,
    TripleShape,
    UnrootedTree,
    decompose,
    max_tri_distance,
    parse_newick,
    reconstruct,
    root_with_outgroup,
    tree_distance_01,
    tree_distance_tri,
    unroot,
    write_newick,
)

__all__ = [
    "CHERRY",
    "CharacterMatrix",
    "CollapseConfig",
    "DataError",
    "Dataset",
    "DependenceMatrix",
    "FAN",
    "GeneratorSpec",
    "KendallDistribution",
    "NacError",
    "NacSpec",
    "PseudoObservations",
    "RootedTree",
    "SearchConfig",
    "StudyConfig",
    "StudyResult",
    "TreeError",
    "TripleSet",
    "TripleShape",
    "UnrootedTree",
    "annotate_mean_taus",
    "average_linkage",
    "benchmark_configs",
    "build_binary",
    "build_character_matrix",
    "check_nesting",
    "collapse_kagg",
    "collapse_kb",
    "decompose",
    "dependence_matrix",
    "empirical_kendall_distribution",
    "estimate_structure",
    "fitch_score",
    "hoeffding_d",
    "independence_deviation",
    "kendall_dist_distance",
    "kendall_tau",
    "max_tri_distance",
    "nj_tree",
    "nni_neighbors",
    "node_tau_summary",
    "optimal_threshold",
    "parse_estimator",
    "parse_newick",
    "psi",
    "psi_inv",
    "pseudo_observations",
    "reconstruct",
    "root_with_outgroup",
    "run_study",
    "sample",
    "su_baseline_estimate",
    "su_triple_test",
    "supertree_njnni",
    "supertree_rnix",
    "tau_to_theta",
    "theta_to_tau",
    "tree_distance_01",
    "tree_distance_tri",
    "trivariate_binary_estimate",
    "unroot",
    "write_newick",
]

__version__ = "0.1.0"
