"""Step two: collapse internal edges of an estimated binary tree.

Two rules.  The aggregation rule (kagg) summarizes each internal node by
the mean Kendall's tau over the leaf pairs meeting there and collapses a
parent-child pair whenever the absolute difference of the two summaries
falls below a critical threshold.  The bootstrap rule (kb) asks, for every
leaf triple that a candidate collapse would turn from a cherry into a
3-fan, whether the data can tell the triple apart from a fan: the triple
test compares the average of the two closest empirical Kendall
distributions to the third and gets its p-value from a nonparametric
bootstrap.  The candidate collapses only if the average p-value exceeds
the significance threshold.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass

import numpy as np

from .builders import BUILD_METHODS, SearchConfig, build_binary
from .dependence import (
    DataError,
    empirical_kendall_distribution,
    kendall_dist_distance,
    kendall_tau,
    mean_distance_to,
    pseudo_observations,
)
from .trees import RootedTree, TreeError

KAGG = "kagg"
KB = "kb"
COLLAPSE_RULES = (KAGG, KB)


@dataclass(frozen=True)
class CollapseConfig:
    """Which collapse rule to run and its knobs."""

    rule: str = KAGG
    tau_c: float = 0.075
    alpha: float = 0.05
    bootstrap_b: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.rule not in COLLAPSE_RULES:
            raise ValueError(f"unknown collapse rule {self.rule!r}")
        if self.tau_c < 0:
            raise ValueError("tau_c must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0,1]")
        if self.bootstrap_b < 1:
            raise ValueError("bootstrap_b must be >= 1")


@dataclass(frozen=True)
class NodeSummary:
    node: int
    mean_tau: float

    def __post_init__(self):
        if not -1.0 - 1e-12 <= self.mean_tau <= 1.0 + 1e-12:
            raise ValueError("mean tau outside [-1, 1]")


# --------------------------------------------------------------------------- #
# Node summaries and the aggregation rule
# --------------------------------------------------------------------------- #


def _tau_matrix(u) -> tuple:
    obs = pseudo_observations(u)
    d = obs.d
    taus = np.zeros((d, d))
    for i, j in itertools.combinations(range(d), 2):
        taus[i, j] = taus[j, i] = kendall_tau(obs.u[:, i], obs.u[:, j])
    return taus, {lab: i for i, lab in enumerate(obs.columns)}


def _node_mean_tau(tree: RootedTree, node: int, taus, col) -> float:
    total = 0.0
    count = 0
    kids = tree.children[node]
    for a_i in range(len(kids)):
        for b_i in range(a_i + 1, len(kids)):
            for la in tree.leaf_set(kids[a_i]):
                for lb in tree.leaf_set(kids[b_i]):
                    total += taus[col[la], col[lb]]
                    count += 1
    return total / count


def node_tau_summary(tree: RootedTree, node: int, u) -> NodeSummary:
    """Mean estimated Kendall's tau over the leaf pairs whose LCA is
    ``node`` (the scalar summary of the node's generator)."""
    if tree.is_leaf(node):
        raise TreeError("leaves have no generator to summarize")
    taus, col = _tau_matrix(u)
    return NodeSummary(node, _node_mean_tau(tree, node, taus, col))


def annotate_mean_taus(tree: RootedTree, u, digits: int | None = None
                       ) -> RootedTree:
    """Attach the mean-tau summary of every internal node as annotations."""
    taus, col = _tau_matrix(u)
    values = {}
    for v in tree.internal_nodes:
        val = _node_mean_tau(tree, v, taus, col)
        values[v] = round(val, digits) if digits is not None else val
    return tree.with_annotations(values)


def collapse_kagg(tree: RootedTree, u, tau_c: float) -> RootedTree:
    """Repeatedly collapse the parent-child internal pair with the smallest
    absolute mean-tau difference while that difference stays below tau_c;
    summaries are recomputed after every collapse.  tau_c <= 0 is a no-op.
    """
    taus, col = _tau_matrix(u)
    while True:
        summaries = {v: _node_mean_tau(tree, v, taus, col)
                     for v in tree.internal_nodes}
        best = None
        for v in tree.internal_nodes:
            if v == tree.root:
                continue
            diff = abs(summaries[tree.parent[v]] - summaries[v])
            key = (diff, tuple(sorted(tree.leaf_set(v))))
            if best is None or key < best[0]:
                best = (key, v)
        if best is None or best[0][0] >= tau_c:
            return tree
        tree = tree.collapse_edge(best[1])


# --------------------------------------------------------------------------- #
# The trivariate fan test
# --------------------------------------------------------------------------- #


def su_triple_test(u, i, j, k, b: int = 200, seed=0) -> float:
    """Bootstrap p-value for the null that the triple (i,j,k) is a 3-fan
    (all three Kendall distributions coincide).

    The statistic T is the Cramer-von-Mises distance between the pointwise
    mean of the two closest empirical Kendall distributions and the third.
    Under the fan null the trivariate copula is exchangeable, so each of
    the ``b`` row resamples is aligned with the null by shuffling the
    three values within every row; the statistic recomputed on such a
    resample is a genuine null draw and the p-value is the add-one count
    (1 + #{T* >= T})/(b + 1), strictly positive so that boundary collapse
    thresholds behave.  Small p-values reject the fan.
    """
    if len({i, j, k}) != 3:
        raise TreeError("triple test needs three distinct labels")
    if b < 1:
        raise DataError("need at least one bootstrap resample")
    obs = pseudo_observations(u)
    cols = [obs.columns.index(lab) for lab in (i, j, k)]
    data = obs.u[:, cols]
    n = data.shape[0]

    def statistic(block) -> float:
        ekds = [empirical_kendall_distribution(block[:, a], block[:, b_])
                for a, b_ in ((0, 1), (0, 2), (1, 2))]
        pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)]
        dists = [kendall_dist_distance(ekds[a], ekds[b_]) for a, b_, _ in pairs]
        a, b_, third = pairs[int(np.argmin(dists))]
        return mean_distance_to(ekds[a], ekds[b_], ekds[third])

    t_obs = statistic(data)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(b):
        block = data[rng.integers(0, n, n)]
        within_row = np.argsort(rng.random((n, 3)), axis=1)
        if statistic(np.take_along_axis(block, within_row, axis=1)) >= t_obs:
            exceed += 1
    return (1 + exceed) / (b + 1)


# --------------------------------------------------------------------------- #
# The bootstrap collapse rule
# --------------------------------------------------------------------------- #


def _changed_triples(tree: RootedTree, child: int) -> list:
    """Leaf triples whose shape flips from cherry to fan when ``child``
    collapses into its parent: pairs meeting at the child, third leaf
    meeting them at the parent."""
    parent = tree.parent[child]
    inner_pairs = []
    kids = tree.children[child]
    for a_i in range(len(kids)):
        for b_i in range(a_i + 1, len(kids)):
            for la in tree.leaf_set(kids[a_i]):
                for lb in tree.leaf_set(kids[b_i]):
                    inner_pairs.append((la, lb))
    outer = sorted(tree.leaf_set(parent) - tree.leaf_set(child))
    return [tuple(sorted((la, lb, z))) for la, lb in inner_pairs for z in outer]


def _triple_seed(seed, triple) -> np.random.SeedSequence:
    # one independent, traversal-order-free stream per triple; crc32 keeps
    # the key stable across processes (str hash is salted)
    key = tuple(zlib.crc32(lab.encode("utf-8")) for lab in sorted(triple))
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(entropy=seed.entropy,
                                      spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(entropy=seed, spawn_key=key)


def collapse_kb(tree: RootedTree, u, alpha: float = 0.05, b: int = 200,
                seed=0, cache: dict | None = None) -> RootedTree:
    """Bootstrap collapse: walk parent-child internal pairs bottom-up
    (deepest child first); for each candidate, test every triple whose
    shape the collapse would change and collapse iff the average p-value
    exceeds alpha.  After an accepted collapse the candidate list is
    rebuilt.  alpha >= 1 never collapses; alpha = 0 collapses everything.

    Each triple's p-value depends only on (data, triple, b, seed), so a
    shared ``cache`` dict lets callers sweep alpha without re-testing.
    """
    obs = pseudo_observations(u)
    if cache is None:
        cache = {}

    def p_value(triple) -> float:
        if triple not in cache:
            cache[triple] = su_triple_test(obs, *triple, b=b,
                                           seed=_triple_seed(seed, triple))
        return cache[triple]

    while True:
        candidates = sorted(
            (v for v in tree.internal_nodes if v != tree.root),
            key=lambda v: (-tree.depth(v), tuple(sorted(tree.leaf_set(v)))))
        collapsed = False
        for child in candidates:
            pvals = [p_value(t) for t in _changed_triples(tree, child)]
            if sum(pvals) / len(pvals) > alpha:
                tree = tree.collapse_edge(child)
                collapsed = True
                break
        if not collapsed:
            return tree


# --------------------------------------------------------------------------- #
# The full two-step estimator
# --------------------------------------------------------------------------- #


def estimate_structure(data, method: str = "kt",
                       collapse: CollapseConfig | None = None,
                       search: SearchConfig | None = None) -> RootedTree:
    """Two-step estimate: build a binary tree from the pseudo-observations,
    then collapse it by the configured rule."""
    collapse = collapse or CollapseConfig()
    obs = pseudo_observations(data)
    tree = build_binary(obs, method, search)
    if collapse.rule == KAGG:
        return collapse_kagg(tree, obs, collapse.tau_c)
    return collapse_kb(tree, obs, collapse.alpha, collapse.bootstrap_b,
                       collapse.seed)


ESTIMATOR_NAMES = tuple(f"{m}_{r}" for m in BUILD_METHODS
                        for r in COLLAPSE_RULES) + ("SU",)


def parse_estimator(name: str):
    """Split a composed estimator name like ``kt_kagg`` into its build
    method and collapse rule; ``SU`` is the triple-test baseline."""
    if name == "SU":
        return ("SU", None)
    if "_" not in name:
        raise ValueError(f"unknown estimator {name!r}")
    method, rule = name.rsplit("_", 1)
    methods = {m.lower(): m for m in BUILD_METHODS}
    if method.lower() not in methods or rule not in COLLAPSE_RULES:
        raise ValueError(f"unknown estimator {name!r}")
    return (methods[method.lower()], rule)
