"""Step one: build a strictly binary tree from pseudo-observations.

Two routes are implemented.  The linkage route turns a pairwise dependence
matrix into a binary tree by average linkage.  The supertree route first
estimates the binary trivariate tree of every leaf triple (which pair of
empirical Kendall distributions is closest decides the outlier), encodes
all those rooted triples into a 0/1/unknown character matrix with an
outgroup row, and then searches unrooted-topology space for a minimum
Fitch parsimony score, either from a neighbor-joining start (NJNNI) or
from a random start with the parsimony ratchet (RNix).  The outgroup
finally roots the winner.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dependence import (
    DependenceMatrix,
    PseudoObservations,
    dependence_matrix,
    empirical_kendall_distribution,
    kendall_dist_distance,
    pseudo_observations,
)
from .trees import (
    RootedTree,
    TreeError,
    TripleShape,
    UnrootedTree,
    root_with_outgroup,
)

UNKNOWN = -1
OUTGROUP = "O"

LINKAGE_METHODS = ("kt", "hD", "kind")
SUPERTREE_METHODS = ("NJNNI", "RNix")
BUILD_METHODS = LINKAGE_METHODS + SUPERTREE_METHODS


@dataclass(frozen=True)
class SearchConfig:
    """Budget and seeding for the supertree searches."""

    max_rounds: int = 200
    ratchet_iterations: int = 50
    ratchet_reweight_fraction: float = 0.25
    ratchet_weight_factor: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.max_rounds < 1 or self.ratchet_iterations < 1:
            raise ValueError("search budgets must be positive")
        if not 0.0 < self.ratchet_reweight_fraction < 1.0:
            raise ValueError("reweight fraction must lie in (0,1)")
        if self.ratchet_weight_factor <= 1.0:
            raise ValueError("ratchet weight factor must exceed 1")


# --------------------------------------------------------------------------- #
# Average linkage
# --------------------------------------------------------------------------- #


def average_linkage(dist: DependenceMatrix) -> RootedTree:
    """Agglomerate the two clusters with minimal average inter-cluster
    distance until one remains; the merge order is the binary tree.

    Ties break toward the lexicographically smallest pair of cluster
    representatives (a cluster is represented by its smallest leaf label).
    """
    m = np.asarray(dist.values, dtype=float)
    if not np.all(np.isfinite(m)) or not np.allclose(m, m.T):
        raise ValueError("average linkage needs a finite symmetric matrix")
    labels = dist.labels
    if len(labels) < 2:
        raise ValueError("average linkage needs at least two items")
    clusters = {i: (labels[i],) for i in range(len(labels))}
    nested = {i: labels[i] for i in range(len(labels))}
    d = {(i, j): float(m[i, j])
         for i, j in itertools.combinations(range(len(labels)), 2)}
    sizes = {i: 1 for i in clusters}
    next_id = len(labels)
    while len(clusters) > 1:
        best = None
        for i, j in itertools.combinations(sorted(clusters), 2):
            key = (d[(i, j)], min(min(clusters[i]), min(clusters[j])),
                   max(min(clusters[i]), min(clusters[j])))
            if best is None or key < best[0]:
                best = (key, i, j)
        _, i, j = best
        new = next_id
        next_id += 1
        for k in clusters:
            if k in (i, j):
                continue
            dik = d[tuple(sorted((i, k)))]
            djk = d[tuple(sorted((j, k)))]
            d[(k, new)] = (sizes[i] * dik + sizes[j] * djk) / (sizes[i] + sizes[j])
        clusters[new] = clusters[i] + clusters[j]
        nested[new] = [nested[i], nested[j]]
        sizes[new] = sizes[i] + sizes[j]
        for k in (i, j):
            del clusters[k], nested[k], sizes[k]
    (root,) = nested.values()
    return RootedTree.from_nested(root)


# --------------------------------------------------------------------------- #
# Trivariate estimates
# --------------------------------------------------------------------------- #


def trivariate_binary_estimate(u: PseudoObservations, a, b, c) -> TripleShape:
    """Binary trivariate tree of three columns: the two closest empirical
    Kendall distributions share the outlier variable, the other two leaves
    form the cherry.  Never returns a fan (step one assumes a binary
    target; fans only appear in the collapse step)."""
    if len({a, b, c}) != 3:
        raise TreeError("trivariate estimate needs three distinct labels")
    ekd = {pair: empirical_kendall_distribution(u.column(pair[0]), u.column(pair[1]))
           for pair in itertools.combinations(sorted((a, b, c)), 2)}
    # distance between the distributions of two pairs; the shared label is
    # the outlier and the cherry is the symmetric difference
    candidates = []
    for q1, q2 in itertools.combinations(ekd, 2):
        cherry = frozenset(set(q1) ^ set(q2))
        candidates.append((kendall_dist_distance(ekd[q1], ekd[q2]),
                           tuple(sorted(cherry)), cherry))
    candidates.sort()
    return TripleShape(frozenset((a, b, c)), candidates[0][2])


def estimate_triples(u: PseudoObservations, labels=None) -> dict:
    """Binary TripleShape for every 3-subset of the columns."""
    labels = tuple(labels) if labels is not None else u.columns
    return {frozenset(t): trivariate_binary_estimate(u, *t)
            for t in itertools.combinations(sorted(labels), 3)}


# --------------------------------------------------------------------------- #
# Character matrix
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class CharacterMatrix:
    """0/1/unknown encoding of the input trees' clades.

    One column per internal edge of each input tree once an outgroup leaf
    is attached to its root: leaves inside the clade get 1, leaves on the
    outgroup side get 0, leaves absent from that input tree get unknown.
    The outgroup row is all zeros.
    """

    rows: tuple
    data: np.ndarray  # int8, values {0, 1, UNKNOWN}

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        data = np.asarray(self.data, dtype=np.int8)
        object.__setattr__(self, "data", data)
        if data.shape[0] != len(self.rows):
            raise ValueError("row count does not match matrix")

    @property
    def n_columns(self) -> int:
        return self.data.shape[1]

    def row(self, label) -> np.ndarray:
        return self.data[self.rows.index(label)]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("row," + ",".join(f"c{i}" for i in range(self.n_columns)) + "\n")
            for lab, row in zip(self.rows, self.data):
                cells = ["?" if v == UNKNOWN else str(int(v)) for v in row]
                fh.write(lab + "," + ",".join(cells) + "\n")


def build_character_matrix(input_trees, all_leaves, outgroup: str = OUTGROUP
                           ) -> CharacterMatrix:
    """Encode rooted input trees as characters over ``all_leaves`` plus an
    outgroup row.

    Attaching the outgroup to each root and unrooting turns every internal
    edge of the rooted tree into an internal edge of the unrooted tree, so
    the columns are exactly the non-root clades of the rooted inputs.
    """
    input_trees = list(input_trees)
    if not input_trees:
        raise TreeError("no input trees")
    all_leaves = sorted(all_leaves)
    leafset = set(all_leaves)
    if outgroup in leafset:
        raise TreeError(f"outgroup label {outgroup!r} clashes with a leaf")
    rows = tuple(all_leaves) + (outgroup,)
    index = {lab: i for i, lab in enumerate(rows)}
    columns = []
    for tree in input_trees:
        if not tree.label_set <= leafset:
            raise TreeError("input tree has leaves outside the target leaf set")
        for v in tree.internal_nodes:
            if v == tree.root:
                continue
            col = np.full(len(rows), UNKNOWN, dtype=np.int8)
            for lab in tree.label_set:
                col[index[lab]] = 0
            for lab in tree.leaf_set(v):
                col[index[lab]] = 1
            col[index[outgroup]] = 0
            columns.append(col)
    if columns:
        data = np.stack(columns, axis=1)
    else:
        data = np.zeros((len(rows), 0), dtype=np.int8)
    return CharacterMatrix(rows, data)


def hamming_distances(matrix: CharacterMatrix) -> np.ndarray:
    """Row-wise mismatch fraction, ignoring columns where either row is
    unknown (0 when no column is shared)."""
    data = matrix.data
    n = data.shape[0]
    out = np.zeros((n, n))
    known = data != UNKNOWN
    for i, j in itertools.combinations(range(n), 2):
        both = known[i] & known[j]
        m = int(both.sum())
        if m:
            out[i, j] = out[j, i] = float(np.sum(data[i, both] != data[j, both])) / m
    return out


# --------------------------------------------------------------------------- #
# Parsimony scoring (Fitch on binary trees, Hartigan on polytomies)
# --------------------------------------------------------------------------- #


def fitch_score(tree: UnrootedTree, matrix: CharacterMatrix, weights=None) -> float:
    """Minimum number of state changes over all columns (weighted sum).

    Bottom-up state-set pass rooted at an arbitrary leaf; unknown cells
    carry the full state set.  Hartigan's counting rule is used at each
    node, which equals Fitch on binary trees and stays exact on
    polytomies.
    """
    if set(tree.leaf_labels) != set(matrix.rows):
        raise TreeError("tree leaves do not match matrix rows")
    ncols = matrix.n_columns
    if ncols == 0:
        return 0.0
    if weights is None:
        weights = np.ones(ncols)
    weights = np.asarray(weights, dtype=float)

    # leaf state bitmasks: 1 -> {0}, 2 -> {1}, 3 -> {0,1}
    def leaf_mask(label):
        row = matrix.row(label)
        mask = np.empty(ncols, dtype=np.uint8)
        mask[row == 0] = 1
        mask[row == 1] = 2
        mask[row == UNKNOWN] = 3
        return mask

    start = tree.node_of_label(min(tree.leaf_labels))
    changes = np.zeros(ncols, dtype=float)
    if tree.n_nodes == 2:
        other = tree.adj[start][0]
        disjoint = (leaf_mask(tree.labels[start]) & leaf_mask(tree.labels[other])) == 0
        return float(np.sum(weights[disjoint]))

    # iterative post-order from the leaf anchor
    masks = {}
    stack = [(tree.adj[start][0], start, False)]
    while stack:
        node, parent, ready = stack.pop()
        if tree.is_leaf(node):
            masks[node] = leaf_mask(tree.labels[node])
            continue
        kids = [w for w in tree.adj[node] if w != parent]
        if not ready:
            stack.append((node, parent, True))
            stack.extend((w, node, False) for w in kids)
            continue
        count0 = np.zeros(ncols, dtype=np.int16)
        count1 = np.zeros(ncols, dtype=np.int16)
        for w in kids:
            count0 += masks[w] & 1
            count1 += (masks[w] >> 1) & 1
            del masks[w]
        top = np.maximum(count0, count1)
        mask = ((count0 == top).astype(np.uint8)
                | ((count1 == top).astype(np.uint8) << 1))
        changes += (len(kids) - top) * weights
        masks[node] = mask
    root_mask = masks[tree.adj[start][0]]
    disjoint = (root_mask & leaf_mask(tree.labels[start])) == 0
    changes_total = float(np.sum(changes) + np.sum(weights[disjoint]))
    return changes_total


# --------------------------------------------------------------------------- #
# NNI rearrangements
# --------------------------------------------------------------------------- #


def nni_neighbors(tree: UnrootedTree):
    """The two alternative subtree exchanges across every internal edge of
    a binary unrooted tree (2 neighbors per internal edge)."""
    if len(tree.leaf_labels) < 4:
        raise TreeError("NNI needs at least 4 leaves")
    out = []
    for u, v in tree.internal_edges():
        u_subs = [w for w in tree.adj[u] if w != v]
        v_subs = [w for w in tree.adj[v] if w != u]
        if len(u_subs) != 2 or len(v_subs) != 2:
            raise TreeError("NNI is defined on binary trees")
        b = u_subs[1]
        for c in v_subs:
            adj = [list(nb) for nb in tree.adj]
            adj[u][adj[u].index(b)] = c
            adj[v][adj[v].index(c)] = b
            adj[b][adj[b].index(u)] = v
            adj[c][adj[c].index(v)] = u
            out.append(UnrootedTree(adj, tree.labels))
    return out


# --------------------------------------------------------------------------- #
# Neighbor joining
# --------------------------------------------------------------------------- #


def nj_tree(dist, labels) -> UnrootedTree:
    """Saitou-Nei agglomeration on a symmetric distance matrix; ties break
    toward the lexicographically smallest label pair."""
    m = np.array(dist, dtype=float)
    labels = tuple(labels)
    d = len(labels)
    if d < 3:
        raise TreeError("neighbor joining needs at least 3 items")
    if m.shape != (d, d) or not np.all(np.isfinite(m)) or not np.allclose(m, m.T):
        raise TreeError("neighbor joining needs a finite symmetric matrix")

    adj = [[] for _ in range(d)]
    node_labels = {i: labels[i] for i in range(d)}
    active = {i: labels[i] for i in range(d)}  # node id -> representative
    dmat = {(i, j): m[i, j] for i, j in itertools.combinations(range(d), 2)}

    def dget(i, j):
        return dmat[(i, j) if i < j else (j, i)]

    while len(active) > 3:
        ids = sorted(active)
        r = {i: sum(dget(i, k) for k in ids if k != i) for i in ids}
        best = None
        for i, j in itertools.combinations(ids, 2):
            q = (len(ids) - 2) * dget(i, j) - r[i] - r[j]
            rep = tuple(sorted((active[i], active[j])))
            key = (q, rep)
            if best is None or key < best[0]:
                best = (key, i, j)
        _, i, j = best
        new = len(adj)
        adj.append([i, j])
        adj[i].append(new)
        adj[j].append(new)
        for k in ids:
            if k in (i, j):
                continue
            dmat[(k, new)] = 0.5 * (dget(i, k) + dget(j, k) - dget(i, j))
        active[new] = min(active[i], active[j])
        del active[i], active[j]
    ids = sorted(active)
    center = len(adj)
    adj.append(list(ids))
    for i in ids:
        adj[i].append(center)
    return UnrootedTree(adj, node_labels)


# --------------------------------------------------------------------------- #
# Supertree searches
# --------------------------------------------------------------------------- #


def _hill_climb(tree, matrix, weights, max_rounds):
    score = fitch_score(tree, matrix, weights)
    for _ in range(max_rounds):
        best_tree, best_score = None, score
        for nb in nni_neighbors(tree):
            s = fitch_score(nb, matrix, weights)
            if s < best_score:
                best_tree, best_score = nb, s
        if best_tree is None:
            break
        tree, score = best_tree, best_score
    return tree, score


def _random_binary_unrooted(labels, rng) -> UnrootedTree:
    """Uniform random sequential insertion: each new leaf subdivides a
    uniformly chosen edge."""
    labels = list(labels)
    order = list(rng.permutation(len(labels)))
    adj = [[1], [0]]
    node_labels = {0: labels[order[0]], 1: labels[order[1]]}
    for pos in order[2:]:
        edges = [(v, w) for v in range(len(adj)) for w in adj[v] if v < w]
        v, w = edges[int(rng.integers(len(edges)))]
        mid = len(adj)
        leaf = len(adj) + 1
        adj[v][adj[v].index(w)] = mid
        adj[w][adj[w].index(v)] = mid
        adj.append([v, w, leaf])
        adj.append([mid])
        node_labels[leaf] = labels[pos]
    return UnrootedTree(adj, node_labels)


def _triples_to_trees(shapes) -> list:
    trees = []
    for key in sorted(shapes, key=lambda k: tuple(sorted(k))):
        shape = shapes[key]
        pair = sorted(shape.cherry)
        trees.append(RootedTree.from_nested([pair, shape.outlier]))
    return trees


def _search_outgroup(labels) -> str:
    name = OUTGROUP
    while name in labels:
        name += "_"
    return name


def supertree_from_shapes(shapes: dict, labels, config: SearchConfig,
                          ratchet: bool) -> RootedTree:
    """Parsimony supertree over the given binary triple shapes (one per
    3-subset of ``labels``)."""
    labels = sorted(labels)
    if len(labels) < 3:
        raise TreeError("supertree estimation needs at least 3 leaves")
    if len(labels) == 3:
        shape = next(iter(shapes.values()))
        return RootedTree.from_nested([sorted(shape.cherry), shape.outlier])
    outgroup = _search_outgroup(labels)
    matrix = build_character_matrix(_triples_to_trees(shapes), labels, outgroup)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    if not ratchet:
        start = nj_tree(hamming_distances(matrix), matrix.rows)
        best, _ = _hill_climb(start, matrix, None, config.max_rounds)
    else:
        start = _random_binary_unrooted(matrix.rows, rng)
        best, best_score = _hill_climb(start, matrix, None, config.max_rounds)
        current = best
        ncols = matrix.n_columns
        n_up = max(1, int(round(config.ratchet_reweight_fraction * ncols)))
        for _ in range(config.ratchet_iterations):
            weights = np.ones(ncols)
            chosen = rng.choice(ncols, size=n_up, replace=False)
            weights[chosen] = config.ratchet_weight_factor
            perturbed, _ = _hill_climb(current, matrix, weights, config.max_rounds)
            candidate, score = _hill_climb(perturbed, matrix, None, config.max_rounds)
            if score <= best_score:
                if score < best_score:
                    best, best_score = candidate, score
                current = candidate
            else:
                current = best
    return root_with_outgroup(best, outgroup)


def _supertree(u: PseudoObservations, config: SearchConfig, ratchet: bool
               ) -> RootedTree:
    labels = sorted(u.columns)
    if len(labels) < 3:
        raise TreeError("supertree estimation needs at least 3 columns")
    return supertree_from_shapes(estimate_triples(u, labels), labels,
                                 config, ratchet)


def supertree_njnni(u: PseudoObservations, config: SearchConfig | None = None
                    ) -> RootedTree:
    """Greedy NNI hill climbing from a neighbor-joining start tree built on
    row-wise Hamming distances of the character matrix."""
    return _supertree(u, config or SearchConfig(), ratchet=False)


def supertree_rnix(u: PseudoObservations, config: SearchConfig | None = None
                   ) -> RootedTree:
    """Parsimony ratchet from a random start: alternate hill climbing on a
    reweighted column sample with hill climbing on the original weights,
    keeping the best tree seen."""
    return _supertree(u, config or SearchConfig(), ratchet=True)


# --------------------------------------------------------------------------- #
# Dispatch
# --------------------------------------------------------------------------- #


def build_binary(u, method: str = "kt", config: SearchConfig | None = None
                 ) -> RootedTree:
    """Step-one dispatcher: kt/hD/kind run average linkage on the matching
    dependence matrix, NJNNI/RNix run the supertree searches.  Output is
    always strictly binary."""
    u = pseudo_observations(u)
    canonical = {name.lower(): name for name in BUILD_METHODS}
    name = canonical.get(method.lower())
    if name is None:
        raise ValueError(f"unknown build method {method!r}")
    if name in LINKAGE_METHODS:
        return average_linkage(dependence_matrix(u, name))
    if name == "NJNNI":
        return supertree_njnni(u, config)
    return supertree_rnix(u, config)
