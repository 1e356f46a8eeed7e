import itertools

import numpy as np
import pytest

from nactree.builders import (
    UNKNOWN,
    CharacterMatrix,
    SearchConfig,
    average_linkage,
    build_binary,
    build_character_matrix,
    fitch_score,
    hamming_distances,
    nj_tree,
    nni_neighbors,
    supertree_from_shapes,
    supertree_njnni,
    supertree_rnix,
    trivariate_binary_estimate,
)
from nactree.dependence import Dataset, DependenceMatrix, pseudo_observations
from nactree.nac import NacSpec, sample
from nactree.trees import (
    TreeError,
    UnrootedTree,
    decompose,
    parse_newick,
    unroot,
    write_newick,
)

from conftest import random_binary_tree


def all_unrooted_topologies(labels):
    """Exhaustive edge-insertion enumeration of unrooted binary trees."""
    trees = [UnrootedTree([[1], [0]], {0: labels[0], 1: labels[1]})]
    for lab in labels[2:]:
        grown = []
        for t in trees:
            for v, w in t.edges():
                adj = [list(nb) for nb in t.adj]
                mid, leaf = len(adj), len(adj) + 1
                adj[v][adj[v].index(w)] = mid
                adj[w][adj[w].index(v)] = mid
                adj.append([v, w, leaf])
                adj.append([mid])
                labs = dict(t.labels)
                labs[leaf] = lab
                grown.append(UnrootedTree(adj, labs))
        trees = grown
    return trees


def fig3_inputs():
    return [parse_newick("((U1,U3),(U2,U4));"), parse_newick("(U1,U3,(U4,U5));")]


def fig3_expected_columns():
    # rows U1..U5, O; one column per internal edge of the rooted inputs
    return {
        (0, 1, 0, 1, UNKNOWN, 0),   # {U2,U4} vs rest (U5 absent)
        (1, 0, 1, 0, UNKNOWN, 0),   # {U1,U3} vs rest (U5 absent)
        (0, UNKNOWN, 0, 1, 1, 0),   # {U4,U5} vs rest (U2 absent)
    }


def canonical_columns(matrix):
    """Columns as tuples, polarity normalized so the outgroup row reads 0."""
    out = set()
    for col in matrix.data.T:
        col = tuple(int(v) for v in col)
        if col[-1] == 1:
            col = tuple(1 - v if v != UNKNOWN else v for v in col)
        out.add(col)
    return out


class TestAverageLinkage:
    def test_three_items(self):
        m = DependenceMatrix(np.array([[0, .1, .9], [.1, 0, .9], [.9, .9, 0]]),
                             ("U1", "U2", "U3"), "kt")
        assert average_linkage(m) == parse_newick("((U1,U2),U3);")

    def test_two_blocks(self):
        vals = np.array([[0, .1, .8, .9],
                         [.1, 0, .85, .8],
                         [.8, .85, 0, .15],
                         [.9, .8, .15, 0]])
        m = DependenceMatrix(vals, ("U1", "U2", "U3", "U4"), "kt")
        assert average_linkage(m) == parse_newick("((U1,U2),(U3,U4));")

    def test_all_equal_is_deterministic(self):
        m = DependenceMatrix(1 - np.eye(5), tuple(f"U{i}" for i in range(5)), "kt")
        assert average_linkage(m) == average_linkage(m)

    def test_output_strictly_binary(self, rng):
        for d in (2, 3, 6, 9):
            vals = rng.uniform(0.1, 1.0, size=(d, d))
            vals = (vals + vals.T) / 2
            np.fill_diagonal(vals, 0.0)
            tree = average_linkage(DependenceMatrix(vals,
                                                    tuple(f"U{i}" for i in range(d)),
                                                    "kt"))
            assert tree.is_binary()
            assert len(tree.internal_nodes) == d - 1

    def test_non_finite_rejected(self):
        vals = np.array([[0.0, np.inf], [np.inf, 0.0]])
        with pytest.raises(Exception):
            average_linkage(DependenceMatrix(vals, ("a", "b"), "kt"))


class TestTrivariateEstimate:
    def test_degenerate_comonotone_pair(self, rng):
        x = rng.uniform(size=(200, 3))
        x[:, 1] = x[:, 0]
        u = pseudo_observations(Dataset(x, ("a", "b", "c")))
        assert trivariate_binary_estimate(u, "a", "b", "c").cherry == {"a", "b"}

    def test_label_permutation_invariance(self, rng):
        x = rng.uniform(size=(150, 3))
        u = pseudo_observations(Dataset(x, ("a", "b", "c")))
        cherries = {frozenset(trivariate_binary_estimate(u, *p).cherry)
                    for p in itertools.permutations(("a", "b", "c"))}
        assert len(cherries) == 1

    def test_never_fan(self, rng):
        x = rng.uniform(size=(100, 3))  # independent: content arbitrary
        u = pseudo_observations(Dataset(x, ("a", "b", "c")))
        assert not trivariate_binary_estimate(u, "a", "b", "c").is_fan

    def test_monte_carlo_recovery(self):
        nac = NacSpec.single_family("((U2,U3),U1);", "clayton", {
            ("U1", "U2", "U3"): 0.2, ("U2", "U3"): 0.8})
        hits = 0
        for seed in range(100):
            x = sample(nac, 1000, seed)
            u = pseudo_observations(Dataset(x, nac.tree.leaf_labels))
            if trivariate_binary_estimate(u, "U1", "U2", "U3").cherry == {"U2", "U3"}:
                hits += 1
        assert hits >= 95

    def test_duplicate_labels_rejected(self, rng):
        x = rng.uniform(size=(50, 3))
        u = pseudo_observations(Dataset(x, ("a", "b", "c")))
        with pytest.raises(TreeError):
            trivariate_binary_estimate(u, "a", "a", "b")


class TestCharacterMatrix:
    def test_reference_two_tree_matrix(self):
        cm = build_character_matrix(fig3_inputs(), [f"U{i}" for i in range(1, 6)])
        assert cm.rows == ("U1", "U2", "U3", "U4", "U5", "O")
        assert cm.n_columns == 3
        assert canonical_columns(cm) == fig3_expected_columns()

    def test_outgroup_row_all_zero(self):
        cm = build_character_matrix(fig3_inputs(), [f"U{i}" for i in range(1, 6)])
        assert np.all(cm.row("O") == 0)

    def test_single_cherry_input(self):
        cm = build_character_matrix([parse_newick("((A,B),C);")],
                                    ["A", "B", "C", "D"])
        assert cm.n_columns == 1
        (col,) = canonical_columns(cm)
        assert col == (1, 1, 0, UNKNOWN, 0)

    def test_every_column_has_both_states(self, rng):
        trees = [random_binary_tree([f"U{i}" for i in range(1, 7)], rng)
                 for _ in range(4)]
        cm = build_character_matrix(trees, [f"U{i}" for i in range(1, 7)])
        for col in cm.data.T:
            known = col[col != UNKNOWN]
            assert (known == 0).any() and (known == 1).any()

    def test_empty_input_rejected(self):
        with pytest.raises(TreeError):
            build_character_matrix([], ["A", "B", "C"])

    def test_foreign_leaves_rejected(self):
        with pytest.raises(TreeError):
            build_character_matrix([parse_newick("((A,B),Z);")], ["A", "B", "C"])

    def test_csv_export_uses_question_marks(self, tmp_path):
        cm = build_character_matrix(fig3_inputs(), [f"U{i}" for i in range(1, 6)])
        path = tmp_path / "cm.csv"
        cm.to_csv(path)
        assert "?" in path.read_text()


class TestFitchScore:
    def test_reference_supertree_scores_three(self):
        cm = build_character_matrix(fig3_inputs(), [f"U{i}" for i in range(1, 6)])
        sup = unroot(parse_newick("(((U1,U3),(U2,(U4,U5))),O);"))
        assert fitch_score(sup, cm) == 3.0

    def test_three_is_global_minimum(self):
        cm = build_character_matrix(fig3_inputs(), [f"U{i}" for i in range(1, 6)])
        scores = [fitch_score(t, cm)
                  for t in all_unrooted_topologies(["U1", "U2", "U3", "U4",
                                                    "U5", "O"])]
        assert len(scores) == 105
        assert min(scores) == 3.0

    def test_constant_column_costs_nothing(self):
        cm = CharacterMatrix(("A", "B", "C", "D"),
                             np.zeros((4, 1), dtype=np.int8))
        for t in all_unrooted_topologies(["A", "B", "C", "D"]):
            assert fitch_score(t, cm) == 0.0

    def test_pendant_column_costs_one_everywhere(self):
        data = np.array([[1], [0], [0], [0]], dtype=np.int8)
        cm = CharacterMatrix(("A", "B", "C", "D"), data)
        for t in all_unrooted_topologies(["A", "B", "C", "D"]):
            assert fitch_score(t, cm) == 1.0

    def test_informative_column_lower_bound(self, rng):
        labels = [f"U{i}" for i in range(6)]
        data = rng.integers(0, 2, size=(6, 5)).astype(np.int8)
        cm = CharacterMatrix(tuple(labels), data)
        informative = sum(1 for col in data.T if (col == 0).any() and (col == 1).any())
        for t in (all_unrooted_topologies(labels)[k] for k in (0, 10, 50)):
            assert fitch_score(t, cm) >= informative

    def test_weights(self):
        data = np.array([[1, 1], [0, 0], [0, 0], [0, 0]], dtype=np.int8)
        cm = CharacterMatrix(("A", "B", "C", "D"), data)
        t = all_unrooted_topologies(["A", "B", "C", "D"])[0]
        assert fitch_score(t, cm, weights=[2.0, 3.0]) == 5.0

    def test_leaf_mismatch_rejected(self):
        cm = CharacterMatrix(("A", "B", "C"), np.zeros((3, 1), dtype=np.int8))
        t = all_unrooted_topologies(["A", "B", "X"])[0]
        with pytest.raises(TreeError):
            fitch_score(t, cm)


class TestNni:
    def test_quartet_neighbors(self):
        q = unroot(parse_newick("((A,B),(C,D));"))
        nbs = nni_neighbors(q)
        assert len(nbs) == 2
        keys = {t.canonical_key() for t in nbs} | {q.canonical_key()}
        assert len(keys) == 3  # all three quartet topologies

    def test_five_leaf_count(self):
        t = unroot(parse_newick("((A,B),(C,(D,E)));"))
        assert len(nni_neighbors(t)) == 4  # 2 internal edges x 2

    def test_involution(self):
        q = unroot(parse_newick("((A,B),(C,(D,E)));"))
        for nb in nni_neighbors(q):
            assert any(back == q for back in nni_neighbors(nb))

    def test_too_small(self):
        with pytest.raises(TreeError):
            nni_neighbors(unroot(parse_newick("(A,B,C);")))


class TestNeighborJoining:
    def test_additive_quartet(self):
        # path metric: A-u=1, B-u=2, u-v=3, v-C=4, v-D=5
        d = np.array([[0, 3, 8, 9],
                      [3, 0, 9, 10],
                      [8, 9, 0, 9],
                      [9, 10, 9, 0]], float)
        tree = nj_tree(d, ("A", "B", "C", "D"))
        assert tree == unroot(parse_newick("((A,B),(C,D));"))

    def test_two_block_ultrametric(self):
        d = np.full((4, 4), 1.0)
        np.fill_diagonal(d, 0.0)
        d[0, 1] = d[1, 0] = 0.2
        d[2, 3] = d[3, 2] = 0.2
        tree = nj_tree(d, ("A", "B", "C", "D"))
        assert tree == unroot(parse_newick("((A,B),(C,D));"))

    def test_label_equivariance(self):
        d = np.array([[0, 3, 8, 9],
                      [3, 0, 9, 10],
                      [8, 9, 0, 9],
                      [9, 10, 9, 0]], float)
        perm = (2, 0, 3, 1)
        labels = ("A", "B", "C", "D")
        a = nj_tree(d, labels)
        b = nj_tree(d[np.ix_(perm, perm)], tuple(labels[i] for i in perm))
        assert a == b

    def test_too_small(self):
        with pytest.raises(TreeError):
            nj_tree(np.zeros((2, 2)), ("A", "B"))


class TestSupertrees:
    def test_noise_free_recovery_both_methods(self, rng):
        for d in range(4, 9):
            labels = [f"U{i}" for i in range(1, d + 1)]
            target = random_binary_tree(labels, rng)
            shapes = dict(decompose(target).entries)
            cfg = SearchConfig(seed=int(rng.integers(1 << 30)))
            assert supertree_from_shapes(shapes, labels, cfg, ratchet=False) == target
            assert supertree_from_shapes(shapes, labels, cfg, ratchet=True) == target

    def test_three_columns_single_triple(self, rng):
        nac = NacSpec.single_family("((U2,U3),U1);", "clayton", {
            ("U1", "U2", "U3"): 0.2, ("U2", "U3"): 0.8})
        u = pseudo_observations(Dataset(sample(nac, 500, 3), nac.tree.leaf_labels))
        assert supertree_njnni(u) == nac.tree
        assert supertree_rnix(u) == nac.tree

    def test_monte_carlo_recovery_fourvariate(self):
        nac = NacSpec.single_family("((U1,U2),(U3,U4));", "clayton", {
            ("U1", "U2", "U3", "U4"): 0.2, ("U1", "U2"): 0.8, ("U3", "U4"): 0.8})
        target = nac.tree
        ok_nj = ok_rx = 0
        for seed in range(100):
            x = sample(nac, 500, 1000 + seed)
            u = pseudo_observations(Dataset(x, target.leaf_labels))
            cfg = SearchConfig(seed=seed)
            ok_nj += supertree_njnni(u, cfg) == target
            ok_rx += supertree_rnix(u, cfg) == target
        assert ok_nj >= 95
        assert ok_rx >= 95

    def test_rnix_reproducible(self, rng):
        nac = NacSpec.single_family("((U1,U2),(U3,U4));", "clayton", {
            ("U1", "U2", "U3", "U4"): 0.3, ("U1", "U2"): 0.7, ("U3", "U4"): 0.7})
        u = pseudo_observations(Dataset(sample(nac, 200, 8), nac.tree.leaf_labels))
        a = supertree_rnix(u, SearchConfig(seed=12))
        b = supertree_rnix(u, SearchConfig(seed=12))
        assert write_newick(a) == write_newick(b)

    def test_hill_climb_never_increases_score(self, rng):
        from nactree.builders import _hill_climb, _random_binary_unrooted

        labels = [f"U{i}" for i in range(7)]
        data = rng.integers(0, 2, size=(7, 12)).astype(np.int8)
        cm = CharacterMatrix(tuple(labels), data)
        for seed in range(5):
            start = _random_binary_unrooted(labels, np.random.default_rng(seed))
            start_score = fitch_score(start, cm)
            _, final = _hill_climb(start, cm, None, 50)
            assert final <= start_score

    def test_ratchet_never_worse_than_plain_climb(self, rng):
        # build a conflicted matrix from noisy shapes and compare final scores
        labels = [f"U{i}" for i in range(1, 8)]
        target = random_binary_tree(labels, rng)
        shapes = dict(decompose(target).entries)
        # corrupt a third of the triples
        for key in list(shapes)[::3]:
            a, b, c = sorted(key)
            shapes[key] = type(shapes[key])(frozenset(key), frozenset((a, c)))
        from nactree.builders import _hill_climb, _random_binary_unrooted, \
            _triples_to_trees

        cm = build_character_matrix(_triples_to_trees(shapes), labels, "O")
        start = _random_binary_unrooted(cm.rows, np.random.default_rng(5))
        _, plain = _hill_climb(start, cm, None, 100)
        ratchet_tree = supertree_from_shapes(shapes, labels,
                                             SearchConfig(seed=5), ratchet=True)
        from nactree.trees import attach_outgroup

        ratchet_score = fitch_score(attach_outgroup(ratchet_tree, "O"), cm)
        assert ratchet_score <= plain


class TestBuildBinary:
    def test_dispatch_and_agreement_on_blocks(self, rng):
        base = rng.uniform(size=(200, 2))
        noise = 0.005 * rng.uniform(size=(200, 4))
        values = np.column_stack([base[:, 0] + noise[:, 0],
                                  base[:, 0] + noise[:, 1],
                                  base[:, 1] + noise[:, 2],
                                  base[:, 1] + noise[:, 3]])
        data = Dataset(values, ("a1", "a2", "b1", "b2"))
        u = pseudo_observations(data)
        trees = {m: build_binary(u, m, SearchConfig(seed=3))
                 for m in ("kt", "hD", "kind", "NJNNI", "RNix")}
        first = trees["kt"]
        assert all(t == first for t in trees.values())
        assert first.is_binary()

    def test_comonotone_pair_forms_deepest_cherry(self, rng):
        col = rng.uniform(size=300)
        values = np.column_stack([col, col + 1e-9 * rng.uniform(size=300),
                                  rng.uniform(size=300)])
        tree = build_binary(Dataset(values, ("a", "b", "c")), "kt")
        assert tree == parse_newick("((a,b),c);")

    def test_unknown_method(self, rng):
        data = Dataset(rng.uniform(size=(30, 3)), ("a", "b", "c"))
        with pytest.raises(ValueError):
            build_binary(data, "spearman")

    def test_case_insensitive_names(self, rng):
        data = Dataset(rng.uniform(size=(30, 3)), ("a", "b", "c"))
        assert build_binary(data, "KT") == build_binary(data, "kt")

    def test_label_equivariance(self, rng):
        values = rng.uniform(size=(150, 4))
        values[:, 1] += values[:, 0]
        values[:, 3] += values[:, 2]
        labels = ("w", "x", "y", "z")
        data = Dataset(values, labels)
        perm = (3, 1, 0, 2)
        data_p = Dataset(values[:, perm], tuple(labels[i] for i in perm))
        assert build_binary(data, "kt") == build_binary(data_p, "kt")


class TestHammingDistances:
    def test_skips_unknown(self):
        data = np.array([[0, 1], [1, UNKNOWN], [UNKNOWN, 1]], dtype=np.int8)
        cm = CharacterMatrix(("a", "b", "c"), data)
        d = hamming_distances(cm)
        assert d[0, 1] == 1.0   # one shared column, mismatched
        assert d[1, 2] == 0.0   # no shared columns
        assert d[0, 2] == 0.0   # shared column matches
