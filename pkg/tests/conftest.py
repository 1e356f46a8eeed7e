import numpy as np
import pytest

from nactree.trees import RootedTree


def random_rooted_tree(labels, rng, fan_bias=0.35):
    """Random rooted tree over the given labels, mixing binary joins with
    multifurcations: built by merging 2..4 random groups at a time."""
    nodes = list(labels)
    while len(nodes) > 1:
        k = 2
        if len(nodes) > 2 and rng.random() < fan_bias:
            k = int(rng.integers(3, min(4, len(nodes)) + 1))
        picks = sorted(rng.choice(len(nodes), size=k, replace=False), reverse=True)
        group = [nodes.pop(i) for i in picks]
        nodes.append(group)
    root = nodes[0]
    if isinstance(root, str):  # single leaf
        return RootedTree.from_nested(root)
    return RootedTree.from_nested(root)


def random_binary_tree(labels, rng):
    return random_rooted_tree(labels, rng, fan_bias=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
