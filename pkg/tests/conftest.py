import numpy as np
import pytest

# Two-branch demo tree used across the suite:
#
#         total
#        /     \
#       a       b
#      / \     / \
#    aa   ab ba   bb
DEMO_EDGES = [
    ("total", "a", 1),
    ("total", "b", 1),
    ("a", "aa", 1),
    ("a", "ab", 1),
    ("b", "ba", 1),
    ("b", "bb", 1),
]


def random_tree_edges(rng, max_depth=4, max_leaves=32, signed=False):
    """Grow a random rooted tree edge list, optionally with -1 signs."""
    edges = []
    counter = 0
    frontier = [("n0", 0)]
    n_vertices = 1
    while frontier:
        v, depth = frontier.pop(0)
        if depth >= max_depth or n_vertices >= max_leaves:
            continue
        n_children = int(rng.integers(0, 4))
        if v == "n0" and n_children == 0:
            n_children = int(rng.integers(1, 4))
        for _ in range(n_children):
            counter += 1
            child = f"n{counter}"
            sign = int(rng.choice([1, -1])) if signed else 1
            edges.append((v, child, sign))
            frontier.append((child, depth + 1))
            n_vertices += 1
    return edges


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
