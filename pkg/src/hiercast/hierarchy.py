"""Signed tree hierarchies, summing matrices, and coherency checks.

A hierarchy is a rooted tree over named vertices. Every edge carries a sign
(+1 or -1) and each aggregate vertex equals the signed sum of its children.
The summing matrix S maps the m leaf values to all n vertex values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HierarchyError


@dataclass(frozen=True)
class Hierarchy:
    """Immutable rooted tree with signed edges.

    vertices are kept in first-appearance order, leaves in first appearance
    order within the edge list. Construct through build_hierarchy(), which
    validates the tree shape.
    """

    vertices: tuple[str, ...]
    edges: tuple[tuple[str, str, int], ...]
    root: str
    levels: dict[str, int]
    leaves: tuple[str, ...]
    children: dict[str, tuple[tuple[str, int], ...]] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def m(self) -> int:
        return len(self.leaves)

    @property
    def depth(self) -> int:
        return max(self.levels.values())

    def parents(self) -> tuple[str, ...]:
        """Vertices with at least one child, in row order."""
        return tuple(v for v in self.row_order() if self.children[v])

    def row_order(self) -> tuple[str, ...]:
        """Aggregate vertices by (level, first appearance), then leaves.

        This is the row order of the summing matrix; the trailing m rows
        always correspond to the leaves so the bottom block is an identity.
        """
        appearance = {v: i for i, v in enumerate(self.vertices)}
        leaf_set = set(self.leaves)
        aggregates = [v for v in self.vertices if v not in leaf_set]
        aggregates.sort(key=lambda v: (self.levels[v], appearance[v]))
        return tuple(aggregates) + self.leaves

    def levels_descending(self) -> list[list[str]]:
        """Vertex groups from the deepest level up to the root."""
        groups: dict[int, list[str]] = {}
        for v in self.vertices:
            groups.setdefault(self.levels[v], []).append(v)
        return [groups[lv] for lv in sorted(groups, reverse=True)]


def build_hierarchy(edges, vertices=None) -> Hierarchy:
    """Validate (parent, child, sign) edges and assemble a Hierarchy.

    ``vertices`` optionally declares the full vertex set; it is required for
    the degenerate single-vertex hierarchy (no edges) and lets loaders reject
    edges that mention undeclared ids. Signs may be omitted (default +1).
    """
    norm_edges: list[tuple[str, str, int]] = []
    for e in edges:
        if len(e) == 2:
            parent, child = e
            sign = 1
        elif len(e) == 3:
            parent, child, sign = e
        else:
            raise HierarchyError(f"edge must be (parent, child[, sign]), got {e!r}")
        if sign not in (1, -1):
            raise HierarchyError(f"edge sign must be +1 or -1, got {sign!r} on {parent}->{child}")
        norm_edges.append((str(parent), str(child), int(sign)))

    if vertices is not None:
        declared = [str(v) for v in vertices]
        if len(set(declared)) != len(declared):
            raise HierarchyError("duplicate vertex ids in declaration")
        known = set(declared)
        for parent, child, _ in norm_edges:
            if parent not in known or child not in known:
                raise HierarchyError(f"edge {parent}->{child} references an undeclared vertex")
        order = declared
    else:
        seen: dict[str, None] = {}
        for parent, child, _ in norm_edges:
            seen.setdefault(parent)
            seen.setdefault(child)
        order = list(seen)

    if not norm_edges:
        if len(order) != 1:
            raise HierarchyError("a hierarchy without edges must declare exactly one vertex")
        v = order[0]
        return Hierarchy(
            vertices=(v,), edges=(), root=v, levels={v: 0}, leaves=(v,), children={v: ()},
        )

    parent_of: dict[str, str] = {}
    children: dict[str, list[tuple[str, int]]] = {v: [] for v in order}
    for parent, child, sign in norm_edges:
        if child in parent_of:
            raise HierarchyError(f"vertex {child} has two parents ({parent_of[child]} and {parent})")
        parent_of[child] = parent
        children[parent].append((child, sign))

    roots = [v for v in order if v not in parent_of]
    if not roots:
        raise HierarchyError("cycle detected: no root vertex")
    if len(roots) > 1:
        raise HierarchyError(f"multiple roots: {roots}")
    root = roots[0]

    # BFS for levels; anything unreached sits on a cycle or floats detached.
    levels = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for v in frontier:
            for child, _ in children[v]:
                levels[child] = levels[v] + 1
                nxt.append(child)
        frontier = nxt
    if len(levels) != len(order):
        missing = [v for v in order if v not in levels]
        raise HierarchyError(f"cycle detected: vertices unreachable from root {missing}")

    leaf_order = []
    for parent, child, _ in norm_edges:
        for v in (parent, child):
            if not children[v] and v not in leaf_order:
                leaf_order.append(v)

    return Hierarchy(
        vertices=tuple(order),
        edges=tuple(norm_edges),
        root=root,
        levels=levels,
        leaves=tuple(leaf_order),
        children={v: tuple(ch) for v, ch in children.items()},
    )


@dataclass(frozen=True)
class SummingMatrix:
    """Dense n x m matrix mapping leaf values to every vertex value."""

    entries: np.ndarray
    row_order: tuple[str, ...]
    leaf_order: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]

    def row(self, vertex: str) -> np.ndarray:
        return self.entries[self.row_order.index(vertex)]


def summing_matrix(h: Hierarchy) -> SummingMatrix:
    """Build S bottom-up: leaf rows are unit vectors, parents signed sums."""
    leaf_index = {v: j for j, v in enumerate(h.leaves)}
    rows: dict[str, np.ndarray] = {}
    for group in h.levels_descending():
        for v in group:
            if not h.children[v]:
                row = np.zeros(h.m)
                row[leaf_index[v]] = 1.0
            else:
                row = np.zeros(h.m)
                for child, sign in h.children[v]:
                    row += sign * rows[child]
            rows[v] = row
    order = h.row_order()
    entries = np.vstack([rows[v] for v in order])
    return SummingMatrix(entries=entries, row_order=order, leaf_order=h.leaves)


def aggregate(h: Hierarchy, leaf_values) -> np.ndarray:
    """Map leaf values (length m, in leaf order) to all n vertices.

    Accepts a vector or an (m, T) matrix; returns rows in summing-matrix
    order, so leaf entries pass through unchanged at the bottom.
    """
    values = np.asarray(leaf_values, dtype=float)
    if values.shape[0] != h.m:
        raise HierarchyError(f"expected {h.m} leaf values, got {values.shape[0]}")
    return summing_matrix(h).entries @ values


def coherent_loss(h: Hierarchy, forecasts) -> float:
    """Average per-step L1 mismatch between parents and their signed child sums.

    ``forecasts`` maps every vertex id to a length-H vector. Vertices without
    children contribute nothing; a single-vertex hierarchy scores 0.
    """
    vecs = {}
    horizon = None
    for v in h.vertices:
        if v not in forecasts:
            raise HierarchyError(f"forecasts missing vertex {v}")
        vec = np.atleast_1d(np.asarray(forecasts[v], dtype=float))
        if horizon is None:
            horizon = vec.shape[0]
        elif vec.shape[0] != horizon:
            raise HierarchyError(f"forecast length mismatch at vertex {v}")
        vecs[v] = vec
    total = 0.0
    for v in h.vertices:
        if not h.children[v]:
            continue
        child_sum = np.zeros(horizon)
        for child, sign in h.children[v]:
            child_sum += sign * vecs[child]
        total += float(np.sum(np.abs(vecs[v] - child_sum)))
    return total / horizon


@dataclass(frozen=True)
class VertexFeasibility:
    feasible: bool
    low: float
    high: float
    weights: np.ndarray | None


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    per_vertex: dict[str, VertexFeasibility]

    def witness(self) -> dict[str, np.ndarray]:
        """Per-vertex convex weights reproducing the truth (feasible case only)."""
        return {v: r.weights for v, r in self.per_vertex.items() if r.weights is not None}


def coherency_feasible(expert_forecasts, truth) -> FeasibilityReport:
    """Check whether per-vertex convex expert combinations can match the truth.

    Feasible at a vertex iff the truth lies inside [min, max] of that
    vertex's expert forecasts. The witness puts weight on the two experts
    bracketing the truth (degenerate single-expert weight on an exact tie).
    """
    per_vertex: dict[str, VertexFeasibility] = {}
    all_ok = True
    for v, raw in expert_forecasts.items():
        fc = np.asarray(raw, dtype=float)
        if fc.ndim != 1 or fc.size == 0:
            raise HierarchyError(f"vertex {v}: expert forecasts must be a non-empty vector")
        y = float(truth[v])
        low, high = float(fc.min()), float(fc.max())
        if not (low <= y <= high):
            per_vertex[v] = VertexFeasibility(False, low, high, None)
            all_ok = False
            continue
        weights = np.zeros(fc.size)
        exact = np.nonzero(fc == y)[0]
        if exact.size:
            weights[exact[0]] = 1.0
        else:
            below = np.where(fc <= y, fc, -np.inf)
            above = np.where(fc >= y, fc, np.inf)
            a = int(np.argmax(below))
            b = int(np.argmin(above))
            wb = (y - fc[a]) / (fc[b] - fc[a])
            weights[a] = 1.0 - wb
            weights[b] += wb
        per_vertex[v] = VertexFeasibility(True, low, high, weights)
    return FeasibilityReport(feasible=all_ok, per_vertex=per_vertex)
