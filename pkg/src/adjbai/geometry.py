"""Polytope geometry of finite arm sets: extreme points and adjacency.

The vertex set V of conv(X) and its edge set are recovered with two linear
programs per candidate (one per arm for vertices, one per vertex pair for
edges), after translating the arm set so its mean sits at the origin.  On
the centered set an arm x is a vertex iff

    max eps  s.t.  x^T w = 1,  y^T w <= 1 - eps  for all other arms y

has optimum eps > 0, and a vertex pair (x, x') spans an edge iff the same
program with both equalities x^T w = x'^T w = 1 (and y ranging over the
remaining vertices) has optimum eps > 0.  Pairs that are linearly dependent
after centering cannot share a supporting hyperplane at a positive level and
are skipped without solving.

The one exception is an arm set whose centered hull is a segment (all arms
on one line through the centroid).  Its two endpoints are vertices and form
the unique edge, but no w can hold both at level one; that case is detected
by rank and handled directly.

`hull_oracle_2d` is an independent gift-wrapping implementation used to
cross-validate the LP route in two dimensions.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .simplex import LinearProgram, solve_lp

# An LP optimum above this margin certifies a vertex / edge; optima inside
# (0, 10*TOL_MARGIN] are reported as near-margin so callers can distrust them.
TOL_MARGIN = 1e-7

# Largest 2x2 minor below this is treated as a linearly dependent pair.
INDEP_TOL = 1e-10


class DegenerateArmSetError(ValueError):
    """Arm set violates a geometric precondition (span, size, collinearity)."""


@dataclass(frozen=True)
class ArmSet:
    """A finite collection of K distinct arms in R^d, spanning R^d.

    Arms are deduplicated by exact coordinate equality, keeping first
    occurrences; all indices reported by this package refer to positions in
    the deduplicated `arms` matrix.
    """

    arms: np.ndarray
    require_spanning: bool = True

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.arms, dtype=float))
        if mat.ndim != 2:
            raise ValueError("arms must be a K x d matrix")
        _, keep = np.unique(mat, axis=0, return_index=True)
        if keep.size != mat.shape[0]:
            mat = mat[np.sort(keep)]
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "arms", mat)
        if self.K < 2:
            raise DegenerateArmSetError("need at least two distinct arms")
        if self.require_spanning and np.linalg.matrix_rank(mat) < self.d:
            raise DegenerateArmSetError(
                f"arms span a {np.linalg.matrix_rank(mat)}-dimensional subspace of R^{self.d}"
            )

    @property
    def K(self):
        return self.arms.shape[0]

    @property
    def d(self):
        return self.arms.shape[1]

    def __getitem__(self, idx):
        return self.arms[idx]

    def key(self):
        """Hashable identity used for caching derived structures."""
        return self.arms.tobytes()


@dataclass(frozen=True)
class AdjacencyStructure:
    """Vertices of conv(X), its edges, and one supporting witness per edge.

    `edge_witness[(i, j)]` holds (w, margin) with i < j: on the centered arm
    set, w supports both endpoints at level one and every other vertex at
    level at most 1 - margin.  For segment hulls the witness is a direction
    orthogonal to the edge and the margin is +inf (there is nothing left to
    separate from).
    """

    extreme_points: tuple
    adjacent_pairs: frozenset
    neighbors: dict
    edge_witness: dict
    near_margin: tuple = ()

    def degree(self, i):
        return len(self.neighbors.get(i, ()))

    def pair_list(self):
        return sorted(tuple(sorted(p)) for p in self.adjacent_pairs)

    def to_json_dict(self):
        return {
            "extreme": list(self.extreme_points),
            "edges": [list(p) for p in self.pair_list()],
            "witnesses": {
                f"{i}-{j}": {"w": list(map(float, w)), "margin": float(m)}
                for (i, j), (w, m) in sorted(self.edge_witness.items())
            },
        }

    @classmethod
    def from_json_dict(cls, data):
        edges = frozenset(tuple(sorted(e)) for e in data["edges"])
        witnesses = {}
        for k, v in data.get("witnesses", {}).items():
            i, j = (int(s) for s in k.split("-"))
            witnesses[(i, j)] = (np.asarray(v["w"], dtype=float), float(v["margin"]))
        return cls(
            extreme_points=tuple(data["extreme"]),
            adjacent_pairs=edges,
            neighbors=_neighbors_from_edges(data["extreme"], edges),
            edge_witness=witnesses,
        )


def _neighbors_from_edges(extreme, edges):
    nbrs = {i: set() for i in extreme}
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    return {i: frozenset(s) for i, s in nbrs.items()}


def _check_connected(extreme, edges):
    if not extreme:
        return False
    nbrs = _neighbors_from_edges(extreme, edges)
    seen = {extreme[0]}
    stack = [extreme[0]]
    while stack:
        for j in nbrs[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(extreme)


def center_arm_set(X):
    """Translate the arms so they sum to the zero vector.

    Returns (centered ArmSet, centroid); the centroid restores original
    coordinates.  Centering is idempotent.
    """
    centroid = X.arms.mean(axis=0)
    centered = X.arms - centroid
    return ArmSet(centered, require_spanning=False), centroid


def _solve_support_lp(centered, row_indices, equal_indices, max_iter=10000):
    """LP over (w, eps): max eps, x^T w = 1 for x in equal_indices,
    y^T w <= 1 - eps for y in row_indices."""
    d = centered.shape[1]
    obj = np.zeros(d + 1)
    obj[-1] = 1.0
    eqs = [(np.append(centered[i], 0.0), 1.0) for i in equal_indices]
    ineqs = [(np.append(centered[i], 1.0), 1.0) for i in row_indices]
    return solve_lp(
        LinearProgram(obj, equality_constraints=eqs, inequality_constraints=ineqs),
        max_iter=max_iter,
    )


def _centered_rank(centered):
    sv = np.linalg.svd(centered, compute_uv=False)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    return int(np.sum(sv > 1e-12 * scale * max(centered.shape)))


def _segment_structure(X, centered):
    """Hull is a 1-dimensional segment: endpoints are the vertices."""
    direction = centered[np.argmax(np.linalg.norm(centered, axis=1))]
    proj = centered @ direction
    lo, hi = int(np.argmin(proj)), int(np.argmax(proj))
    extreme = tuple(sorted((lo, hi)))
    pair = (extreme[0], extreme[1])
    edge = centered[hi] - centered[lo]
    if X.d == 1:
        w = np.zeros(1)
    else:
        # Any unit vector orthogonal to the edge keeps both endpoints level.
        basis = np.eye(X.d)
        cand = basis - np.outer(basis @ edge, edge) / (edge @ edge)
        w = cand[np.argmax(np.linalg.norm(cand, axis=1))]
        w = w / np.linalg.norm(w)
    return AdjacencyStructure(
        extreme_points=extreme,
        adjacent_pairs=frozenset({pair}),
        neighbors=_neighbors_from_edges(extreme, {pair}),
        edge_witness={pair: (w, math.inf)},
    )


def compute_extreme_points(X):
    """Indices of the vertices of conv(X), via one support LP per arm."""
    centered, _ = center_arm_set(X)
    c = centered.arms
    if _centered_rank(c) <= 1:
        return set(_segment_structure(X, c).extreme_points)
    extreme = set()
    for i in range(X.K):
        others = [j for j in range(X.K) if j != i]
        res = _solve_support_lp(c, others, [i])
        if res.status == "infeasible":
            continue  # the centered arm is the zero vector: interior
        if not res.optimal:
            raise SimplexFailure(f"LP1 returned {res.status} for arm {i}")
        if res.value > TOL_MARGIN:
            extreme.add(i)
    return extreme


class SimplexFailure(RuntimeError):
    """An adjacency LP ended in a state the geometry cannot interpret."""


def compute_adjacent_pairs(X):
    """Full adjacency structure of conv(X) via the centered LP procedure."""
    centered, _ = center_arm_set(X)
    c = centered.arms
    if _centered_rank(c) <= 1:
        return _segment_structure(X, c)

    near = []
    extreme = []
    for i in range(X.K):
        others = [j for j in range(X.K) if j != i]
        res = _solve_support_lp(c, others, [i])
        if res.status == "infeasible":
            continue
        if not res.optimal:
            raise SimplexFailure(f"LP1 returned {res.status} for arm {i}")
        if res.value > TOL_MARGIN:
            extreme.append(i)
            if res.value <= 10 * TOL_MARGIN:
                near.append(("vertex", i, float(res.value)))
    extreme_t = tuple(extreme)

    edges = set()
    witnesses = {}
    for a in range(len(extreme_t)):
        for b in range(a + 1, len(extreme_t)):
            i, j = extreme_t[a], extreme_t[b]
            if not _linearly_independent(c[i], c[j]):
                continue
            others = [k for k in extreme_t if k != i and k != j]
            res = _solve_support_lp(c, others, [i, j])
            if res.status == "infeasible":
                continue
            if res.status == "unbounded":
                raise SimplexFailure(f"LP2 unbounded for pair ({i},{j})")
            if res.value > TOL_MARGIN:
                edges.add((i, j))
                witnesses[(i, j)] = (res.x[:-1].copy(), float(res.value))
                if res.value <= 10 * TOL_MARGIN:
                    near.append(("edge", (i, j), float(res.value)))

    if not _check_connected(extreme_t, edges):
        raise SimplexFailure("vertex-edge graph is disconnected; adjacency LPs inconsistent")
    return AdjacencyStructure(
        extreme_points=extreme_t,
        adjacent_pairs=frozenset(edges),
        neighbors=_neighbors_from_edges(extreme_t, edges),
        edge_witness=witnesses,
        near_margin=tuple(near),
    )


def _linearly_independent(u, v):
    d = u.size
    best = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            best = max(best, abs(u[i] * v[j] - u[j] * v[i]))
    return best > INDEP_TOL


def hull_oracle_2d(X):
    """Exact 2D hull adjacency by gift wrapping; test oracle only.

    Points that fall strictly inside a hull edge are not vertices and are
    wrapped past (farthest collinear candidate wins); a fully collinear input
    has no usable polygon and is rejected.
    """
    if X.d != 2:
        raise ValueError("oracle requires d = 2")
    pts = X.arms
    scale = max(1.0, float(np.abs(pts).max()))
    start = min(range(X.K), key=lambda i: (pts[i, 1], pts[i, 0]))
    hull = [start]
    while True:
        cur = hull[-1]
        cand = None
        for j in range(X.K):
            if j == cur:
                continue
            if cand is None:
                cand = j
                continue
            u, v = pts[cand] - pts[cur], pts[j] - pts[cur]
            cross = u[0] * v[1] - u[1] * v[0]
            if abs(cross) <= 1e-12 * scale * scale:
                if np.linalg.norm(v) > np.linalg.norm(u):
                    cand = j
            elif cross < 0:
                cand = j
        hull.append(cand)
        if cand == start:
            break
        if len(hull) > X.K:
            raise DegenerateArmSetError("gift wrapping failed to close the hull")
    hull = hull[:-1]
    if len(hull) < 3:
        raise DegenerateArmSetError("collinear input: hull has fewer than 3 vertices")

    centroid = pts.mean(axis=0)
    edges = set()
    witnesses = {}
    n = len(hull)
    for k in range(n):
        i, j = hull[k], hull[(k + 1) % n]
        pair = tuple(sorted((i, j)))
        edges.add(pair)
        a, b = pts[i] - centroid, pts[j] - centroid
        e = b - a
        normal = np.array([e[1], -e[0]])
        level = normal @ a
        if level < 0:
            normal, level = -normal, -level
        if level <= 1e-12 * scale:
            raise DegenerateArmSetError("centroid lies on a hull edge")
        w = normal / level
        others = [v for v in hull if v != i and v != j]
        margin = 1.0 - max((pts[v] - centroid) @ w for v in others) if others else math.inf
        witnesses[pair] = (w, float(margin))

    extreme_t = tuple(sorted(hull))
    return AdjacencyStructure(
        extreme_points=extreme_t,
        adjacent_pairs=frozenset(edges),
        neighbors=_neighbors_from_edges(extreme_t, edges),
        edge_witness=witnesses,
    )


def verify_witness(X, adj, atol=1e-8):
    """Check each stored (w, margin) against the supporting conditions."""
    centered, _ = center_arm_set(X)
    c = centered.arms
    for (i, j), (w, margin) in adj.edge_witness.items():
        if not math.isfinite(margin):
            continue
        if abs(c[i] @ w - 1.0) > atol or abs(c[j] @ w - 1.0) > atol:
            return False
        for k in adj.extreme_points:
            if k in (i, j):
                continue
            if c[k] @ w > 1.0 - margin + atol:
                return False
    return True


def load_arms(path, fmt=None):
    """Load an ArmSet from CSV (one arm per row) or JSON (array of arrays)."""
    if fmt is None:
        fmt = "json" if str(path).endswith(".json") else "csv"
    if fmt == "json":
        with open(path) as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data["arms"]
        return ArmSet(np.asarray(data, dtype=float))
    rows = []
    with open(path) as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    return ArmSet(np.asarray(rows, dtype=float))


def save_arms(X, path):
    with open(path, "w") as fh:
        json.dump([list(map(float, row)) for row in X.arms], fh)
