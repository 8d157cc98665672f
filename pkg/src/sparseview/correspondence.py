"""Pairwise matches and two-hop propagation chains through a bridge view."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientViews, MissingInput, ParseError, ViewMismatch

MATCH_HEADER = ("view_i", "view_j", "x_i", "y_i", "x_j", "y_j")


@dataclass(eq=False)
class MatchSet:
    view_i: int
    view_j: int
    points_i: np.ndarray
    points_j: np.ndarray

    def __post_init__(self):
        self.view_i = int(self.view_i)
        self.view_j = int(self.view_j)
        self.points_i = np.asarray(self.points_i, dtype=np.float64).reshape(-1, 2)
        self.points_j = np.asarray(self.points_j, dtype=np.float64).reshape(-1, 2)
        if len(self.points_i) != len(self.points_j):
            raise ValueError(
                f"match arrays differ in length: {len(self.points_i)} vs {len(self.points_j)}"
            )

    def __len__(self):
        return len(self.points_i)

    def reversed(self) -> "MatchSet":
        return MatchSet(self.view_j, self.view_i, self.points_j, self.points_i)

    def subset(self, keep) -> "MatchSet":
        return MatchSet(self.view_i, self.view_j, self.points_i[keep], self.points_j[keep])

    def check_bounds(self, rig):
        """Raise ValueError if any point lies outside its image expanded by 1 px."""
        for pts, vid in ((self.points_i, self.view_i), (self.points_j, self.view_j)):
            k = rig[vid].intrinsics
            ok = (
                (pts[:, 0] >= -1) & (pts[:, 0] <= k.width)
                & (pts[:, 1] >= -1) & (pts[:, 1] <= k.height)
            )
            if not ok.all():
                raise ValueError(f"{int((~ok).sum())} match points outside view {vid}")


class MatchGraph:
    """Match sets keyed by unordered view pair; lookups reverse as needed."""

    def __init__(self, match_sets=()):
        self._sets: dict[tuple[int, int], MatchSet] = {}
        for m in match_sets:
            self.add(m)

    def add(self, m: MatchSet):
        if m.view_i == m.view_j:
            raise ValueError("a match set must connect two distinct views")
        key = (m.view_i, m.view_j)
        if (m.view_j, m.view_i) in self._sets:
            raise ValueError(f"pair {key} already present in reverse orientation")
        if key in self._sets:
            old = self._sets[key]
            m = MatchSet(m.view_i, m.view_j,
                         np.vstack([old.points_i, m.points_i]),
                         np.vstack([old.points_j, m.points_j]))
        self._sets[key] = m

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self._sets)

    def stored(self, key) -> MatchSet:
        return self._sets[key]

    def get(self, i, j) -> MatchSet | None:
        if (i, j) in self._sets:
            return self._sets[(i, j)]
        if (j, i) in self._sets:
            return self._sets[(j, i)].reversed()
        return None

    def has(self, i, j) -> bool:
        return (i, j) in self._sets or (j, i) in self._sets

    def views(self) -> list[int]:
        return sorted({v for key in self._sets for v in key})

    def __len__(self):
        return len(self._sets)

    def __iter__(self):
        return (self._sets[k] for k in self.pairs())

    def total_matches(self) -> int:
        return sum(len(m) for m in self._sets.values())


@dataclass(frozen=True)
class PropagationConfig:
    d_nn: float = 3.0
    min_common_points: int = 100
    neighbor_view_limit: int | None = None

    def __post_init__(self):
        if not self.d_nn > 0:
            raise ValueError(f"d_nn must be positive, got {self.d_nn}")
        if self.min_common_points < 0:
            raise ValueError("min_common_points must be >= 0")
        if self.neighbor_view_limit is not None and self.neighbor_view_limit < 1:
            raise ValueError("neighbor_view_limit must be >= 1")


@dataclass(eq=False)
class PropagationChainSet:
    """Chains ``i -> bridge j -> k``; entry n links ``m_ij[indices_ij[n]]`` to ``m_jk[indices_jk[n]]``."""

    view_i: int
    bridge_view_j: int
    view_k: int
    indices_ij: np.ndarray
    indices_jk: np.ndarray
    bridge_gap: np.ndarray = field(default=None)

    def __post_init__(self):
        self.indices_ij = np.asarray(self.indices_ij, dtype=np.int64).reshape(-1)
        self.indices_jk = np.asarray(self.indices_jk, dtype=np.int64).reshape(-1)
        if self.bridge_gap is None:
            self.bridge_gap = np.zeros(len(self.indices_ij))
        self.bridge_gap = np.asarray(self.bridge_gap, dtype=np.float64).reshape(-1)
        if not (len(self.indices_ij) == len(self.indices_jk) == len(self.bridge_gap)):
            raise ValueError("chain arrays must be parallel")

    def __len__(self):
        return len(self.indices_ij)

    @property
    def triple(self):
        return (self.view_i, self.bridge_view_j, self.view_k)

    def pair_set(self) -> set[tuple[int, int]]:
        return set(zip(self.indices_ij.tolist(), self.indices_jk.tolist()))


def _nearest(tree_points, tree, queries):
    """Index and distance of the nearest tree point; exact ties go to the lowest index."""
    n = len(tree_points)
    if n == 1:
        delta = queries - tree_points[0]
        return np.zeros(len(queries), dtype=np.int64), np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2)
    dist, idx = tree.query(queries, k=2)
    nn = idx[:, 0].astype(np.int64)
    # recompute with a fixed formula so tie checks and gaps are reproducible
    diff0 = queries - tree_points[idx[:, 0]]
    diff1 = queries - tree_points[idx[:, 1]]
    sq0 = diff0[:, 0] ** 2 + diff0[:, 1] ** 2
    sq1 = diff1[:, 0] ** 2 + diff1[:, 1] ** 2
    tied = np.nonzero(sq1 <= sq0)[0]
    for q in tied:
        delta = tree_points - queries[q]
        sq = delta[:, 0] ** 2 + delta[:, 1] ** 2
        nn[q] = int(np.argmin(sq))
    delta = queries - tree_points[nn]
    return nn, np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2)


def mutual_nearest(points_a, points_b, max_dist):
    """Mutual nearest neighbours between two 2-d point sets closer than ``max_dist``.

    Returns ``(idx_a, idx_b, dist)`` sorted by ``idx_a``.
    """
    a = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    nn_ab, d_ab = _nearest(b, cKDTree(b), a)
    nn_ba, _ = _nearest(a, cKDTree(a), b)
    ia = np.arange(len(a))
    keep = (nn_ba[nn_ab] == ia) & (d_ab < max_dist)
    return ia[keep], nn_ab[keep], d_ab[keep]


def build_chains(m_ij: MatchSet, m_jk: MatchSet, config: PropagationConfig = PropagationConfig()):
    if m_ij.view_j != m_jk.view_i:
        raise ViewMismatch(
            f"bridge views differ: pair ({m_ij.view_i},{m_ij.view_j}) vs ({m_jk.view_i},{m_jk.view_j})"
        )
    a, c, gap = mutual_nearest(m_ij.points_j, m_jk.points_i, config.d_nn)
    return PropagationChainSet(m_ij.view_i, m_ij.view_j, m_jk.view_j, a, c, gap)


def filter_chain_sets(chains, config: PropagationConfig = PropagationConfig()):
    """Drop chain sets with fewer than ``min_common_points`` chains."""
    return [c for c in chains if len(c) >= config.min_common_points]


def select_bridge_partners(rig, per_view_limit=None, w_rot=1.0):
    """Ordered ``(i, j, k)`` triples whose ends are among bridge j's nearest views."""
    from .view_synth import pose_distance

    ids = rig.view_ids
    if len(ids) < 3:
        raise InsufficientViews(f"need at least 3 views, got {len(ids)}")
    limit = len(ids) - 1 if per_view_limit is None else int(per_view_limit)
    triples = []
    for j in ids:
        others = [v for v in ids if v != j]
        ranked = sorted(others, key=lambda v: (pose_distance(rig[v].pose, rig[j].pose, w_rot), v))
        near = sorted(ranked[:limit])
        triples.extend((i, j, k) for i, k in permutations(near, 2))
    return triples


def build_propagation(rig, graph: MatchGraph, config: PropagationConfig = PropagationConfig(), w_rot=1.0):
    """Chain sets for every bridge triple that has both match sets, then filtered."""
    if len(rig) < 3:
        return []
    chains = []
    for i, j, k in select_bridge_partners(rig, config.neighbor_view_limit, w_rot):
        m_ij, m_jk = graph.get(i, j), graph.get(j, k)
        if m_ij is None or m_jk is None:
            continue
        chains.append(build_chains(m_ij, m_jk, config))
    return filter_chain_sets(chains, config)


def write_matches(path, m: MatchSet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MATCH_HEADER)
        for (xi, yi), (xj, yj) in zip(m.points_i, m.points_j):
            w.writerow([m.view_i, m.view_j, repr(float(xi)), repr(float(yi)), repr(float(xj)), repr(float(yj))])


def read_matches(path) -> list[MatchSet]:
    path = Path(path)
    groups: dict[tuple[int, int], tuple[list, list]] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "view_i":
                continue
            if len(row) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(row)}", path=str(path))
            try:
                vi, vj = int(row[0]), int(row[1])
                vals = [float(x) for x in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", path=str(path)) from exc
            pi, pj = groups.setdefault((vi, vj), ([], []))
            pi.append(vals[:2])
            pj.append(vals[2:])
    return [MatchSet(vi, vj, np.array(pi), np.array(pj)) for (vi, vj), (pi, pj) in sorted(groups.items())]


def load_match_graph(directory) -> MatchGraph:
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingInput(f"matches directory not found: {directory}", path=str(directory))
    graph = MatchGraph()
    for f in sorted(directory.glob("*.csv")):
        for m in read_matches(f):
            if len(m):
                graph.add(m)
    return graph


def save_match_graph(directory, graph: MatchGraph):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, j in graph.pairs():
        write_matches(directory / f"matches_{i:03d}_{j:03d}.csv", graph.stored((i, j)))
