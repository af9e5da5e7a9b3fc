"""Epsilon-similarity graph over the test set.

Two samples are joined when their cosine similarity reaches a threshold
chosen as a percentile of all pairwise similarities, so the graph keeps
roughly a fraction ``eta`` of the pairs. Every node also has a self-loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from soda_ood import _backend
from soda_ood.errors import InputError, IoFailure, TooFewSamples

# absorbs the binary representation error of eta, e.g. (1 - 1/3) * 3
RANK_SLACK = 1e-9


@dataclass
class SimilarityGraph:
    """Symmetric adjacency in CSR form; neighbour lists are sorted and include the node."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    epsilon: float = math.nan

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        """Undirected edges, self-loops excluded."""
        return int((self.indices.shape[0] - self.n) // 2)

    def edge_list(self) -> np.ndarray:
        """(E, 2) array of pairs ``i < j``, sorted."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        a[np.repeat(np.arange(self.n), self.degrees), self.indices] = True
        return a

    @classmethod
    def from_edges(cls, n: int, edges, epsilon: float = math.nan) -> "SimilarityGraph":
        """Build from undirected pairs; adds the reverse direction and self-loops."""
        a = np.eye(n, dtype=bool)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        a[edges[:, 0], edges[:, 1]] = True
        a[edges[:, 1], edges[:, 0]] = True
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(a.sum(axis=1), out=indptr[1:])
        return cls(n, indptr, np.nonzero(a)[1].astype(np.int64), epsilon)


def self_loop_graph(n: int) -> SimilarityGraph:
    """Graph with only self-loops; used when there are too few samples for a percentile."""
    return SimilarityGraph(n, np.arange(n + 1, dtype=np.int64), np.arange(n, dtype=np.int64))


def _check_sims(sims) -> np.ndarray:
    s = np.ascontiguousarray(sims, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InputError(f"similarity matrix must be square, got shape {s.shape}")
    if s.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 samples to build a graph, got {s.shape[0]}")
    return s


def _check_eta(eta: float) -> None:
    if not 0.0 < eta < 1.0:
        raise InputError(f"eta must be in (0, 1), got {eta}")


def nearest_rank(q: float, m: int) -> int:
    """1-based nearest-rank position of the ``q``-th percentile among ``m`` values."""
    return min(m, max(1, math.ceil(q / 100.0 * m - RANK_SLACK)))


def percentile_threshold(sims, eta: float) -> float:
    """Nearest-rank ``100(1 - eta)``-th percentile of the strict upper triangle."""
    s = _check_sims(sims)
    _check_eta(eta)
    values = _backend.kernels.upper_triangle(s)
    rank = nearest_rank(100.0 * (1.0 - eta), values.shape[0])
    return float(np.partition(values, rank - 1)[rank - 1])


def build_graph(sims, eta: float) -> SimilarityGraph:
    s = _check_sims(sims)
    eps = percentile_threshold(s, eta)
    indptr, indices = _backend.kernels.threshold_adjacency(s, eps, _backend.get_num_threads())
    return SimilarityGraph(s.shape[0], indptr, indices, eps)


def write_edge_list(path, graph: SimilarityGraph) -> None:
    """Write ``i,j`` pairs (i < j, no self-loops) and an ``<path>.epsilon`` sidecar."""
    lines = ["i,j"] + [f"{i},{j}" for i, j in graph.edge_list()]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(f"{path}.epsilon", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"epsilon={graph.epsilon!r}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
