"""Score propagation over the similarity graph.

Each step replaces a node's score with ``alpha * initial + (1 - alpha) *
mean of the neighbours' previous scores`` (the node is its own neighbour).
All nodes update from the same previous iterate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from soda_ood import _backend
from soda_ood.core import check_scores
from soda_ood.errors import EmptyNeighborhood, InputError, IterationMismatch, LengthMismatch, NonFiniteScore
from soda_ood.graph import SimilarityGraph

EARLY_STOP_TOL = 1e-10


@dataclass
class PropagationTrace:
    values: np.ndarray  # (T+1, N); row t is the t-th iterate

    @property
    def iters(self) -> int:
        return self.values.shape[0] - 1

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def last(self) -> np.ndarray:
        return self.values[-1]

    @property
    def delta_inf(self) -> np.ndarray:
        """Max absolute change per step; entry t-1 compares iterates t and t-1."""
        if self.iters == 0:
            return np.zeros(0)
        return np.abs(np.diff(self.values, axis=0)).max(axis=1)


def _check_inputs(s0, graph: SimilarityGraph, alpha: float) -> np.ndarray:
    s0 = check_scores(s0, "initial scores")
    if not 0.0 < alpha <= 1.0:
        raise InputError(f"alpha must be in (0, 1], got {alpha}")
    if s0.shape[0] != graph.n:
        raise LengthMismatch(f"{s0.shape[0]} scores for a graph with {graph.n} nodes")
    if graph.n and graph.degrees.min() < 1:
        raise EmptyNeighborhood(f"node {int(np.argmin(graph.degrees))} has no neighbours")
    return s0


def propagate(s0, graph: SimilarityGraph, alpha: float = 0.2, iters: int = 5, early_stop: bool = False) -> PropagationTrace:
    """Run ``iters`` synchronous updates and return every iterate.

    With ``early_stop`` the run ends after the first step that changes no
    score by more than 1e-10, so the trace may be shorter than ``iters``.
    """
    s0 = _check_inputs(s0, graph, alpha)
    if iters < 0:
        raise InputError(f"iters must be non-negative, got {iters}")
    if alpha == 1.0:
        # every iterate equals s0; skip the arithmetic so the result is bit-exact
        # (0 * sum would turn -0.0 into +0.0). Early stop fires after one step.
        rows = min(iters, 1) + 1 if early_stop else iters + 1
        return PropagationTrace(np.tile(s0, (rows, 1)))
    values = _backend.kernels.propagate(
        np.ascontiguousarray(s0),
        np.ascontiguousarray(graph.indptr, dtype=np.int64),
        np.ascontiguousarray(graph.indices, dtype=np.int64),
        float(alpha),
        int(iters),
        EARLY_STOP_TOL if early_stop else 0.0,
        _backend.get_num_threads(),
    )
    if not np.all(np.isfinite(values)):
        raise NonFiniteScore("propagation produced non-finite scores")
    return PropagationTrace(values)


def transition_matrix(graph: SimilarityGraph) -> sp.csr_matrix:
    """Row-normalised adjacency D^-1 A."""
    data = np.repeat(1.0 / graph.degrees, graph.degrees)
    return sp.csr_matrix((data, graph.indices, graph.indptr), shape=(graph.n, graph.n))


def solve_fixed_point(s0, graph: SimilarityGraph, alpha: float = 0.2) -> np.ndarray:
    """Limit of ``propagate`` as the iteration count grows.

    Solves ``(I - (1 - alpha) D^-1 A) s = alpha s0`` with a sparse direct solver.
    """
    s0 = _check_inputs(s0, graph, alpha)
    if alpha == 1.0:
        return s0.copy()
    system = sp.identity(graph.n, format="csc") - (1.0 - alpha) * transition_matrix(graph).tocsc()
    s = np.atleast_1d(spla.spsolve(system, alpha * s0))
    if not np.all(np.isfinite(s)):
        raise NonFiniteScore("fixed-point solve produced non-finite scores")
    return s


def combined_trace(text_trace: PropagationTrace, dsrc_trace: PropagationTrace) -> np.ndarray:
    """Per-iteration product of the two propagated components, shape (T+1, N)."""
    if text_trace.values.shape[1] != dsrc_trace.values.shape[1]:
        raise LengthMismatch("traces cover different numbers of samples")
    if text_trace.iters != dsrc_trace.iters:
        raise IterationMismatch(f"traces ran {text_trace.iters} and {dsrc_trace.iters} iterations")
    return dsrc_trace.values * text_trace.values


def soda_combine(text_trace: PropagationTrace, dsrc_trace: PropagationTrace) -> np.ndarray:
    """Final score: propagated source similarity times propagated text score."""
    return combined_trace(text_trace, dsrc_trace)[-1]
