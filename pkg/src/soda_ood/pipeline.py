"""End-to-end scoring: initial scores, graph, propagation, combination."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from soda_ood.core import Mode, SodaConfig, pairwise_similarity
from soda_ood.errors import ConflictingFlags, TooFewSamples
from soda_ood.graph import SimilarityGraph, build_graph, self_loop_graph
from soda_ood.propagation import PropagationTrace, combined_trace, propagate, solve_fixed_point
from soda_ood import scoring

BASELINES = ("none", "msp", "mls", "cosine_proto", "mahalanobis", "source_sim")
NEEDS_REFERENCE = {"cosine_proto", "mahalanobis", "source_sim"}


@dataclass
class ScoreResult:
    s_text: np.ndarray
    d_src: np.ndarray | None
    score_initial: np.ndarray
    score_final: np.ndarray
    graph: SimilarityGraph
    text_trace: PropagationTrace
    dsrc_trace: PropagationTrace | None
    timings: dict[str, float] = field(default_factory=dict)
    oracle_gap: dict[str, float] = field(default_factory=dict)

    def score_trace(self) -> np.ndarray:
        if self.dsrc_trace is None:
            return self.text_trace.values
        return combined_trace(self.text_trace, self.dsrc_trace)


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


def graph_for(test, eta: float) -> SimilarityGraph:
    """Similarity graph of the test rows; a lone sample gets a self-loop-only graph."""
    try:
        return build_graph(pairwise_similarity(test), eta)
    except TooFewSamples:
        return self_loop_graph(np.asarray(test).shape[0])


def initial_score(name: str, test, protos, reference=None, ref_class=None, topk: int = 10,
                  temperature: float = 1.0, ridge: float = 1e-3) -> np.ndarray:
    if name in ("none", "mls"):
        return scoring.text_score(test, protos) if name == "none" else scoring.mls_score(test, protos)
    if name == "msp":
        return scoring.msp_score(test, protos, temperature)
    if reference is None:
        raise ConflictingFlags(f"baseline {name} needs reference embeddings")
    if name == "source_sim":
        return scoring.source_similarity(test, reference, topk)
    if ref_class is None:
        raise ConflictingFlags(f"baseline {name} needs reference class labels")
    if name == "cosine_proto":
        return scoring.cosine_proto_score(test, reference, ref_class)
    if name == "mahalanobis":
        return scoring.mahalanobis_score(test, reference, ref_class, ridge)
    raise ConflictingFlags(f"unknown baseline {name!r}; expected one of {', '.join(BASELINES)}")


def run(test, protos, config: SodaConfig, reference=None, ref_class=None, baseline: str = "none",
        temperature: float = 1.0, ridge: float = 1e-3, oracle: bool = False, graph: SimilarityGraph | None = None,
        early_stop: bool = False) -> ScoreResult:
    """Score every test row.

    Zero-shot mode propagates the text score; full mode propagates the text
    score and the source similarity separately and multiplies them. A
    baseline other than ``none`` replaces the text score and is propagated
    on its own (zero-shot mode only).
    """
    if baseline != "none" and config.mode is Mode.FULL:
        raise ConflictingFlags("--baseline replaces the initial score; combine it with --mode zs")
    if config.mode is Mode.FULL and reference is None:
        raise ConflictingFlags("--mode full requires reference embeddings")
    timer = _Timer()
    with timer.stage("initial_scoring"):
        s_text = initial_score(baseline, test, protos, reference, ref_class, config.topk, temperature, ridge)
        d_src = scoring.source_similarity(test, reference, config.topk) if config.mode is Mode.FULL else None
    with timer.stage("graph"):
        if graph is None:
            graph = graph_for(test, config.eta)
    with timer.stage("propagation"):
        text_trace = propagate(s_text, graph, config.alpha, config.iters, early_stop)
        dsrc_trace = propagate(d_src, graph, config.alpha, config.iters, early_stop) if d_src is not None else None
    if dsrc_trace is not None and dsrc_trace.iters != text_trace.iters:
        # early stop may end the two runs at different steps; continue the shorter one
        steps = max(dsrc_trace.iters, text_trace.iters)
        text_trace = propagate(s_text, graph, config.alpha, steps)
        dsrc_trace = propagate(d_src, graph, config.alpha, steps)

    result = ScoreResult(
        s_text=s_text,
        d_src=d_src,
        score_initial=s_text if d_src is None else d_src * s_text,
        score_final=text_trace.last if dsrc_trace is None else dsrc_trace.last * text_trace.last,
        graph=graph,
        text_trace=text_trace,
        dsrc_trace=dsrc_trace,
        timings=timer.timings,
    )
    if oracle:
        with timer.stage("oracle"):
            result.oracle_gap["text"] = float(np.max(np.abs(text_trace.last - solve_fixed_point(s_text, graph, config.alpha))))
            if d_src is not None:
                result.oracle_gap["d_src"] = float(np.max(np.abs(dsrc_trace.last - solve_fixed_point(d_src, graph, config.alpha))))
    return result
