"""Transductive OOD scoring of embedding vectors.

Test samples get an initial score from their similarity to class text
prototypes (optionally weighted by similarity to source-domain reference
samples), then scores are smoothed over an epsilon-similarity graph of the
test set.
"""
from soda_ood._backend import backend_name, get_num_threads, set_num_threads, use_backend
from soda_ood.core import Mode, SodaConfig, cosine_sim, normalize_rows, pairwise_similarity
from soda_ood.graph import SimilarityGraph, build_graph, percentile_threshold
from soda_ood.metrics import EvalResult, auc, binned_accuracy, evaluate, fpr_at_recall
from soda_ood.propagation import PropagationTrace, propagate, soda_combine, solve_fixed_point
from soda_ood.synth import SynthScenario, generate, standard_scenario
from soda_ood.scoring import (
    PromptEmbeddingGroups,
    PrototypeSet,
    build_prototypes,
    classify,
    cosine_proto_score,
    mahalanobis_score,
    mls_score,
    msp_score,
    source_similarity,
    text_score,
)

__version__ = "0.1.0"
