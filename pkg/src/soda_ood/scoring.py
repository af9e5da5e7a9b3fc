"""Initial OOD scores and the baseline scorers.

Higher scores mean "more in-distribution" for every scorer here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from soda_ood.core import check_embeddings, cross_similarity, normalize_rows
from soda_ood.errors import DimensionMismatch, EmptyClass, InputError, KTooLarge, LengthMismatch, SingularCovariance

PIVOT_RTOL = 1e-12


@dataclass
class PromptEmbeddingGroups:
    """Encoded prompt vectors (M x D) with the class each row belongs to."""

    embeddings: np.ndarray
    class_index: np.ndarray
    class_names: list[str] | None = None

    @property
    def n_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        return int(np.max(self.class_index)) + 1 if len(self.class_index) else 0


@dataclass
class PrototypeSet:
    prototypes: np.ndarray  # n_classes x D, not re-normalised
    class_names: list[str]

    def __len__(self) -> int:
        return self.prototypes.shape[0]


def _class_means(x: np.ndarray, class_index, n_classes: int) -> np.ndarray:
    """Mean of the (already normalised) rows of each class."""
    class_index = np.asarray(class_index, dtype=np.int64)
    if class_index.shape != (x.shape[0],):
        raise LengthMismatch(f"{class_index.shape[0]} class indices for {x.shape[0]} rows")
    if class_index.size and (class_index.min() < 0 or class_index.max() >= n_classes):
        raise InputError(f"class indices must lie in 0..{n_classes - 1}")
    counts = np.bincount(class_index, minlength=n_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyClass(int(empty[0]))
    sums = np.zeros((n_classes, x.shape[1]))
    np.add.at(sums, class_index, x)
    return sums / counts[:, None]


def build_prototypes(groups: PromptEmbeddingGroups) -> PrototypeSet:
    """Average the l2-normalised prompt embeddings of each class.

    The averages are deliberately left unnormalised; every consumer compares
    them by cosine similarity.
    """
    n_classes = groups.n_classes
    if n_classes < 1:
        raise EmptyClass(0)
    x = normalize_rows(groups.embeddings)
    protos = _class_means(x, groups.class_index, n_classes)
    names = list(groups.class_names) if groups.class_names is not None else [str(i) for i in range(n_classes)]
    return PrototypeSet(protos, names)


def _proto_sims(test, protos: PrototypeSet) -> np.ndarray:
    test = check_embeddings(test, "test embeddings")
    if test.shape[1] != protos.prototypes.shape[1]:
        raise DimensionMismatch(f"test dimension {test.shape[1]} != prototype dimension {protos.prototypes.shape[1]}")
    return cross_similarity(test, protos.prototypes)


def text_score(test, protos: PrototypeSet) -> np.ndarray:
    """Maximum cosine similarity of each test row to the class prototypes."""
    return _proto_sims(test, protos).max(axis=1)


def mls_score(test, protos: PrototypeSet) -> np.ndarray:
    """Maximum logit score; with cosine logits this is exactly ``text_score``."""
    return text_score(test, protos)


def classify(test, protos: PrototypeSet) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return _proto_sims(test, protos).argmax(axis=1)


def msp_score(test, protos: PrototypeSet, temperature: float = 1.0) -> np.ndarray:
    """Maximum softmax probability over cosine logits divided by ``temperature``."""
    if not temperature > 0:
        raise InputError(f"temperature must be positive, got {temperature}")
    logits = _proto_sims(test, protos) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return 1.0 / e.sum(axis=1)  # the max logit was shifted to 0, so its exp is 1


def source_similarity(test, reference, k: int = 10) -> np.ndarray:
    """Mean cosine similarity of each test row to its ``k`` closest references."""
    reference = check_embeddings(reference, "reference embeddings")
    if k < 1:
        raise InputError(f"k must be positive, got {k}")
    if k > reference.shape[0]:
        raise KTooLarge(f"k={k} exceeds the {reference.shape[0]} reference rows")
    sims = cross_similarity(test, reference)
    if k < sims.shape[1]:
        top = -np.partition(-sims, k - 1, axis=1)[:, :k]
    else:
        top = sims
    # fixed descending order keeps the mean independent of the partition layout
    top = -np.sort(-top, axis=1)
    return top.sum(axis=1) / k


def cosine_proto_score(test, reference, ref_class_index) -> np.ndarray:
    """Max cosine similarity to per-class means of the normalised references."""
    ref = normalize_rows(reference)
    idx = np.asarray(ref_class_index, dtype=np.int64)
    n_classes = int(idx.max()) + 1 if idx.size else 0
    protos = _class_means(ref, idx, n_classes)
    return text_score(test, PrototypeSet(protos, [str(i) for i in range(n_classes)]))


def mahalanobis_score(test, reference, ref_class_index, ridge: float = 1e-3) -> np.ndarray:
    """Negative minimum squared Mahalanobis distance to the class means.

    Uses one covariance shared by all classes, estimated from class-centred
    reference rows (divided by the row count), plus ``ridge`` on the diagonal.
    """
    if ridge < 0:
        raise InputError(f"ridge must be non-negative, got {ridge}")
    ref = np.asarray(check_embeddings(reference, "reference embeddings"), dtype=np.float64)
    x = np.asarray(check_embeddings(test, "test embeddings"), dtype=np.float64)
    if x.shape[1] != ref.shape[1]:
        raise DimensionMismatch(f"test dimension {x.shape[1]} != reference dimension {ref.shape[1]}")
    idx = np.asarray(ref_class_index, dtype=np.int64)
    n_classes = int(idx.max()) + 1 if idx.size else 0
    means = _class_means(ref, idx, n_classes)
    centred = ref - means[idx]
    cov = centred.T @ centred / ref.shape[0]
    cov[np.diag_indices_from(cov)] += ridge
    try:
        factor = scipy.linalg.cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"covariance + {ridge}*I is not positive definite") from exc
    # rounding can leave a tiny positive pivot on a rank-deficient matrix
    pivots = np.diag(factor[0]) ** 2
    if pivots.min() <= PIVOT_RTOL * max(float(np.max(np.diag(cov))), np.finfo(float).tiny):
        raise SingularCovariance(f"covariance + {ridge}*I is numerically singular")
    dists = np.empty((x.shape[0], n_classes))
    for c in range(n_classes):
        diff = x - means[c]
        dists[:, c] = np.einsum("ij,ij->i", diff, scipy.linalg.cho_solve(factor, diff.T).T)
    return -dists.min(axis=1)
