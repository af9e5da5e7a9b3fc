"""Shared numeric helpers: validation, row normalisation, cosine similarity.

Embedding matrices and score vectors are plain numpy arrays. Files store
float32; everything computed here is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from soda_ood import _backend
from soda_ood.errors import DimensionMismatch, InputError, NonFiniteEntry, NonFiniteScore, ZeroNormRow

ZERO_NORM = 1e-12


class Mode(str, Enum):
    ZERO_SHOT = "zero_shot"
    FULL = "full"

    @classmethod
    def parse(cls, value: str) -> "Mode":
        aliases = {"zs": cls.ZERO_SHOT, "zero_shot": cls.ZERO_SHOT, "full": cls.FULL}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InputError(f"unknown mode {value!r}; expected zs, zero_shot or full") from None


@dataclass(frozen=True)
class SodaConfig:
    """Hyper-parameters of one scoring run.

    ``alpha`` anchors each score to its initial value, ``eta`` is the
    fraction of test pairs that become graph edges, ``iters`` the number of
    propagation steps and ``topk`` the reference neighbours averaged for the
    source similarity.
    """

    alpha: float = 0.2
    eta: float = 0.02
    iters: int = 5
    topk: int = 10
    mode: Mode = Mode.FULL
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise InputError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.eta < 1.0:
            raise InputError(f"eta must be in (0, 1), got {self.eta}")
        if self.iters < 0:
            raise InputError(f"iters must be >= 0, got {self.iters}")
        if self.topk < 1:
            raise InputError(f"topk must be >= 1, got {self.topk}")
        if not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode.parse(self.mode))


def check_embeddings(m, name: str = "embeddings") -> np.ndarray:
    """Validate an N x D matrix with N, D >= 1 and finite entries."""
    arr = np.asarray(m)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    bad = ~np.isfinite(arr)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFiniteEntry(int(row), int(col))
    return arr


def normalize_rows(m) -> np.ndarray:
    """Divide every row by its Euclidean norm.

    Returns a C-contiguous float64 copy. Raises ``ZeroNormRow`` for the first
    row whose norm is below 1e-12.
    """
    x = np.array(check_embeddings(m), dtype=np.float64, order="C")
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    small = np.flatnonzero(norms < ZERO_NORM)
    if small.size:
        raise ZeroNormRow(int(small[0]))
    x /= norms[:, None]
    return x


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector lengths differ: {a.size} vs {b.size}")
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if na < ZERO_NORM:
        raise ZeroNormRow(0)
    if nb < ZERO_NORM:
        raise ZeroNormRow(1)
    return float(min(1.0, max(-1.0, (a @ b) / (na * nb))))


def pairwise_similarity(m) -> np.ndarray:
    """N x N cosine similarities of the rows of ``m``.

    The upper triangle is computed and mirrored, so the result is exactly
    symmetric; the diagonal is exactly 1.
    """
    x = normalize_rows(m)
    return _backend.kernels.pairwise_similarity(x, _backend.get_num_threads())


def cross_similarity(a, b) -> np.ndarray:
    """Cosine similarity between every row of ``a`` and every row of ``b``."""
    x = normalize_rows(a)
    y = normalize_rows(b)
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    return _backend.kernels.cross_similarity(x, y, _backend.get_num_threads())


def check_scores(s, name: str = "scores") -> np.ndarray:
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteScore(f"{name} contains non-finite values")
    return arr
