"""Embedding, label, class-map and score files.

Embedding file layout (all little-endian)::

    b"SODAEMB1" | u32 n_rows | u32 n_cols | n_rows * n_cols float32, row-major

Everything else is small UTF-8 CSV.
"""
from __future__ import annotations

import csv
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from soda_ood.errors import (
    BadMagic,
    DuplicateIndex,
    InputError,
    IoFailure,
    LengthMismatch,
    MalformedTable,
    NonFiniteEntry,
    TruncatedFile,
    UnknownLabelToken,
)

MAGIC = b"SODAEMB1"
HEADER = struct.Struct("<8sII")
SCORE_COLUMNS = ("index", "s_text", "d_src", "score_initial", "score_final")


def load_embeddings(path) -> np.ndarray:
    """Read an embedding file into an (n_rows, n_cols) float32 array."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is shorter than the {HEADER.size}-byte header")
    magic, n_rows, n_cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    expected = HEADER.size + 4 * n_rows * n_cols
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: header ({n_rows}x{n_cols}) implies {expected} bytes, file has {len(raw)}")
    if n_rows == 0 or n_cols == 0:
        raise InputError(f"{path}: empty matrix ({n_rows}x{n_cols})")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(n_rows, n_cols)
    bad = ~np.isfinite(data)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFiniteEntry(int(row), int(col))
    return data.astype(np.float32)


def save_embeddings(path, m) -> None:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise InputError(f"expected a 2-D matrix, got shape {arr.shape}")
    n_rows, n_cols = arr.shape
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, n_rows, n_cols))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise MalformedTable(f"{path}: missing header")
    return [c.strip() for c in rows[0]], rows[1:]


def _parse_index(token: str, path, lineno: int) -> int:
    try:
        idx = int(token)
    except ValueError:
        raise MalformedTable(f"{path}:{lineno}: bad index {token!r}") from None
    if idx < 0:
        raise MalformedTable(f"{path}:{lineno}: negative index {idx}")
    return idx


def _permutation_order(indices: list[int], path) -> np.ndarray:
    """Positions that sort rows by index; rejects duplicates and gaps."""
    seen = set()
    for idx in indices:
        if idx in seen:
            raise DuplicateIndex(f"{path}: index {idx} appears more than once")
        seen.add(idx)
    if seen != set(range(len(indices))):
        missing = min(set(range(len(indices))) - seen)
        raise MalformedTable(f"{path}: indices are not 0..{len(indices) - 1} (missing {missing})")
    return np.argsort(np.asarray(indices, dtype=np.int64), kind="stable")


@dataclass
class LabelTable:
    """Per-sample ground truth, ordered by sample index."""

    ood: np.ndarray  # bool, True = OOD
    class_labels: list[str | None]

    def __len__(self) -> int:
        return int(self.ood.shape[0])

    @property
    def is_id(self) -> np.ndarray:
        return ~self.ood

    @property
    def has_classes(self) -> bool:
        return any(c is not None for c in self.class_labels)


def load_labels(path) -> LabelTable:
    header, rows = _read_rows(path)
    if header[:2] != ["index", "ood_label"] or len(header) > 3 or (len(header) == 3 and header[2] != "class_label"):
        raise MalformedTable(f"{path}: header must be index,ood_label[,class_label], got {','.join(header)}")
    indices, ood, classes = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) < 2:
            raise MalformedTable(f"{path}:{lineno}: expected at least 2 fields")
        indices.append(_parse_index(row[0].strip(), path, lineno))
        token = row[1].strip().upper()
        if token not in ("ID", "OOD"):
            raise UnknownLabelToken(f"{path}:{lineno}: unknown label {row[1]!r}")
        ood.append(token == "OOD")
        cls = row[2].strip() if len(row) > 2 else ""
        classes.append(cls or None)
    order = _permutation_order(indices, path)
    return LabelTable(np.asarray(ood, dtype=bool)[order], [classes[i] for i in order])


def save_labels(path, labels: LabelTable) -> None:
    with_classes = labels.has_classes
    lines = ["index,ood_label,class_label" if with_classes else "index,ood_label"]
    for i, (is_ood, cls) in enumerate(zip(labels.ood, labels.class_labels)):
        line = f"{i},{'OOD' if is_ood else 'ID'}"
        if with_classes:
            line += f",{cls or ''}"
        lines.append(line)
    _write_text(path, "\n".join(lines) + "\n")


def load_class_map(path) -> tuple[np.ndarray, list[str]]:
    """Read a ``row,class_name`` CSV.

    Returns per-row class indices and the class names, numbered in order of
    first appearance.
    """
    header, rows = _read_rows(path)
    if header != ["row", "class_name"]:
        raise MalformedTable(f"{path}: header must be row,class_name, got {','.join(header)}")
    indices, names = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2 or not row[1].strip():
            raise MalformedTable(f"{path}:{lineno}: expected row,class_name")
        indices.append(_parse_index(row[0].strip(), path, lineno))
        names.append(row[1].strip())
    order = _permutation_order(indices, path)
    ordered = [names[i] for i in order]
    class_names = list(dict.fromkeys(ordered))
    lookup = {name: k for k, name in enumerate(class_names)}
    return np.asarray([lookup[n] for n in ordered], dtype=np.int64), class_names


def save_class_map(path, class_index, class_names) -> None:
    lines = ["row,class_name"] + [f"{i},{class_names[c]}" for i, c in enumerate(np.asarray(class_index))]
    _write_text(path, "\n".join(lines) + "\n")


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def save_scores(path, s_text, d_src, score_initial, score_final) -> None:
    """Write the per-sample score table; ``d_src=None`` leaves that column empty."""
    cols = [np.asarray(c, dtype=np.float64) for c in (s_text, score_initial, score_final)]
    if d_src is not None:
        cols.append(np.asarray(d_src, dtype=np.float64))
    n = cols[0].shape[0]
    if any(c.shape != (n,) for c in cols):
        raise LengthMismatch("score columns have different lengths")
    d_col = [""] * n if d_src is None else [_fmt(v) for v in cols[3]]
    lines = [",".join(SCORE_COLUMNS)]
    for i in range(n):
        lines.append(f"{i},{_fmt(cols[0][i])},{d_col[i]},{_fmt(cols[1][i])},{_fmt(cols[2][i])}")
    _write_text(path, "\n".join(lines) + "\n")


def load_scores(path) -> dict[str, np.ndarray | None]:
    """Parse a score table. ``d_src`` is None when the column is empty."""
    header, rows = _read_rows(path)
    if tuple(header) != SCORE_COLUMNS:
        raise MalformedTable(f"{path}: unexpected header {','.join(header)}")
    indices = []
    values: dict[str, list[str]] = {name: [] for name in SCORE_COLUMNS[1:]}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(SCORE_COLUMNS):
            raise MalformedTable(f"{path}:{lineno}: expected {len(SCORE_COLUMNS)} fields")
        indices.append(_parse_index(row[0].strip(), path, lineno))
        for name, tok in zip(SCORE_COLUMNS[1:], row[1:]):
            values[name].append(tok.strip())
    order = _permutation_order(indices, path)
    out: dict[str, np.ndarray | None] = {}
    for name, toks in values.items():
        if name == "d_src" and all(t == "" for t in toks):
            out[name] = None if toks else np.empty(0)
            continue
        try:
            out[name] = np.asarray([float(t) for t in toks], dtype=np.float64)[order]
        except ValueError:
            raise MalformedTable(f"{path}: non-numeric value in column {name}") from None
    return out


def save_trace(path, values) -> None:
    """Dump a (T+1, N) iterate array as ``iter,index,value`` rows."""
    values = np.asarray(values, dtype=np.float64)
    lines = ["iter,index,value"]
    for t, row in enumerate(values):
        lines.extend(f"{t},{i},{_fmt(v)}" for i, v in enumerate(row))
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        os.makedirs(p, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {p}: {exc}") from exc
    return p
