"""Embedding post-processing pipeline: centering, LDA, length normalization.

Each stage is optional; the apply order is fixed center -> LDA ->
length-norm.  Fitted stage parameters are stored as float32 so that a
saved and reloaded pipeline applies bitwise identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ContractError, FormatError
from .store import EmbeddingSet

PIPELINE_MAGIC = b"SVPL"
PIPELINE_VERSION = 1


@dataclass(frozen=True)
class CenterStage:
    mean: np.ndarray  # (D,) float32

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float32)
        if m.ndim != 1 or not np.all(np.isfinite(m)):
            raise ContractError("center mean must be a finite D-vector")
        object.__setattr__(self, "mean", m)


@dataclass(frozen=True)
class LdaStage:
    projection: np.ndarray  # (D, k) float32

    def __post_init__(self):
        p = np.asarray(self.projection, dtype=np.float32)
        if p.ndim != 2 or p.shape[1] < 1 or not np.all(np.isfinite(p)):
            raise ContractError("LDA projection must be a finite D x k matrix")
        object.__setattr__(self, "projection", p)

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]


@dataclass(frozen=True)
class Pipeline:
    center: CenterStage | None = None
    lda: LdaStage | None = None
    length_norm: bool = False

    def __post_init__(self):
        if self.center is not None and self.lda is not None:
            if self.center.mean.shape[0] != self.lda.projection.shape[0]:
                raise ContractError(
                    f"center dim {self.center.mean.shape[0]} != LDA input dim "
                    f"{self.lda.projection.shape[0]}"
                )


def fit_center(s: EmbeddingSet) -> CenterStage:
    """Arithmetic mean of the set's vectors."""
    if len(s) == 0:
        raise ContractError("cannot fit centering on an empty set")
    return CenterStage(s.vectors.astype(np.float64).mean(axis=0))


def fit_lda(s: EmbeddingSet, k: int | None = None) -> LdaStage:
    """Fit an LDA projection from the set's speaker labels.

    Solves the generalized eigenproblem of between-class scatter against
    ridge-regularized pooled within-class scatter (ridge 1e-6 * trace / D)
    and keeps the top-k eigenvectors, unit-normalized, with the sign fixed
    so each column's first nonzero component is positive.
    """
    if len(s) == 0:
        raise ContractError("cannot fit LDA on an empty set")
    labels = np.asarray(s.label_array())
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ContractError(f"LDA needs at least 2 classes, got {len(classes)}")
    d = s.dim
    max_k = min(d, len(classes) - 1)
    if k is None:
        k = max_k
    if not 1 <= k <= max_k:
        raise ContractError(f"k must be in [1, {max_k}], got {k}")

    x = s.vectors.astype(np.float64)
    mean = x.mean(axis=0)
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for c in classes:
        xc = x[labels == c]
        mc = xc.mean(axis=0)
        diff = xc - mc
        sw += diff.T @ diff
        gap = mc - mean
        sb += len(xc) * np.outer(gap, gap)

    eps = 1e-6 * np.trace(sw) / d
    if eps <= 0:
        eps = 1e-12  # degenerate within-class scatter: any positive ridge works
    vals, vecs = scipy.linalg.eigh(sb, sw + eps * np.eye(d))
    order = np.argsort(vals)[::-1][:k]
    proj = vecs[:, order]
    proj /= np.linalg.norm(proj, axis=0, keepdims=True)
    for j in range(proj.shape[1]):
        col = proj[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            proj[:, j] = -col
    return LdaStage(proj)


def length_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ContractError("cannot length-normalize a zero vector")
    return v / n


def apply_pipeline(p: Pipeline, s: EmbeddingSet) -> EmbeddingSet:
    """Apply present stages in order center -> LDA -> length-norm."""
    x = s.vectors.astype(np.float64)
    if p.center is not None:
        if p.center.mean.shape[0] != x.shape[1]:
            raise ContractError(
                f"center dim {p.center.mean.shape[0]} != embedding dim {x.shape[1]}"
            )
        x = x - p.center.mean.astype(np.float64)
    if p.lda is not None:
        if p.lda.projection.shape[0] != x.shape[1]:
            raise ContractError(
                f"LDA input dim {p.lda.projection.shape[0]} != embedding dim {x.shape[1]}"
            )
        x = x @ p.lda.projection.astype(np.float64)
    if p.length_norm:
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise ContractError("cannot length-normalize a zero vector")
        x = x / norms[:, None]
    return EmbeddingSet(s.ids, x.astype(np.float32), s.labels)


def _write_mat(f, m: np.ndarray) -> None:
    f.write(struct.pack("<II", m.shape[0], m.shape[1]))
    f.write(m.astype("<f4", copy=False).tobytes())


def save_pipeline(p: Pipeline, path) -> None:
    with open(path, "wb") as f:
        f.write(PIPELINE_MAGIC)
        f.write(struct.pack("<H", PIPELINE_VERSION))
        f.write(struct.pack("<B", p.center is not None))
        if p.center is not None:
            _write_mat(f, p.center.mean[None, :])
        f.write(struct.pack("<B", p.lda is not None))
        if p.lda is not None:
            _write_mat(f, p.lda.projection)
        f.write(struct.pack("<B", bool(p.length_norm)))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"{self.path}: truncated pipeline file")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def mat(self) -> np.ndarray:
        rows, cols = struct.unpack("<II", self.take(8))
        raw = self.take(4 * rows * cols)
        return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()


def load_pipeline(path) -> Pipeline:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4) != PIPELINE_MAGIC:
        raise FormatError(f"{path}: not a pipeline file")
    (version,) = struct.unpack("<H", r.take(2))
    if version != PIPELINE_VERSION:
        raise FormatError(f"{path}: unsupported pipeline version {version}")
    center = None
    if r.take(1)[0]:
        center = CenterStage(r.mat()[0])
    lda = None
    if r.take(1)[0]:
        lda = LdaStage(r.mat())
    length_norm = bool(r.take(1)[0])
    if r.off != len(data):
        raise FormatError(f"{path}: {len(data) - r.off} trailing bytes")
    return Pipeline(center=center, lda=lda, length_norm=length_norm)
