"""Training-recipe math: additive angular margin softmax (forward and
analytic gradient), the margin ramp, the warmup/exponential-decay learning
rate curve, and random segment cropping.

Pure functions only; no optimizer or parameter state lives here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import ContractError

_SINE_FLOOR = 1e-12  # keeps the margin-derivative finite at cos = +-1


@dataclass(frozen=True)
class AamConfig:
    scale: float = 32.0
    margin: float = 0.0
    easy_margin: bool = False

    def __post_init__(self):
        if self.scale <= 0:
            raise ContractError(f"scale must be positive, got {self.scale}")
        if not 0 <= self.margin < math.pi / 2:
            raise ContractError(f"margin must be in [0, pi/2), got {self.margin}")


def _normalize_rows(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ContractError(f"zero-norm {what} row")
    return m / norms[:, None], norms


def _aam_pieces(embeddings, class_weights, labels, cfg: AamConfig):
    e = np.asarray(embeddings, dtype=np.float64)
    w = np.asarray(class_weights, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if e.ndim != 2 or w.ndim != 2 or e.shape[1] != w.shape[1]:
        raise ContractError(f"incompatible shapes: embeddings {e.shape}, weights {w.shape}")
    b, c = e.shape[0], w.shape[0]
    if b < 1 or c < 1:
        raise ContractError("need at least one sample and one class")
    if y.shape[0] != b:
        raise ContractError(f"{y.shape[0]} labels for {b} samples")
    if np.any(y < 0) or np.any(y >= c):
        raise ContractError(f"labels must lie in [0, {c})")

    u, e_norms = _normalize_rows(e, "embedding")
    v, w_norms = _normalize_rows(w, "class weight")
    cos = np.clip(u @ v.T, -1.0, 1.0)
    rows = np.arange(b)
    target_cos = cos[rows, y]

    cos_m, sin_m = math.cos(cfg.margin), math.sin(cfg.margin)
    sine = np.sqrt(np.maximum(1.0 - target_cos * target_cos, 0.0))
    shifted = target_cos * cos_m - sine * sin_m  # cos(theta + m)
    if cfg.easy_margin:
        ok = target_cos > 0
        fallback = target_cos
    else:
        ok = target_cos > math.cos(math.pi - cfg.margin)
        fallback = target_cos - cfg.margin * sin_m
    phi = np.where(ok, shifted, fallback)

    logits = cos.copy()
    logits[rows, y] = phi
    logits *= cfg.scale
    return u, v, e_norms, w_norms, cos, target_cos, sine, ok, logits, y, rows


def aam_forward(embeddings, class_weights, labels, cfg: AamConfig) -> tuple[float, np.ndarray]:
    """AAM-softmax loss and scaled logits.

    Rows of both matrices are L2-normalized internally; the target logit is
    cos(theta + m), replaced by cos(theta) - m*sin(m) when theta + m would
    pass pi (standard stabilization); all logits are scaled by cfg.scale.
    Returns (mean cross-entropy, B x C logits).
    """
    *_, logits, y, rows = _aam_pieces(embeddings, class_weights, labels, cfg)
    loss = float(-log_softmax(logits, axis=1)[rows, y].mean())
    return loss, logits


def aam_grad(embeddings, class_weights, labels, cfg: AamConfig) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of the AAM loss w.r.t. embeddings and class weights.

    The chain runs through the internal row normalization, so the gradients
    are w.r.t. the raw (unnormalized) inputs.
    """
    u, v, e_norms, w_norms, cos, target_cos, sine, ok, logits, y, rows = _aam_pieces(
        embeddings, class_weights, labels, cfg
    )
    b = u.shape[0]
    g = softmax(logits, axis=1)
    g[rows, y] -= 1.0
    g /= b  # dL/dlogits

    cos_m, sin_m = math.cos(cfg.margin), math.sin(cfg.margin)
    dphi = np.where(
        ok, cos_m + target_cos / np.maximum(sine, _SINE_FLOOR) * sin_m, 1.0
    )
    dcos = g * cfg.scale
    dcos[rows, y] *= dphi

    du = dcos @ v
    dv = dcos.T @ u
    # back through x -> x/|x|: (I - u u^T)/|x|
    de = (du - (du * u).sum(axis=1, keepdims=True) * u) / e_norms[:, None]
    dw = (dv - (dv * v).sum(axis=1, keepdims=True) * v) / w_norms[:, None]
    return de, dw


@dataclass(frozen=True)
class MarginSchedule:
    start_epoch: float = 20.0
    end_epoch: float = 40.0
    initial: float = 0.0
    final: float = 0.2
    lmf_margin: float = 0.5

    def __post_init__(self):
        if self.start_epoch >= self.end_epoch:
            raise ContractError("start_epoch must precede end_epoch")
        if not 0 <= self.initial <= self.final:
            raise ContractError("need 0 <= initial <= final margin")


def margin_at(epoch: float, sched: MarginSchedule = MarginSchedule(), lmf: bool = False) -> float:
    """Margin for a training epoch: flat, linear ramp, flat; lmf overrides."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    if lmf:
        return sched.lmf_margin
    if epoch <= sched.start_epoch:
        return sched.initial
    if epoch >= sched.end_epoch:
        return sched.final
    frac = (epoch - sched.start_epoch) / (sched.end_epoch - sched.start_epoch)
    return sched.initial + frac * (sched.final - sched.initial)


@dataclass(frozen=True)
class LrSchedule:
    warmup_epochs: float = 6.0
    peak: float = 0.1
    final: float = 5e-5
    total_epochs: float = 150.0

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ContractError("need 0 < warmup_epochs < total_epochs")
        if not 0 < self.final < self.peak:
            raise ContractError("need 0 < final < peak")


def lr_at(epoch: float, sched: LrSchedule = LrSchedule()) -> float:
    """Learning rate at real-valued epoch progress.

    Linear 0 -> peak over the warmup, then exponential decay hitting
    `final` exactly at total_epochs.
    """
    if not 0 <= epoch <= sched.total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    if epoch <= sched.warmup_epochs:
        return sched.peak * epoch / sched.warmup_epochs
    frac = (epoch - sched.warmup_epochs) / (sched.total_epochs - sched.warmup_epochs)
    return sched.peak * (sched.final / sched.peak) ** frac


@dataclass(frozen=True)
class CropSpec:
    """Fine-tuning segment length in seconds; short utterances wrap-pad."""

    target_len_s: float

    def __post_init__(self):
        if self.target_len_s <= 0:
            raise ContractError(f"target_len_s must be positive, got {self.target_len_s}")

    def target_frames(self, frame_shift_ms: float) -> int:
        return max(1, int(round(self.target_len_s * 1000.0 / frame_shift_ms)))


def crop_segment(
    utterance_frames: int, target_frames: int, rng: np.random.Generator
) -> tuple[int, np.ndarray]:
    """Pick a training crop: uniform random contiguous window, or wrap-pad.

    Returns (start, frame indices).  When the utterance is shorter than the
    target it is repeated from the beginning until the target length is
    reached (start is then 0).
    """
    if utterance_frames < 1 or target_frames < 1:
        raise ContractError("frame counts must be >= 1")
    if utterance_frames >= target_frames:
        start = int(rng.integers(0, utterance_frames - target_frames + 1))
        return start, np.arange(start, start + target_frames)
    return 0, np.arange(target_frames) % utterance_frames
