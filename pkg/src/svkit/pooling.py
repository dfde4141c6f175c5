"""Frame-to-utterance pooling operators.

Forward-only numerics on T x D frame representations: plain mean/std
statistics pooling, attentive statistics pooling, precision-weighted
Bayesian (xi-style) pooling, and a multi-head factorized attention head
over a stack of encoder layers.  All operators are permutation-invariant
over frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import ContractError

STD_FLOOR = 1e-7


def _as_frames(frames) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"frames must be T x D, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ContractError("need at least one frame")
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite frame values")
    return x


def tstp(frames) -> np.ndarray:
    """Temporal statistics pooling: concat of per-channel mean and std (2D)."""
    x = _as_frames(frames)
    mean = x.mean(axis=0)
    var = (x * x).mean(axis=0) - mean * mean  # population variance
    std = np.maximum(np.sqrt(np.maximum(var, 0.0)), STD_FLOOR)
    return np.concatenate([mean, std])


@dataclass(frozen=True)
class AspParams:
    """Single-head attention: D x H hidden projection, H score projection."""

    hidden: np.ndarray  # (D, H)
    score: np.ndarray  # (H,)

    def __post_init__(self):
        object.__setattr__(self, "hidden", np.asarray(self.hidden, dtype=np.float64))
        object.__setattr__(self, "score", np.asarray(self.score, dtype=np.float64).reshape(-1))
        if self.hidden.ndim != 2 or self.hidden.shape[1] != self.score.shape[0]:
            raise ContractError(
                f"hidden {self.hidden.shape} incompatible with score {self.score.shape}"
            )
        if not (np.all(np.isfinite(self.hidden)) and np.all(np.isfinite(self.score))):
            raise ContractError("non-finite attention parameters")

    @classmethod
    def random(cls, in_dim: int, hidden_dim: int, rng: np.random.Generator) -> "AspParams":
        scale = 1.0 / np.sqrt(in_dim)
        return cls(
            hidden=rng.normal(0.0, scale, size=(in_dim, hidden_dim)),
            score=rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), size=hidden_dim),
        )


def asp(frames, params: AspParams) -> np.ndarray:
    """Attentive statistics pooling: attention-weighted mean and std (2D).

    Frame scores vT tanh(x W) feed a softmax over frames; the weighted std
    uses sum(a * x^2) - mu^2 with the same floor as tstp.
    """
    x = _as_frames(frames)
    if x.shape[1] != params.hidden.shape[0]:
        raise ContractError(
            f"frame dim {x.shape[1]} != attention input dim {params.hidden.shape[0]}"
        )
    scores = np.tanh(x @ params.hidden) @ params.score
    alpha = softmax(scores)
    mean = alpha @ x
    second = alpha @ (x * x)
    std = np.maximum(np.sqrt(np.maximum(second - mean * mean, 0.0)), STD_FLOOR)
    return np.concatenate([mean, std])


@dataclass(frozen=True)
class XiPrior:
    """Diagonal Gaussian prior: mean and log precision per dimension."""

    prior_mean: np.ndarray
    prior_log_precision: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prior_mean", np.asarray(self.prior_mean, dtype=np.float64))
        object.__setattr__(
            self, "prior_log_precision", np.asarray(self.prior_log_precision, dtype=np.float64)
        )
        if self.prior_mean.shape != self.prior_log_precision.shape or self.prior_mean.ndim != 1:
            raise ContractError("prior mean and log precision must be matching D-vectors")
        if not (
            np.all(np.isfinite(self.prior_mean)) and np.all(np.isfinite(self.prior_log_precision))
        ):
            raise ContractError("non-finite prior parameters")

    @classmethod
    def flat(cls, dim: int, log_precision: float = -60.0) -> "XiPrior":
        """Negligible-precision prior: posterior reduces to frame weighting."""
        return cls(np.zeros(dim), np.full(dim, log_precision))


@dataclass(frozen=True)
class XiFrameStats:
    """Per-frame point estimates z_t and diagonal log precisions, both T x D."""

    point_estimates: np.ndarray
    log_precisions: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "point_estimates", np.asarray(self.point_estimates, dtype=np.float64)
        )
        object.__setattr__(
            self, "log_precisions", np.asarray(self.log_precisions, dtype=np.float64)
        )
        if (
            self.point_estimates.ndim != 2
            or self.point_estimates.shape != self.log_precisions.shape
        ):
            raise ContractError(
                f"point estimates {self.point_estimates.shape} and log precisions "
                f"{self.log_precisions.shape} must be matching T x D"
            )
        if self.point_estimates.shape[0] < 1:
            raise ContractError("need at least one frame")
        if not (
            np.all(np.isfinite(self.point_estimates)) and np.all(np.isfinite(self.log_precisions))
        ):
            raise ContractError("non-finite frame statistics")


def xi_pool(stats: XiFrameStats, prior: XiPrior) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian posterior over the utterance mean.

    Per dimension, frames and prior are combined with precision weights
    exp(l) / (exp(p) + sum exp(l)); the posterior log precision is
    ln(exp(p) + sum exp(l)).  Computed via log-sum-exp so log precisions at
    +-60 stay finite.  Returns (posterior_mean, posterior_log_precision).
    """
    if stats.point_estimates.shape[1] != prior.prior_mean.shape[0]:
        raise ContractError(
            f"frame dim {stats.point_estimates.shape[1]} != prior dim {prior.prior_mean.shape[0]}"
        )
    log_prec = np.vstack([prior.prior_log_precision[None, :], stats.log_precisions])
    locs = np.vstack([prior.prior_mean[None, :], stats.point_estimates])
    log_w = log_softmax(log_prec, axis=0)
    posterior_mean = (np.exp(log_w) * locs).sum(axis=0)
    shift = log_prec.max(axis=0)
    posterior_log_precision = shift + np.log(np.exp(log_prec - shift).sum(axis=0))
    return posterior_mean, posterior_log_precision


@dataclass(frozen=True)
class MhfaParams:
    """Multi-head factorized attention over an L-layer stack.

    Layer softmax weights select key/value streams; a shared key projection
    and a shared value projection (sliced per head) feed H attention heads
    whose contexts are concatenated and projected to the embedding size.
    """

    layer_weights_k: np.ndarray  # (L,)
    layer_weights_v: np.ndarray  # (L,)
    key_proj: np.ndarray  # (D, Dk)
    value_proj: np.ndarray  # (D, H * Dv)
    queries: np.ndarray  # (H, Dk)
    out_proj: np.ndarray  # (H * Dv, E)

    def __post_init__(self):
        for name in ("layer_weights_k", "layer_weights_v", "key_proj", "value_proj", "queries", "out_proj"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"non-finite values in {name}")
        if self.layer_weights_k.shape != self.layer_weights_v.shape or self.layer_weights_k.ndim != 1:
            raise ContractError("layer weights must be matching L-vectors")
        h, dk = self.queries.shape
        if h < 1:
            raise ContractError("need at least one head")
        if self.key_proj.shape[1] != dk:
            raise ContractError(
                f"key projection {self.key_proj.shape} incompatible with queries {self.queries.shape}"
            )
        if self.key_proj.shape[0] != self.value_proj.shape[0]:
            raise ContractError("key and value projections disagree on input dim")
        if self.value_proj.shape[1] % h != 0:
            raise ContractError(
                f"value projection width {self.value_proj.shape[1]} not divisible by {h} heads"
            )
        if self.out_proj.shape[0] != self.value_proj.shape[1]:
            raise ContractError("output projection rows must equal value projection width")

    @property
    def num_layers(self) -> int:
        return self.layer_weights_k.shape[0]

    @property
    def num_heads(self) -> int:
        return self.queries.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.out_proj.shape[1]

    @classmethod
    def random(
        cls,
        num_layers: int,
        in_dim: int,
        rng: np.random.Generator,
        num_heads: int = 64,
        key_dim: int = 64,
        embed_dim: int = 256,
        head_dim: int | None = None,
    ) -> "MhfaParams":
        if head_dim is None:
            if embed_dim % num_heads:
                raise ContractError(
                    f"embed_dim {embed_dim} not divisible by {num_heads} heads; pass head_dim"
                )
            head_dim = embed_dim // num_heads
        s = 1.0 / np.sqrt(in_dim)
        return cls(
            layer_weights_k=rng.normal(size=num_layers),
            layer_weights_v=rng.normal(size=num_layers),
            key_proj=rng.normal(0.0, s, size=(in_dim, key_dim)),
            value_proj=rng.normal(0.0, s, size=(in_dim, num_heads * head_dim)),
            queries=rng.normal(0.0, 1.0 / np.sqrt(key_dim), size=(num_heads, key_dim)),
            out_proj=rng.normal(
                0.0, 1.0 / np.sqrt(num_heads * head_dim), size=(num_heads * head_dim, embed_dim)
            ),
        )


def mhfa(stack, params: MhfaParams) -> np.ndarray:
    """Pool an L x T x D layer stack into an E-dim embedding."""
    x = np.asarray(stack, dtype=np.float64)
    if x.ndim != 3:
        raise ContractError(f"stack must be L x T x D, got shape {x.shape}")
    n_layers, t, d = x.shape
    if n_layers != params.num_layers:
        raise ContractError(f"stack has {n_layers} layers, params expect {params.num_layers}")
    if d != params.key_proj.shape[0]:
        raise ContractError(f"stack dim {d} != projection input dim {params.key_proj.shape[0]}")
    if t < 1:
        raise ContractError("need at least one frame")
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite stack values")

    wk = softmax(params.layer_weights_k)
    wv = softmax(params.layer_weights_v)
    k_stream = np.einsum("l,ltd->td", wk, x)
    v_stream = np.einsum("l,ltd->td", wv, x)

    keys = k_stream @ params.key_proj  # (T, Dk)
    h = params.num_heads
    values = (v_stream @ params.value_proj).reshape(t, h, -1)  # (T, H, Dv)
    alpha = softmax(keys @ params.queries.T, axis=0)  # (T, H), sums to 1 over T
    context = np.einsum("th,thd->hd", alpha, values).reshape(-1)
    return context @ params.out_proj
