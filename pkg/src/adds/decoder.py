"""Dual-modal decoder blocks, the stacked decoder, and the shared class head.

Each dual-modal block runs the usual text-queries-image cross-attention and
feed-forward path, then a second cross-attention in which the visual tokens
query the text-refined summary; the refreshed visual tokens become the
key/value input of the next block. The baseline block variant (for ablation)
keeps only the first cross-attention path and passes keys/values through
untouched.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError
from .tensor import (
    Tensor,
    add,
    add_rowvec,
    dropout,
    feed_forward,
    layer_norm,
    matmul,
    multi_head_attention,
    param,
    sigmoid,
)

LAYER_NORM_EPS = 1e-5


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    def tensors(self):
        return [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)]


@dataclass
class FeedForwardParams:
    w_inner: Tensor  # e -> h
    b_inner: Tensor
    w_outer: Tensor  # h -> e
    b_outer: Tensor

    def tensors(self):
        return [
            ("w_inner", self.w_inner),
            ("b_inner", self.b_inner),
            ("w_outer", self.w_outer),
            ("b_outer", self.b_outer),
        ]


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    def tensors(self):
        return [("gain", self.gain), ("bias", self.bias)]


# the five normalization sites of a block, in forward order
NORM_SITES = ("q_pre", "q_attn", "q_ffn", "q_out", "v_out")


@dataclass
class DecoderBlockParams:
    attn_text: AttentionParams  # textual queries over visual keys/values
    attn_visual: AttentionParams  # visual queries over the refined textual summary
    ffn: FeedForwardParams
    norms: dict = field(default_factory=dict)  # site name -> LayerNormParams
    dropout_rate: float = 0.1

    def tensors(self):
        out = []
        for prefix, group in (("attn_text", self.attn_text),
                              ("attn_visual", self.attn_visual),
                              ("ffn", self.ffn)):
            out.extend((f"{prefix}.{n}", t) for n, t in group.tensors())
        for site in NORM_SITES:
            out.extend((f"norm.{site}.{n}", t) for n, t in self.norms[site].tensors())
        return out


@dataclass
class ClassifierHead:
    """One weight vector and bias shared across every label's query embedding."""

    w: Tensor  # e x 1
    b: Tensor  # 1 x 1

    def tensors(self):
        return [("w", self.w), ("b", self.b)]


@dataclass
class DecoderStack:
    blocks: list[DecoderBlockParams]
    kind: str  # "dual_modal" | "baseline"
    embed_dim: int
    heads: int

    def tensors(self):
        out = []
        for i, blk in enumerate(self.blocks):
            out.extend((f"block{i}.{n}", t) for n, t in blk.tensors())
        return out


# ---------------------------------------------------------------------------
# initialization


def _glorot(stream, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return stream.uniform(-limit, limit, size=shape).astype(dtype)


def init_attention(stream, e, dtype=np.float64) -> AttentionParams:
    return AttentionParams(
        *(param(_glorot(stream, e, e, (e, e), dtype)) for _ in range(4))
    )


def init_ffn(stream, e, hidden, dtype=np.float64) -> FeedForwardParams:
    return FeedForwardParams(
        w_inner=param(_glorot(stream, e, hidden, (e, hidden), dtype)),
        b_inner=param(np.zeros((1, hidden), dtype=dtype)),
        w_outer=param(_glorot(stream, hidden, e, (hidden, e), dtype)),
        b_outer=param(np.zeros((1, e), dtype=dtype)),
    )


def init_layer_norm(e, dtype=np.float64) -> LayerNormParams:
    return LayerNormParams(
        gain=param(np.ones((1, e), dtype=dtype)),
        bias=param(np.zeros((1, e), dtype=dtype)),
    )


def init_block(stream, e, hidden, dropout_rate, dtype=np.float64) -> DecoderBlockParams:
    return DecoderBlockParams(
        attn_text=init_attention(stream, e, dtype),
        attn_visual=init_attention(stream, e, dtype),
        ffn=init_ffn(stream, e, hidden, dtype),
        norms={site: init_layer_norm(e, dtype) for site in NORM_SITES},
        dropout_rate=dropout_rate,
    )


def init_stack(
    stream,
    depth: int = 6,
    embed_dim: int = 16,
    heads: int = 2,
    kind: str = "dual_modal",
    ffn_hidden: int | None = None,
    dropout_rate: float = 0.1,
    dtype=np.float64,
) -> DecoderStack:
    if depth < 1:
        raise ConfigurationError(f"stack depth must be >= 1, got {depth}")
    if kind not in ("dual_modal", "baseline"):
        raise ConfigurationError(f"unknown block kind {kind!r}")
    if embed_dim % heads != 0:
        raise ConfigurationError(f"embed dim {embed_dim} not divisible by heads {heads}")
    hidden = ffn_hidden if ffn_hidden is not None else 4 * embed_dim
    blocks = [init_block(stream, embed_dim, hidden, dropout_rate, dtype)
              for _ in range(depth)]
    return DecoderStack(blocks=blocks, kind=kind, embed_dim=embed_dim, heads=heads)


def init_head(stream, e, dtype=np.float64) -> ClassifierHead:
    return ClassifierHead(
        w=param(_glorot(stream, e, 1, (e, 1), dtype)),
        b=param(np.zeros((1, 1), dtype=dtype)),
    )


# ---------------------------------------------------------------------------
# forward


def _check_qkv(q, k, v):
    if not (q.shape[1] == k.shape[1] == v.shape[1]):
        raise ShapeError(
            f"q/k/v column counts differ: {q.shape}, {k.shape}, {v.shape}"
        )
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"k/v row counts differ: {k.shape} vs {v.shape}")


def _query_path(q, k, v, params, heads, training, stream):
    """The shared first half of both block kinds: pre-norm, cross-attention,
    feed-forward, each with residual add-and-norm. Returns the refined summary."""
    dp = params.dropout_rate
    ln = params.norms
    q1 = layer_norm(add(q, dropout(q, dp, stream, training)),
                    ln["q_pre"].gain, ln["q_pre"].bias, LAYER_NORM_EPS)
    q2 = multi_head_attention(q1, k, v, params.attn_text, heads)
    q3 = layer_norm(add(q2, q1), ln["q_attn"].gain, ln["q_attn"].bias, LAYER_NORM_EPS)
    q4 = dropout(feed_forward(q3, params.ffn), dp, stream, training)
    q5 = layer_norm(add(q4, q3), ln["q_ffn"].gain, ln["q_ffn"].bias, LAYER_NORM_EPS)
    return q5


def dm_block_forward(q, k, v, params, heads, training=False, stream=None):
    """One dual-modal block. Returns (q_out, k_out, v_out); k_out is v_out."""
    _check_qkv(q, k, v)
    ln = params.norms
    q5 = _query_path(q, k, v, params, heads, training, stream)
    q_out = layer_norm(add(q5, q), ln["q_out"].gain, ln["q_out"].bias, LAYER_NORM_EPS)
    v1 = multi_head_attention(v, q5, q5, params.attn_visual, heads)
    v_out = layer_norm(add(v1, v), ln["v_out"].gain, ln["v_out"].bias, LAYER_NORM_EPS)
    return q_out, v_out, v_out


def baseline_block_forward(q, k, v, params, heads, training=False, stream=None):
    """Single-direction block: query path only, keys/values pass through."""
    _check_qkv(q, k, v)
    q5 = _query_path(q, k, v, params, heads, training, stream)
    return q5, k, v


def stack_forward(q0: Tensor, kv0: Tensor, stack: DecoderStack,
                  training=False, stream=None) -> Tensor:
    """Thread (Q, K, V) through all blocks, starting with K = V = kv0.

    Only the final block's query output is returned.
    """
    if not stack.blocks:
        raise ConfigurationError("decoder stack is empty")
    forward = dm_block_forward if stack.kind == "dual_modal" else baseline_block_forward
    q, k, v = q0, kv0, kv0
    for blk in stack.blocks:
        q, k, v = forward(q, k, v, blk, stack.heads, training, stream)
    return q


def classify(q_final: Tensor, head: ClassifierHead) -> Tensor:
    """Per-label probability via the shared linear map + sigmoid; returns k x 1."""
    if head.w.shape[0] != q_final.shape[1]:
        raise ShapeError(
            f"head dim {head.w.shape[0]} != embed dim {q_final.shape[1]}"
        )
    return sigmoid(add_rowvec(matmul(q_final, head.w), head.b))
