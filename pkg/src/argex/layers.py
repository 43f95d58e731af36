"""Standard Transformer building blocks over the autodiff core."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T


def xavier(rng, d_in, d_out):
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class Linear:
    def __init__(self, store: T.ParameterStore, name: str, d_in: int, d_out: int, rng, bias=True):
        self.W = store.add(f"{name}.W", xavier(rng, d_in, d_out))
        self.b = store.add(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.W)
        return T.add(y, self.b) if self.b is not None else y


class LayerNorm:
    def __init__(self, store, name, d):
        self.gain = store.add(f"{name}.gain", np.ones(d))
        self.bias = store.add(f"{name}.bias", np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)


def split_heads(x: T.Tensor, n_heads: int) -> T.Tensor:
    B, L, d = x.shape
    return T.transpose(T.reshape(x, (B, L, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: T.Tensor) -> T.Tensor:
    B, H, L, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, L, H * dh))


def attend(q, k, v, mask):
    """Scaled dot-product attention; returns (context, probabilities)."""
    dh = q.shape[-1]
    kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = T.scale(T.matmul(q, kt), 1.0 / math.sqrt(dh))
    p = T.masked_softmax(scores, mask)
    return T.matmul(p, v), p


class MultiHeadAttention:
    """Full self-attention over non-padding keys, ``n_heads`` heads of width ``d_head``."""

    def __init__(self, store, name, d_model, n_heads, d_head, rng):
        self.n_heads = n_heads
        width = n_heads * d_head
        self.q = Linear(store, f"{name}.q", d_model, width, rng)
        self.k = Linear(store, f"{name}.k", d_model, width, rng)
        self.v = Linear(store, f"{name}.v", d_model, width, rng)

    def __call__(self, x, key_mask):
        """``key_mask`` (B, T) marks real tokens; returns merged heads (B, T, width)."""
        h = self.n_heads
        q, k, v = (split_heads(f(x), h) for f in (self.q, self.k, self.v))
        mask = key_mask[:, None, None, :]
        ctx, _ = attend(q, k, v, mask)
        return merge_heads(ctx)


class FeedForward:
    def __init__(self, store, name, d_model, d_ff, rng):
        self.fc1 = Linear(store, f"{name}.fc1", d_model, d_ff, rng)
        self.fc2 = Linear(store, f"{name}.fc2", d_ff, d_model, rng)

    def __call__(self, x):
        return self.fc2(T.relu(self.fc1(x)))


class TransformerBlock:
    """Post-norm encoder block: x = LN(x + Attn(x)); x = LN(x + FF(x))."""

    def __init__(self, store, name, d_model, n_heads, d_ff, dropout, rng):
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_model, n_heads, d_model // n_heads, rng)
        self.out = Linear(store, f"{name}.attn_out", d_model, d_model, rng)
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model)
        self.ff = FeedForward(store, f"{name}.ff", d_model, d_ff, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model)
        self.dropout = dropout

    def __call__(self, x, key_mask, train=False, rng=None):
        a = self.out(self.attn(x, key_mask))
        x = self.ln1(T.add(x, T.dropout(a, self.dropout, train, rng)))
        f = self.ff(x)
        return self.ln2(T.add(x, T.dropout(f, self.dropout, train, rng)))
