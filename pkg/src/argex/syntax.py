"""Syntax-attending Transformer.

In every layer, head slot 0 is a dependency head: its keys and values are
restricted to a token's parse neighbors (head and children), and its output
is ``W_2 [W_1 u_t ; a_t]`` so the token's own state enters through the
concatenation rather than through attention.  The remaining heads are
ordinary full self-attention over non-padding tokens.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .layers import FeedForward, LayerNorm, Linear, MultiHeadAttention, attend, xavier


def neighbor_sets(dep_heads: Sequence) -> list:
    """nbr(i) = {head(i)} | children(i), with {i} as fallback for an isolated token.

    ``dep_heads`` holds either one head index per token (-1 for the root) or,
    for subword pieces, a collection of head indices per token.
    """
    n = len(dep_heads)
    nbrs = [set() for _ in range(n)]
    for i, h in enumerate(dep_heads):
        heads = (h,) if isinstance(h, (int, np.integer)) else tuple(h)
        for j in heads:
            if j is None or j < 0:
                continue
            nbrs[i].add(int(j))
            nbrs[int(j)].add(i)
    return [frozenset(s) if s else frozenset({i}) for i, s in enumerate(nbrs)]


def neighbor_mask(nbrs, length=None) -> np.ndarray:
    """(L, L) boolean mask; padding rows (beyond len(nbrs)) attend to themselves."""
    n = len(nbrs)
    L = n if length is None else length
    mask = np.zeros((L, L), dtype=bool)
    for i, s in enumerate(nbrs):
        assert s, f"token {i} has an empty neighbor set"
        mask[i, list(s)] = True
    for i in range(n, L):
        mask[i, i] = True
    return mask


@dataclass
class SyntaxConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    use_dhead: bool = True
    use_ffn: bool = True


class SyntaxLayer:
    def __init__(self, store, name, cfg: SyntaxConfig, rng):
        d, N = cfg.d_model, cfg.n_heads
        self.cfg = cfg
        self.d_head = d // N
        dh = self.d_head
        n_std = N - 1 if cfg.use_dhead else N
        self.n_std = n_std
        if cfg.use_dhead:
            self.W_Q = store.add(f"{name}.dhead.W_Q", xavier(rng, d, dh))
            self.W_K = store.add(f"{name}.dhead.W_K", xavier(rng, d, dh))
            self.W_V = store.add(f"{name}.dhead.W_V", xavier(rng, d, dh))
            self.W_1 = store.add(f"{name}.dhead.W_1", xavier(rng, d, dh))
            self.W_2 = store.add(f"{name}.dhead.W_2", xavier(rng, 2 * dh, dh))
        if n_std:
            self.std = MultiHeadAttention(store, f"{name}.attn", d, n_std, dh, rng)
        self.out = Linear(store, f"{name}.attn_out", d, d, rng)
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        if cfg.use_ffn:
            self.ff = FeedForward(store, f"{name}.ff", d, cfg.d_ff, rng)
            self.ln2 = LayerNorm(store, f"{name}.ln2", d)

    def d_head_forward(self, U: T.Tensor, nbr_mask):
        """Returns (H, attention probabilities) for the dependency head."""
        q = T.matmul(U, self.W_Q)
        k = T.matmul(U, self.W_K)
        v = T.matmul(U, self.W_V)
        A, probs = attend(q, k, v, nbr_mask)
        own = T.matmul(U, self.W_1)
        H = T.matmul(T.concat([own, A], axis=-1), self.W_2)
        return H, probs

    def __call__(self, U, key_mask, nbr_mask, train=False, rng=None):
        parts = []
        probs = None
        if self.cfg.use_dhead:
            H, probs = self.d_head_forward(U, nbr_mask)
            parts.append(H)
        if self.n_std:
            parts.append(self.std(U, key_mask))
        heads = T.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
        a = self.out(heads)
        x = self.ln1(T.add(U, T.dropout(a, self.cfg.dropout, train, rng)))
        if self.cfg.use_ffn:
            f = self.ff(x)
            x = self.ln2(T.add(x, T.dropout(f, self.cfg.dropout, train, rng)))
        return x, probs


class SyntaxTransformer:
    def __init__(self, store: T.ParameterStore, cfg: SyntaxConfig, rng, prefix="syntax"):
        if cfg.d_model % cfg.n_heads:
            raise ValueError(f"d_model={cfg.d_model} not divisible by n_heads={cfg.n_heads}")
        self.cfg = cfg
        self.layers = [SyntaxLayer(store, f"{prefix}.layer{i}", cfg, rng) for i in range(cfg.n_layers)]
        self.record_attention = False
        self.last_attention = []

    def __call__(self, U0: T.Tensor, key_mask, nbr_mask, train=False, rng=None) -> T.Tensor:
        """U0 (B, T, d_model); key_mask (B, T); nbr_mask (B, T, T) -> U^L."""
        U = U0
        captured = []
        for layer in self.layers:
            U, probs = layer(U, key_mask, nbr_mask, train, rng)
            if self.record_attention and probs is not None:
                captured.append(probs.data.copy())
        if self.record_attention:
            self.last_attention = captured
        return U

    def dump_attention(self, path, lengths=None):
        """Write the recorded d-head attention matrices (per layer, per sentence) as JSON."""
        layers = []
        for probs in self.last_attention:
            mats = []
            for b in range(probs.shape[0]):
                n = probs.shape[1] if lengths is None else lengths[b]
                mats.append(probs[b, :n, :n].tolist())
            layers.append(mats)
        with open(path, "w") as f:
            json.dump({"layers": layers}, f)
