"""Trigger-aware token representations.

Every token row becomes [b_t ; type embedding ; inside/outside-trigger
embedding ; max-pooled trigger embedding], then a learned linear map brings
the concatenation to the syntax Transformer width.  Each of the three
trigger blocks can be switched off for ablations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import SchemaError
from .layers import Linear


@dataclass
class TriggerEncoderConfig:
    n_types: int
    d_tok: int = 64
    d_type: int = 50
    d_ind: int = 50
    d_model: int = 64
    use_indicator: bool = True
    use_type: bool = True
    use_trigger_embedding: bool = True
    projection_bias: bool = True

    @property
    def d_concat(self) -> int:
        return (self.d_tok
                + (self.d_type if self.use_type else 0)
                + (self.d_ind if self.use_indicator else 0)
                + (self.d_tok if self.use_trigger_embedding else 0))


@dataclass
class TriggerAwareSequence:
    C: T.Tensor  # (B, T, d_c)
    trigger_mask: np.ndarray  # (B, T)
    type_ids: np.ndarray  # (B,)


class TriggerEncoder:
    def __init__(self, store: T.ParameterStore, config: TriggerEncoderConfig, rng, prefix="trigger"):
        self.config = config
        self.type_table = (store.add(f"{prefix}.type", rng.normal(0, 0.1, size=(config.n_types, config.d_type)))
                           if config.use_type else None)
        self.ind_table = (store.add(f"{prefix}.indicator", rng.normal(0, 0.1, size=(2, config.d_ind)))
                          if config.use_indicator else None)
        self.proj = Linear(store, f"{prefix}.proj", config.d_concat, config.d_model, rng,
                           bias=config.projection_bias)

    def encode(self, B: T.Tensor, trigger_mask, type_ids) -> TriggerAwareSequence:
        """``B`` (batch, T, d_tok); ``trigger_mask`` (batch, T) bool; ``type_ids`` (batch,)."""
        trigger_mask = np.asarray(trigger_mask, dtype=bool)
        type_ids = np.asarray(type_ids, dtype=np.int64)
        n, L, _ = B.shape
        if type_ids.size and (type_ids.min() < 0 or type_ids.max() >= self.config.n_types):
            raise SchemaError(f"event type id out of range: {type_ids.tolist()}")
        blocks = [B]
        if self.type_table is not None:
            p = T.reshape(T.embedding_lookup(self.type_table, type_ids), (n, 1, self.config.d_type))
            blocks.append(T.expand(p, (n, L, self.config.d_type)))
        if self.ind_table is not None:
            blocks.append(T.embedding_lookup(self.ind_table, trigger_mask.astype(np.int64)))
        if self.config.use_trigger_embedding:
            h = T.max_pool_over_positions(B, trigger_mask[:, None, :])  # (n, 1, d_tok)
            blocks.append(T.expand(h, (n, L, B.shape[-1])))
        C = T.concat(blocks, axis=-1) if len(blocks) > 1 else B
        return TriggerAwareSequence(C, trigger_mask, type_ids)

    def project(self, C) -> T.Tensor:
        if isinstance(C, TriggerAwareSequence):
            C = C.C
        return self.proj(C)

    def block_slices(self) -> dict:
        """Column ranges of each block inside C, for inspection."""
        cfg = self.config
        out, start = {}, 0
        for name, width, on in (("token", cfg.d_tok, True), ("type", cfg.d_type, cfg.use_type),
                                ("indicator", cfg.d_ind, cfg.use_indicator),
                                ("trigger", cfg.d_tok, cfg.use_trigger_embedding)):
            if on:
                out[name] = slice(start, start + width)
                start += width
        return out
