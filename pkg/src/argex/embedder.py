"""Trainable contextual token embedder and its masked-token pretraining loop.

The embedder plays the part of a pretrained encoder: token, position and
trigger-segment embeddings are summed and passed through a small Transformer
stack.  Anything with the same interface (token ids + trigger span in,
T x d_tok out) can replace it.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, SequenceLengthError, SpanError, TrainingError
from .layers import LayerNorm, Linear, TransformerBlock

log = logging.getLogger(__name__)

PAD, UNK, MASK, CLS, SEP = "[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, MASK, CLS, SEP)


class Vocabulary:
    """Token <-> id map; the file form is one token per line, line number = id."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigError("vocabulary contains duplicate tokens")
        for s in SPECIALS:
            if s not in self.stoi:
                raise ConfigError(f"vocabulary lacks special token {s}")

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count=1) -> "Vocabulary":
        counts = {}
        for toks in sentences:
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
        words = [t for t, c in counts.items() if c >= min_count and t not in SPECIALS]
        return cls(list(SPECIALS) + words)

    def __len__(self):
        return len(self.itos)

    @property
    def pad_id(self):
        return self.stoi[PAD]

    @property
    def unk_id(self):
        return self.stoi[UNK]

    @property
    def mask_id(self):
        return self.stoi[MASK]

    @property
    def cls_id(self):
        return self.stoi[CLS]

    @property
    def sep_id(self):
        return self.stoi[SEP]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.unk_id
        return np.array([self.stoi.get(t, unk) for t in tokens], dtype=np.int64)

    def save(self, path):
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(lines)


@dataclass
class EmbedderConfig:
    vocab_size: int
    d_tok: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_position: int = 64
    dropout: float = 0.1
    pad_token_id: int = 0
    unk_token_id: int = 1
    mask_token_id: int = 2

    def validate(self):
        if self.d_tok % self.n_heads:
            raise ConfigError(f"d_tok={self.d_tok} not divisible by n_heads={self.n_heads}")
        ids = (self.pad_token_id, self.unk_token_id, self.mask_token_id)
        if len(set(ids)) != 3 or max(ids) >= self.vocab_size:
            raise ConfigError("special token ids must be distinct and < vocab_size")


class TokenEmbedder:
    def __init__(self, store: T.ParameterStore, config: EmbedderConfig, rng, prefix="embedder"):
        config.validate()
        self.config = config
        self.prefix = prefix
        d = config.d_tok
        self.tok = store.add(f"{prefix}.tok", rng.normal(0, 0.1, size=(config.vocab_size, d)))
        self.pos = store.add(f"{prefix}.pos", rng.normal(0, 0.1, size=(config.max_position, d)))
        self.seg = store.add(f"{prefix}.seg", rng.normal(0, 0.1, size=(2, d)))
        self.ln = LayerNorm(store, f"{prefix}.ln", d)
        self.blocks = [
            TransformerBlock(store, f"{prefix}.layer{i}", d, config.n_heads, config.d_ff, config.dropout, rng)
            for i in range(config.n_layers)
        ]

    def __call__(self, token_ids, segment_ids, key_mask, train=False, rng=None) -> T.Tensor:
        """Batched forward: (B, T) ids -> (B, T, d_tok)."""
        token_ids = np.asarray(token_ids)
        L = token_ids.shape[-1]
        if L > self.config.max_position:
            raise SequenceLengthError(f"sequence length {L} exceeds max_position {self.config.max_position}")
        x = T.embedding_lookup(self.tok, token_ids)
        x = T.add(x, T.embedding_lookup(self.pos, np.arange(L)))
        x = T.add(x, T.embedding_lookup(self.seg, np.asarray(segment_ids)))
        x = T.dropout(self.ln(x), self.config.dropout, train, rng)
        for block in self.blocks:
            x = block(x, key_mask, train, rng)
        return x

    def embed_sequence(self, token_ids, trigger_span) -> T.Tensor:
        """Single sentence, eval mode: ids of length T and an inclusive trigger span -> (T, d_tok)."""
        ids = np.asarray(token_ids, dtype=np.int64)
        L = len(ids)
        if L > self.config.max_position:
            raise SequenceLengthError(f"sequence length {L} exceeds max_position {self.config.max_position}")
        a, b = trigger_span
        if not 0 <= a <= b < L:
            raise SpanError(f"trigger span {tuple(trigger_span)} outside [0, {L})")
        seg = segment_ids(L, a, b)
        out = self(ids[None], seg[None], np.ones((1, L), dtype=bool))
        return T.reshape(out, (L, self.config.d_tok))


def segment_ids(length, start, end) -> np.ndarray:
    seg = np.zeros(length, dtype=np.int64)
    seg[start : end + 1] = 1
    return seg


# ---------------------------------------------------------------------------
# masked-token pretraining


def mask_tokens(ids: np.ndarray, valid: np.ndarray, vocab_size: int, mask_id: int, rng,
                n_special: int = len(SPECIALS), rate=0.15):
    """Select ``rate`` of valid positions; 80% -> mask, 10% -> random token, 10% kept.

    Returns (corrupted ids, selection mask).
    """
    selected = (rng.random(ids.shape) < rate) & valid
    if not selected.any():
        candidates = np.flatnonzero(valid)
        selected.flat[candidates[int(rng.integers(len(candidates)))]] = True
    action = rng.random(ids.shape)
    corrupted = ids.copy()
    to_mask = selected & (action < 0.8)
    to_rand = selected & (action >= 0.8) & (action < 0.9)
    corrupted[to_mask] = mask_id
    corrupted[to_rand] = rng.integers(n_special, vocab_size, size=int(to_rand.sum()))
    return corrupted, selected


@dataclass
class PretrainResult:
    losses: list
    steps: int
    lr: float
    next_sentence: bool

    def to_json(self):
        d = asdict(self)
        d["objectives"] = ["masked_token"] + (["next_sentence"] if self.next_sentence else [])
        return d


class PretrainHeads:
    def __init__(self, store, embedder: TokenEmbedder, rng, next_sentence=False):
        d = embedder.config.d_tok
        self.mlm = Linear(store, "mlm.out", d, embedder.config.vocab_size, rng)
        self.nsp = Linear(store, "nsp.out", d, 1, rng) if next_sentence else None


def pretrain_mlm(embedder: TokenEmbedder, store: T.ParameterStore, vocab: Vocabulary,
                 sentences: Sequence[Sequence[str]], steps: int, lr: float = 1e-3,
                 batch_size: int = 16, seed: int = 0, next_sentence: bool = False,
                 heads: PretrainHeads | None = None) -> PretrainResult:
    """Continue training the embedder on unlabeled sentences with the masked-token loss.

    Only parameters under the embedder prefix and the pretraining heads are
    updated; segment ids stay 0 except for the second sentence of a
    next-sentence pair when that objective is enabled.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    sentences = [list(s) for s in sentences if len(s)]
    if not sentences:
        raise TrainingError("pretraining corpus is empty")
    rng = np.random.default_rng(seed)
    if heads is None:
        heads = PretrainHeads(store, embedder, rng, next_sentence)
    prefixes = (embedder.prefix + ".", "mlm.", "nsp.")
    opt = T.Adam(store, lr=lr, only=lambda n: n.startswith(prefixes))
    maxlen = embedder.config.max_position
    losses = []
    for step in range(steps):
        idx = rng.integers(len(sentences), size=batch_size)
        if next_sentence:
            ids, seg, nsp_labels = _sentence_pairs(sentences, idx, vocab, rng, maxlen)
        else:
            ids = [vocab.encode(sentences[i])[:maxlen] for i in idx]
            seg = [np.zeros(len(x), dtype=np.int64) for x in ids]
            nsp_labels = None
        L = max(len(x) for x in ids)
        batch = np.full((batch_size, L), vocab.pad_id, dtype=np.int64)
        segs = np.zeros((batch_size, L), dtype=np.int64)
        key_mask = np.zeros((batch_size, L), dtype=bool)
        for i, (x, s) in enumerate(zip(ids, seg)):
            batch[i, : len(x)] = x
            segs[i, : len(s)] = s
            key_mask[i, : len(x)] = True
        maskable = key_mask & (batch != vocab.cls_id) & (batch != vocab.sep_id)
        corrupted, selected = mask_tokens(batch, maskable, len(vocab), vocab.mask_id, rng)
        hidden = embedder(corrupted, segs, key_mask, train=True, rng=rng)
        logits = heads.mlm(hidden)
        loss = T.cross_entropy(logits, batch, selected.astype(float), reduction="mean")
        mlm_value = float(loss.data)
        if nsp_labels is not None:
            first = T.slice_axis(hidden, 1, 0, 1)
            nsp_logit = T.reshape(heads.nsp(first), (batch_size,))
            loss = T.add(loss, T.binary_cross_entropy_with_logits(nsp_logit, nsp_labels, reduction="mean"))
        store.zero_grad()
        T.backward(loss)
        opt.step()
        losses.append(mlm_value)
        if (step + 1) % 50 == 0:
            log.info("pretrain step %d mlm loss %.4f", step + 1, np.mean(losses[-50:]))
    return PretrainResult(losses, steps, lr, next_sentence)


def _sentence_pairs(sentences, idx, vocab, rng, maxlen):
    ids, segs, labels = [], [], []
    for i in idx:
        i = int(i)
        is_next = rng.random() < 0.5 and i + 1 < len(sentences)
        j = i + 1 if is_next else int(rng.integers(len(sentences)))
        a = vocab.encode(sentences[i])
        b = vocab.encode(sentences[j])
        budget = maxlen - 2
        a = a[: max(1, budget // 2)]
        b = b[: budget - len(a)]
        x = np.concatenate([[vocab.cls_id], a, [vocab.sep_id], b])
        s = np.concatenate([np.zeros(len(a) + 2, dtype=np.int64), np.ones(len(b), dtype=np.int64)])
        ids.append(x)
        segs.append(s)
        labels.append(1.0 if is_next else 0.0)
    return ids, segs, np.array(labels)
