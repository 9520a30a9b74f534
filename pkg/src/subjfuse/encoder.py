"""Contextual sentence encoders producing the [CLS] representation.

Two providers share the contract "sentence in, d-dimensional vector out":

* TinyEncoder — a small trainable transformer (pre-norm blocks, GELU
  feed-forward, sinusoidal positions) followed by a multi-head
  self-attention refinement over the final hidden states; the refined
  position-0 vector goes through layer-norm and (in training) dropout.
* PrecomputedEncoder — a lookup table keyed by sentence id, loaded from a
  TSV of `sentence_id<TAB>v1,v2,...,vd` rows. Not trainable.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .nn import DimensionMismatch, NoRecordedForward

PAD_TOKEN, CLS_TOKEN, UNK_TOKEN = "<pad>", "<cls>", "<unk>"
PAD_ID, CLS_ID, UNK_ID = 0, 1, 2


class EmptyCorpus(ValueError):
    pass


class MissingEmbedding(KeyError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __post_init__(self):
        assert len(self.ids) == len(self.attention_mask)


def build_vocab(texts: list[str], max_vocab: int) -> dict[str, int]:
    """Specials plus the max_vocab most frequent lowercased whitespace
    tokens; frequency ties break lexicographically."""
    if not texts:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    freq: Counter = Counter()
    for text in texts:
        freq.update(text.lower().split())
    kept = sorted(freq, key=lambda tok: (-freq[tok], tok))[:max_vocab]
    vocab = {PAD_TOKEN: PAD_ID, CLS_TOKEN: CLS_ID, UNK_TOKEN: UNK_ID}
    for tok in kept:
        vocab[tok] = len(vocab)
    return vocab


def tokenize(text: str, vocab: dict[str, int], max_len: int) -> TokenSequence:
    ids = [CLS_ID]
    for tok in text.lower().split():
        ids.append(vocab.get(tok, UNK_ID))
    ids = ids[:max_len]
    return TokenSequence(ids=tuple(ids), attention_mask=(1,) * len(ids))


def pad_batch(seqs: list[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s.ids) for s in seqs)
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s.ids)] = s.ids
        mask[i, : len(s.ids)] = s.attention_mask
    return ids, mask


def sinusoidal_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


@dataclass(frozen=True)
class TinyEncoderConfig:
    vocab_size: int
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 128
    refine_heads: int = 16
    dropout: float = 0.1

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise DimensionMismatch(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.d % self.refine_heads != 0:
            raise DimensionMismatch(f"d={self.d} not divisible by refine_heads={self.refine_heads}")


def init_encoder_params(cfg: TinyEncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    scale = 1.0 / np.sqrt(cfg.d)
    p["tok_embed"] = rng.uniform(-scale, scale, size=(cfg.vocab_size, cfg.d))
    p["pos_table"] = sinusoidal_table(cfg.max_len, cfg.d)
    for i in range(cfg.n_layers):
        p[f"layer{i}.ln1.gamma"] = np.ones(cfg.d)
        p[f"layer{i}.ln1.beta"] = np.zeros(cfg.d)
        nn.init_attention(rng, p, f"layer{i}.attn", cfg.d)
        p[f"layer{i}.ln2.gamma"] = np.ones(cfg.d)
        p[f"layer{i}.ln2.beta"] = np.zeros(cfg.d)
        p[f"layer{i}.ff.w1"], p[f"layer{i}.ff.b1"] = nn.init_linear(rng, cfg.ff_dim, cfg.d)
        p[f"layer{i}.ff.w2"], p[f"layer{i}.ff.b2"] = nn.init_linear(rng, cfg.d, cfg.ff_dim)
    nn.init_attention(rng, p, "refine", cfg.d)
    p["refine.ln.gamma"] = np.ones(cfg.d)
    p["refine.ln.beta"] = np.zeros(cfg.d)
    return p


# The sinusoidal position table is serialized with the rest of the
# checkpoint but never updated by the optimizer.
NON_TRAINABLE = frozenset({"pos_table"})


class TinyEncoder:
    """Trainable tiny transformer provider."""

    def __init__(
        self,
        config: TinyEncoderConfig,
        params: dict[str, np.ndarray] | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.config = config
        if params is None:
            params = init_encoder_params(config, rng or np.random.default_rng(0))
        self.params = params
        self._cache = None
        self.last_attention_probs: list[np.ndarray] = []

    @property
    def d(self) -> int:
        return self.config.d

    def encode(
        self,
        seqs: list[TokenSequence],
        train: bool = False,
        rng: np.random.Generator | None = None,
        dropout_mask: np.ndarray | None = None,
    ) -> np.ndarray:
        cfg = self.config
        p = self.params
        ids, mask = pad_batch(seqs)
        if ids.shape[1] > cfg.max_len:
            raise DimensionMismatch(f"sequence length {ids.shape[1]} exceeds max_len {cfg.max_len}")
        x = p["tok_embed"][ids] + p["pos_table"][: ids.shape[1]]

        self.last_attention_probs = []
        layer_caches = []
        for i in range(cfg.n_layers):
            h, c_ln1 = nn.layer_norm_forward(x, p[f"layer{i}.ln1.gamma"], p[f"layer{i}.ln1.beta"])
            attn, probs, c_attn = nn.attention_forward(h, p, f"layer{i}.attn", cfg.n_heads, mask)
            x = x + attn
            h2, c_ln2 = nn.layer_norm_forward(x, p[f"layer{i}.ln2.gamma"], p[f"layer{i}.ln2.beta"])
            f1, c_l1 = nn.linear_forward(h2, p[f"layer{i}.ff.w1"], p[f"layer{i}.ff.b1"])
            act, c_act = nn.gelu_forward(f1)
            f2, c_l2 = nn.linear_forward(act, p[f"layer{i}.ff.w2"], p[f"layer{i}.ff.b2"])
            x = x + f2
            layer_caches.append((c_ln1, c_attn, c_ln2, c_l1, c_act, c_l2))
            self.last_attention_probs.append(probs)

        refined, probs_r, c_refine = nn.attention_forward(x, p, "refine", cfg.refine_heads, mask)
        self.last_attention_probs.append(probs_r)
        cls = refined[:, 0, :]
        out, c_ln_r = nn.layer_norm_forward(cls, p["refine.ln.gamma"], p["refine.ln.beta"])
        out, drop_mask = nn.dropout_forward(out, cfg.dropout, rng=rng, train=train, mask=dropout_mask)
        self._cache = (ids, layer_caches, c_refine, c_ln_r, drop_mask, refined.shape)
        return out

    def backward(self, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of every encoder tensor given dL/d(encode output)."""
        if self._cache is None:
            raise NoRecordedForward("encode must run before encode backward")
        cfg = self.config
        ids, layer_caches, c_refine, c_ln_r, drop_mask, ref_shape = self._cache
        grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}

        d = nn.dropout_backward(drop_mask, d_out)
        d_cls, grads["refine.ln.gamma"], grads["refine.ln.beta"] = nn.layer_norm_backward(c_ln_r, d)
        d_refined = np.zeros(ref_shape)
        d_refined[:, 0, :] = d_cls
        dx, attn_grads = nn.attention_backward(c_refine, "refine", d_refined)
        grads.update(attn_grads)

        for i in reversed(range(cfg.n_layers)):
            c_ln1, c_attn, c_ln2, c_l1, c_act, c_l2 = layer_caches[i]
            dact, grads[f"layer{i}.ff.w2"], grads[f"layer{i}.ff.b2"] = nn.linear_backward(c_l2, dx)
            df1 = nn.gelu_backward(c_act, dact)
            dh2, grads[f"layer{i}.ff.w1"], grads[f"layer{i}.ff.b1"] = nn.linear_backward(c_l1, df1)
            dres, grads[f"layer{i}.ln2.gamma"], grads[f"layer{i}.ln2.beta"] = nn.layer_norm_backward(
                c_ln2, dh2
            )
            dx = dx + dres
            dh, a_grads = nn.attention_backward(c_attn, f"layer{i}.attn", dx)
            for name, g in a_grads.items():
                grads[name] = g
            dres, grads[f"layer{i}.ln1.gamma"], grads[f"layer{i}.ln1.beta"] = nn.layer_norm_backward(
                c_ln1, dh
            )
            dx = dx + dres

        np.add.at(grads["tok_embed"], ids.reshape(-1), dx.reshape(-1, cfg.d))
        grads["pos_table"][: ids.shape[1]] = dx.sum(axis=0)
        return grads

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if k not in NON_TRAINABLE]


class PrecomputedEncoder:
    """File-backed provider: sentence id -> fixed d-dimensional vector."""

    def __init__(self, table: dict[str, np.ndarray]):
        if not table:
            raise ValueError("empty embedding table")
        dims = {v.shape for v in table.values()}
        if len(dims) != 1:
            raise DimensionMismatch(f"inconsistent embedding dims: {sorted(dims)}")
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.d = next(iter(self.table.values())).shape[0]

    def encode_ids(self, sentence_ids: list[str]) -> np.ndarray:
        rows = []
        for sid in sentence_ids:
            if sid not in self.table:
                raise MissingEmbedding(f"no precomputed embedding for sentence id {sid!r}")
            rows.append(self.table[sid])
        return np.stack(rows)

    def backward(self, d_out: np.ndarray) -> dict[str, np.ndarray]:
        return {}

    def trainable_names(self) -> list[str]:
        return []


def load_embedding_table(path: str | Path) -> dict[str, np.ndarray]:
    table: dict[str, np.ndarray] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                sid, payload = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns") from None
            table[sid] = np.array([float(v) for v in payload.split(",")], dtype=np.float64)
    return table
