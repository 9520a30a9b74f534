"""Classifier bundle: encoder provider + classification head + features.

A bundle owns the frozen TF-IDF model, the token vocabulary (tiny
provider), the optional POS table (concat architecture), and exposes a
flat named-parameter view for the optimizer and the checkpoint container.

Architectures:
    gated          contextual vector + gated TF-IDF fusion
    concat-nogate  gated head with the gate fixed to 1 (no gate tensors)
    encoder-only   contextual vector alone
    concat         contextual + POS(64) + TF-IDF(128) concatenation
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import checkpoint, posfeat
from .corpus import LabeledSentence
from .encoder import (
    PrecomputedEncoder,
    TinyEncoder,
    TinyEncoderConfig,
    tokenize,
)
from .fusion import ConcatHead, ConcatHeadConfig, GatedHead, GatedHeadConfig
from .lexical import TfidfModel, load_vectorizer, save_vectorizer
from .nn import DimensionMismatch

ARCHES = ("gated", "concat-nogate", "encoder-only", "concat")
MODEL_SPEC_NAME = "model.json"
TFIDF_NAME = "tfidf.bin"
MODEL_VERSION = 1


def head_config_for(arch: str, d: int, k: int, hidden: int, dropout: float):
    if arch == "gated":
        return GatedHeadConfig(d=d, k=k, hidden=hidden, dropout=dropout)
    if arch == "concat-nogate":
        return GatedHeadConfig(d=d, k=k, hidden=hidden, dropout=dropout, use_gate=False)
    if arch == "encoder-only":
        return GatedHeadConfig(d=d, k=k, hidden=hidden, dropout=dropout, use_tfidf=False)
    if arch == "concat":
        return ConcatHeadConfig(d=d, k=k, hidden=hidden, dropout=dropout)
    raise ValueError(f"unknown architecture {arch!r}, expected one of {ARCHES}")


class SubjectivityClassifier:
    def __init__(
        self,
        arch: str,
        provider,
        head,
        tfidf: TfidfModel,
        vocab: dict[str, int] | None = None,
        pos_table: dict[str, np.ndarray] | None = None,
    ):
        if arch not in ARCHES:
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.provider = provider
        self.head = head
        self.tfidf = tfidf
        self.vocab = vocab
        self.pos_table = pos_table

    @property
    def d(self) -> int:
        return self.provider.d

    @property
    def uses_tfidf(self) -> bool:
        return self.arch != "encoder-only"

    def _encode(self, sentences, train, rng):
        if isinstance(self.provider, TinyEncoder):
            seqs = [
                tokenize(s.text, self.vocab, self.provider.config.max_len) for s in sentences
            ]
            return self.provider.encode(seqs, train=train, rng=rng)
        return self.provider.encode_ids([s.sentence_id for s in sentences])

    def _pos_batch(self, sentences) -> np.ndarray:
        rows = []
        for s in sentences:
            if self.pos_table is None:
                rows.append(np.full(posfeat.POS_DIM, 1.0 / posfeat.POS_DIM))
            elif s.sentence_id in self.pos_table:
                rows.append(self.pos_table[s.sentence_id])
            else:
                raise KeyError(f"no POS distribution for sentence id {s.sentence_id!r}")
        return np.stack(rows)

    def forward(
        self, sentences: list[LabeledSentence], train: bool = False, rng=None
    ) -> np.ndarray:
        h = self._encode(sentences, train, rng)
        if self.arch == "concat":
            tf = [self.tfidf.transform(s.text) for s in sentences]
            return self.head.forward(h, self._pos_batch(sentences), tf, train=train, rng=rng)
        tf = [self.tfidf.transform(s.text) for s in sentences] if self.uses_tfidf else None
        return self.head.forward(h, tf, train=train, rng=rng)

    def backward(self, d_logits: np.ndarray) -> dict[str, np.ndarray]:
        head_grads, d_h = self.head.backward(d_logits)
        grads = {f"head.{k}": v for k, v in head_grads.items()}
        for k, v in self.provider.backward(d_h).items():
            grads[f"encoder.{k}"] = v
        return grads

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f"head.{k}": v for k, v in self.head.params.items()}
        if isinstance(self.provider, TinyEncoder):
            params.update({f"encoder.{k}": v for k, v in self.provider.params.items()})
        return params

    def trainable_names(self) -> list[str]:
        names = [f"head.{k}" for k in self.head.params]
        names.extend(f"encoder.{k}" for k in self.provider.trainable_names())
        return names

    def set_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        """Copy values into the existing parameter arrays. Names and shapes
        must match the current model exactly."""
        params = self.parameters()
        if set(tensors) != set(params):
            missing = set(params) ^ set(tensors)
            raise DimensionMismatch(f"parameter name mismatch: {sorted(missing)}")
        for name, value in tensors.items():
            if params[name].shape != value.shape:
                raise DimensionMismatch(
                    f"{name}: cannot load shape {value.shape} into {params[name].shape}"
                )
            params[name][...] = value

    def spec_dict(self) -> dict:
        spec = {
            "version": MODEL_VERSION,
            "arch": self.arch,
            "head": {"hidden": self.head.config.hidden, "dropout": self.head.config.dropout},
            "k": self.tfidf.k,
        }
        if isinstance(self.provider, TinyEncoder):
            cfg = self.provider.config
            spec["provider"] = "tiny"
            spec["encoder"] = {
                "vocab_size": cfg.vocab_size,
                "d": cfg.d,
                "n_layers": cfg.n_layers,
                "n_heads": cfg.n_heads,
                "ff_dim": cfg.ff_dim,
                "max_len": cfg.max_len,
                "refine_heads": cfg.refine_heads,
                "dropout": cfg.dropout,
            }
            spec["vocab"] = sorted(self.vocab, key=self.vocab.get)
        else:
            spec["provider"] = "precomputed"
            spec["d"] = self.provider.d
        return spec

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        checkpoint.save_tensors(directory, self.parameters())
        (directory / MODEL_SPEC_NAME).write_text(
            json.dumps(self.spec_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        save_vectorizer(self.tfidf, directory / TFIDF_NAME)

    @classmethod
    def load(
        cls,
        directory: str | Path,
        embedding_table: dict[str, np.ndarray] | None = None,
        pos_table: dict[str, np.ndarray] | None = None,
    ) -> "SubjectivityClassifier":
        directory = Path(directory)
        spec = json.loads((directory / MODEL_SPEC_NAME).read_text(encoding="utf-8"))
        if spec["version"] != MODEL_VERSION:
            raise ValueError(f"unsupported model version {spec['version']}")
        tfidf = load_vectorizer(directory / TFIDF_NAME)
        tensors = checkpoint.load_tensors(directory)
        head_params = {
            k.removeprefix("head."): v for k, v in tensors.items() if k.startswith("head.")
        }
        enc_params = {
            k.removeprefix("encoder."): v for k, v in tensors.items() if k.startswith("encoder.")
        }

        vocab = None
        if spec["provider"] == "tiny":
            enc_cfg = TinyEncoderConfig(**spec["encoder"])
            provider = TinyEncoder(enc_cfg, params=enc_params)
            vocab = {tok: i for i, tok in enumerate(spec["vocab"])}
            d = enc_cfg.d
        else:
            if embedding_table is None:
                raise ValueError("precomputed-provider checkpoint needs an embedding table")
            provider = PrecomputedEncoder(embedding_table)
            d = spec["d"]
            if provider.d != d:
                raise DimensionMismatch(f"embedding table dim {provider.d}, checkpoint expects {d}")

        head_cfg = head_config_for(
            spec["arch"], d=d, k=spec["k"], hidden=spec["head"]["hidden"], dropout=spec["head"]["dropout"]
        )
        head_cls = ConcatHead if spec["arch"] == "concat" else GatedHead
        head = head_cls(head_cfg, params=head_params)
        return cls(
            arch=spec["arch"], provider=provider, head=head, tfidf=tfidf, vocab=vocab,
            pos_table=pos_table,
        )


def build_model(
    arch: str,
    tfidf: TfidfModel,
    encoder_config: TinyEncoderConfig | None = None,
    vocab: dict[str, int] | None = None,
    embedding_table: dict[str, np.ndarray] | None = None,
    pos_table: dict[str, np.ndarray] | None = None,
    hidden: int = 512,
    dropout: float = 0.1,
    rng: np.random.Generator | None = None,
) -> SubjectivityClassifier:
    """Assemble a fresh classifier with randomly initialized parameters."""
    rng = rng or np.random.default_rng(0)
    if encoder_config is not None:
        if vocab is None:
            raise ValueError("a tiny encoder needs its token vocabulary")
        provider = TinyEncoder(encoder_config, rng=rng)
        d = encoder_config.d
    elif embedding_table is not None:
        provider = PrecomputedEncoder(embedding_table)
        d = provider.d
    else:
        raise ValueError("need either an encoder config or an embedding table")

    head_cfg = head_config_for(arch, d=d, k=tfidf.k, hidden=hidden, dropout=dropout)
    head_cls = ConcatHead if arch == "concat" else GatedHead
    head = head_cls(head_cfg, rng=rng)
    return SubjectivityClassifier(
        arch=arch, provider=provider, head=head, tfidf=tfidf, vocab=vocab, pos_table=pos_table
    )
