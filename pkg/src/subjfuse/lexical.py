"""Character n-gram TF-IDF vectorizer shared by both classifier heads.

Weighting: raw term counts, smoothed idf ln((1+N)/(1+df)) + 1, then L2
normalization per document. Vocabulary selection keeps n-grams with
document frequency >= min_df, ranked by total corpus count (ties broken
lexicographically ascending), truncated to max_features. Feature indices
are assigned in lexicographic order of the surviving n-grams.

Serialized model container (``save_vectorizer``): an 8-byte magic
``SJTFIDF1``, a little-endian uint32 header length, a UTF-8 JSON header
holding {version, config, vocabulary (index order), n_idf}, followed by
the idf values as little-endian 8-byte floats.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"SJTFIDF1"
FORMAT_VERSION = 1


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class TfidfConfig:
    n_min: int = 3
    n_max: int = 7
    max_features: int = 3000
    min_df: int = 2
    lowercase: bool = True

    def __post_init__(self) -> None:
        if not (1 <= self.n_min <= self.n_max):
            raise ValueError(f"need 1 <= n_min <= n_max, got ({self.n_min}, {self.n_max})")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if self.min_df < 1:
            raise ValueError("min_df must be >= 1")


@dataclass(frozen=True)
class SparseVector:
    """L2-normalized sparse feature vector (zero vector when all OOV)."""

    indices: np.ndarray  # strictly increasing int64
    values: np.ndarray   # float64, same length
    dim: int

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim)
        dense[self.indices] = self.values
        return dense


def extract_ngrams(text: str, n_min: int, n_max: int, lowercase: bool = True) -> Counter:
    """Multiset of contiguous character n-grams for each n in [n_min, n_max].

    Operates on Unicode scalars; whitespace participates like any other
    character.
    """
    if n_min > n_max:
        raise ValueError("n_min must be <= n_max")
    if lowercase:
        text = text.lower()
    grams: Counter = Counter()
    size = len(text)
    for n in range(n_min, n_max + 1):
        for i in range(size - n + 1):
            grams[text[i : i + n]] += 1
    return grams


class TfidfModel:
    def __init__(self, config: TfidfConfig, vocabulary: dict[str, int], idf: np.ndarray):
        self.config = config
        self.vocabulary = vocabulary
        self.idf = np.asarray(idf, dtype=np.float64)
        if len(self.vocabulary) != self.idf.shape[0]:
            raise ValueError("vocabulary size and idf length differ")

    @property
    def k(self) -> int:
        return len(self.vocabulary)

    def transform(self, text: str) -> SparseVector:
        """TF-IDF vector of one text: counts * idf, L2-normalized."""
        grams = extract_ngrams(text, self.config.n_min, self.config.n_max, self.config.lowercase)
        hits = [(idx, grams[g]) for g, idx in self.vocabulary.items() if g in grams]
        if not hits:
            return SparseVector(
                indices=np.empty(0, dtype=np.int64), values=np.empty(0, dtype=np.float64), dim=self.k
            )
        hits.sort()
        indices = np.array([h[0] for h in hits], dtype=np.int64)
        values = np.array([h[1] for h in hits], dtype=np.float64) * self.idf[indices]
        values /= np.linalg.norm(values)
        return SparseVector(indices=indices, values=values, dim=self.k)


def fit_vectorizer(texts: list[str], config: TfidfConfig | None = None) -> TfidfModel:
    """Fit vocabulary and idf weights on a corpus of texts."""
    if config is None:
        config = TfidfConfig()
    if not texts:
        raise EmptyCorpus("cannot fit a vectorizer on an empty corpus")

    total_counts: Counter = Counter()
    doc_freq: Counter = Counter()
    for text in texts:
        grams = extract_ngrams(text, config.n_min, config.n_max, config.lowercase)
        total_counts.update(grams)
        doc_freq.update(grams.keys())

    candidates = [g for g, df in doc_freq.items() if df >= config.min_df]
    candidates.sort(key=lambda g: (-total_counts[g], g))
    selected = sorted(candidates[: config.max_features])

    vocabulary = {g: i for i, g in enumerate(selected)}
    n_docs = len(texts)
    idf = np.array(
        [np.log((1.0 + n_docs) / (1.0 + doc_freq[g])) + 1.0 for g in selected], dtype=np.float64
    )
    return TfidfModel(config=config, vocabulary=vocabulary, idf=idf)


def save_vectorizer(model: TfidfModel, path: str | Path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "config": {
            "n_min": model.config.n_min,
            "n_max": model.config.n_max,
            "max_features": model.config.max_features,
            "min_df": model.config.min_df,
            "lowercase": model.config.lowercase,
        },
        "vocabulary": sorted(model.vocabulary, key=model.vocabulary.get),
        "n_idf": model.k,
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.idf.astype("<f8").tobytes())


def load_vectorizer(path: str | Path) -> TfidfModel:
    with Path(path).open("rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a vectorizer file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header["version"] != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported vectorizer version {header['version']}")
        idf = np.frombuffer(fh.read(8 * header["n_idf"]), dtype="<f8").astype(np.float64)
    config = TfidfConfig(**header["config"])
    vocabulary = {g: i for i, g in enumerate(header["vocabulary"])}
    return TfidfModel(config=config, vocabulary=vocabulary, idf=idf)
