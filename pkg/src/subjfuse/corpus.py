"""Dataset ingestion, label codec, and class statistics.

Corpus files are UTF-8 tab-separated with a header line:

    sentence_id<TAB>sentence<TAB>label        (train / dev / dev-test)
    sentence_id<TAB>sentence                  (unlabeled test files)

Text is stored verbatim; any normalization is up to the consumers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

SPLITS = ("train", "dev", "dev-test", "test")


class CorpusError(ValueError):
    """Base class for corpus file problems."""


class MalformedRow(CorpusError):
    pass


class UnknownLabel(CorpusError):
    pass


class DuplicateId(CorpusError):
    pass


class UnlabeledRow(CorpusError):
    pass


class IndexOutOfRange(CorpusError):
    pass


class ClassLabel(enum.Enum):
    OBJ = "OBJ"
    SUBJ = "SUBJ"


_LABEL_TO_INDEX = {ClassLabel.OBJ: 0, ClassLabel.SUBJ: 1}
_INDEX_TO_LABEL = {0: ClassLabel.OBJ, 1: ClassLabel.SUBJ}


def encode_label(label: ClassLabel) -> int:
    """OBJ -> 0, SUBJ -> 1."""
    try:
        return _LABEL_TO_INDEX[label]
    except KeyError:
        raise UnknownLabel(f"not a class label: {label!r}") from None


def decode_label(index: int) -> ClassLabel:
    try:
        return _INDEX_TO_LABEL[index]
    except KeyError:
        raise IndexOutOfRange(f"class index out of range: {index!r}") from None


def parse_label(raw: str) -> ClassLabel:
    try:
        return ClassLabel[raw]
    except KeyError:
        raise UnknownLabel(f"unknown label {raw!r}, expected OBJ or SUBJ") from None


@dataclass(frozen=True)
class LabeledSentence:
    sentence_id: str
    text: str
    language: str
    label: ClassLabel | None = None


@dataclass
class Dataset:
    language: str
    split: str
    rows: list[LabeledSentence] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def texts(self) -> list[str]:
        return [r.text for r in self.rows]


def load_dataset(path: str | Path, language: str, split: str) -> Dataset:
    """Read one corpus TSV into a Dataset, preserving file row order.

    Rows with an empty or unknown label become unlabeled rows when
    split == "test"; in any other split they are an error.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
    path = Path(path)
    rows: list[LabeledSentence] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedRow(f"{path}: empty file, expected a header line")
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.removesuffix("\r").split("\t")
        if len(cols) == 3:
            sid, text, raw_label = cols
        elif len(cols) == 2:
            sid, text = cols
            raw_label = ""
        else:
            raise MalformedRow(f"{path}:{lineno}: expected 2 or 3 columns, got {len(cols)}")
        if not text.strip():
            raise MalformedRow(f"{path}:{lineno}: empty sentence text")
        if sid in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate sentence_id {sid!r}")
        seen.add(sid)

        label: ClassLabel | None
        if raw_label == "":
            label = None
        else:
            try:
                label = parse_label(raw_label)
            except UnknownLabel:
                if split == "test":
                    label = None
                else:
                    raise UnknownLabel(
                        f"{path}:{lineno}: unknown label {raw_label!r} in split {split!r}"
                    ) from None
        if label is None and split != "test":
            raise UnknownLabel(f"{path}:{lineno}: missing label in split {split!r}")
        rows.append(LabeledSentence(sentence_id=sid, text=text, language=language, label=label))
    return Dataset(language=language, split=split, rows=rows)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a Dataset back to the TSV format load_dataset reads."""
    path = Path(path)
    labeled = any(r.label is not None for r in dataset.rows)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        if labeled:
            fh.write("sentence_id\tsentence\tlabel\n")
            for r in dataset.rows:
                fh.write(f"{r.sentence_id}\t{r.text}\t{r.label.value if r.label else ''}\n")
        else:
            fh.write("sentence_id\tsentence\n")
            for r in dataset.rows:
                fh.write(f"{r.sentence_id}\t{r.text}\n")


def class_counts(dataset: Dataset) -> dict[ClassLabel, int]:
    """Count rows per class; every row must be labeled."""
    counts = {ClassLabel.OBJ: 0, ClassLabel.SUBJ: 0}
    for row in dataset.rows:
        if row.label is None:
            raise UnlabeledRow(f"row {row.sentence_id!r} has no label")
        counts[row.label] += 1
    return counts
