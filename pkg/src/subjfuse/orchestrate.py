"""Sequential cross-lingual fine-tuning chains, ablations, and
language-order experiments.

A chain fits one TF-IDF vectorizer and one token vocabulary on the union
of all stage training sets (so tensor shapes stay fixed), then trains
stage by stage: stage i > 1 starts from stage i-1's best checkpoint with
every tensor carried over bit-exactly, while the optimizer and scheduler
restart fresh. A per-language TF-IDF mode exists; it refits the
vectorizer and re-initializes the TF-IDF projection at each stage, which
breaks chain exactness for that one tensor pair and is therefore not the
default.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .corpus import Dataset
from .encoder import TinyEncoderConfig, build_vocab
from .evaluate import evaluate_model
from .lexical import TfidfConfig, fit_vectorizer
from .model import SubjectivityClassifier, build_model
from .report import ResultTable
from .train import RunRecord, TrainConfig, train_model


class ChainBroken(RuntimeError):
    pass


class VocabMismatch(ValueError):
    pass


TFIDF_MODES = ("union", "per-language")


@dataclass(frozen=True)
class EncoderSpec:
    """Tiny-encoder hyperparameters minus the corpus-dependent vocab size."""

    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 128
    refine_heads: int = 16
    dropout: float = 0.1
    max_vocab: int = 2000

    def config(self, vocab_size: int) -> TinyEncoderConfig:
        return TinyEncoderConfig(
            vocab_size=vocab_size,
            d=self.d,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            ff_dim=self.ff_dim,
            max_len=self.max_len,
            refine_heads=self.refine_heads,
            dropout=self.dropout,
        )


@dataclass
class LanguageData:
    language: str
    train: Dataset
    dev: Dataset
    dev_test: Dataset | None = None

    @property
    def eval_split(self) -> Dataset:
        return self.dev_test if self.dev_test is not None else self.dev


@dataclass
class SequencePlan:
    stages: list[LanguageData]
    config: TrainConfig
    arch: str = "gated"
    stage_configs: dict[str, TrainConfig] = field(default_factory=dict)
    initial_checkpoint: str | None = None
    tfidf_mode: str = "union"
    tfidf_config: TfidfConfig = field(default_factory=TfidfConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    head_hidden: int = 512
    head_dropout: float = 0.1
    pos_table: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a sequence plan needs at least one stage")
        codes = [s.language for s in self.stages]
        if len(set(codes)) != len(codes):
            raise ValueError(f"stage language codes must be distinct, got {codes}")
        if self.tfidf_mode not in TFIDF_MODES:
            raise ValueError(f"tfidf_mode must be one of {TFIDF_MODES}")

    def config_for(self, language: str) -> TrainConfig:
        return self.stage_configs.get(language, self.config)


def _build_chain_model(plan: SequencePlan, rng: np.random.Generator) -> SubjectivityClassifier:
    union_texts = [row.text for stage in plan.stages for row in stage.train.rows]
    vocab = build_vocab(union_texts, plan.encoder.max_vocab)
    if plan.tfidf_mode == "union":
        tfidf = fit_vectorizer(union_texts, plan.tfidf_config)
    else:
        tfidf = fit_vectorizer([r.text for r in plan.stages[0].train.rows], plan.tfidf_config)
    return build_model(
        plan.arch,
        tfidf,
        encoder_config=plan.encoder.config(len(vocab)),
        vocab=vocab,
        pos_table=plan.pos_table,
        hidden=plan.head_hidden,
        dropout=plan.head_dropout,
        rng=rng,
    )


def _load_chain_tensors(path: str | Path, model: SubjectivityClassifier) -> dict[str, np.ndarray]:
    path = Path(path)
    if not (path / checkpoint.MANIFEST_NAME).exists():
        raise ChainBroken(f"missing chain checkpoint at {path}")
    tensors = checkpoint.load_tensors(path)
    proj_name = "head.tfidf_proj.w"
    if proj_name in tensors and tensors[proj_name].shape[1] != model.tfidf.k:
        raise VocabMismatch(
            f"checkpoint TF-IDF dimension {tensors[proj_name].shape[1]} != model k {model.tfidf.k}"
        )
    return tensors


def _refit_tfidf_branch(model: SubjectivityClassifier, stage: LanguageData, plan: SequencePlan,
                        rng: np.random.Generator) -> None:
    new_tfidf = fit_vectorizer([r.text for r in stage.train.rows], plan.tfidf_config)
    head_cfg = dataclasses.replace(model.head.config, k=new_tfidf.k)
    new_head = type(model.head)(head_cfg, rng=rng)
    for name, arr in model.head.params.items():
        if not name.startswith("tfidf_proj.") and name in new_head.params:
            new_head.params[name][...] = arr
    model.head = new_head
    model.tfidf = new_tfidf


def train_sequence(plan: SequencePlan, out_dir: str | Path):
    """Run the chain; returns (per-stage RunRecords, final checkpoint path,
    the model holding the final best parameters)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(plan.config.seed)
    model = _build_chain_model(plan, rng)

    prev_best: str | None = plan.initial_checkpoint
    records: list[RunRecord] = []
    for i, stage in enumerate(plan.stages):
        stage_dir = out_dir / f"stage{i:02d}_{stage.language}"
        if prev_best is not None:
            if i > 0 and plan.tfidf_mode == "per-language":
                if not (Path(prev_best) / checkpoint.MANIFEST_NAME).exists():
                    raise ChainBroken(f"missing chain checkpoint at {prev_best}")
                _refit_tfidf_branch(model, stage, plan, rng)
                carried = checkpoint.load_tensors(Path(prev_best))
                params = model.parameters()
                for name, value in carried.items():
                    if not name.startswith("head.tfidf_proj."):
                        params[name][...] = value
            else:
                model.set_parameters(_load_chain_tensors(prev_best, model))
        stage_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save_tensors(stage_dir / "init", model.parameters())
        record = train_model(
            model,
            stage.train,
            stage.dev,
            plan.config_for(stage.language),
            stage_dir,
            source_checkpoint=prev_best,
        )
        records.append(record)
        prev_best = record.best_checkpoint
    return records, Path(prev_best), model


class AblationVariant(enum.Enum):
    FULL = "full"
    ENCODER_ONLY = "encoder-only"
    CONCAT_NO_GATING = "concat-no-gating"
    FULL_NO_CROSS_LINGUAL = "full-no-cross-lingual"

    @property
    def arch(self) -> str:
        return {
            AblationVariant.FULL: "gated",
            AblationVariant.ENCODER_ONLY: "encoder-only",
            AblationVariant.CONCAT_NO_GATING: "concat-nogate",
            AblationVariant.FULL_NO_CROSS_LINGUAL: "gated",
        }[self]


def _plan_for(data: list[LanguageData], arch: str, template: SequencePlan) -> SequencePlan:
    return SequencePlan(
        stages=data,
        config=template.config,
        arch=arch,
        stage_configs=template.stage_configs,
        tfidf_mode=template.tfidf_mode,
        tfidf_config=template.tfidf_config,
        encoder=template.encoder,
        head_hidden=template.head_hidden,
        head_dropout=template.head_dropout,
        pos_table=template.pos_table,
    )


def run_ablation(
    data: list[LanguageData],
    variants: list[AblationVariant],
    template: SequencePlan,
    out_dir: str | Path,
) -> ResultTable:
    """Variant x language macro-F1 grid. Chain variants train one sequence
    over `data` in the given order and score the final checkpoint per
    language; the no-cross-lingual variant trains each language from a
    fresh model."""
    out_dir = Path(out_dir)
    languages = [d.language for d in data]
    rows: list[str] = []
    values: list[list[float]] = []
    for variant in variants:
        row: list[float] = []
        if variant is AblationVariant.FULL_NO_CROSS_LINGUAL:
            for lang_data in data:
                plan = _plan_for([lang_data], variant.arch, template)
                _, _, model = train_sequence(plan, out_dir / variant.value / lang_data.language)
                _, report = evaluate_model(model, lang_data.eval_split)
                row.append(report.macro_f1)
        else:
            plan = _plan_for(data, variant.arch, template)
            _, _, model = train_sequence(plan, out_dir / variant.value)
            for lang_data in data:
                _, report = evaluate_model(model, lang_data.eval_split)
                row.append(report.macro_f1)
        rows.append(variant.value)
        values.append(row)
    return ResultTable(row_header="variant", rows=rows, columns=languages, values=values)


def run_order_study(
    data: list[LanguageData],
    permutations: list[list[str]],
    template: SequencePlan,
    out_dir: str | Path,
) -> ResultTable:
    """One chain per language permutation; the final checkpoint of each
    chain is evaluated on every language's evaluation split."""
    if len(permutations) < 2:
        raise ValueError("an order study needs at least 2 permutations")
    by_code = {d.language: d for d in data}
    out_dir = Path(out_dir)
    languages = [d.language for d in data]
    rows: list[str] = []
    values: list[list[float]] = []
    for perm in permutations:
        unknown = [c for c in perm if c not in by_code]
        if unknown:
            raise ValueError(f"permutation references unknown languages {unknown}")
        label = "->".join(perm)
        plan = _plan_for([by_code[c] for c in perm], template.arch, template)
        _, _, model = train_sequence(plan, out_dir / label.replace("->", "_"))
        row = []
        for lang_data in data:
            _, report = evaluate_model(model, lang_data.eval_split)
            row.append(report.macro_f1)
        rows.append(label)
        values.append(row)
    return ResultTable(row_header="order", rows=rows, columns=languages, values=values)
