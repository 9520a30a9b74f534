"""Command-line entry point.

Commands: fit-vectorizer, train, train-sequence, ablate, order-study,
predict, evaluate, report. Every command validates its inputs before
writing anything, puts all outputs under --out, and writes a run.json
snapshot of its resolved options there. Exit codes: 0 success, 1 user
error (bad flags or files), 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus, figures, posfeat, report
from .encoder import EmptyCorpus as EncoderEmptyCorpus
from .encoder import build_vocab, load_embedding_table
from .evaluate import Empty, LengthMismatch, macro_f1, predict
from .lexical import EmptyCorpus, TfidfConfig, fit_vectorizer, load_vectorizer, save_vectorizer
from .model import ARCHES, SubjectivityClassifier, build_model
from .nn import DimensionMismatch
from .orchestrate import (
    AblationVariant,
    ChainBroken,
    EncoderSpec,
    LanguageData,
    SequencePlan,
    VocabMismatch,
    run_ablation,
    run_order_study,
    train_sequence,
)
from .train import PRESETS, RunRecord, TrainConfig, train_model

USER_ERRORS = (
    corpus.CorpusError,
    EmptyCorpus,
    EncoderEmptyCorpus,
    posfeat.WrongArity,
    posfeat.NegativeEntry,
    posfeat.DuplicateId,
    LengthMismatch,
    Empty,
    ChainBroken,
    VocabMismatch,
    DimensionMismatch,
    FileNotFoundError,
    NotADirectoryError,
    json.JSONDecodeError,
    ValueError,
    KeyError,
)


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); user errors are exit 1
        raise CliError(message)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"{what} not found: {path}")
    return p


def _write_run_snapshot(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    options = {k: v for k, v in vars(args).items() if k != "func"}
    snapshot = {"command": command, "options": options}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def _tfidf_config(args) -> TfidfConfig:
    return TfidfConfig(
        n_min=args.n_min,
        n_max=args.n_max,
        max_features=args.max_features,
        min_df=args.min_df,
        lowercase=not args.no_lowercase,
    )


def _add_tfidf_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-min", type=int, default=3)
    p.add_argument("--n-max", type=int, default=7)
    p.add_argument("--max-features", type=int, default=3000)
    p.add_argument("--min-df", type=int, default=2)
    p.add_argument("--no-lowercase", action="store_true")


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder-d", type=int, default=64)
    p.add_argument("--encoder-layers", type=int, default=2)
    p.add_argument("--encoder-heads", type=int, default=4)
    p.add_argument("--encoder-ff", type=int, default=256)
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--refine-heads", type=int, default=None,
                   help="refinement attention heads (default: 16 gated-style, 8 concat)")
    p.add_argument("--encoder-dropout", type=float, default=0.1)
    p.add_argument("--max-vocab", type=int, default=2000)


def _encoder_spec(args, arch: str) -> EncoderSpec:
    refine = args.refine_heads
    if refine is None:
        refine = 8 if arch == "concat" else 16
    return EncoderSpec(
        d=args.encoder_d,
        n_layers=args.encoder_layers,
        n_heads=args.encoder_heads,
        ff_dim=args.encoder_ff,
        max_len=args.max_len,
        refine_heads=refine,
        dropout=args.encoder_dropout,
        max_vocab=args.max_vocab,
    )


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def _config_from_dict(base: TrainConfig, overrides: dict) -> TrainConfig:
    unknown = set(overrides) - _CONFIG_FIELDS
    if unknown:
        raise CliError(f"unknown training config fields: {sorted(unknown)}")
    return base.replace(**overrides)


def _resolve_config(args, default_preset: str) -> TrainConfig:
    config = PRESETS[args.preset or default_preset]
    if getattr(args, "config", None):
        path = _require_file(args.config, "config file")
        config = _config_from_dict(config, json.loads(path.read_text(encoding="utf-8")))
    for flag in ("learning_rate", "batch_size", "grad_accum_steps", "max_epochs",
                 "patience", "weight_decay", "scheduler", "warmup_steps", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            config = config.replace(**{flag: value})
    return config


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON file with training config fields")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--grad-accum-steps", dest="grad_accum_steps", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--scheduler", choices=("linear", "cosine"))
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--seed", type=int)


def _best_summary(record: RunRecord) -> str:
    if not record.best_epoch:
        return "no epochs run"
    best_f1 = record.eval_macro_f1[record.best_epoch - 1]
    return f"dev loss {record.best_eval_loss:.6f}, macro-F1 {best_f1:.4f}"


# ---------------------------------------------------------------------------
# command handlers


def _cmd_fit_vectorizer(args) -> int:
    src = _require_file(args.infile, "input dataset")
    dataset = corpus.load_dataset(src, language=args.lang, split=args.split)
    model = fit_vectorizer(dataset.texts(), _tfidf_config(args))
    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "fit-vectorizer", args)
    save_vectorizer(model, out_dir / "vectorizer.bin")
    print(f"fitted {model.k} features from {len(dataset)} texts -> {out_dir / 'vectorizer.bin'}")
    return 0


def _load_model_inputs(args, arch: str):
    pos_table = posfeat.load_pos_table(_require_file(args.pos, "POS sidecar")) if args.pos else None
    embeddings = (
        load_embedding_table(_require_file(args.embeddings, "embedding table"))
        if args.embeddings
        else None
    )
    vectorizer = load_vectorizer(_require_file(args.vectorizer, "vectorizer")) if args.vectorizer else None
    return pos_table, embeddings, vectorizer


def _cmd_train(args) -> int:
    train_path = _require_file(args.train, "training dataset")
    dev_path = _require_file(args.dev, "dev dataset")
    train_ds = corpus.load_dataset(train_path, language=args.lang, split="train")
    dev_ds = corpus.load_dataset(dev_path, language=args.lang, split="dev")
    arch = args.arch
    config = _resolve_config(args, "arabic-concat" if arch == "concat" else "gated")
    pos_table, embeddings, vectorizer = _load_model_inputs(args, arch)

    tfidf = vectorizer or fit_vectorizer(train_ds.texts(), _tfidf_config(args))
    rng = np.random.default_rng(config.seed)
    if embeddings is not None:
        model = build_model(arch, tfidf, embedding_table=embeddings, pos_table=pos_table,
                            hidden=args.hidden, dropout=args.head_dropout, rng=rng)
    else:
        spec = _encoder_spec(args, arch)
        vocab = build_vocab(train_ds.texts(), spec.max_vocab)
        model = build_model(arch, tfidf, encoder_config=spec.config(len(vocab)), vocab=vocab,
                            pos_table=pos_table, hidden=args.hidden,
                            dropout=args.head_dropout, rng=rng)

    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "train", args)
    record = train_model(model, train_ds, dev_ds, config, out_dir)
    report.epochs_csv(record, out_dir / "epochs.csv")
    figures.plot_training_curves(record, out_dir / "curves.png")
    print(f"best epoch {record.best_epoch}: {_best_summary(record)} -> {record.best_checkpoint}")
    return 0


def _plan_from_json(path: Path, seed: int | None) -> SequencePlan:
    raw = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    stages = []
    for entry in raw.get("stages", []):
        lang = entry["language"]
        train_ds = corpus.load_dataset(
            _require_file(str(resolve(entry["train"])), f"{lang} train file"), lang, "train"
        )
        dev_ds = corpus.load_dataset(
            _require_file(str(resolve(entry["dev"])), f"{lang} dev file"), lang, "dev"
        )
        dev_test = None
        if entry.get("dev_test"):
            dev_test = corpus.load_dataset(
                _require_file(str(resolve(entry["dev_test"])), f"{lang} dev-test file"),
                lang,
                "dev-test",
            )
        stages.append(LanguageData(language=lang, train=train_ds, dev=dev_ds, dev_test=dev_test))
    if not stages:
        raise CliError(f"{path}: plan has no stages")

    arch = raw.get("arch", "gated")
    if arch not in ARCHES:
        raise CliError(f"{path}: unknown arch {arch!r}")
    config = _config_from_dict(
        PRESETS["arabic-concat" if arch == "concat" else "gated"], raw.get("config", {})
    )
    if seed is not None:
        config = config.replace(seed=seed)
    stage_configs = {
        lang: _config_from_dict(config, overrides)
        for lang, overrides in raw.get("stage_configs", {}).items()
    }
    try:
        encoder_spec = EncoderSpec(**raw.get("encoder", {}))
        tfidf_config = TfidfConfig(**raw.get("tfidf", {}))
    except TypeError as err:
        raise CliError(f"{path}: bad encoder/tfidf settings: {err}") from None
    head = raw.get("head", {})
    pos_table = None
    if raw.get("pos"):
        pos_table = posfeat.load_pos_table(_require_file(str(resolve(raw["pos"])), "POS sidecar"))
    return SequencePlan(
        stages=stages,
        config=config,
        arch=arch,
        stage_configs=stage_configs,
        initial_checkpoint=raw.get("initial_checkpoint"),
        tfidf_mode=raw.get("tfidf_mode", "union"),
        tfidf_config=tfidf_config,
        encoder=encoder_spec,
        head_hidden=head.get("hidden", 512),
        head_dropout=head.get("dropout", 0.1),
        pos_table=pos_table,
    )


def _cmd_train_sequence(args) -> int:
    plan = _plan_from_json(_require_file(args.plan, "plan file"), args.seed)
    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "train-sequence", args)
    records, final, model = train_sequence(plan, out_dir)
    model.save(out_dir / "final")
    table = report.run_table(records)
    report.emit_report(table, out_dir / "stages.csv", "csv")
    report.emit_report(table, out_dir / "stages.md", "markdown")
    figures.plot_training_curves(records, out_dir / "curves.png")
    for rec in records:
        print(f"{rec.language}: best epoch {rec.best_epoch}, {_best_summary(rec)}")
    print(f"final checkpoint: {out_dir / 'final'}")
    return 0


def _cmd_ablate(args) -> int:
    plan = _plan_from_json(_require_file(args.plan, "plan file"), args.seed)
    try:
        variants = [AblationVariant(v) for v in args.variants.split(",")]
    except ValueError:
        raise CliError(
            f"unknown variant in {args.variants!r}; choose from "
            f"{','.join(v.value for v in AblationVariant)}"
        ) from None
    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "ablate", args)
    table = run_ablation(plan.stages, variants, plan, out_dir / "runs")
    report.emit_report(table, out_dir / "results.csv", "csv")
    report.emit_report(table, out_dir / "results.md", "markdown")
    figures.plot_result_table(table, out_dir / "results.png")
    sys.stdout.write(report.format_markdown(table))
    return 0


def _cmd_order_study(args) -> int:
    plan = _plan_from_json(_require_file(args.plan, "plan file"), args.seed)
    permutations = [spec.split(",") for spec in args.permutations.split(";") if spec]
    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "order-study", args)
    table = run_order_study(plan.stages, permutations, plan, out_dir / "runs")
    report.emit_report(table, out_dir / "results.csv", "csv")
    report.emit_report(table, out_dir / "results.md", "markdown")
    figures.plot_result_table(table, out_dir / "results.png")
    sys.stdout.write(report.format_markdown(table))
    return 0


def _cmd_predict(args) -> int:
    ckpt = _require_dir(args.checkpoint, "checkpoint directory")
    src = _require_file(args.infile, "input dataset")
    dataset = corpus.load_dataset(src, language=args.lang, split="test")
    pos_table = posfeat.load_pos_table(_require_file(args.pos, "POS sidecar")) if args.pos else None
    embeddings = (
        load_embedding_table(_require_file(args.embeddings, "embedding table"))
        if args.embeddings
        else None
    )
    model = SubjectivityClassifier.load(ckpt, embedding_table=embeddings, pos_table=pos_table)
    labels = predict(model, dataset.rows)
    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "predict", args)
    out_path = out_dir / "predictions.tsv"
    with out_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("sentence_id\tlabel\n")
        for row, label in zip(dataset.rows, labels):
            fh.write(f"{row.sentence_id}\t{label.value}\n")
    print(f"wrote {len(labels)} predictions -> {out_path}")
    return 0


def _read_predictions(path: Path) -> dict[str, corpus.ClassLabel]:
    preds: dict[str, corpus.ClassLabel] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or (lineno == 1 and line.startswith("sentence_id")):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise corpus.MalformedRow(f"{path}:{lineno}: expected id<TAB>label")
            if cols[0] in preds:
                raise corpus.DuplicateId(f"{path}:{lineno}: duplicate id {cols[0]!r}")
            preds[cols[0]] = corpus.parse_label(cols[1])
    return preds


def _cmd_evaluate(args) -> int:
    pred_path = _require_file(args.pred, "predictions file")
    gold_path = _require_file(args.gold, "gold file")
    preds = _read_predictions(pred_path)
    gold_ds = corpus.load_dataset(gold_path, language=args.lang, split="dev")
    missing = [r.sentence_id for r in gold_ds.rows if r.sentence_id not in preds]
    if missing:
        raise CliError(f"predictions missing for {len(missing)} gold ids (first: {missing[0]!r})")
    pred_labels = [preds[r.sentence_id] for r in gold_ds.rows]
    gold_labels = [r.label for r in gold_ds.rows]
    result = macro_f1(pred_labels, gold_labels)

    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "evaluate", args)
    rows = ["OBJ", "SUBJ"]
    table = report.ResultTable(
        row_header="class",
        rows=rows,
        columns=["precision", "recall", "f1"],
        values=[
            [result.precision[corpus.ClassLabel[c]], result.recall[corpus.ClassLabel[c]],
             result.f1[corpus.ClassLabel[c]]]
            for c in rows
        ],
    )
    report.emit_report(table, out_dir / "report.csv", "csv")
    report.emit_report(table, out_dir / "report.md", "markdown")
    print(f"macro-F1: {result.macro_f1:.4f}")
    return 0


def _cmd_report(args) -> int:
    if not args.records and not args.table:
        raise CliError("report needs --records and/or --table")
    records = [RunRecord.from_json(_require_file(p, "record file")) for p in args.records or []]
    table = None
    if args.table:
        table = report.parse_csv(_require_file(args.table, "results table").read_text(encoding="utf-8"))
    out_dir = Path(args.out)
    _write_run_snapshot(out_dir, "report", args)
    formats = ("csv", "markdown") if args.format == "both" else (args.format,)
    if records:
        summary = report.run_table(records)
        ext = {"csv": "csv", "markdown": "md"}
        for fmt in formats:
            report.emit_report(summary, out_dir / f"runs.{ext[fmt]}", fmt)
        figures.plot_training_curves(records, out_dir / "curves.png")
        for i, rec in enumerate(records):
            report.epochs_csv(rec, out_dir / f"epochs_{i:02d}.csv")
    if table is not None:
        ext = {"csv": "csv", "markdown": "md"}
        for fmt in formats:
            report.emit_report(table, out_dir / f"results.{ext[fmt]}", fmt)
        figures.plot_result_table(table, out_dir / "results.png")
    print(f"report written under {out_dir}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="subjfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-vectorizer", help="fit the char n-gram TF-IDF vectorizer")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lang", default="und")
    p.add_argument("--split", default="train", choices=corpus.SPLITS)
    p.add_argument("--out", required=True)
    _add_tfidf_flags(p)
    p.set_defaults(func=_cmd_fit_vectorizer)

    p = sub.add_parser("train", help="train one model on one language")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--lang", default="und")
    p.add_argument("--arch", default="gated", choices=ARCHES)
    p.add_argument("--out", required=True)
    p.add_argument("--pos", help="POS sidecar TSV (concat arch)")
    p.add_argument("--embeddings", help="precomputed embedding TSV (replaces the tiny encoder)")
    p.add_argument("--vectorizer", help="reuse a fitted vectorizer instead of fitting on train")
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--head-dropout", dest="head_dropout", type=float, default=0.1)
    _add_tfidf_flags(p)
    _add_encoder_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-sequence", help="sequential cross-lingual fine-tuning chain")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train_sequence)

    p = sub.add_parser("ablate", help="variant x language ablation grid")
    p.add_argument("--plan", required=True)
    p.add_argument("--variants", default=",".join(v.value for v in AblationVariant))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("order-study", help="language-order permutation study")
    p.add_argument("--plan", required=True)
    p.add_argument("--permutations", required=True,
                   help='e.g. "de,it,en;en,it,de;de,en,it"')
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_order_study)

    p = sub.add_parser("predict", help="label sentences with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lang", default="und")
    p.add_argument("--out", required=True)
    p.add_argument("--pos")
    p.add_argument("--embeddings")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a predictions file against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--lang", default="und")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="render tables and figures from run artifacts")
    p.add_argument("--records", nargs="*", default=[])
    p.add_argument("--table")
    p.add_argument("--format", default="both", choices=("csv", "markdown", "both"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - surface internal failures as exit 2
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
