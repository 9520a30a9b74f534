import dataclasses
from pathlib import Path

import numpy as np
import pytest

from subjfuse.encoder import build_vocab
from subjfuse.evaluate import evaluate_model
from subjfuse.lexical import fit_vectorizer
from subjfuse.model import build_model
from subjfuse.orchestrate import (
    AblationVariant,
    ChainBroken,
    VocabMismatch,
    run_ablation,
    run_order_study,
    train_sequence,
)
from subjfuse.train import train_model
from synthdata import make_cue_data
from tinymodel import make_tiny_plan


def blob(path):
    return (path / "tensors.bin").read_bytes(), (path / "manifest.json").read_bytes()


@pytest.fixture(scope="module")
def cue_data():
    return make_cue_data(n_train=40, n_dev=16, seed=5)


def test_chain_exactness(tmp_path, cue_data):
    plan = make_tiny_plan(cue_data, max_epochs=2)
    records, final, _ = train_sequence(plan, tmp_path)
    assert len(records) == 2
    stage_dirs = sorted(p for p in tmp_path.iterdir() if p.name.startswith("stage"))
    for prev, nxt in zip(records, stage_dirs[1:]):
        assert blob(nxt / "init") == blob(Path(prev.best_checkpoint))
    assert str(final) == records[-1].best_checkpoint
    assert records[0].source_checkpoint is None
    assert records[1].source_checkpoint == records[0].best_checkpoint


def test_zero_epoch_stage_is_identity(tmp_path, cue_data):
    lang_b = cue_data[1].language
    plan = make_tiny_plan(cue_data, max_epochs=2)
    plan.stage_configs = {lang_b: plan.config.replace(max_epochs=0)}
    records, final, _ = train_sequence(plan, tmp_path)
    assert blob(final) == blob(Path(records[0].best_checkpoint))


def test_single_stage_equals_train_model(tmp_path, cue_data):
    lang = cue_data[:1]
    plan = make_tiny_plan(lang, max_epochs=2)
    records, _, _ = train_sequence(plan, tmp_path / "seq")

    # the same run assembled by hand
    texts = [r.text for r in lang[0].train.rows]
    rng = np.random.default_rng(plan.config.seed)
    vocab = build_vocab(texts, plan.encoder.max_vocab)
    tfidf = fit_vectorizer(texts, plan.tfidf_config)
    model = build_model(plan.arch, tfidf, encoder_config=plan.encoder.config(len(vocab)),
                        vocab=vocab, hidden=plan.head_hidden, dropout=plan.head_dropout, rng=rng)
    direct = train_model(model, lang[0].train, lang[0].dev, plan.config, tmp_path / "direct")

    assert records[0].train_loss == direct.train_loss
    assert records[0].eval_loss == direct.eval_loss
    assert records[0].eval_macro_f1 == direct.eval_macro_f1


def test_chain_broken_on_missing_checkpoint(tmp_path, cue_data):
    plan = make_tiny_plan(cue_data[:1], max_epochs=1)
    plan.initial_checkpoint = str(tmp_path / "nowhere")
    with pytest.raises(ChainBroken):
        train_sequence(plan, tmp_path / "run")


def test_vocab_mismatch_on_foreign_checkpoint(tmp_path, cue_data):
    small = make_tiny_plan(cue_data[:1], max_epochs=0)
    small = dataclasses.replace(small, tfidf_config=dataclasses.replace(small.tfidf_config, max_features=7))
    _, final, _ = train_sequence(small, tmp_path / "a")
    plan = make_tiny_plan(cue_data[:1], max_epochs=1)
    plan.initial_checkpoint = str(final)
    with pytest.raises(VocabMismatch):
        train_sequence(plan, tmp_path / "b")


def test_per_language_tfidf_mode_runs(tmp_path, cue_data):
    plan = make_tiny_plan(cue_data, max_epochs=1)
    plan.tfidf_mode = "per-language"
    records, final, model = train_sequence(plan, tmp_path)
    assert len(records) == 2
    assert (final / "manifest.json").exists()


def test_plan_validation(cue_data):
    with pytest.raises(ValueError):
        make_tiny_plan([])
    with pytest.raises(ValueError):
        make_tiny_plan([cue_data[0], cue_data[0]])


def test_ablation_table_shape_and_determinism(tmp_path, cue_data):
    variants = list(AblationVariant)
    plan = make_tiny_plan(cue_data, max_epochs=1)
    table = run_ablation(cue_data, variants, plan, tmp_path / "CPU1")
    assert table.rows == [v.value for v in variants]
    assert table.columns == [d.language for d in cue_data]
    assert len(table.values) == 4 and all(len(r) == 2 for r in table.values)
    for row in table.values:
        for cell in row:
            assert 0.0 <= cell <= 1.0

    again = run_ablation(cue_data, variants, make_tiny_plan(cue_data, max_epochs=1),
                         tmp_path / "CPU2")
    assert again.values == table.values


def test_order_study_shape(tmp_path, cue_data):
    langs = [d.language for d in cue_data]
    perms = [langs, langs[::-1]]
    plan = make_tiny_plan(cue_data, max_epochs=1)
    table = run_order_study(cue_data, perms, plan, tmp_path)
    assert table.rows == ["->".join(p) for p in perms]
    assert table.columns == langs
    assert len(table.values) == 2 and all(len(r) == 2 for r in table.values)


def test_zero_shot_evaluation_of_chain_checkpoint(tmp_path, cue_data):
    # train on two languages, score a language the chain never saw
    plan = make_tiny_plan(cue_data, max_epochs=1)
    _, _, model = train_sequence(plan, tmp_path)
    unseen = make_cue_data(languages=("cc",), n_train=8, n_dev=12, seed=10)[0]
    loss, report = evaluate_model(model, unseen.dev)
    assert np.isfinite(loss)
    assert 0.0 <= report.macro_f1 <= 1.0
    assert report.n == 12


def test_order_study_requires_two_permutations(tmp_path, cue_data):
    plan = make_tiny_plan(cue_data, max_epochs=1)
    with pytest.raises(ValueError):
        run_order_study(cue_data, [[d.language for d in cue_data]], plan, tmp_path)
    with pytest.raises(ValueError):
        run_order_study(cue_data, [["zz"], ["aa"]], plan, tmp_path)
