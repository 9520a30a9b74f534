"""Acceptance suite: one test per release criterion, each at its stated
tolerance. Run with `pytest tests/test_acceptance.py -v`."""

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import check_gradients
from subjfuse import checkpoint, cli
from subjfuse.corpus import ClassLabel, Dataset, save_dataset
from subjfuse.evaluate import evaluate_model, macro_f1
from subjfuse.fusion import ConcatHead, ConcatHeadConfig, GatedHead, GatedHeadConfig, gate
from subjfuse.lexical import TfidfConfig, fit_vectorizer
from subjfuse.orchestrate import (
    AblationVariant,
    EncoderSpec,
    LanguageData,
    SequencePlan,
    train_sequence,
)
from subjfuse.train import (
    AdamW,
    EarlyStopper,
    TrainConfig,
    cross_entropy_batch,
    lr_at,
    window_gradients,
)
from synthdata import combined_dev, make_cue_data, multi_occurrence_token_count
from test_evaluate import oracle_macro_f1
from test_lexical import oracle_fit, oracle_transform
from test_train import reference_adamw
from tinymodel import build_tiny_model, toy_token_dataset


# ---------------------------------------------------------------------------
# 1. gradient correctness


def _relu_margin(model, batch):
    """Smallest |pre-activation| over the model's ReLU sites; the finite
    difference step must not straddle a kink."""
    head = model.head
    p = head.params
    margins = [np.inf]
    if "tfidf_proj.w" in p:
        for s in batch:
            sv = model.tfidf.transform(s.text)
            pre = p["tfidf_proj.b"].copy()
            if sv.indices.size:
                pre += p["tfidf_proj.w"][:, sv.indices] @ sv.values
            margins.append(np.abs(pre).min())
    if "pos_proj.w" in p:
        pos = model._pos_batch(batch)
        margins.append(np.abs(pos @ p["pos_proj.w"].T + p["pos_proj.b"]).min())
    if isinstance(head, GatedHead):
        model.forward(batch)
        margins.append(np.abs(head.last_ln_output).min())
    return min(margins)


def _kink_free_model(arch, base_seed, batch_source):
    for seed in range(base_seed, base_seed + 60):
        model = build_tiny_model(batch_source, arch=arch, seed=seed, d=8, hidden=16, dropout=0.0)
        if arch == "concat":
            rng = np.random.default_rng(seed)
            model.pos_table = {
                r.sentence_id: rng.dirichlet(np.ones(9)) for r in batch_source.rows
            }
        if _relu_margin(model, batch_source.rows[:3]) > 5e-4:
            return model
    raise AssertionError("no kink-free instance found")


def test_gradient_correctness_all_tensors():
    """Every parameter tensor of the full models (tiny encoder d=8/L=1/H=2
    plus gated and concat heads, d=8, k=10, h_mid=16) matches central
    finite differences (step 1e-4) within 1e-4; runs in under 60 s."""
    started = time.monotonic()
    for arch, seed in (("gated", 3), ("concat", 1), ("concat-nogate", 0), ("encoder-only", 0)):
        train_ds = toy_token_dataset(10, seed=seed)
        model = _kink_free_model(arch, seed, train_ds)
        batch = train_ds.rows[:3]
        golds = np.array([0 if r.label is ClassLabel.OBJ else 1 for r in batch])

        def loss_fn(model=model, batch=batch, golds=golds):
            logits = model.forward(batch, train=False)
            losses, _ = cross_entropy_batch(logits, golds)
            return float(losses.sum())

        logits = model.forward(batch, train=False)
        _, dlogits = cross_entropy_batch(logits, golds)
        analytic = model.backward(dlogits)
        errors = check_gradients(loss_fn, model.parameters(), analytic)
        worst = max(errors, key=errors.get)
        assert errors[worst] <= 1e-4, (arch, worst, errors[worst])
    assert time.monotonic() - started < 60.0


# ---------------------------------------------------------------------------
# 2. TF-IDF oracle


def test_tfidf_oracle_50_corpora():
    rng = np.random.default_rng(2024)
    alphabet = list("abcdefg xyz")
    for _ in range(50):
        texts = [
            "".join(rng.choice(alphabet, size=rng.integers(1, 31)))
            for _ in range(int(rng.integers(1, 21)))
        ]
        cfg = TfidfConfig(
            n_min=int(rng.integers(1, 4)),
            n_max=int(rng.integers(3, 6)),
            max_features=int(rng.integers(1, 50)),
            min_df=int(rng.integers(1, 3)),
        )
        model = fit_vectorizer(texts, cfg)
        kept, idf = oracle_fit(texts, cfg)
        assert list(model.vocabulary) == kept
        assert model.k <= cfg.max_features
        # df >= min_df for every kept n-gram, checked against raw counts
        for gram in model.vocabulary:
            df = sum(1 for t in texts if gram in t.lower())
            assert df >= cfg.min_df
        for text in texts:
            mine = model.transform(text).to_dense()
            ref = oracle_transform(text, kept, idf, cfg)
            np.testing.assert_allclose(mine, ref, atol=1e-12, rtol=0)


# ---------------------------------------------------------------------------
# 3. metric oracle


def test_metric_oracle():
    rng = np.random.default_rng(77)
    labels = [ClassLabel.OBJ, ClassLabel.SUBJ]
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        preds = [labels[i] for i in rng.integers(0, 2, size=n)]
        golds = [labels[i] for i in rng.integers(0, 2, size=n)]
        assert macro_f1(preds, golds).macro_f1 == oracle_macro_f1(preds, golds)
    hand = macro_f1(
        [labels[i] for i in (0, 1, 1, 1)], [labels[i] for i in (0, 0, 1, 1)]
    ).macro_f1
    assert abs(hand - 0.7333333333333334) <= 1e-9


# ---------------------------------------------------------------------------
# 4. gating invariants


def test_gating_invariants():
    rng = np.random.default_rng(5)
    d = 8
    w = rng.normal(size=(1, d)) * 20
    h = rng.normal(size=(100_000, d)) * 10
    g = gate(h, w, 0.1)
    assert g.shape == (100_000, 1)
    assert (g > 0.0).all() and (g < 1.0).all()

    # g == 1 reproduces the no-gating variant exactly
    cfg = GatedHeadConfig(d=d, k=10, hidden=16, dropout=0.0)
    head = GatedHead(cfg, rng=np.random.default_rng(1))
    from test_fusion import random_sparse

    tf = [random_sparse(np.random.default_rng(i)) for i in range(4)]
    hb = rng.normal(size=(4, d))
    shared = {k: v for k, v in head.params.items() if not k.startswith("gate.")}
    nogate = GatedHead(dataclasses.replace(cfg, use_gate=False), params=shared)
    np.testing.assert_allclose(
        head.forward(hb, tf, gate_override=1.0), nogate.forward(hb, tf), atol=1e-6
    )

    # neutral initialization: b_g = 0 and W_g = 0 give g = 0.5
    head.params["gate.w"][...] = 0.0
    head.params["gate.b"][...] = 0.0
    head.forward(hb, tf)
    np.testing.assert_allclose(head.last_gate, 0.5, atol=1e-12)


# ---------------------------------------------------------------------------
# 5. dimension contract


def test_concat_head_960_dimension_contract():
    cfg = ConcatHeadConfig(d=768, k=50)
    assert cfg.joint_dim == 960
    head = ConcatHead(cfg, rng=np.random.default_rng(0))
    assert head.params["fc1.w"].shape == (512, 960)
    from test_fusion import random_sparse

    rng = np.random.default_rng(1)
    logits = head.forward(
        rng.normal(size=(2, 768)),
        rng.dirichlet(np.ones(9), size=2),
        [random_sparse(rng, k=50) for _ in range(2)],
    )
    assert logits.shape == (2, 2)


# ---------------------------------------------------------------------------
# 6. training mechanics


def test_training_mechanics():
    # accumulation equivalence within 1e-10
    train_ds = toy_token_dataset(12, seed=1)
    updated = []
    for micro in (4, 12):
        model = build_tiny_model(train_ds, seed=3)
        _, grads = window_gradients(model, train_ds.rows, micro)
        params = model.parameters()
        trainable = {n: params[n] for n in model.trainable_names()}
        AdamW(TrainConfig(seed=0)).step(trainable, {n: grads[n] for n in trainable}, lr=1e-3)
        updated.append({n: trainable[n].copy() for n in trainable})
    for name in updated[0]:
        np.testing.assert_allclose(updated[0][name], updated[1][name], atol=1e-10, rtol=0)

    # early stopping trace: losses [0.9, 0.8, 0.85, 0.82, 0.81], patience 3
    stopper = EarlyStopper(patience=3)
    stop_epoch = None
    for epoch, loss in enumerate([0.9, 0.8, 0.85, 0.82, 0.81], start=1):
        stopper.update(epoch, loss)
        if stopper.should_stop:
            stop_epoch = epoch
            break
    assert stop_epoch == 5 and stopper.best_epoch == 2

    # AdamW ten-step oracle within 1e-10
    grads_fn = lambda th: th - np.array([0.5, -0.5])
    opt = AdamW(TrainConfig(learning_rate=1e-2, weight_decay=0.01, seed=0))
    params = {"theta": np.array([2.0, -1.0])}
    mine = []
    for _ in range(10):
        opt.step(params, {"theta": grads_fn(params["theta"])}, lr=1e-2)
        mine.append(params["theta"].copy())
    for a, b in zip(mine, reference_adamw(np.array([2.0, -1.0]), grads_fn, 1e-2, 10)):
        np.testing.assert_allclose(a, b, atol=1e-10, rtol=0)

    # scheduler ramp: lr_at(50) = 5e-6 for base 1e-5 / warmup 100
    cfg = TrainConfig(learning_rate=1e-5, warmup_steps=100, seed=0)
    assert lr_at(cfg, 50, 1000) == pytest.approx(5e-6, abs=1e-18)


# ---------------------------------------------------------------------------
# 7. end-to-end desk-scale separability


def separability_plan(data, arch, seed=2):
    train_all = Dataset("all", "train", [r for d in data for r in d.train.rows])
    dev_all = combined_dev(data)
    return SequencePlan(
        stages=[LanguageData(language="all", train=train_all, dev=dev_all)],
        config=TrainConfig(
            learning_rate=2e-3, batch_size=8, grad_accum_steps=2, max_epochs=30,
            patience=30, weight_decay=0.01, scheduler="cosine", warmup_steps=10, seed=seed,
        ),
        arch=arch,
        tfidf_config=TfidfConfig(n_min=3, n_max=3, min_df=2, max_features=200),
        encoder=EncoderSpec(
            d=32, n_layers=1, n_heads=4, ff_dim=64, max_len=16, refine_heads=4,
            dropout=0.1, max_vocab=multi_occurrence_token_count(data),
        ),
        head_hidden=64,
        head_dropout=0.1,
    )


def test_end_to_end_separability(tmp_path):
    """400 synthetic bilingual sentences whose label needs both the token
    cue (encoder-visible) and the rare character-n-gram cue (encoder-
    invisible): the full gated model must reach macro-F1 >= 0.95 on the
    dev split within 30 epochs and strictly beat the encoder-only
    ablation, in under 5 minutes."""
    started = time.monotonic()
    data = make_cue_data(n_train=150, n_dev=50, seed=11)
    total = sum(len(d.train) + len(d.dev) for d in data)
    assert total == 400
    dev_all = combined_dev(data)

    scores = {}
    for arch in ("gated", "encoder-only"):
        plan = separability_plan(data, arch)
        _, _, model = train_sequence(plan, tmp_path / arch)
        _, report = evaluate_model(model, dev_all)
        scores[arch] = report.macro_f1

    elapsed = time.monotonic() - started
    assert scores["gated"] >= 0.95, scores
    assert scores["gated"] > scores["encoder-only"], scores
    assert elapsed < 300.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 8. chain exactness


def test_chain_exactness_three_stages(tmp_path):
    data = make_cue_data(languages=("aa", "bb", "cc"), n_train=32, n_dev=12, seed=4)
    plan = SequencePlan(
        stages=list(data),
        config=TrainConfig(learning_rate=2e-3, batch_size=8, grad_accum_steps=1,
                           max_epochs=2, patience=3, warmup_steps=2, seed=1),
        arch="gated",
        tfidf_config=TfidfConfig(n_min=3, n_max=3, min_df=2, max_features=120),
        encoder=EncoderSpec(d=16, n_layers=1, n_heads=2, ff_dim=32, max_len=16,
                            refine_heads=2, dropout=0.1, max_vocab=80),
        head_hidden=16,
    )
    records, final, _ = train_sequence(plan, tmp_path)
    assert len(records) == 3
    stage_dirs = sorted(p for p in tmp_path.iterdir() if p.name.startswith("stage"))
    for prev_record, stage_dir in zip(records, stage_dirs[1:]):
        init = checkpoint.load_tensors(stage_dir / "init")
        best = checkpoint.load_tensors(Path(prev_record.best_checkpoint))
        assert checkpoint.fingerprint(init) == checkpoint.fingerprint(best)

    # a 0-epoch stage is an exact identity
    plan0 = dataclasses.replace(
        plan, stages=data[:2], stage_configs={"bb": plan.config.replace(max_epochs=0)}
    )
    records0, final0, _ = train_sequence(plan0, tmp_path / "zero")
    first_best = checkpoint.load_tensors(Path(records0[0].best_checkpoint))
    final_tensors = checkpoint.load_tensors(final0)
    assert checkpoint.fingerprint(first_best) == checkpoint.fingerprint(final_tensors)


# ---------------------------------------------------------------------------
# 9. CLI determinism


def test_cli_determinism(tmp_path):
    data = make_cue_data(n_train=24, n_dev=8, seed=9)
    plan = {
        "arch": "gated",
        "stages": [],
        "config": {"learning_rate": 2e-3, "batch_size": 8, "grad_accum_steps": 1,
                   "max_epochs": 2, "patience": 2, "warmup_steps": 2, "seed": 0},
        "tfidf": {"n_min": 3, "n_max": 3, "max_features": 100, "min_df": 2},
        "encoder": {"d": 16, "n_layers": 1, "n_heads": 2, "ff_dim": 32,
                    "max_len": 16, "refine_heads": 2, "max_vocab": 64},
        "head": {"hidden": 16, "dropout": 0.1},
    }
    for d in data:
        train, dev = tmp_path / f"{d.language}_train.tsv", tmp_path / f"{d.language}_dev.tsv"
        save_dataset(d.train, train)
        save_dataset(d.dev, dev)
        plan["stages"].append({"language": d.language, "train": train.name, "dev": dev.name})
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan), encoding="utf-8")

    out = tmp_path / "out"
    watched = ["run.json", "stages.csv", "stages.md", "curves.png",
               "final/tensors.bin", "final/manifest.json", "final/model.json"]

    def run_and_hash():
        code = cli.main(["train-sequence", "--plan", str(plan_path), "--seed", "7",
                         "--out", str(out)])
        assert code == 0
        return {w: hashlib.sha256((out / w).read_bytes()).hexdigest() for w in watched}

    assert run_and_hash() == run_and_hash()


# ---------------------------------------------------------------------------
# 10. harness shape


def test_harness_shape(tmp_path):
    """`ablate` emits a 4-variant x N-language grid and `order-study` a
    permutation x language grid."""
    data = make_cue_data(languages=("aa", "bb", "cc"), n_train=16, n_dev=8, seed=6)
    plan = {
        "arch": "gated",
        "stages": [],
        "config": {"learning_rate": 2e-3, "batch_size": 8, "grad_accum_steps": 1,
                   "max_epochs": 1, "patience": 2, "warmup_steps": 2, "seed": 0},
        "tfidf": {"n_min": 3, "n_max": 3, "max_features": 80, "min_df": 2},
        "encoder": {"d": 16, "n_layers": 1, "n_heads": 2, "ff_dim": 32,
                    "max_len": 16, "refine_heads": 2, "max_vocab": 96},
        "head": {"hidden": 16, "dropout": 0.1},
    }
    for d in data:
        train, dev = tmp_path / f"{d.language}_tr.tsv", tmp_path / f"{d.language}_de.tsv"
        save_dataset(d.train, train)
        save_dataset(d.dev, dev)
        plan["stages"].append({"language": d.language, "train": train.name, "dev": dev.name})
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan), encoding="utf-8")

    ablate_out = tmp_path / "ablate"
    assert cli.main(["ablate", "--plan", str(plan_path), "--seed", "1",
                     "--out", str(ablate_out)]) == 0
    lines = (ablate_out / "results.csv").read_text().strip().split("\n")
    assert lines[0] == "variant,aa,bb,cc"
    assert [ln.split(",")[0] for ln in lines[1:]] == [v.value for v in AblationVariant]
    assert len(lines) == 5
    for ln in lines[1:]:
        cells = ln.split(",")[1:]
        assert len(cells) == 3 and all(cells)

    order_out = tmp_path / "order"
    assert cli.main(["order-study", "--plan", str(plan_path), "--seed", "1",
                     "--out", str(order_out),
                     "--permutations", "aa,bb,cc;cc,bb,aa;bb,aa,cc"]) == 0
    lines = (order_out / "results.csv").read_text().strip().split("\n")
    assert lines[0] == "order,aa,bb,cc"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["aa->bb->cc", "cc->bb->aa", "bb->aa->cc"]
    assert len(lines) == 4
