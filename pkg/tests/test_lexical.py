import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subjfuse.lexical import (
    EmptyCorpus,
    TfidfConfig,
    extract_ngrams,
    fit_vectorizer,
    load_vectorizer,
    save_vectorizer,
)


# ---------------------------------------------------------------------------
# independent oracle: enumerate n-grams, compute df/tf/idf by definition


def oracle_ngrams(text, n_min, n_max, lowercase=True):
    if lowercase:
        text = text.lower()
    out = {}
    for n in range(n_min, n_max + 1):
        for i in range(len(text) - n + 1):
            g = text[i : i + n]
            out[g] = out.get(g, 0) + 1
    return out


def oracle_fit(texts, cfg):
    per_doc = [oracle_ngrams(t, cfg.n_min, cfg.n_max, cfg.lowercase) for t in texts]
    df, total = {}, {}
    for grams in per_doc:
        for g, c in grams.items():
            df[g] = df.get(g, 0) + 1
            total[g] = total.get(g, 0) + c
    kept = [g for g in df if df[g] >= cfg.min_df]
    kept.sort(key=lambda g: (-total[g], g))
    kept = sorted(kept[: cfg.max_features])
    idf = {g: math.log((1 + len(texts)) / (1 + df[g])) + 1.0 for g in kept}
    return kept, idf


def oracle_transform(text, kept, idf, cfg):
    grams = oracle_ngrams(text, cfg.n_min, cfg.n_max, cfg.lowercase)
    dense = np.array([grams.get(g, 0) * idf[g] for g in kept], dtype=np.float64)
    norm = np.linalg.norm(dense)
    return dense / norm if norm > 0 else dense


# ---------------------------------------------------------------------------


def test_extract_ngrams_by_definition():
    assert extract_ngrams("abcd", 3, 3) == {"abc": 1, "bcd": 1}
    assert extract_ngrams("ab", 3, 3) == {}
    assert extract_ngrams("aaaa", 2, 3) == {"aa": 3, "aaa": 2}


def test_extract_ngrams_whitespace_and_case():
    grams = extract_ngrams("a B", 3, 3)
    assert grams == {"a b": 1}
    grams = extract_ngrams("a B", 3, 3, lowercase=False)
    assert grams == {"a B": 1}


def test_fit_min_df_filters_everything():
    cfg = TfidfConfig(n_min=3, n_max=3, min_df=2)
    model = fit_vectorizer(["abcab", "abxyz"], cfg)
    assert model.vocabulary == {}
    assert model.k == 0


def test_fit_smoothed_idf():
    cfg = TfidfConfig(n_min=3, n_max=3, min_df=2)
    model = fit_vectorizer(["aaab", "aaac"], cfg)
    assert model.vocabulary == {"aaa": 0}
    assert model.idf == pytest.approx([1.0])


def test_fit_max_features_keeps_most_frequent():
    cfg = TfidfConfig(n_min=2, n_max=2, min_df=1, max_features=1)
    model = fit_vectorizer(["ababab", "cd"], cfg)
    assert list(model.vocabulary) == ["ab"]


def test_fit_tie_break_lexicographic():
    # "ab" and "ba" both occur twice; "ab" wins the single slot.
    cfg = TfidfConfig(n_min=2, n_max=2, min_df=1, max_features=1)
    model = fit_vectorizer(["abba"], cfg)
    assert list(model.vocabulary) == ["ab"]


def test_fit_empty_corpus():
    with pytest.raises(EmptyCorpus):
        fit_vectorizer([], TfidfConfig())


def test_transform_single_feature():
    model = fit_vectorizer(["aaab", "aaac"], TfidfConfig(n_min=3, n_max=3, min_df=2))
    sv = model.transform("aaab")
    assert sv.indices.tolist() == [0]
    assert sv.values == pytest.approx([1.0])
    assert sv.dim == 1


def test_transform_oov_is_zero_vector():
    model = fit_vectorizer(["aaab", "aaac"], TfidfConfig(n_min=3, n_max=3, min_df=2))
    sv = model.transform("zzzz")
    assert sv.indices.size == 0 and sv.values.size == 0
    assert sv.dim == 1
    assert np.linalg.norm(sv.to_dense()) == 0.0


def test_transform_equal_weights_unit_norm():
    # Two features with equal tf*idf weight split the unit norm evenly.
    model = fit_vectorizer(["abc", "abc", "bcd", "bcd"], TfidfConfig(n_min=3, n_max=3, min_df=2))
    assert model.k == 2
    sv = model.transform("abcd")
    assert sv.values == pytest.approx([math.sqrt(2) / 2] * 2)


def test_transform_against_oracle_randomized():
    rng = np.random.default_rng(1234)
    alphabet = "abcdef xyz"
    for trial in range(50):
        n_docs = int(rng.integers(1, 21))
        texts = [
            "".join(rng.choice(list(alphabet), size=rng.integers(0, 31)))
            for _ in range(n_docs)
        ]
        if not any(texts):
            texts.append("abcabc")
        cfg = TfidfConfig(
            n_min=int(rng.integers(1, 4)),
            n_max=int(rng.integers(3, 6)),
            max_features=int(rng.integers(1, 40)),
            min_df=int(rng.integers(1, 3)),
        )
        model = fit_vectorizer(texts, cfg)
        kept, idf = oracle_fit(texts, cfg)
        assert list(model.vocabulary) == kept
        assert len(model.vocabulary) <= cfg.max_features
        # every kept n-gram respects min_df by construction of the oracle
        for probe in texts + ["zz zz", ""]:
            mine = model.transform(probe).to_dense()
            ref = oracle_transform(probe, kept, idf, cfg)
            np.testing.assert_allclose(mine, ref, atol=1e-12, rtol=0)


def test_monotone_truncation():
    rng = np.random.default_rng(7)
    texts = ["".join(rng.choice(list("abcd"), size=20)) for _ in range(10)]
    cfg_small = TfidfConfig(n_min=2, n_max=3, min_df=1, max_features=5)
    cfg_large = TfidfConfig(n_min=2, n_max=3, min_df=1, max_features=15)
    small = set(fit_vectorizer(texts, cfg_small).vocabulary)
    large = set(fit_vectorizer(texts, cfg_large).vocabulary)
    assert small <= large


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abc ", max_size=15), min_size=1, max_size=8))
def test_transform_norm_is_zero_or_one(texts):
    cfg = TfidfConfig(n_min=2, n_max=3, min_df=1, max_features=50)
    model = fit_vectorizer(texts, cfg)
    for text in texts + ["qqqq"]:
        norm = np.linalg.norm(model.transform(text).to_dense())
        assert norm == pytest.approx(0.0, abs=1e-9) or norm == pytest.approx(1.0, abs=1e-9)


def test_serialization_round_trip_and_determinism(tmp_path):
    texts = ["character grams here", "more character grams", "and yet more text"]
    model = fit_vectorizer(texts, TfidfConfig(n_min=3, n_max=4, min_df=2, max_features=64))
    p1, p2 = tmp_path / "m1.bin", tmp_path / "m2.bin"
    save_vectorizer(model, p1)
    save_vectorizer(fit_vectorizer(texts, model.config), p2)
    assert p1.read_bytes() == p2.read_bytes()

    loaded = load_vectorizer(p1)
    assert loaded.vocabulary == model.vocabulary
    assert loaded.config == model.config
    np.testing.assert_array_equal(loaded.idf, model.idf)
    for text in texts:
        np.testing.assert_array_equal(
            loaded.transform(text).to_dense(), model.transform(text).to_dense()
        )


def test_sparse_vector_indices_strictly_increasing():
    model = fit_vectorizer(["abcd abcd", "bcde abcd"], TfidfConfig(n_min=3, n_max=4, min_df=1))
    sv = model.transform("abcd bcde")
    assert (np.diff(sv.indices) > 0).all()
    assert np.linalg.norm(sv.values) == pytest.approx(1.0, abs=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        TfidfConfig(n_min=3, n_max=2)
    with pytest.raises(ValueError):
        TfidfConfig(max_features=0)
    with pytest.raises(ValueError):
        TfidfConfig(min_df=0)
