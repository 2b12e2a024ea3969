import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepsis_triage.cnlp import extract_all, load_dictionary
from sepsis_triage.exceptions import ConfigError, DataError, VocabularyMismatchError
from sepsis_triage.features import (
    DEFAULT_CLEANING,
    DEFAULT_WINDOWS,
    NUMERIC_FIELDS,
    CleaningTable,
    SparseFeatureVector,
    TriageFeaturizer,
    Vocabulary,
    build_vocabulary,
    clean_numeric,
    featurize,
)
from sepsis_triage.records import parse_record

DICT = load_dictionary()


def _rec(rid="r", **fields):
    base = {"id": rid, "arrival_time": "2020-07-01T00:00:00Z", "age_years": 70, "sex": "male"}
    base.update(fields)
    return parse_record(json.dumps(base))


def _pair(rid="r", **fields):
    r = _rec(rid, **fields)
    return r, extract_all(r, DICT)


def test_clean_examples():
    assert clean_numeric("temperature", 38.5) == 38.5
    assert clean_numeric("temperature", 98.6) is None
    assert clean_numeric("pulse_rate", 0) is None
    assert clean_numeric("pulse_rate", None) is None
    with pytest.raises(ConfigError):
        clean_numeric("shoe_size", 9)


def test_cleaning_table_rows_are_ordered():
    for lo, hi in DEFAULT_WINDOWS.values():
        assert lo < hi
    with pytest.raises(ConfigError):
        CleaningTable({"temperature": (40.0, 30.0)})
    with pytest.raises(ConfigError):
        DEFAULT_CLEANING.with_overrides({"shoe_size": (1, 2)})


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(sorted(DEFAULT_WINDOWS)), st.one_of(st.none(), st.floats(-50, 500, allow_nan=False)))
def test_cleaning_idempotent(name, value):
    once = clean_numeric(name, value)
    assert clean_numeric(name, once) == once


def test_vocabulary_min_count():
    pairs = [_pair("a", chief_complaint="cough"), _pair("b", chief_complaint="cough, rash")]
    vocab = build_vocabulary(pairs, min_count=2)
    assert "cc:affirmed:cough" in vocab.index
    assert "cc:affirmed:rash" not in vocab.index


def test_vocabulary_blocks_and_order():
    pairs = [_pair("a", chief_complaint="fever x 2 days", arrival_mode="Ambulance",
                   history_social="etoh abuse", **{"vitals.altered_mentation": True}),
             _pair("b", chief_complaint="no cough", sex="female", history_medical="htn")]
    vocab = build_vocabulary(pairs, min_count=1)
    names = list(vocab.feature_names)
    assert names[:len(NUMERIC_FIELDS)] == list(NUMERIC_FIELDS)
    cat_end = names.index("duration=days")
    categorical = names[len(NUMERIC_FIELDS):cat_end]
    assert categorical == sorted(categorical)
    assert "arrival_mode=ambulance" in categorical
    assert "risk:alcohol abuse=risk" in categorical
    concepts = names[cat_end + 1:]
    assert concepts == sorted(concepts)
    assert "cc:negated:cough" in concepts and "hx_medical:affirmed:hypertension" in concepts


def test_vocabulary_hash_independent_of_order():
    pairs = [_pair(str(i), chief_complaint=cc) for i, cc in enumerate(["cough", "fever", "cough, rash", "uti"])]
    a = build_vocabulary(pairs, min_count=1)
    b = build_vocabulary(pairs[::-1], min_count=1)
    assert a.version_hash == b.version_hash and a == b


def test_vocabulary_empty_is_error():
    with pytest.raises(DataError):
        build_vocabulary([], min_count=1)


def test_vocabulary_hash_checked():
    v = Vocabulary(list(NUMERIC_FIELDS) + ["x"])
    Vocabulary(v.feature_names, version_hash=v.version_hash)
    with pytest.raises(VocabularyMismatchError):
        Vocabulary(v.feature_names, version_hash="0" * 16)


def test_featurize_examples():
    train = [_pair("a", chief_complaint="cough"), _pair("b", chief_complaint="cough")]
    vocab = build_vocabulary(train, min_count=2)
    rec, cs = _pair("c", chief_complaint="cough, rash", **{"vitals.temperature_c": 38.5})
    vec = featurize(rec, cs, vocab)
    cols = dict(vec.entries)
    assert cols[vocab.index["age"]] == 70
    assert cols[vocab.index["temperature"]] == 38.5
    assert cols[vocab.index["cc:affirmed:cough"]] == 1.0
    assert vocab.index["pulse_rate"] not in cols
    assert vec.dimension == len(vocab)
    rec, cs = _pair("d", **{"vitals.temperature_c": 98.6})
    assert vocab.index["temperature"] not in dict(featurize(rec, cs, vocab).entries)


def test_sparse_vector_invariants():
    with pytest.raises(ValueError):
        SparseFeatureVector(((2, 1.0), (1, 1.0)), 5)
    with pytest.raises(ValueError):
        SparseFeatureVector(((5, 1.0),), 5)


TEXTS = ["cough", "no fever", "uti x 3 days", "chest pain", "", "etoh abuse", "sob for 2 hours"]


@st.composite
def pairs(draw):
    fields = {"chief_complaint": draw(st.sampled_from(TEXTS)), "history_social": draw(st.sampled_from(TEXTS))}
    for key, lo, hi in (("vitals.temperature_c", 20, 110), ("vitals.pulse_bpm", 0, 320)):
        if draw(st.booleans()):
            fields[key] = draw(st.floats(lo, hi, allow_nan=False))
    return _pair(draw(st.text(alphabet="abc", min_size=1, max_size=4)), **fields)


@settings(max_examples=60, deadline=None)
@given(st.lists(pairs(), min_size=1, max_size=6), st.lists(pairs(), min_size=1, max_size=6))
def test_featurize_properties(train, other):
    vocab = build_vocabulary(train, min_count=1)
    frozen = copy.deepcopy((vocab.feature_names, vocab.index, vocab.version_hash))
    for r, c in train + other:
        vec = featurize(r, c, vocab)
        assert vec.dimension == len(vocab)
        assert vec == featurize(r, c, vocab)
        idx = [i for i, _ in vec.entries]
        assert idx == sorted(set(idx))
    assert (vocab.feature_names, vocab.index, vocab.version_hash) == frozen


def test_densify_missing_numeric_is_nan():
    vocab = build_vocabulary([_pair("a", chief_complaint="cough")], min_count=1)
    X = vocab.densify([featurize(*_pair("b", chief_complaint="rash"), vocab)])
    assert math.isnan(X[0, vocab.index["temperature"]])
    assert X[0, vocab.index["cc:affirmed:cough"]] == 0.0
    with pytest.raises(VocabularyMismatchError):
        vocab.densify([SparseFeatureVector((), len(vocab) + 1)])


def test_featurizer_estimator():
    recs = [_rec(str(i), chief_complaint="cough" if i % 2 else "rash") for i in range(10)]
    fz = TriageFeaturizer(dictionary=DICT, min_count=5).fit(recs)
    X = fz.transform(recs)
    assert X.shape == (10, len(fz.get_feature_names_out()))
    assert np.all(X[:, fz.vocabulary_.index["cc:affirmed:cough"]] == [i % 2 for i in range(10)])
