"""Record + concepts -> feature vectors under a fixed, train-only vocabulary."""

from __future__ import annotations

import dataclasses
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cnlp import SOURCE_FIELDS, ConceptSet, Polarity, extract_all, load_dictionary
from .exceptions import ConfigError, DataError, VocabularyMismatchError

# fixed leading block of the vocabulary; vitals attribute names except "age"
NUMERIC_FIELDS = (
    "age",
    "temperature",
    "pulse_rate",
    "respiratory_rate",
    "systolic_bp",
    "diastolic_bp",
    "spo2",
    "gcs_total",
    "pain_score",
)

DEFAULT_WINDOWS = {
    "age": (0.0, 120.0),
    "temperature": (25.0, 45.0),
    "pulse_rate": (20.0, 300.0),
    "respiratory_rate": (4.0, 80.0),
    "systolic_bp": (40.0, 300.0),
    "diastolic_bp": (20.0, 200.0),
    "spo2": (50.0, 100.0),
    "gcs_total": (3.0, 15.0),
    "pain_score": (0.0, 10.0),
}

DEFAULT_RISK_TERMS = ("alcohol abuse", "drug abuse", "homelessness", "immunocompromise")


@dataclass(frozen=True)
class CleaningTable:
    windows: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_WINDOWS))

    def __post_init__(self):
        for name, (lo, hi) in self.windows.items():
            if not lo < hi:
                raise ConfigError(f"cleaning window for {name!r} needs min < max, got ({lo}, {hi})")

    def with_overrides(self, overrides: Mapping[str, tuple[float, float]]) -> "CleaningTable":
        merged = dict(self.windows)
        for name, window in overrides.items():
            if name not in merged:
                raise ConfigError(f"unknown cleaning field {name!r}")
            merged[name] = tuple(float(v) for v in window)
        return CleaningTable(merged)


DEFAULT_CLEANING = CleaningTable()


def clean_numeric(name: str, value, table: CleaningTable = DEFAULT_CLEANING):
    """Value inside the plausibility window, else ``None`` (never clamped)."""
    try:
        lo, hi = table.windows[name]
    except KeyError:
        raise ConfigError(f"no cleaning window for field {name!r}") from None
    if value is None or not lo <= value <= hi:
        return None
    return value


def clean_vitals(vitals, table: CleaningTable = DEFAULT_CLEANING):
    changes = {}
    for name in NUMERIC_FIELDS[1:]:
        value = getattr(vitals, name)
        cleaned = clean_numeric(name, value, table)
        if cleaned is not value:
            changes[name] = cleaned
    return vitals.replace(**changes) if changes else vitals


def clean_record(record, table: CleaningTable = DEFAULT_CLEANING):
    """Copy of ``record`` with implausible vitals removed (age is kept for the schema)."""
    vitals = clean_vitals(record.vitals, table)
    if vitals is record.vitals:
        return record
    return dataclasses.replace(record, vitals=vitals)


@dataclass(frozen=True)
class SparseFeatureVector:
    entries: tuple[tuple[int, float], ...]
    dimension: int

    def __post_init__(self):
        last = -1
        for idx, _ in self.entries:
            if idx <= last or idx >= self.dimension:
                raise ValueError("feature indices must be strictly increasing and < dimension")
            last = idx


def _digest(names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()[:16]


class Vocabulary:
    """Ordered feature names; the first ``n_numeric`` columns are numeric."""

    def __init__(self, feature_names: Sequence[str], min_count: int = 5, n_numeric: int = len(NUMERIC_FIELDS),
                 version_hash: Optional[str] = None):
        self.feature_names = tuple(feature_names)
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("duplicate feature names in vocabulary")
        self.index = {name: i for i, name in enumerate(self.feature_names)}
        self.min_count = min_count
        self.n_numeric = n_numeric
        self.version_hash = _digest(self.feature_names)
        if version_hash is not None and version_hash != self.version_hash:
            raise VocabularyMismatchError(
                f"vocabulary hash mismatch: stored {version_hash}, names hash to {self.version_hash}"
            )

    def __len__(self):
        return len(self.feature_names)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.feature_names == other.feature_names

    def densify(self, vectors: Iterable[SparseFeatureVector]) -> np.ndarray:
        """Stack vectors into a float matrix: absent numeric -> NaN, absent indicator -> 0."""
        vectors = list(vectors)
        X = np.zeros((len(vectors), len(self)), dtype=np.float64)
        X[:, : self.n_numeric] = np.nan
        for row, vec in enumerate(vectors):
            if vec.dimension != len(self):
                raise VocabularyMismatchError(
                    f"vector dimension {vec.dimension} does not match vocabulary size {len(self)}"
                )
            for idx, value in vec.entries:
                X[row, idx] = value
        return X


def _concept_feature(mention) -> str:
    return f"{SOURCE_FIELDS[mention.source_field]}:{mention.polarity.value}:{mention.canonical}"


def _categorical_features(record, concepts: ConceptSet, risk_terms) -> list[str]:
    names = [f"sex={record.sex}"]
    if record.arrival_mode:
        names.append(f"arrival_mode={record.arrival_mode.strip().lower()}")
    if record.vitals.altered_mentation is not None:
        names.append(f"altered_mentation={'true' if record.vitals.altered_mentation else 'false'}")
    for m in concepts.mentions:
        if m.polarity is Polarity.AFFIRMED and m.source_field != "chief_complaint" and m.canonical in risk_terms:
            names.append(f"risk:{m.canonical}=risk")
    return names


def _duration_feature(concepts: ConceptSet) -> Optional[str]:
    for m in concepts.mentions:
        if m.source_field == "chief_complaint" and m.duration_bin:
            return f"duration={m.duration_bin}"
    return None


def build_vocabulary(pairs: Sequence[tuple], min_count: int = 5,
                     risk_terms: Sequence[str] = DEFAULT_RISK_TERMS) -> Vocabulary:
    """Vocabulary from ``(record, concepts)`` pairs of the training split only."""
    if not pairs:
        raise DataError("cannot build a vocabulary from an empty training set")
    risk_terms = frozenset(risk_terms)
    categorical = set()
    durations = set()
    concept_counts = Counter()
    for record, concepts in pairs:
        categorical.update(_categorical_features(record, concepts, risk_terms))
        dur = _duration_feature(concepts)
        if dur:
            durations.add(dur)
        concept_counts.update({_concept_feature(m) for m in concepts.mentions})
    kept = sorted(name for name, count in concept_counts.items() if count >= min_count)
    names = list(NUMERIC_FIELDS) + sorted(categorical) + sorted(durations) + kept
    return Vocabulary(names, min_count=min_count)


def featurize(record, concepts: ConceptSet, vocab: Vocabulary, table: CleaningTable = DEFAULT_CLEANING,
              risk_terms: Sequence[str] = DEFAULT_RISK_TERMS) -> SparseFeatureVector:
    entries = {}
    age = clean_numeric("age", record.age_years, table)
    if age is not None:
        entries[vocab.index["age"]] = float(age)
    for name in NUMERIC_FIELDS[1:]:
        value = clean_numeric(name, getattr(record.vitals, name), table)
        if value is not None:
            entries[vocab.index[name]] = float(value)
    names = _categorical_features(record, concepts, frozenset(risk_terms))
    dur = _duration_feature(concepts)
    if dur:
        names.append(dur)
    names.extend(_concept_feature(m) for m in concepts.mentions)
    for name in names:
        idx = vocab.index.get(name)
        if idx is not None:
            entries[idx] = 1.0
    return SparseFeatureVector(tuple(sorted(entries.items())), len(vocab))


class TriageFeaturizer(TransformerMixin, BaseEstimator):
    """Fit a vocabulary on training records and emit dense learner matrices.

    ``X`` is a sequence of records or of ``(record, concepts)`` pairs; bare
    records are run through concept extraction with ``dictionary``.
    """

    def __init__(self, dictionary=None, min_count=5, cleaning=None, risk_terms=DEFAULT_RISK_TERMS):
        self.dictionary = dictionary
        self.min_count = min_count
        self.cleaning = cleaning
        self.risk_terms = risk_terms

    def _pairs(self, X):
        dictionary = self.dictionary
        pairs = []
        for item in X:
            if isinstance(item, tuple):
                pairs.append(item)
            else:
                if dictionary is None:
                    dictionary = load_dictionary()
                pairs.append((item, extract_all(item, dictionary)))
        return pairs

    def fit(self, X, y=None):
        self.vocabulary_ = build_vocabulary(self._pairs(X), self.min_count, self.risk_terms)
        self.n_features_out_ = len(self.vocabulary_)
        return self

    def transform_sparse(self, X) -> list[SparseFeatureVector]:
        check_is_fitted(self, "vocabulary_")
        table = self.cleaning or DEFAULT_CLEANING
        return [featurize(r, c, self.vocabulary_, table, self.risk_terms) for r, c in self._pairs(X)]

    def transform(self, X) -> np.ndarray:
        return self.vocabulary_.densify(self.transform_sparse(X))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.asarray(self.vocabulary_.feature_names, dtype=object)
