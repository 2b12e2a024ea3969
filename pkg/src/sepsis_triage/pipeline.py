"""End-to-end workflow pieces shared by the CLI and the acceptance suite.

Protocols and features both see vitals after the plausibility cleaning, so
a Fahrenheit temperature typed into a Celsius field never triggers SIRS.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boosting import BoostedStackClassifier, BoostedStackModel, ClassWeights, Ensemble, GbtParams, Tree
from .cnlp import ConceptDictionary, extract_all
from .exceptions import DataError, VocabularyMismatchError
from .features import DEFAULT_CLEANING, DEFAULT_RISK_TERMS, CleaningTable, SparseFeatureVector, Vocabulary, \
    build_vocabulary, clean_record, featurize
from .metrics import confusion_metrics, evaluate_system, select_threshold
from .protocols import DEFAULT_CONFIG, ProtocolConfig, screen_record
from .records import Tier, label_record

MODEL_FORMAT = "sepsis-triage-model"
MODEL_VERSION = 1
FEATURES_FORMAT = "sepsis-triage-features"


@dataclass
class Prepared:
    """Cleaned records with their concepts and derived labels."""

    records: list
    concepts: list
    tiers: list

    @property
    def ids(self) -> list:
        return [r.id for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([t is not Tier.NONE for t in self.tiers], dtype=bool)

    def tier_at_least(self, tier: Tier) -> np.ndarray:
        return np.array([t.rank >= tier.rank for t in self.tiers], dtype=bool)

    @property
    def pairs(self) -> list:
        return list(zip(self.records, self.concepts))

    def subset(self, idx) -> "Prepared":
        return Prepared([self.records[i] for i in idx], [self.concepts[i] for i in idx],
                        [self.tiers[i] for i in idx])


def prepare(records: Sequence, dictionary: ConceptDictionary, cleaning: CleaningTable = DEFAULT_CLEANING,
            icd10_map=None, require_labels: bool = True) -> Prepared:
    cleaned = [clean_record(r, cleaning) for r in records]
    concepts = [extract_all(r, dictionary) for r in cleaned]
    tiers = []
    for r in cleaned:
        if r.problem_list_icd10 or r.provider_note_dx:
            tiers.append(label_record(r, dictionary, icd10_map).tier)
        elif require_labels:
            raise DataError(f"record {r.id!r} has no label source (problem_list_icd10 or provider_note_dx)")
        else:
            tiers.append(Tier.NONE)
    return Prepared(cleaned, concepts, tiers)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, first ``round(fraction * n)`` indices go to the first part (both sorted)."""
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def screen_predictions(protocol: str, data: Prepared, dictionary: ConceptDictionary,
                       cfg: ProtocolConfig = DEFAULT_CONFIG) -> list:
    return [screen_record(protocol, r, c, dictionary, cfg) for r, c in data.pairs]


# --------------------------------------------------------------------------
# training


@dataclass
class TrainedModel:
    classifier: BoostedStackClassifier
    vocabulary: Vocabulary
    dictionary_hash: str
    cleaning: CleaningTable
    risk_terms: tuple
    threshold: float
    threshold_policy: dict
    training: dict = field(default_factory=dict)

    def vectors(self, data: Prepared) -> list:
        return [featurize(r, c, self.vocabulary, self.cleaning, self.risk_terms) for r, c in data.pairs]

    def check_dictionary(self, dictionary: ConceptDictionary) -> None:
        if dictionary.version_hash != self.dictionary_hash:
            raise VocabularyMismatchError(
                f"dictionary hash {dictionary.version_hash} differs from the model's {self.dictionary_hash}"
            )

    def scores_from_vectors(self, vectors: Sequence[SparseFeatureVector]) -> np.ndarray:
        return self.classifier.predict_proba(self.vocabulary.densify(vectors))[:, 1]

    def scores(self, data: Prepared, dictionary: ConceptDictionary) -> np.ndarray:
        self.check_dictionary(dictionary)
        return self.scores_from_vectors(self.vectors(data))


def train_model(data: Prepared, dictionary: ConceptDictionary, params: GbtParams, *, validation_fraction=0.2,
                split_seed=0, min_count=5, cleaning=DEFAULT_CLEANING, risk_terms=DEFAULT_RISK_TERMS,
                threshold_policy: Optional[dict] = None, protocol_cfg=DEFAULT_CONFIG, n_threads=1) -> TrainedModel:
    """Fit on a seeded share of ``data``, pick the operating threshold on the rest.

    The model is not refitted after threshold selection, so the logged
    validation metrics are exactly what the saved model reproduces.
    """
    y = data.labels
    if y.all() or not y.any():
        raise DataError("training labels (problem_list_icd10 / provider_note_dx) contain a single class")
    val_idx, fit_idx = split_indices(len(y), validation_fraction, split_seed)
    fit, val = data.subset(fit_idx), data.subset(val_idx)
    if fit.labels.all() or not fit.labels.any() or val.labels.all() or not val.labels.any():
        raise DataError("fit and validation splits both need positive and negative labels")
    vocab = build_vocabulary(fit.pairs, min_count, risk_terms)
    model = TrainedModel(None, vocab, dictionary.version_hash, cleaning, tuple(risk_terms), math.nan, {})
    X_fit = vocab.densify(model.vectors(fit))
    clf = BoostedStackClassifier(
        rounds=params.rounds, max_depth=params.max_depth, learning_rate=params.learning_rate,
        l2_reg=params.l2_reg, split_gain_min=params.split_gain_min, min_child_hessian=params.min_child_hessian,
        subsample_rows=params.subsample_rows, seed=params.seed, n_threads=n_threads,
    ).fit(X_fit, fit.labels.astype(np.int64))
    model.classifier = clf

    policy = dict(threshold_policy or {"policy": "target-fpr", "target_fpr": None, "value": None})
    val_scores = model.scores_from_vectors(model.vectors(val))
    if policy["policy"] == "target-fpr" and policy.get("target_fpr") is None:
        std = np.array([s.positive for s in screen_predictions("standard", val, dictionary, protocol_cfg)])
        policy["target_fpr"] = confusion_metrics(std, val.labels).fpr
        policy["target_source"] = "standard screening FPR on the validation split"
    threshold = select_threshold(val_scores, val.labels, policy["policy"], policy.get("target_fpr"),
                                 policy.get("value"))
    model.threshold = threshold
    model.threshold_policy = policy
    clf.threshold = threshold
    report = evaluate_system("model", val_scores, val.labels, threshold, B=0)
    model.training = {
        "n_fit": len(fit_idx),
        "n_validation": len(val_idx),
        "validation_split_seed": int(split_seed),
        "validation_fraction": float(validation_fraction),
        "loss": [float(v) for v in clf.train_loss_],
        "validation": {k: v for k, v in report.to_dict().items() if k in ("n", "n_positive", "counts", "metrics")},
    }
    return model


# --------------------------------------------------------------------------
# model file


def model_document(model: TrainedModel) -> dict:
    clf = model.classifier
    ens = clf.model_.ensemble
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "params": ens.params.to_dict(),
        "base_score": float(ens.base_score),
        "class_weights": {"w_pos": float(clf.class_weights_.w_pos), "w_neg": float(clf.class_weights_.w_neg)},
        "vocabulary": {
            "names": list(model.vocabulary.feature_names),
            "version_hash": model.vocabulary.version_hash,
            "min_count": model.vocabulary.min_count,
            "n_numeric": model.vocabulary.n_numeric,
        },
        "dictionary_hash": model.dictionary_hash,
        "cleaning": {k: list(v) for k, v in sorted(model.cleaning.windows.items())},
        "risk_terms": list(model.risk_terms),
        "trees": [t.to_dict() for t in ens.trees],
        "stack": {"a": float(clf.model_.stack_a), "b": float(clf.model_.stack_b)},
        "threshold": {"value": float(model.threshold), "selection": model.threshold_policy},
        "training": model.training,
    }


def model_from_document(doc: dict) -> TrainedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"not a model file (format {doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model file version {doc.get('version')!r}")
    try:
        voc = doc["vocabulary"]
        vocab = Vocabulary(voc["names"], voc["min_count"], voc["n_numeric"], version_hash=voc["version_hash"])
        params = GbtParams(**doc["params"])
        trees = [Tree.from_dict(t) for t in doc["trees"]]
        ensemble = Ensemble(trees, float(doc["base_score"]), params, list(doc["training"].get("loss", [])))
        threshold = doc["threshold"]
        clf = BoostedStackClassifier(**{k: v for k, v in params.to_dict().items()},
                                     threshold=float(threshold["value"]))
        clf.model_ = BoostedStackModel(ensemble, float(doc["stack"]["a"]), float(doc["stack"]["b"]))
        clf.classes_ = np.array([0, 1])
        clf.class_weights_ = ClassWeights(**doc["class_weights"])
        clf.n_features_in_ = len(vocab)
        cleaning = CleaningTable({k: tuple(v) for k, v in doc["cleaning"].items()})
        policy = dict(threshold["selection"])
        return TrainedModel(clf, vocab, doc["dictionary_hash"], cleaning, tuple(doc["risk_terms"]),
                            float(threshold["value"]), policy, doc["training"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"model file is missing or has a malformed field: {exc}") from None


def dump_json(obj, path) -> None:
    """Stable, byte-reproducible JSON (insertion key order, repr floats)."""
    text = json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def save_model(model: TrainedModel, path) -> None:
    dump_json(model_document(model), path)


def load_model(path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc.msg}") from None
    return model_from_document(doc)


# --------------------------------------------------------------------------
# per-record files


def write_jsonl(path, header: Optional[dict], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":"), ensure_ascii=False) + "\n")


def read_jsonl(path) -> list:
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        out.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise DataError(f"{path} line {lineno}: {exc.msg}") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return out


def concept_rows(data: Prepared) -> list:
    rows = []
    for r, cs in zip(data.records, data.concepts):
        rows.append({
            "id": r.id,
            "mentions": [
                {"canonical": m.canonical, "polarity": m.polarity.value, "source_field": m.source_field,
                 "span": list(m.span), "duration_bin": m.duration_bin}
                for m in cs.mentions
            ],
        })
    return rows


def write_features(path, model: TrainedModel, data: Prepared) -> None:
    header = {"format": FEATURES_FORMAT, "vocabulary_hash": model.vocabulary.version_hash,
              "dimension": len(model.vocabulary)}
    rows = ({"id": r.id, "entries": [[i, v] for i, v in vec.entries]}
            for r, vec in zip(data.records, model.vectors(data)))
    write_jsonl(path, header, rows)


def read_features(path, model: TrainedModel, ids: Sequence[str]) -> list:
    """Feature vectors from ``path`` in ``ids`` order; refuses vectors built under another vocabulary."""
    rows = read_jsonl(path)
    if not rows or rows[0].get("format") != FEATURES_FORMAT:
        raise DataError(f"{path} is not a features file")
    header, rows = rows[0], rows[1:]
    if header.get("vocabulary_hash") != model.vocabulary.version_hash:
        raise VocabularyMismatchError(
            f"features were built under vocabulary {header.get('vocabulary_hash')}, "
            f"model expects {model.vocabulary.version_hash}"
        )
    by_id = {row["id"]: row for row in rows}
    if sorted(by_id) != sorted(ids):
        raise DataError("feature file ids do not match the cohort ids")
    dim = int(header["dimension"])
    return [SparseFeatureVector(tuple((int(i), float(v)) for i, v in by_id[i]["entries"]), dim) for i in ids]
