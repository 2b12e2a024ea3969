"""Seeded synthetic triage cohorts with a planted generative model.

Each record draws a latent condition (by month, so a covid ramp can be
planted), then emits observables independently given the condition: age,
arrival mode, rounded truncated-normal vitals, a mentation state, and
per-concept text slots (absent / affirmed / negated). Because emissions are
conditionally independent, the exact posterior log-odds of the sepsis label
given everything a model can see (plus the arrival month) is available in
closed form; it is written to a sidecar file as ``bayes_logit``.

Choices that do not depend on the condition (missingness, surface variants,
word order, filler text, sex, pain score) cancel in the likelihood ratio.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

from .cnlp import load_dictionary
from .exceptions import ConfigError, DataError
from .records import TriageRecord, VitalSigns, serialize_record

CONDITIONS = ("healthy", "infection_nonseptic", "covid", "sepsis", "severe_sepsis", "septic_shock")
SEPSIS_CONDITIONS = (3, 4, 5)
TIER_OF_CONDITION = {"sepsis": "sepsis", "severe_sepsis": "severe_sepsis", "septic_shock": "septic_shock"}
ARRIVAL_MODES = ("walk-in", "ambulance", "transfer")
ADULT_AGE_BINS = ((18, 45), (45, 65), (65, 80), (80, 101))
DURATION_BINS = ("none", "hours", "days", "weeks")
DURATION_WORDS = {"hours": ("hours", "hrs"), "days": ("days",), "weeks": ("weeks", "wks")}


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class CohortConfig:
    n_records: int = 50_000
    sepsis_prevalence: float = 0.0163
    severe_fraction: float = 0.20
    shock_fraction: float = 0.055
    infection_fraction: float = 0.10
    covid_monthly_fractions: tuple = ()
    pediatric_fraction: float = 0.25
    start_month: str = "2020-07"
    month_span: int = 12
    seed: int = 0
    site: str = "site-1"
    icd_fraction: float = 0.5

    def __post_init__(self):
        if int(self.n_records) != self.n_records or self.n_records < 1:
            raise ConfigError("synth.n_records must be a positive integer")
        for name in ("sepsis_prevalence", "severe_fraction", "shock_fraction", "infection_fraction",
                     "pediatric_fraction", "icd_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"synth.{name} must lie in [0, 1], got {v}")
        if self.shock_fraction > self.severe_fraction:
            raise ConfigError("synth.shock_fraction must not exceed severe_fraction (shock is part of severe)")
        if self.month_span < 1:
            raise ConfigError("synth.month_span must be >= 1")
        if self.covid_monthly_fractions and len(self.covid_monthly_fractions) != self.month_span:
            raise ConfigError(
                f"synth.covid_monthly_fractions needs {self.month_span} values, got {len(self.covid_monthly_fractions)}"
            )
        if any(not 0 <= f <= 1 for f in self.covid_monthly_fractions):
            raise ConfigError("synth.covid_monthly_fractions values must lie in [0, 1]")
        if self.pediatric_fraction * max(PED_MULTIPLIER) > 1:
            raise ConfigError("synth.pediatric_fraction too large for the condition multipliers")
        try:
            datetime.strptime(self.start_month, "%Y-%m")
        except ValueError:
            raise ConfigError("synth.start_month must look like YYYY-MM") from None

    def covid_fractions(self) -> np.ndarray:
        if not self.covid_monthly_fractions:
            return np.zeros(self.month_span)
        return np.asarray(self.covid_monthly_fractions, dtype=np.float64)

    def to_kv(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "covid_monthly_fractions":
                v = ",".join(repr(float(x)) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "CohortConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown synth option {key!r}")
            try:
                if key == "covid_monthly_fractions":
                    text = str(raw).strip()
                    kwargs[key] = tuple(float(x) for x in text.split(",")) if text else ()
                elif key in ("n_records", "month_span", "seed"):
                    kwargs[key] = int(raw)
                elif key in ("site", "start_month"):
                    kwargs[key] = str(raw)
                else:
                    kwargs[key] = float(raw)
            except ValueError:
                raise ConfigError(f"synth.{key}: cannot parse {raw!r}") from None
        return cls(**kwargs)


# --------------------------------------------------------------------------
# emission parameters (order of CONDITIONS)

PED_MULTIPLIER = (1.04, 1.1, 0.25, 0.12, 0.08, 0.06)

ADULT_AGE_PROBS = np.array([
    [0.45, 0.30, 0.17, 0.08],
    [0.42, 0.30, 0.18, 0.10],
    [0.30, 0.35, 0.23, 0.12],
    [0.10, 0.25, 0.35, 0.30],
    [0.07, 0.22, 0.36, 0.35],
    [0.06, 0.20, 0.38, 0.36],
])

ARRIVAL_PROBS = np.array([
    [0.83, 0.13, 0.04],
    [0.80, 0.15, 0.05],
    [0.70, 0.25, 0.05],
    [0.45, 0.45, 0.10],
    [0.35, 0.55, 0.10],
    [0.20, 0.70, 0.10],
])


@dataclass(frozen=True)
class VitalSpec:
    name: str
    step: float
    lo: float  # lower edge of the first rounding cell
    hi: float  # upper edge of the last rounding cell
    mean: tuple
    sd: tuple
    missing: float
    decimals: int = 0

    @property
    def n_cells(self) -> int:
        return int(round((self.hi - self.lo) / self.step))

    def value(self, cell):
        v = self.lo + self.step * (np.asarray(cell) + 0.5)
        return np.round(v, self.decimals)


VITALS = (
    VitalSpec("temperature", 0.1, 33.95, 42.05,
              (36.8, 37.45, 37.38, 37.65, 37.8, 37.7), (0.40, 0.85, 0.75, 1.0, 1.2, 1.5), 0.03, 1),
    VitalSpec("pulse_rate", 1.0, 29.5, 220.5,
              (84.0, 95.0, 95.8, 100.0, 110.0, 122.0), (14.0, 16.0, 15.0, 18.0, 20.0, 22.0), 0.03),
    VitalSpec("respiratory_rate", 1.0, 5.5, 60.5,
              (17.2, 18.8, 19.23, 19.8, 22.0, 25.0), (2.0, 2.6, 3.2, 3.4, 4.2, 5.0), 0.03),
    VitalSpec("systolic_bp", 1.0, 49.5, 250.5,
              (134.0, 130.0, 128.0, 120.0, 108.0, 92.0), (20.0, 20.0, 20.0, 24.0, 24.0, 20.0), 0.03),
    VitalSpec("diastolic_bp", 1.0, 24.5, 150.5,
              (80.0, 78.0, 77.0, 72.0, 66.0, 56.0), (12.0, 12.0, 12.0, 14.0, 14.0, 12.0), 0.05),
    VitalSpec("spo2", 1.0, 59.5, 100.5,
              (98.0, 97.0, 94.5, 95.0, 93.5, 91.5), (1.5, 2.0, 3.0, 3.0, 3.5, 4.0), 0.10),
)

ALTERED_PROB = np.array([0.02, 0.03, 0.04, 0.16, 0.30, 0.50])
GCS_PRESENT = 0.5
FLAG_PRESENT = 0.7
PAIN_PRESENT = 0.8

DURATION_PROBS = np.array([
    [0.70, 0.12, 0.13, 0.05],
    [0.45, 0.10, 0.38, 0.07],
    [0.35, 0.05, 0.50, 0.10],
    [0.55, 0.20, 0.20, 0.05],
    [0.55, 0.22, 0.18, 0.05],
    [0.55, 0.25, 0.15, 0.05],
])


@dataclass(frozen=True)
class TextSlot:
    canonical: str
    field: str
    affirmed: tuple
    negated: tuple = (0.0,) * 6


def _cc(canonical, affirmed, negated=(0.0,) * 6):
    return TextSlot(canonical, "chief_complaint", tuple(affirmed), tuple(negated))


_NEG_LOW = (0.03, 0.03, 0.02, 0.02, 0.02, 0.02)

TEXT_SLOTS = (
    # infection-source terms
    _cc("cough", (0.27, 0.30, 0.65, 0.26, 0.26, 0.24), (0.04, 0.04, 0.03, 0.03, 0.03, 0.02)),
    _cc("sore throat", (0.09, 0.14, 0.12, 0.01, 0.01, 0.01), _NEG_LOW),
    _cc("dysuria", (0.08, 0.14, 0.01, 0.06, 0.06, 0.05), _NEG_LOW),
    _cc("diarrhea", (0.09, 0.10, 0.10, 0.08, 0.08, 0.08), _NEG_LOW),
    _cc("flank pain", (0.06, 0.06, 0.005, 0.05, 0.05, 0.05)),
    _cc("cellulitis", (0.05, 0.12, 0.002, 0.10, 0.10, 0.10)),
    _cc("abscess", (0.05, 0.07, 0.002, 0.04, 0.04, 0.04)),
    _cc("pneumonia", (0.004, 0.05, 0.06, 0.18, 0.20, 0.22)),
    _cc("urinary tract infection", (0.02, 0.08, 0.005, 0.15, 0.16, 0.16)),
    _cc("covid-19", (0.002, 0.005, 0.50, 0.01, 0.01, 0.01)),
    _cc("influenza", (0.02, 0.04, 0.02, 0.01, 0.01, 0.01)),
    _cc("facial swelling", (0.01, 0.02, 0.001, 0.005, 0.005, 0.005)),
    _cc("neutropenic fever", (0.0005, 0.002, 0.0005, 0.03, 0.03, 0.03)),
    _cc("central line infection", (0.0005, 0.002, 0.0005, 0.02, 0.02, 0.02)),
    # other complaints
    _cc("fever", (0.05, 0.30, 0.45, 0.38, 0.42, 0.42), (0.05, 0.04, 0.02, 0.02, 0.02, 0.02)),
    _cc("chills", (0.02, 0.10, 0.15, 0.15, 0.17, 0.17), _NEG_LOW),
    _cc("weakness", (0.05, 0.05, 0.12, 0.28, 0.32, 0.35)),
    _cc("altered mental status", (0.01, 0.01, 0.02, 0.12, 0.18, 0.25)),
    _cc("lethargy", (0.01, 0.02, 0.04, 0.10, 0.13, 0.15)),
    _cc("shortness of breath", (0.07, 0.10, 0.40, 0.18, 0.22, 0.25), (0.03, 0.03, 0.01, 0.02, 0.02, 0.02)),
    _cc("chest pain", (0.12, 0.03, 0.06, 0.03, 0.03, 0.03), _NEG_LOW),
    _cc("abdominal pain", (0.12, 0.08, 0.03, 0.09, 0.09, 0.09)),
    _cc("vomiting", (0.06, 0.08, 0.06, 0.10, 0.10, 0.10), _NEG_LOW),
    _cc("nausea", (0.06, 0.06, 0.06, 0.08, 0.08, 0.08)),
    _cc("headache", (0.07, 0.05, 0.10, 0.02, 0.02, 0.02)),
    _cc("fall", (0.07, 0.01, 0.01, 0.06, 0.06, 0.06)),
    _cc("ankle pain", (0.05, 0.005, 0.005, 0.003, 0.003, 0.003)),
    _cc("back pain", (0.06, 0.03, 0.02, 0.03, 0.03, 0.03)),
    _cc("dizziness", (0.05, 0.02, 0.03, 0.05, 0.05, 0.05)),
    _cc("laceration", (0.05, 0.003, 0.003, 0.005, 0.005, 0.005)),
    _cc("poor appetite", (0.01, 0.03, 0.05, 0.12, 0.14, 0.15)),
    _cc("loss of taste", (0.001, 0.001, 0.20, 0.001, 0.001, 0.001)),
    _cc("myalgia", (0.02, 0.05, 0.20, 0.04, 0.04, 0.04)),
    # medical history
    TextSlot("diabetes mellitus", "history_medical", (0.08, 0.10, 0.14, 0.25, 0.27, 0.28)),
    TextSlot("hypertension", "history_medical", (0.15, 0.16, 0.22, 0.35, 0.36, 0.36)),
    TextSlot("copd", "history_medical", (0.03, 0.04, 0.05, 0.10, 0.11, 0.12)),
    TextSlot("congestive heart failure", "history_medical", (0.02, 0.03, 0.03, 0.10, 0.12, 0.13)),
    TextSlot("chronic kidney disease", "history_medical", (0.02, 0.03, 0.03, 0.10, 0.12, 0.13)),
    TextSlot("cancer", "history_medical", (0.03, 0.04, 0.03, 0.12, 0.13, 0.14)),
    TextSlot("dementia", "history_medical", (0.02, 0.02, 0.03, 0.10, 0.12, 0.13)),
    TextSlot("dialysis", "history_medical", (0.004, 0.005, 0.005, 0.04, 0.05, 0.05)),
    TextSlot("immunocompromise", "history_medical", (0.005, 0.01, 0.01, 0.05, 0.06, 0.06)),
    TextSlot("asthma", "history_medical", (0.06, 0.07, 0.07, 0.05, 0.05, 0.05)),
    # social history
    TextSlot("alcohol abuse", "history_social", (0.04, 0.05, 0.03, 0.08, 0.09, 0.09), (0.20,) * 6),
    TextSlot("drug abuse", "history_social", (0.03, 0.05, 0.02, 0.06, 0.07, 0.07), (0.20,) * 6),
    TextSlot("homelessness", "history_social", (0.02, 0.03, 0.02, 0.05, 0.05, 0.05)),
    TextSlot("smoker", "history_social", (0.15, 0.16, 0.10, 0.20, 0.20, 0.20)),
    TextSlot("nursing home resident", "history_social", (0.01, 0.02, 0.04, 0.12, 0.14, 0.16)),
    # surgical history
    TextSlot("recent surgery", "history_surgical", (0.01, 0.02, 0.01, 0.05, 0.06, 0.06)),
    TextSlot("appendectomy", "history_surgical", (0.05, 0.05, 0.05, 0.05, 0.05, 0.05)),
    TextSlot("cholecystectomy", "history_surgical", (0.04, 0.04, 0.05, 0.06, 0.06, 0.06)),
    TextSlot("hip replacement", "history_surgical", (0.02, 0.02, 0.03, 0.05, 0.05, 0.05)),
    # medications
    TextSlot("chemotherapy", "medications", (0.005, 0.008, 0.005, 0.05, 0.06, 0.06)),
    TextSlot("steroids", "medications", (0.02, 0.03, 0.03, 0.06, 0.07, 0.07)),
    TextSlot("insulin", "medications", (0.03, 0.04, 0.05, 0.10, 0.11, 0.12)),
    TextSlot("metformin", "medications", (0.04, 0.05, 0.07, 0.10, 0.10, 0.10)),
    TextSlot("aspirin", "medications", (0.06, 0.07, 0.09, 0.15, 0.15, 0.15)),
    TextSlot("lisinopril", "medications", (0.05, 0.06, 0.08, 0.12, 0.12, 0.12)),
)

HISTORY_FIELDS = ("history_medical", "history_social", "history_family", "history_surgical", "medications")
HISTORY_MISSING = 0.25
HISTORY_PREFIX = {
    "history_medical": ("hx of ", "pmh ", ""),
    "history_social": ("", "social ", ""),
    "history_family": ("family hx ", "fhx ", ""),
    "history_surgical": ("psh ", "s/p ", ""),
    "medications": ("takes ", "meds ", ""),
}
# family history carries no condition signal; it exists so the field is populated
FAMILY_TERMS = ("diabetes", "hypertension", "cancer", "stroke", "noncontributory")
EMPTY_HISTORY = "noncontributory"
CC_PREFIXES = ("", "pt c/o ", "c/o ", "pt reports ")
CC_FILLER = "evaluation"
NEGATION_WORDS = ("no", "denies")

ICD_CODES = {
    "healthy": (("S93.401A",), ("R07.9",), ("I10",), ("R10.9",), ("M54.5",)),
    "infection_nonseptic": (("J18.9",), ("N39.0",), ("L03.90",), ("J06.9",)),
    "covid": (("U07.1",), ("U07.1", "J12.82")),
    "sepsis": (("A41.9",), ("A41.9", "J18.9"), ("A41.9", "N39.0"), ("A40.9",)),
    "severe_sepsis": (("A41.9", "R65.20"), ("A41.9", "J18.9", "R65.20")),
    "septic_shock": (("A41.9", "R65.21"), ("A41.9", "R65.20", "R65.21")),
}
NOTES = {
    "healthy": ("ankle sprain", "chest pain, noncardiac", "no sepsis, final dx: ankle sprain", "back pain"),
    "infection_nonseptic": ("urinary tract infection", "pneumonia", "cellulitis", "viral syndrome"),
    "covid": ("covid-19", "covid-19 pneumonia", "viral syndrome"),
    "sepsis": ("sepsis secondary to pneumonia", "urosepsis", "sirs due to uti", "sepsis, cellulitis"),
    "severe_sepsis": ("severe sepsis, pneumonia", "severe sepsis due to uti"),
    "septic_shock": ("septic shock, pneumonia", "septic shock"),
}

# uniforms drawn per record; the layout below is fixed so records depend only on (seed, index)
_U_FIXED = 40
_U_PER_SLOT = 3
N_UNIFORMS = _U_FIXED + 2 * len(VITALS) + _U_PER_SLOT * len(TEXT_SLOTS)


def _record_uniforms(seed: int, n: int) -> np.ndarray:
    out = np.empty((n, N_UNIFORMS))
    key = np.zeros(2, dtype=np.uint64)
    key[0] = seed % 2**64
    for i in range(n):
        key[1] = i
        out[i] = np.random.Generator(np.random.Philox(key=key)).random(N_UNIFORMS)
    return out


# --------------------------------------------------------------------------
# priors and likelihood pieces


def _condition_priors(cfg: CohortConfig) -> np.ndarray:
    """(month_span, 6) prior over conditions per month."""
    ps = cfg.sepsis_prevalence
    tiers = np.array([1 - cfg.severe_fraction, cfg.severe_fraction - cfg.shock_fraction, cfg.shock_fraction]) * ps
    out = np.zeros((cfg.month_span, len(CONDITIONS)))
    for m, cf in enumerate(cfg.covid_fractions()):
        rest = 1 - ps
        out[m, 2] = cf * rest
        out[m, 1] = cfg.infection_fraction * (1 - cf) * rest
        out[m, 0] = (1 - cfg.infection_fraction) * (1 - cf) * rest
        out[m, 3:] = tiers
    return out


def _ped_probs(cfg):
    return np.asarray(PED_MULTIPLIER) * cfg.pediatric_fraction


def _log_cell_prob(spec: VitalSpec, cell: np.ndarray) -> np.ndarray:
    """log P(cell | condition) for every condition: shape (n, 6)."""
    mu = np.asarray(spec.mean)[None, :]
    sd = np.asarray(spec.sd)[None, :]
    lo_edge = spec.lo + spec.step * cell[:, None]
    a = (lo_edge - mu) / sd
    b = (lo_edge + spec.step - mu) / sd
    za = (spec.lo - mu) / sd
    zb = (spec.hi - mu) / sd
    return _log_interval(a, b) - _log_interval(za, zb)


def _log_interval(a, b):
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    a, b = np.broadcast_arrays(a, b)
    upper = a > 0
    # upper tail: Phi(b) - Phi(a) = Phi(-a) - Phi(-b)
    hi = np.where(upper, log_ndtr(-a), log_ndtr(b))
    lo = np.where(upper, log_ndtr(-b), log_ndtr(a))
    return hi + np.log1p(-np.exp(lo - hi))


# --------------------------------------------------------------------------
# generation


@dataclass
class Cohort:
    records: list
    conditions: np.ndarray  # index into CONDITIONS
    bayes_logit: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return self.conditions >= 3

    def sidecar_lines(self) -> list:
        return [
            json.dumps({"id": r.id, "condition": CONDITIONS[c], "bayes_logit": float(b)}, separators=(",", ":"))
            for r, c, b in zip(self.records, self.conditions, self.bayes_logit)
        ]


def _categorical(u, probs):
    """Inverse-CDF draw per row: ``probs`` has shape (n, k)."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def _surfaces_by_canonical(dictionary):
    out = {}
    for e in dictionary.entries:
        out.setdefault(e.canonical, []).append(" ".join(e.surface))
    for v in out.values():
        v.sort()
    return out


def generate(cfg: CohortConfig, dictionary=None) -> Cohort:
    dictionary = dictionary or load_dictionary()
    surfaces = _surfaces_by_canonical(dictionary)
    for slot in TEXT_SLOTS:
        if slot.canonical not in surfaces:
            raise ConfigError(f"text slot {slot.canonical!r} has no dictionary entry")
    n = cfg.n_records
    U = _record_uniforms(cfg.seed, n)
    col = iter(range(N_UNIFORMS))

    # month, time, condition
    month = np.minimum((U[:, next(col)] * cfg.month_span).astype(np.int64), cfg.month_span - 1)
    t_in_month = U[:, next(col)]
    priors = _condition_priors(cfg)
    cond = _categorical(U[:, next(col)], priors[month])

    # age
    ped = _ped_probs(cfg)
    is_ped = U[:, next(col)] < ped[cond]
    age_bin = _categorical(U[:, next(col)], ADULT_AGE_PROBS[cond])
    u_age = U[:, next(col)]
    lo = np.array([b[0] for b in ADULT_AGE_BINS])[age_bin]
    width = np.array([b[1] - b[0] for b in ADULT_AGE_BINS])[age_bin]
    age = np.where(is_ped, np.floor(u_age * 18), lo + np.floor(u_age * width)).astype(np.int64)

    sex = np.minimum((U[:, next(col)] * 3).astype(np.int64), 2)
    arrival = _categorical(U[:, next(col)], ARRIVAL_PROBS[cond])

    # mentation
    altered = U[:, next(col)] < ALTERED_PROB[cond]
    gcs_present = U[:, next(col)] < GCS_PRESENT
    flag_present = U[:, next(col)] < FLAG_PRESENT
    gcs_low = 9 + np.minimum((U[:, next(col)] * 6).astype(np.int64), 5)
    pain_present = U[:, next(col)] < PAIN_PRESENT
    pain = np.minimum((U[:, next(col)] * 11).astype(np.int64), 10)

    # duration, text layout
    duration = _categorical(U[:, next(col)], DURATION_PROBS[cond])
    u_dur_num = U[:, next(col)]
    u_cc_prefix = U[:, next(col)]
    hist_missing = {f: U[:, next(col)] < HISTORY_MISSING for f in HISTORY_FIELDS}
    hist_prefix = {f: U[:, next(col)] for f in HISTORY_FIELDS}
    u_family = U[:, next(col)]
    u_label_src = U[:, next(col)]
    u_label_pick = U[:, next(col)]
    used = next(col)
    assert used < _U_FIXED
    col = iter(range(_U_FIXED, N_UNIFORMS))

    # vitals
    cells = {}
    present = {}
    for spec in VITALS:
        u_miss, u_val = U[:, next(col)], U[:, next(col)]
        mu = np.asarray(spec.mean)[cond]
        sd = np.asarray(spec.sd)[cond]
        fa, fb = ndtr((spec.lo - mu) / sd), ndtr((spec.hi - mu) / sd)
        x = mu + sd * ndtri(fa + u_val * (fb - fa))
        x = np.clip(x, spec.lo, spec.hi)
        cells[spec.name] = np.clip(np.floor((x - spec.lo) / spec.step).astype(np.int64), 0, spec.n_cells - 1)
        present[spec.name] = u_miss >= spec.missing

    # text slots: state 0 absent, 1 affirmed, 2 negated
    states = np.zeros((n, len(TEXT_SLOTS)), dtype=np.int8)
    variant = np.zeros((n, len(TEXT_SLOTS)))
    order_key = np.zeros((n, len(TEXT_SLOTS)))
    for j, slot in enumerate(TEXT_SLOTS):
        u = U[:, next(col)]
        pa = np.asarray(slot.affirmed)[cond]
        pn = np.asarray(slot.negated)[cond]
        states[:, j] = np.where(u < pa, 1, np.where(u < pa + pn, 2, 0))
        variant[:, j] = U[:, next(col)]
        order_key[:, j] = U[:, next(col)]

    # closed-form posterior log-odds
    L = np.log(np.where(priors[month] > 0, priors[month], 1e-300))
    L += np.where(is_ped[:, None], np.log(ped)[None, :],
                  np.log1p(-ped)[None, :] + np.log(ADULT_AGE_PROBS[:, age_bin].T))
    L += np.log(ARRIVAL_PROBS[:, arrival].T)
    for spec in VITALS:
        L += np.where(present[spec.name][:, None], _log_cell_prob(spec, cells[spec.name]), 0.0)
    mentation_seen = gcs_present | flag_present
    L += np.where(mentation_seen[:, None],
                  np.where(altered[:, None], np.log(ALTERED_PROB)[None, :], np.log1p(-ALTERED_PROB)[None, :]), 0.0)
    cc_has_item = np.zeros(n, dtype=bool)
    for j, slot in enumerate(TEXT_SLOTS):
        pa, pn = np.asarray(slot.affirmed), np.asarray(slot.negated)
        with np.errstate(divide="ignore"):
            table = np.log(np.stack([1 - pa - pn, pa, pn]))  # (3, 6)
        ll = table[states[:, j]]
        if slot.field != "chief_complaint":
            ll = np.where(hist_missing[slot.field][:, None], 0.0, ll)
        else:
            cc_has_item |= states[:, j] == 1
        L += ll
    L += np.where(cc_has_item[:, None], np.log(DURATION_PROBS[:, duration].T), 0.0)
    sep = list(SEPSIS_CONDITIONS)
    non = [c for c in range(len(CONDITIONS)) if c not in SEPSIS_CONDITIONS]
    bayes = logsumexp(L[:, sep], axis=1) - logsumexp(L[:, non], axis=1)

    # assemble records
    start = datetime.strptime(cfg.start_month, "%Y-%m").replace(tzinfo=timezone.utc)
    month_starts = [_add_months(start, m) for m in range(cfg.month_span + 1)]
    vital_values = {spec.name: spec.value(cells[spec.name]) for spec in VITALS}
    records = []
    for i in range(n):
        m = int(month[i])
        span = (month_starts[m + 1] - month_starts[m]).total_seconds()
        arrival_time = month_starts[m] + timedelta(seconds=int(t_in_month[i] * span))
        vitals = VitalSigns(
            **{spec.name: (float(vital_values[spec.name][i]) if present[spec.name][i] else None) for spec in VITALS},
            gcs_total=(int(gcs_low[i]) if altered[i] else 15) if gcs_present[i] else None,
            pain_score=int(pain[i]) if pain_present[i] else None,
            altered_mentation=bool(altered[i]) if flag_present[i] else None,
        )
        texts = _texts(i, states[i], variant[i], order_key[i], surfaces, duration[i], u_dur_num[i],
                       u_cc_prefix[i], hist_missing, hist_prefix, u_family[i])
        cname = CONDITIONS[cond[i]]
        icd, note = None, None
        if u_label_src[i] < cfg.icd_fraction:
            options = ICD_CODES[cname]
            icd = tuple(options[min(int(u_label_pick[i] * len(options)), len(options) - 1)])
        else:
            options = NOTES[cname]
            note = options[min(int(u_label_pick[i] * len(options)), len(options) - 1)]
        records.append(TriageRecord(
            id=f"{cfg.site}-{cfg.seed}-{i:07d}",
            site=cfg.site,
            arrival_time=arrival_time,
            age_years=float(age[i]),
            sex=("male", "female", "other/unknown")[sex[i]],
            vitals=vitals,
            arrival_mode=ARRIVAL_MODES[arrival[i]],
            problem_list_icd10=icd,
            provider_note_dx=note,
            covid_diagnosed=bool(cond[i] == 2),
            **texts,
        ))
    return Cohort(records, cond, bayes)


def _add_months(dt: datetime, k: int) -> datetime:
    y, m = divmod(dt.month - 1 + k, 12)
    return dt.replace(year=dt.year + y, month=m + 1)


def _pick(options, u):
    return options[min(int(u * len(options)), len(options) - 1)]


def _texts(i, states, variant, order_key, surfaces, duration, u_dur_num, u_prefix, hist_missing, hist_prefix,
           u_family):
    items = {f: [] for f in ("chief_complaint",) + HISTORY_FIELDS}
    for j, slot in enumerate(TEXT_SLOTS):
        st = states[j]
        if st == 0:
            continue
        surface = _pick(surfaces[slot.canonical], variant[j])
        if st == 2:
            # the variant uniform also picks the trigger word; both choices are condition-free
            word = NEGATION_WORDS[int(variant[j] * 1e6) % 2]
            surface = f"{word} {surface}"
        items[slot.field].append((order_key[j], st, surface))
    out = {}
    cc = sorted(items["chief_complaint"])
    affirmed = [k for k, (_, st, _) in enumerate(cc) if st == 1]
    phrases = [s for _, _, s in cc]
    if affirmed and duration > 0:
        words = DURATION_WORDS[DURATION_BINS[duration]]
        number = 1 + int(u_dur_num * 6)
        unit = _pick(words, u_dur_num * 7 % 1)
        phrases[affirmed[0]] += f" x {number} {unit}"
    if not affirmed:
        phrases.append(CC_FILLER)
    out["chief_complaint"] = _pick(CC_PREFIXES, u_prefix) + ", ".join(phrases)
    for f in HISTORY_FIELDS:
        if hist_missing[f][i]:
            out[f] = None
            continue
        if f == "history_family":
            body = _pick(FAMILY_TERMS, u_family)
        else:
            body = ", ".join(s for _, _, s in sorted(items[f])) or EMPTY_HISTORY
        out[f] = _pick(HISTORY_PREFIX[f], hist_prefix[f][i]) + body
    return out


def write_cohort_files(cohort: Cohort, cohort_path, sidecar_path) -> None:
    Path(cohort_path).write_text("".join(serialize_record(r) + "\n" for r in cohort.records), encoding="utf-8")
    Path(sidecar_path).write_text("".join(line + "\n" for line in cohort.sidecar_lines()), encoding="utf-8")


# --------------------------------------------------------------------------
# oracle channel


def read_sidecar(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"sidecar line {lineno}: {exc.msg}") from None
    return out


def bayes_scores(sidecar: Sequence[dict], ids: Sequence[str]) -> np.ndarray:
    """Bayes log-odds for ``ids`` (in that order) from sidecar entries."""
    by_id = {row["id"]: float(row["bayes_logit"]) for row in sidecar}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"{len(missing)} record ids not in the sidecar, e.g. {missing[0]!r}")
    return np.array([by_id[i] for i in ids])


def expected_rates(cfg: CohortConfig, dictionary=None) -> dict:
    """Analytic population rates implied by the emission tables (for calibration checks).

    Returns, for covid and non-covid records: the share with an affirmed
    infection-source concept, and the shares meeting each SIRS vital criterion
    (missing vitals counted as not meeting it).
    """
    dictionary = dictionary or load_dictionary()
    priors = _condition_priors(cfg).mean(axis=0)
    groups = {"covid": np.array([0, 0, 1, 0, 0, 0.0]), "non_covid": np.array([1, 1, 0, 1, 1, 1.0])}
    src = np.ones(len(CONDITIONS))
    for slot in TEXT_SLOTS:
        if slot.field == "chief_complaint" and dictionary.infection_system(slot.canonical):
            src *= 1 - np.asarray(slot.affirmed)
    per_cond = {"source_of_infection": 1 - src}
    for spec in VITALS[:3]:
        mu, sd = np.asarray(spec.mean), np.asarray(spec.sd)
        norm = ndtr((spec.hi - mu) / sd) - ndtr((spec.lo - mu) / sd)
        if spec.name == "temperature":
            hit = (ndtr((35.95 - mu) / sd) - ndtr((spec.lo - mu) / sd)) + (ndtr((spec.hi - mu) / sd) - ndtr((38.05 - mu) / sd))
        elif spec.name == "pulse_rate":
            hit = ndtr((spec.hi - mu) / sd) - ndtr((90.5 - mu) / sd)
        else:
            hit = ndtr((spec.hi - mu) / sd) - ndtr((20.5 - mu) / sd)
        per_cond[spec.name] = (1 - spec.missing) * hit / norm
    out = {}
    for g, mask in groups.items():
        w = priors * mask
        if w.sum() == 0:
            continue
        w = w / w.sum()
        out[g] = {k: float(np.dot(w, v)) for k, v in per_cond.items()}
    return out
