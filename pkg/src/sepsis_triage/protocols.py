"""Rule-based triage screening: SIRS, standard screening (SIRS + infection source), qSOFA.

Only triage-time inputs are used. SIRS omits the white-cell criterion since
labs are not available at triage. Absent vitals never trigger a criterion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .cnlp import ConceptDictionary, ConceptSet, Polarity
from .exceptions import ConfigError

PROTOCOLS = ("sirs", "standard", "qsofa")


@dataclass(frozen=True)
class ProtocolConfig:
    sirs_temp_low: float = 36.0
    sirs_temp_high: float = 38.0
    sirs_pulse: float = 90.0
    sirs_rr: float = 20.0
    sirs_min_criteria: int = 2
    qsofa_rr: float = 22.0
    qsofa_sbp: float = 100.0
    qsofa_positive_threshold: int = 2

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"protocol.{f.name} must be strictly positive")
        if self.sirs_min_criteria not in (1, 2, 3):
            raise ConfigError("protocol.sirs_min_criteria must be 1, 2 or 3")
        if self.qsofa_positive_threshold not in (1, 2, 3):
            raise ConfigError("protocol.qsofa_positive_threshold must be 1, 2 or 3")
        if self.sirs_temp_low >= self.sirs_temp_high:
            raise ConfigError("protocol.sirs_temp_low must be below sirs_temp_high")


DEFAULT_CONFIG = ProtocolConfig()


@dataclass(frozen=True)
class ScreenResult:
    protocol: str
    positive: bool
    criteria_met: int
    missing_inputs: tuple[str, ...] = field(default=())


def _sirs(vitals, cfg):
    met = 0
    missing = []
    t = vitals.temperature
    if t is None:
        missing.append("temperature")
    elif t < cfg.sirs_temp_low or t > cfg.sirs_temp_high:
        met += 1
    if vitals.pulse_rate is None:
        missing.append("pulse_rate")
    elif vitals.pulse_rate > cfg.sirs_pulse:
        met += 1
    if vitals.respiratory_rate is None:
        missing.append("respiratory_rate")
    elif vitals.respiratory_rate > cfg.sirs_rr:
        met += 1
    return met, tuple(missing)


def sirs_count(vitals, cfg: ProtocolConfig = DEFAULT_CONFIG) -> int:
    return _sirs(vitals, cfg)[0]


def screen_sirs(vitals, cfg: ProtocolConfig = DEFAULT_CONFIG) -> ScreenResult:
    met, missing = _sirs(vitals, cfg)
    return ScreenResult("sirs", met >= cfg.sirs_min_criteria, met, missing)


def detect_infection_source(concepts: ConceptSet, dictionary: ConceptDictionary) -> Optional[str]:
    """System of the first affirmed mention with an infection source, else ``None``."""
    for mention in concepts.mentions:
        if mention.polarity is not Polarity.AFFIRMED:
            continue
        system = dictionary.infection_system(mention.canonical)
        if system:
            return system
    return None


def screen_standard(vitals, concepts: ConceptSet, dictionary: ConceptDictionary,
                    cfg: ProtocolConfig = DEFAULT_CONFIG) -> ScreenResult:
    sirs = screen_sirs(vitals, cfg)
    source = detect_infection_source(concepts, dictionary)
    return ScreenResult("standard", sirs.positive and source is not None, sirs.criteria_met, sirs.missing_inputs)


def _qsofa(vitals, cfg):
    met = 0
    missing = []
    if vitals.respiratory_rate is None:
        missing.append("respiratory_rate")
    elif vitals.respiratory_rate >= cfg.qsofa_rr:
        met += 1
    if vitals.systolic_bp is None:
        missing.append("systolic_bp")
    elif vitals.systolic_bp <= cfg.qsofa_sbp:
        met += 1
    # GCS < 15 stands in for altered mentation only when the flag itself is absent
    if vitals.altered_mentation is not None:
        met += bool(vitals.altered_mentation)
    elif vitals.gcs_total is not None:
        met += vitals.gcs_total < 15
    else:
        missing.append("altered_mentation")
    return met, tuple(missing)


def qsofa_score(vitals, cfg: ProtocolConfig = DEFAULT_CONFIG) -> int:
    return _qsofa(vitals, cfg)[0]


def screen_qsofa(vitals, cfg: ProtocolConfig = DEFAULT_CONFIG) -> ScreenResult:
    met, missing = _qsofa(vitals, cfg)
    return ScreenResult("qsofa", met >= cfg.qsofa_positive_threshold, met, missing)


def screen_record(protocol: str, record, concepts: Optional[ConceptSet] = None,
                  dictionary: Optional[ConceptDictionary] = None,
                  cfg: ProtocolConfig = DEFAULT_CONFIG) -> ScreenResult:
    if protocol == "sirs":
        return screen_sirs(record.vitals, cfg)
    if protocol == "qsofa":
        return screen_qsofa(record.vitals, cfg)
    if protocol == "standard":
        if concepts is None or dictionary is None:
            raise ValueError("standard screening needs the record's concepts and the dictionary")
        return screen_standard(record.vitals, concepts, dictionary, cfg)
    raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


class ProtocolScreener(BaseEstimator):
    """Estimator wrapper so a protocol can sit next to learned models.

    ``fit`` is a no-op. ``predict`` takes a sequence of ``(record, concepts)``
    pairs (or bare records for SIRS/qSOFA) and returns a boolean array.
    """

    def __init__(self, protocol="sirs", config=None, dictionary=None):
        self.protocol = protocol
        self.config = config
        self.dictionary = dictionary

    def fit(self, X=None, y=None):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        return self

    def _results(self, X: Sequence):
        cfg = self.config or DEFAULT_CONFIG
        out = []
        for item in X:
            record, concepts = item if isinstance(item, tuple) else (item, None)
            out.append(screen_record(self.protocol, record, concepts, self.dictionary, cfg))
        return out

    def predict(self, X) -> np.ndarray:
        return np.array([r.positive for r in self._results(X)], dtype=bool)

    def criteria_met(self, X) -> np.ndarray:
        return np.array([r.criteria_met for r in self._results(X)], dtype=np.int64)
