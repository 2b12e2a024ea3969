"""Triage record schema, cohort file I/O and sepsis label derivation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .cnlp import ConceptDictionary, ConceptSet, Polarity, extract_text
from .exceptions import DataError, RecordParseError, RecordValidationError

# VitalSigns attribute -> key suffix in the cohort line format ("vitals.<suffix>")
VITAL_KEYS = {
    "temperature": "temperature_c",
    "pulse_rate": "pulse_bpm",
    "respiratory_rate": "resp_rate",
    "systolic_bp": "sbp_mmhg",
    "diastolic_bp": "dbp_mmhg",
    "spo2": "spo2_pct",
    "gcs_total": "gcs_total",
    "pain_score": "pain_0_10",
    "altered_mentation": "altered_mentation",
}
_INTEGER_VITALS = {"gcs_total", "pain_score"}

TEXT_FIELDS = (
    "chief_complaint",
    "history_medical",
    "history_social",
    "history_family",
    "history_surgical",
    "medications",
)
SEX_VALUES = ("male", "female", "other/unknown")


@dataclass(frozen=True)
class VitalSigns:
    temperature: Optional[float] = None
    pulse_rate: Optional[float] = None
    respiratory_rate: Optional[float] = None
    systolic_bp: Optional[float] = None
    diastolic_bp: Optional[float] = None
    spo2: Optional[float] = None
    gcs_total: Optional[int] = None
    pain_score: Optional[int] = None
    altered_mentation: Optional[bool] = None

    def replace(self, **changes) -> "VitalSigns":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TriageRecord:
    id: str
    site: str
    arrival_time: datetime
    age_years: float
    sex: str
    vitals: VitalSigns = field(default_factory=VitalSigns)
    arrival_mode: Optional[str] = None
    chief_complaint: str = ""
    history_medical: Optional[str] = None
    history_social: Optional[str] = None
    history_family: Optional[str] = None
    history_surgical: Optional[str] = None
    medications: Optional[str] = None
    problem_list_icd10: Optional[tuple[str, ...]] = None
    provider_note_dx: Optional[str] = None
    covid_diagnosed: Optional[bool] = None

    @property
    def month(self) -> str:
        """Calendar month of arrival, ``YYYY-MM``."""
        return f"{self.arrival_time.year:04d}-{self.arrival_time.month:02d}"


class Tier(str, Enum):
    NONE = "none"
    SEPSIS = "sepsis"
    SEVERE_SEPSIS = "severe_sepsis"
    SEPTIC_SHOCK = "septic_shock"

    @property
    def rank(self) -> int:
        return _TIER_RANK[self]


_TIER_RANK = {Tier.NONE: 0, Tier.SEPSIS: 1, Tier.SEVERE_SEPSIS: 2, Tier.SEPTIC_SHOCK: 3}


class LabelSource(str, Enum):
    ICD10 = "icd10"
    NOTE_TEXT = "note_text"
    SIRS_PLUS_INFECTION_DX = "sirs_plus_infection_dx"


@dataclass(frozen=True)
class SepsisLabel:
    tier: Tier
    source: LabelSource

    @property
    def is_sepsis(self) -> bool:
        return self.tier is not Tier.NONE


# --------------------------------------------------------------------------
# parsing / serialization


def _parse_time(value, line_number):
    if not isinstance(value, str):
        raise RecordValidationError("arrival_time", "expected ISO-8601 string", line_number)
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise RecordValidationError("arrival_time", f"not ISO-8601: {value!r}", line_number) from None
    if ts.tzinfo is None:
        raise RecordValidationError("arrival_time", "timestamp must carry a UTC offset", line_number)
    return ts.astimezone(timezone.utc)


def _number(name, value, line_number, integer=False):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RecordValidationError(name, f"expected a number, got {value!r}", line_number)
    if integer:
        if float(value) != int(value):
            raise RecordValidationError(name, f"expected an integer, got {value!r}", line_number)
        return int(value)
    return float(value)


def _optional_text(name, value, line_number):
    if value is None:
        return None
    if not isinstance(value, str):
        raise RecordValidationError(name, "expected a string", line_number)
    return value


def _optional_bool(name, value, line_number):
    if value is None:
        return None
    if not isinstance(value, bool):
        raise RecordValidationError(name, f"expected true/false, got {value!r}", line_number)
    return value


def record_from_dict(obj: dict, line_number: Optional[int] = None) -> TriageRecord:
    """Build a record from a decoded line object; unknown keys are ignored."""
    if not isinstance(obj, dict):
        raise RecordParseError("record must be an object", line_number)

    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise RecordValidationError("id", "must be a non-empty string", line_number)

    sex = obj.get("sex", "other/unknown")
    if sex not in SEX_VALUES:
        raise RecordValidationError("sex", f"{sex!r} not in {SEX_VALUES}", line_number)

    age = _number("age_years", obj.get("age_years"), line_number)
    if age is None or age < 0:
        raise RecordValidationError("age_years", "must be a number >= 0", line_number)

    # vitals may arrive nested ({"vitals": {...}}) or flattened ("vitals.pulse_bpm")
    nested = obj.get("vitals") or {}
    if not isinstance(nested, dict):
        raise RecordValidationError("vitals", "expected an object", line_number)
    vitals = {}
    for attr, key in VITAL_KEYS.items():
        raw = obj.get(f"vitals.{key}", nested.get(key))
        name = f"vitals.{key}"
        if attr == "altered_mentation":
            vitals[attr] = _optional_bool(name, raw, line_number)
        else:
            vitals[attr] = _number(name, raw, line_number, integer=attr in _INTEGER_VITALS)

    codes = obj.get("problem_list_icd10")
    if codes is not None:
        if not isinstance(codes, list) or not all(isinstance(c, str) for c in codes):
            raise RecordValidationError("problem_list_icd10", "expected a list of strings", line_number)
        codes = tuple(codes)

    return TriageRecord(
        id=rid,
        site=str(obj.get("site", "")),
        arrival_time=_parse_time(obj.get("arrival_time"), line_number),
        age_years=age,
        sex=sex,
        vitals=VitalSigns(**vitals),
        arrival_mode=_optional_text("arrival_mode", obj.get("arrival_mode"), line_number),
        chief_complaint=_optional_text("chief_complaint", obj.get("chief_complaint"), line_number) or "",
        history_medical=_optional_text("history_medical", obj.get("history_medical"), line_number),
        history_social=_optional_text("history_social", obj.get("history_social"), line_number),
        history_family=_optional_text("history_family", obj.get("history_family"), line_number),
        history_surgical=_optional_text("history_surgical", obj.get("history_surgical"), line_number),
        medications=_optional_text("medications", obj.get("medications"), line_number),
        problem_list_icd10=codes,
        provider_note_dx=_optional_text("provider_note_dx", obj.get("provider_note_dx"), line_number),
        covid_diagnosed=_optional_bool("covid_diagnosed", obj.get("covid_diagnosed"), line_number),
    )


def parse_record(line: str, line_number: Optional[int] = None) -> TriageRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordParseError(f"malformed JSON ({exc.msg})", line_number) from None
    return record_from_dict(obj, line_number)


def format_time(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def record_to_dict(record: TriageRecord) -> dict:
    """Flat-namespace dict; absent optionals are omitted."""
    out = {
        "id": record.id,
        "site": record.site,
        "arrival_time": format_time(record.arrival_time),
        "age_years": record.age_years,
        "sex": record.sex,
    }
    for attr, key in VITAL_KEYS.items():
        value = getattr(record.vitals, attr)
        if value is not None:
            out[f"vitals.{key}"] = value
    for name in ("arrival_mode",) + TEXT_FIELDS:
        value = getattr(record, name)
        if value is not None and not (name == "chief_complaint" and value == ""):
            out[name] = value
    if record.problem_list_icd10 is not None:
        out["problem_list_icd10"] = list(record.problem_list_icd10)
    if record.provider_note_dx is not None:
        out["provider_note_dx"] = record.provider_note_dx
    if record.covid_diagnosed is not None:
        out["covid_diagnosed"] = record.covid_diagnosed
    return out


def serialize_record(record: TriageRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":"))


def iter_cohort(path) -> Iterator[TriageRecord]:
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = parse_record(line, number)
            if record.id in seen:
                raise RecordValidationError("id", f"duplicate id {record.id!r}", number)
            seen.add(record.id)
            yield record


def read_cohort(path) -> list[TriageRecord]:
    try:
        return list(iter_cohort(path))
    except OSError as exc:
        raise DataError(f"cannot read cohort file {path}: {exc.strerror}") from None


def write_cohort(path, records: Iterable[TriageRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(serialize_record(record))
            fh.write("\n")


# --------------------------------------------------------------------------
# labels


def normalize_icd10(code: str) -> str:
    return code.strip().upper().replace(".", "")


def load_icd10_map(path=None) -> list[tuple[str, Tier]]:
    """Read the two-column (code-prefix, tier) TSV; defaults to the bundled table."""
    if path is None:
        text = resources.files("sepsis_triage.data").joinpath("icd10_sepsis.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    table = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        prefix, tier = line.split("\t")[:2]
        if prefix == "code_prefix":
            continue
        table.append((normalize_icd10(prefix), Tier(tier.strip())))
    # longest prefix first so more specific rows win on overlap
    table.sort(key=lambda row: (-len(row[0]), row[0]))
    return table


_DEFAULT_ICD10_MAP = None


def _default_icd10_map():
    global _DEFAULT_ICD10_MAP
    if _DEFAULT_ICD10_MAP is None:
        _DEFAULT_ICD10_MAP = load_icd10_map()
    return _DEFAULT_ICD10_MAP


def label_from_icd10(codes: Iterable[str], icd10_map=None) -> SepsisLabel:
    table = _default_icd10_map() if icd10_map is None else icd10_map
    best = Tier.NONE
    for code in codes:
        norm = normalize_icd10(code)
        for prefix, tier in table:
            if norm.startswith(prefix):
                if tier.rank > best.rank:
                    best = tier
                break
    return SepsisLabel(best, LabelSource.ICD10)


_NOTE_TIERS = {
    "septic shock": Tier.SEPTIC_SHOCK,
    "severe sepsis": Tier.SEVERE_SEPSIS,
    "sepsis": Tier.SEPSIS,
}


def label_from_note(note: str, concepts: ConceptSet, dictionary: ConceptDictionary) -> SepsisLabel:
    """Tier from affirmed diagnosis concepts in the provider note.

    ``concepts`` must come from the same note text; SIRS together with an affirmed
    infection-source concept counts as sepsis.
    """
    affirmed = [m for m in concepts.mentions if m.polarity is Polarity.AFFIRMED]
    best = Tier.NONE
    for mention in affirmed:
        tier = _NOTE_TIERS.get(mention.canonical)
        if tier is not None and tier.rank > best.rank:
            best = tier
    if best is not Tier.NONE:
        return SepsisLabel(best, LabelSource.NOTE_TEXT)
    has_sirs = any(m.canonical == "sirs" for m in affirmed)
    has_source = any(dictionary.infection_system(m.canonical) for m in affirmed)
    if has_sirs and has_source:
        return SepsisLabel(Tier.SEPSIS, LabelSource.SIRS_PLUS_INFECTION_DX)
    return SepsisLabel(Tier.NONE, LabelSource.NOTE_TEXT)


def label_record(record: TriageRecord, dictionary: ConceptDictionary, icd10_map=None) -> SepsisLabel:
    """Label with ICD-10 precedence over the provider note."""
    if record.problem_list_icd10:
        return label_from_icd10(record.problem_list_icd10, icd10_map)
    if record.provider_note_dx:
        concepts = extract_text(record.provider_note_dx, dictionary, "provider_note_dx")
        return label_from_note(record.provider_note_dx, concepts, dictionary)
    raise DataError(f"record {record.id!r} has neither problem_list_icd10 nor provider_note_dx")
