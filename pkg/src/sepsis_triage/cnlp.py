"""Dictionary-based clinical term extraction.

Pipeline: tokenize -> greedy longest-match against the concept dictionary ->
NegEx-style negation with a fixed forward window -> normalization to the
canonical term. Duration phrases ("x 3 days") are binned into hours/days/weeks.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

BOUNDARY = "<b>"

NEGATION_TRIGGERS = frozenset({"no", "denies", "denied", "without", "negative", "neg", "non"})
NEGATION_WINDOW = 4

# record attribute -> short prefix used in feature names
SOURCE_FIELDS = {
    "chief_complaint": "cc",
    "history_medical": "hx_medical",
    "history_social": "hx_social",
    "history_family": "hx_family",
    "history_surgical": "hx_surgical",
    "medications": "meds",
}

_TOKEN_RE = re.compile(r"\d+(?:\.\d+)+|[a-z0-9]+(?:-[a-z0-9]+)*|[,;.]")
_X_NUMBER_RE = re.compile(r"x(\d+(?:\.\d+)?)")

_DURATION_UNITS = {
    "hour": "hours", "hours": "hours", "hr": "hours", "hrs": "hours",
    "day": "days", "days": "days",
    "week": "weeks", "weeks": "weeks", "wk": "weeks", "wks": "weeks",
}


class Polarity(str, Enum):
    AFFIRMED = "affirmed"
    NEGATED = "negated"


@dataclass(frozen=True)
class DictionaryEntry:
    surface: tuple[str, ...]
    canonical: str
    category: str
    infection_system: Optional[str] = None


@dataclass(frozen=True)
class ConceptMention:
    canonical: str
    polarity: Polarity
    source_field: str
    span: tuple[int, int]
    duration_bin: Optional[str] = None


@dataclass(frozen=True)
class ConceptSet:
    mentions: tuple[ConceptMention, ...] = ()

    def __iter__(self):
        return iter(self.mentions)

    def __len__(self):
        return len(self.mentions)

    def keys(self) -> set[tuple[str, str, str]]:
        return {(m.canonical, m.polarity.value, m.source_field) for m in self.mentions}

    def merge(self, other: "ConceptSet") -> "ConceptSet":
        return ConceptSet(_dedupe(self.mentions + other.mentions))


def _is_number(token: str) -> bool:
    return token[0].isdigit() and token.replace(".", "").isdigit()


def tokenize(text: str) -> list[str]:
    """Lowercase word/number tokens; ``, ; .`` become :data:`BOUNDARY` markers."""
    tokens = []
    for match in _TOKEN_RE.finditer(text.lower()):
        tok = match.group()
        if tok in ",;.":
            tokens.append(BOUNDARY)
            continue
        x_num = _X_NUMBER_RE.fullmatch(tok)
        if x_num:
            tokens.extend(("x", x_num.group(1)))
        else:
            tokens.append(tok)
    return tokens


class ConceptDictionary:
    """Surface term -> canonical concept map with a first-token index."""

    def __init__(self, entries: Iterable[DictionaryEntry]):
        self.entries: tuple[DictionaryEntry, ...] = tuple(entries)
        self._by_first: dict[str, list[DictionaryEntry]] = {}
        self._systems: dict[str, Optional[str]] = {}
        seen = set()
        for entry in self.entries:
            if not entry.surface:
                raise ValueError("dictionary surface terms must be non-empty")
            if entry.surface in seen:
                raise ValueError(f"duplicate surface term {' '.join(entry.surface)!r}")
            seen.add(entry.surface)
            self._by_first.setdefault(entry.surface[0], []).append(entry)
            if entry.infection_system and not self._systems.get(entry.canonical):
                self._systems[entry.canonical] = entry.infection_system
            else:
                self._systems.setdefault(entry.canonical, None)
        missing = {e.canonical for e in self.entries} - {" ".join(e.surface) for e in self.entries}
        if missing:
            raise ValueError(f"canonical terms without their own surface entry: {sorted(missing)}")
        for candidates in self._by_first.values():
            candidates.sort(key=lambda e: -len(e.surface))
        self.max_length = max((len(e.surface) for e in self.entries), default=0)
        digest = hashlib.sha256()
        for e in self.entries:
            digest.update("\t".join((" ".join(e.surface), e.canonical, e.category, e.infection_system or "")).encode())
            digest.update(b"\n")
        self.version_hash = digest.hexdigest()[:16]

    def __len__(self):
        return len(self.entries)

    def candidates(self, first_token: str) -> Sequence[DictionaryEntry]:
        return self._by_first.get(first_token, ())

    def lookup(self, surface: str) -> Optional[DictionaryEntry]:
        key = tuple(tokenize(surface))
        for entry in self.candidates(key[0] if key else ""):
            if entry.surface == key:
                return entry
        return None

    def infection_system(self, canonical: str) -> Optional[str]:
        return self._systems.get(canonical)

    @classmethod
    def from_tsv(cls, text: str) -> "ConceptDictionary":
        entries = []
        header_seen = False
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if not header_seen:
                header_seen = True
                if cols[0] == "surface_term":
                    continue
            cols += [""] * (4 - len(cols))
            surface, canonical, category, system = (c.strip() for c in cols[:4])
            entries.append(DictionaryEntry(tuple(tokenize(surface)), canonical.lower(), category, system or None))
        return cls(entries)


def load_dictionary(path=None) -> ConceptDictionary:
    """Load a dictionary TSV; ``None`` loads the bundled one."""
    if path is None:
        text = resources.files("sepsis_triage.data").joinpath("dictionary.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return ConceptDictionary.from_tsv(text)


def match_concepts(tokens: Sequence[str], dictionary: ConceptDictionary):
    """Greedy longest match, left to right, non-overlapping.

    Returns a list of ``((start, end), entry)`` with ``end`` exclusive.
    """
    matches = []
    i = 0
    n = len(tokens)
    while i < n:
        found = None
        for entry in dictionary.candidates(tokens[i]):
            k = len(entry.surface)
            if i + k <= n and tuple(tokens[i:i + k]) == entry.surface:
                found = entry
                break
        if found is None:
            i += 1
            continue
        matches.append(((i, i + len(found.surface)), found))
        i += len(found.surface)
    return matches


def is_negated(tokens: Sequence[str], start: int, window: int = NEGATION_WINDOW) -> bool:
    for j in range(start - 1, max(start - window, 0) - 1, -1):
        if tokens[j] == BOUNDARY:
            return False
        if tokens[j] in NEGATION_TRIGGERS:
            return True
    return False


def apply_negation(tokens, matches, source_field="chief_complaint", window=NEGATION_WINDOW):
    mentions = []
    for (start, end), entry in matches:
        polarity = Polarity.NEGATED if is_negated(tokens, start, window) else Polarity.AFFIRMED
        mentions.append(ConceptMention(normalize_concept(entry), polarity, source_field, (start, end)))
    return mentions


def normalize_concept(entry: DictionaryEntry) -> str:
    return entry.canonical


def extract_duration(tokens: Sequence[str]) -> Optional[str]:
    """Bin of the first ``<number> <unit>`` (optionally preceded by ``x``)."""
    for i in range(len(tokens) - 1):
        if _is_number(tokens[i]) and tokens[i + 1] in _DURATION_UNITS:
            return _DURATION_UNITS[tokens[i + 1]]
    return None


def _clauses(tokens):
    start = 0
    for i, tok in enumerate(tokens + [BOUNDARY]):
        if tok == BOUNDARY:
            yield start, i
            start = i + 1


def _dedupe(mentions):
    out = []
    seen = set()
    for m in mentions:
        key = (m.canonical, m.polarity, m.source_field)
        if key in seen:
            continue
        seen.add(key)
        out.append(m)
    return tuple(out)


def extract_text(text, dictionary, source_field="chief_complaint", with_duration=False,
                 window=NEGATION_WINDOW) -> ConceptSet:
    """Run the pipeline on one text field.

    With ``with_duration`` a duration phrase is attached to the mentions that
    share its boundary-delimited clause.
    """
    if not text:
        return ConceptSet()
    tokens = tokenize(text)
    mentions = apply_negation(tokens, match_concepts(tokens, dictionary), source_field, window)
    if with_duration:
        attached = []
        for lo, hi in _clauses(tokens):
            bin_ = extract_duration(tokens[lo:hi])
            for m in mentions:
                if lo <= m.span[0] < hi:
                    attached.append(ConceptMention(m.canonical, m.polarity, m.source_field, m.span, bin_))
        mentions = attached
    return ConceptSet(_dedupe(mentions))


def extract_all(record, dictionary: ConceptDictionary) -> ConceptSet:
    """Concepts from the chief complaint and the five history fields of ``record``."""
    collected = []
    for attr in SOURCE_FIELDS:
        text = getattr(record, attr, None)
        if text:
            collected.extend(
                extract_text(text, dictionary, attr, with_duration=attr == "chief_complaint").mentions
            )
    return ConceptSet(_dedupe(collected))
