"""Run configuration: flat ``section.key = value`` files plus command-line overrides.

One global seed fans out to per-stage seeds, so a single number reproduces
a whole synth -> split -> train -> evaluate run:

    stage_seed(seed, stage) = first 4 bytes (big-endian) of sha256(f"{seed}:{stage}")
"""

from __future__ import annotations

import hashlib
from dataclasses import fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .boosting import GbtParams
from .exceptions import ConfigError
from .features import DEFAULT_CLEANING, DEFAULT_RISK_TERMS, CleaningTable
from .metrics import DEFAULT_BOOTSTRAP, THRESHOLD_POLICIES
from .protocols import ProtocolConfig
from .synth import CohortConfig

# keys without a section prefix and the plain (non-dataclass) sections
GENERAL_DEFAULTS = {
    "seed": "0",
    "threads": "1",
    "paths.dictionary": "",
    "paths.icd10_map": "",
    "split.train_fraction": "0.8",
    "split.validation_fraction": "0.2",
    "features.min_count": "5",
    "features.risk_terms": ",".join(DEFAULT_RISK_TERMS),
    "threshold.policy": "target-fpr",
    "threshold.target_fpr": "",
    "threshold.value": "",
    "eval.bootstrap": str(DEFAULT_BOOTSTRAP),
    "eval.level": "0.95",
}

_SECTIONS = {
    "gbt": {f.name for f in fields(GbtParams)},
    "protocol": {f.name for f in fields(ProtocolConfig)},
    "synth": {f.name for f in fields(CohortConfig)},
    "clean": set(DEFAULT_CLEANING.windows),
}


def parse_kv(text: str) -> dict:
    """``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def _check_key(key: str) -> None:
    if key in GENERAL_DEFAULTS:
        return
    section, _, name = key.partition(".")
    if section in _SECTIONS and name in _SECTIONS[section]:
        return
    raise ConfigError(f"unknown config key {key!r}")


class RunConfig:
    """Merged configuration values (raw strings) with typed accessors."""

    def __init__(self, values: Optional[Mapping[str, str]] = None):
        self.values = dict(GENERAL_DEFAULTS)
        for key, value in (values or {}).items():
            _check_key(key)
            self.values[key] = str(value).strip()

    @classmethod
    def load(cls, path=None, overrides: Sequence[str] = (), **flags) -> "RunConfig":
        """File values, then ``key=value`` overrides, then explicit flags (non-None)."""
        values = {}
        if path is not None:
            try:
                values.update(parse_kv(Path(path).read_text(encoding="utf-8")))
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like key=value")
            key, value = item.split("=", 1)
            values[key.strip()] = value.strip()
        for key, value in flags.items():
            if value is not None:
                values[key] = str(value)
        return cls(values)

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def get(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def get_float(self, key: str, optional: bool = False) -> Optional[float]:
        raw = self.values[key]
        if optional and raw == "":
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {raw!r}") from None

    def get_path(self, key: str) -> Optional[str]:
        return self.values[key] or None

    @property
    def seed(self) -> int:
        return self.get_int("seed")

    @property
    def threads(self) -> int:
        n = self.get_int("threads")
        if n < 1:
            raise ConfigError("threads must be >= 1")
        return n

    def fraction(self, key: str) -> float:
        f = self.get_float(key)
        if not 0 < f < 1:
            raise ConfigError(f"{key} must lie in (0, 1), got {f}")
        return f

    def gbt(self) -> GbtParams:
        raw = self.section("gbt")
        kwargs = {}
        for f in fields(GbtParams):
            if f.name in raw:
                cast = int if f.name in ("rounds", "max_depth", "seed") else float
                try:
                    kwargs[f.name] = cast(raw[f.name])
                except ValueError:
                    raise ConfigError(f"gbt.{f.name}: cannot parse {raw[f.name]!r}") from None
        kwargs.setdefault("seed", stage_seed(self.seed, "train"))
        return GbtParams(**kwargs)

    def protocol(self) -> ProtocolConfig:
        raw = self.section("protocol")
        kwargs = {}
        for f in fields(ProtocolConfig):
            if f.name in raw:
                cast = int if f.name in ("sirs_min_criteria", "qsofa_positive_threshold") else float
                try:
                    kwargs[f.name] = cast(raw[f.name])
                except ValueError:
                    raise ConfigError(f"protocol.{f.name}: cannot parse {raw[f.name]!r}") from None
        return ProtocolConfig(**kwargs)

    def cleaning(self) -> CleaningTable:
        overrides = {}
        for name, raw in self.section("clean").items():
            parts = raw.split(",")
            try:
                lo, hi = (float(p) for p in parts)
            except ValueError:
                raise ConfigError(f"clean.{name} must look like 'min,max', got {raw!r}") from None
            overrides[name] = (lo, hi)
        return DEFAULT_CLEANING.with_overrides(overrides)

    def synth(self) -> CohortConfig:
        raw = self.section("synth")
        raw.setdefault("seed", str(stage_seed(self.seed, "synth")))
        return CohortConfig.from_mapping(raw)

    def risk_terms(self) -> tuple:
        return tuple(t.strip() for t in self.values["features.risk_terms"].split(",") if t.strip())

    def threshold_policy(self) -> dict:
        policy = self.values["threshold.policy"]
        if policy not in THRESHOLD_POLICIES:
            raise ConfigError(f"threshold.policy must be one of {THRESHOLD_POLICIES}, got {policy!r}")
        out = {"policy": policy, "target_fpr": self.get_float("threshold.target_fpr", optional=True),
               "value": self.get_float("threshold.value", optional=True)}
        if policy == "fixed" and out["value"] is None:
            raise ConfigError("threshold.policy = fixed needs threshold.value")
        return out

    def bootstrap(self) -> tuple[int, float]:
        b = self.get_int("eval.bootstrap")
        level = self.get_float("eval.level")
        if b < 0 or not 0 < level < 1:
            raise ConfigError("eval.bootstrap must be >= 0 and eval.level in (0, 1)")
        return b, level
