import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepsis_triage.cnlp import extract_text, load_dictionary
from sepsis_triage.exceptions import ConfigError
from sepsis_triage.protocols import (
    ProtocolConfig,
    ProtocolScreener,
    detect_infection_source,
    qsofa_score,
    screen_qsofa,
    screen_sirs,
    screen_standard,
    sirs_count,
)
from sepsis_triage.records import VitalSigns

import oracles
from oracles import qsofa_truth, sirs_truth

DICT = load_dictionary()
SOURCES = {
    "affirmed": extract_text("cough", DICT),
    "negated": extract_text("denies cough", DICT),
    "none": extract_text("", DICT),
    "non_infection": extract_text("chest pain", DICT),
}
MENTATIONS = [("alert", None), ("altered", None), ("absent", None), ("absent", 15), ("absent", 14),
              ("absent", 8), ("absent", 3)]


def _mentation_flag(state):
    return {"alert": False, "altered": True, "absent": None}[state]


def protocol_grid_mismatches():
    """Compare all three protocols with the truth tables over the acceptance grid.

    SIRS/standard read only temperature, pulse and RR; qSOFA reads RR, SBP and
    mentation/GCS. Each is swept over its full sub-grid, and a seeded sample of
    the joint grid checks that unread inputs never matter.
    """
    temps = oracles.GRID_TEMPS + [None]
    pulses = oracles.GRID_PULSES + [None]
    rrs = oracles.GRID_RRS + [None]
    sbps = oracles.GRID_SBPS + [None]
    bad = checked = 0
    for t, p, r in itertools.product(temps, pulses, rrs):
        v = VitalSigns(temperature=t, pulse_rate=p, respiratory_rate=r)
        truth = sirs_truth(t, p, r)
        res = screen_sirs(v)
        bad += (res.criteria_met != truth) + (res.positive != (truth >= 2))
        for name, cs in SOURCES.items():
            std = screen_standard(v, cs, DICT).positive
            bad += std != (truth >= 2 and name == "affirmed")
        checked += 1
    for r, s, (m, g) in itertools.product(rrs, sbps, MENTATIONS):
        v = VitalSigns(respiratory_rate=r, systolic_bp=s, altered_mentation=_mentation_flag(m), gcs_total=g)
        truth = qsofa_truth(r, s, m, g)
        res = screen_qsofa(v)
        bad += (res.criteria_met != truth) + (res.positive != (truth >= 2))
        checked += 1
    rng = np.random.default_rng(11)
    for _ in range(20000):
        t, p, r, s = (vals[rng.integers(len(vals))] for vals in (temps, pulses, rrs, sbps))
        m, g = MENTATIONS[rng.integers(len(MENTATIONS))]
        v = VitalSigns(temperature=t, pulse_rate=p, respiratory_rate=r, systolic_bp=s,
                       altered_mentation=_mentation_flag(m), gcs_total=g)
        bad += screen_sirs(v).criteria_met != sirs_truth(t, p, r)
        bad += screen_qsofa(v).criteria_met != qsofa_truth(r, s, m, g)
        bad += screen_standard(v, SOURCES["affirmed"], DICT).positive != (sirs_truth(t, p, r) >= 2)
        checked += 1
    return bad, checked


def test_protocol_grid_matches_truth_tables():
    start = time.perf_counter()
    bad, checked = protocol_grid_mismatches()
    assert bad == 0
    assert checked > 40000
    assert time.perf_counter() - start < 5.0


def test_sirs_examples():
    assert sirs_count(VitalSigns(temperature=38.5, pulse_rate=95, respiratory_rate=18)) == 2
    assert sirs_count(VitalSigns(temperature=38.0, pulse_rate=90, respiratory_rate=20)) == 0
    assert sirs_count(VitalSigns()) == 0
    assert screen_sirs(VitalSigns(temperature=35.0, pulse_rate=100, respiratory_rate=25)).positive
    assert not screen_sirs(VitalSigns(pulse_rate=100)).positive


def test_qsofa_examples():
    assert qsofa_score(VitalSigns(respiratory_rate=22, systolic_bp=100, altered_mentation=True)) == 3
    assert qsofa_score(VitalSigns(respiratory_rate=21, systolic_bp=101, altered_mentation=False)) == 0
    assert qsofa_score(VitalSigns(respiratory_rate=24, systolic_bp=120, altered_mentation=False)) == 1
    assert qsofa_score(VitalSigns(gcs_total=14)) == 1
    assert qsofa_score(VitalSigns(gcs_total=14, altered_mentation=False)) == 0


def test_qsofa_threshold_configurable():
    v = VitalSigns(respiratory_rate=22, systolic_bp=100, altered_mentation=False)
    assert screen_qsofa(v).positive
    assert not screen_qsofa(v, ProtocolConfig(qsofa_positive_threshold=3)).positive
    v3 = VitalSigns(respiratory_rate=22, systolic_bp=100, altered_mentation=True)
    assert screen_qsofa(v3, ProtocolConfig(qsofa_positive_threshold=3)).positive


def test_infection_source_examples():
    assert detect_infection_source(extract_text("cough", DICT), DICT) == "Respiratory"
    assert detect_infection_source(extract_text("no cough", DICT), DICT) is None
    assert detect_infection_source(extract_text("cellulitis", DICT), DICT) == "Skin"
    assert detect_infection_source(extract_text("no cough, uti", DICT), DICT) == "GI/GU"


def test_standard_examples():
    sirs2 = VitalSigns(temperature=38.5, pulse_rate=95)
    assert screen_standard(sirs2, SOURCES["affirmed"], DICT).positive
    assert not screen_standard(sirs2, SOURCES["none"], DICT).positive
    assert not screen_standard(VitalSigns(temperature=38.5), extract_text("uti", DICT), DICT).positive


def test_missing_inputs_listed():
    res = screen_sirs(VitalSigns(pulse_rate=95))
    assert set(res.missing_inputs) == {"temperature", "respiratory_rate"}
    res = screen_qsofa(VitalSigns(systolic_bp=90))
    assert set(res.missing_inputs) == {"respiratory_rate", "altered_mentation"}
    res = screen_qsofa(VitalSigns(systolic_bp=90, gcs_total=15))
    assert set(res.missing_inputs) == {"respiratory_rate"}


def test_config_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(sirs_min_criteria=4)
    with pytest.raises(ConfigError):
        ProtocolConfig(qsofa_sbp=0)
    with pytest.raises(ConfigError):
        ProtocolConfig(qsofa_positive_threshold=0)


_opt = lambda lo, hi: st.one_of(st.none(), st.floats(lo, hi, allow_nan=False))  # noqa: E731


@st.composite
def vitals(draw):
    return VitalSigns(temperature=draw(_opt(30, 42)), pulse_rate=draw(_opt(30, 200)),
                      respiratory_rate=draw(_opt(4, 50)), systolic_bp=draw(_opt(50, 220)),
                      gcs_total=draw(st.one_of(st.none(), st.integers(3, 15))),
                      altered_mentation=draw(st.one_of(st.none(), st.booleans())))


@settings(max_examples=300, deadline=None)
@given(vitals(), st.sampled_from(["temperature_high", "temperature_low", "pulse_rate", "respiratory_rate",
                                  "systolic_bp"]), st.floats(0, 20, allow_nan=False))
def test_worsening_never_unflags(v, which, delta):
    if which.startswith("temperature"):
        if v.temperature is None:
            return
        worse = v.replace(temperature=v.temperature + (delta if which.endswith("high") else -delta))
    elif which == "systolic_bp":
        if v.systolic_bp is None:
            return
        worse = v.replace(systolic_bp=v.systolic_bp - delta)
    else:
        if getattr(v, which) is None:
            return
        worse = v.replace(**{which: getattr(v, which) + delta})
    # a temperature can move from one abnormal side through normal to the other; only same-side moves count
    if which == "temperature_high" and v.temperature < 36:
        return
    if which == "temperature_low" and v.temperature > 38:
        return
    for screen in (screen_sirs, screen_qsofa):
        if screen(v).positive:
            assert screen(worse).positive
        assert screen(worse).criteria_met >= screen(v).criteria_met


@settings(max_examples=300, deadline=None)
@given(vitals(), st.sampled_from(["temperature", "pulse_rate", "respiratory_rate", "systolic_bp", "gcs_total",
                                  "altered_mentation"]))
def test_removing_a_vital_never_adds_criteria(v, which):
    fewer = v.replace(**{which: None})
    assert screen_sirs(fewer).criteria_met <= screen_sirs(v).criteria_met
    if which != "altered_mentation":
        assert screen_qsofa(fewer).criteria_met <= screen_qsofa(v).criteria_met


@settings(max_examples=300, deadline=None)
@given(vitals(), st.sampled_from(sorted(SOURCES)))
def test_standard_implies_sirs(v, source):
    if screen_standard(v, SOURCES[source], DICT).positive:
        assert screen_sirs(v).positive


def test_screener_estimator():
    recs = [(type("R", (), {"vitals": VitalSigns(temperature=39, pulse_rate=100)})(), SOURCES["affirmed"]),
            (type("R", (), {"vitals": VitalSigns()})(), SOURCES["none"])]
    screener = ProtocolScreener("standard", dictionary=DICT).fit()
    assert screener.predict(recs).tolist() == [True, False]
    assert screener.criteria_met(recs).tolist() == [2, 0]
    with pytest.raises(ConfigError):
        ProtocolScreener("news").fit()
