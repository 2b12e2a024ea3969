"""``sepsis-triage`` command line.

Exit codes: 0 success, 2 configuration/validation error, 3 data error.
Errors go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cnlp import load_dictionary
from .config import RunConfig, stage_seed
from .exceptions import ConfigError, ConvergenceError, DataError
from .metrics import HEATMAP_AXES, drift_series, evaluate_system, heatmap_grid, subgroup_evaluate, tp_overlap
from .pipeline import (
    concept_rows, dump_json, load_model, prepare, read_features, read_jsonl, save_model, screen_predictions,
    split_indices, train_model, write_features, write_jsonl,
)
from .protocols import PROTOCOLS
from .records import Tier, load_icd10_map, read_cohort, write_cohort
from .synth import generate, write_cohort_files

PREDICTIONS_FORMAT = "sepsis-triage-predictions"
SUBGROUPS = (("severe_sepsis", Tier.SEVERE_SEPSIS), ("septic_shock", Tier.SEPTIC_SHOCK))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, separators=(",", ":")))


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


class _Context:
    def __init__(self, args):
        overrides = list(args.set or [])
        flags = {"seed": args.seed, "threads": args.threads, "paths.dictionary": args.dictionary}
        self.cfg = RunConfig.load(args.config, overrides, **flags)
        self._dictionary = None
        self._icd10 = None

    @property
    def dictionary(self):
        if self._dictionary is None:
            try:
                self._dictionary = load_dictionary(self.cfg.get_path("paths.dictionary"))
            except OSError as exc:
                raise ConfigError(f"cannot read dictionary: {exc}") from None
            except ValueError as exc:
                raise ConfigError(f"invalid dictionary: {exc}") from None
        return self._dictionary

    @property
    def icd10_map(self):
        path = self.cfg.get_path("paths.icd10_map")
        if path and self._icd10 is None:
            try:
                self._icd10 = load_icd10_map(path)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"invalid ICD-10 map: {exc}") from None
        return self._icd10

    def prepare(self, path, require_labels=True):
        records = read_cohort(path)
        if not records:
            raise DataError(f"cohort file {path} has no records")
        return prepare(records, self.dictionary, self.cfg.cleaning(), self.icd10_map, require_labels)


# --------------------------------------------------------------------------
# commands


def cmd_synth(ctx: _Context, args) -> dict:
    cohort_cfg = ctx.cfg.synth()
    cohort = generate(cohort_cfg, ctx.dictionary)
    out = _out_dir(args.out)
    write_cohort_files(cohort, out / "cohort.jsonl", out / "latent.jsonl")
    (out / "synth.cfg").write_text("".join(f"synth.{line}\n" for line in cohort_cfg.to_kv().splitlines()),
                                   encoding="utf-8")
    return {"command": "synth", "n_records": len(cohort.records), "n_sepsis": int(cohort.labels.sum()),
            "cohort": str(out / "cohort.jsonl"), "latent": str(out / "latent.jsonl")}


def cmd_split(ctx: _Context, args) -> dict:
    fraction = ctx.cfg.fraction("split.train_fraction") if args.fraction is None else args.fraction
    if not 0 < fraction < 1:
        raise ConfigError(f"split fraction must lie in (0, 1), got {fraction}")
    records = read_cohort(args.cohort)
    train_idx, test_idx = split_indices(len(records), fraction, stage_seed(ctx.cfg.seed, "split"))
    out = _out_dir(args.out)
    write_cohort(out / "train.jsonl", (records[i] for i in train_idx))
    write_cohort(out / "test.jsonl", (records[i] for i in test_idx))
    return {"command": "split", "n_train": len(train_idx), "n_test": len(test_idx)}


def cmd_extract(ctx: _Context, args) -> dict:
    data = ctx.prepare(args.cohort, require_labels=False)
    out = _out_file(args.out)
    if args.model:
        model = load_model(args.model)
        model.check_dictionary(ctx.dictionary)
        write_features(out, model, data)
        return {"command": "extract", "kind": "features", "n_records": len(data.records)}
    write_jsonl(out, None, concept_rows(data))
    return {"command": "extract", "kind": "concepts", "n_records": len(data.records)}


def _prediction_rows(ids, scores, positives):
    for i, rid in enumerate(ids):
        yield {"id": rid, "score": float(scores[i]), "positive": bool(positives[i])}


def cmd_screen(ctx: _Context, args) -> dict:
    data = ctx.prepare(args.cohort, require_labels=False)
    results = screen_predictions(args.protocol, data, ctx.dictionary, ctx.cfg.protocol())
    header = {"format": PREDICTIONS_FORMAT, "system": args.protocol, "kind": "protocol", "threshold": None}
    rows = ({"id": r.id, "score": float(s.positive), "positive": s.positive, "criteria_met": s.criteria_met,
             "missing_inputs": list(s.missing_inputs)} for r, s in zip(data.records, results))
    write_jsonl(_out_file(args.out), header, rows)
    return {"command": "screen", "protocol": args.protocol, "n_positive": sum(s.positive for s in results)}


def cmd_train(ctx: _Context, args) -> dict:
    cfg = ctx.cfg
    data = ctx.prepare(args.train)
    model = train_model(
        data, ctx.dictionary, cfg.gbt(),
        validation_fraction=cfg.fraction("split.validation_fraction"),
        split_seed=stage_seed(cfg.seed, "validation"),
        min_count=cfg.get_int("features.min_count"),
        cleaning=cfg.cleaning(),
        risk_terms=cfg.risk_terms(),
        threshold_policy=cfg.threshold_policy(),
        protocol_cfg=cfg.protocol(),
        n_threads=cfg.threads,
    )
    out = _out_dir(args.out)
    save_model(model, out / "model.json")
    dump_json(model.training, out / "train_log.json")
    return {"command": "train", "model": str(out / "model.json"), "threshold": model.threshold,
            "n_features": len(model.vocabulary), "validation_auc": model.training["validation"]["metrics"]["auc"]}


def _system_scores(ctx: _Context, system, data, model_path=None, features_path=None):
    """(scores, threshold) where threshold None means boolean protocol output."""
    if system in PROTOCOLS:
        results = screen_predictions(system, data, ctx.dictionary, ctx.cfg.protocol())
        return np.array([r.positive for r in results], dtype=bool), None
    if system != "model":
        raise ConfigError(f"unknown system {system!r}; expected one of {PROTOCOLS + ('model',)}")
    if not model_path:
        raise ConfigError("--system model needs --model")
    model = load_model(model_path)
    if features_path:
        vectors = read_features(features_path, model, data.ids)
        return model.scores_from_vectors(vectors), model.threshold
    return model.scores(data, ctx.dictionary), model.threshold


def _report_document(name, scores, threshold, data, B, level, seed) -> dict:
    y = data.labels
    report = evaluate_system(name, scores, y, threshold, B=B, seed=seed, level=level)
    doc = report.to_dict()
    subgroups = {}
    for label, tier in SUBGROUPS:
        member = data.tier_at_least(tier)
        if np.any(member & y):
            sub = subgroup_evaluate(f"{name}/{label}", scores, y, member, threshold, B=B,
                                    seed=stage_seed(seed, label))
            subgroups[label] = sub.to_dict()
        else:
            subgroups[label] = None
    doc["subgroups"] = subgroups
    doc["bootstrap"] = {"resamples": B, "level": level, "seed": seed}
    return doc


def cmd_evaluate(ctx: _Context, args) -> dict:
    data = ctx.prepare(args.test)
    scores, threshold = _system_scores(ctx, args.system, data, args.model, args.features)
    B, level = ctx.cfg.bootstrap()
    seed = stage_seed(ctx.cfg.seed, f"evaluate:{args.system}")
    doc = _report_document(args.system, scores, threshold, data, B, level, seed)
    dump_json(doc, _out_file(args.out))
    if args.predictions_out:
        positives = scores if threshold is None else scores >= threshold
        header = {"format": PREDICTIONS_FORMAT, "system": args.system,
                  "kind": "protocol" if threshold is None else "model", "threshold": threshold}
        write_jsonl(_out_file(args.predictions_out), header,
                    _prediction_rows(data.ids, np.asarray(scores, dtype=np.float64), positives))
    return {"command": "evaluate", "system": args.system, "auc": doc["metrics"]["auc"],
            "tpr": doc["metrics"]["tpr"], "fpr": doc["metrics"]["fpr"]}


def _read_predictions(path, ids):
    rows = read_jsonl(path)
    if not rows or rows[0].get("format") != PREDICTIONS_FORMAT:
        raise DataError(f"{path} is not a predictions file")
    header, rows = rows[0], rows[1:]
    by_id = {row["id"]: row for row in rows}
    if len(by_id) != len(rows) or sorted(by_id) != sorted(ids):
        raise DataError(f"prediction ids in {path} do not match the test file ids")
    scores = np.array([by_id[i]["score"] for i in ids], dtype=np.float64)
    positive = np.array([by_id[i]["positive"] for i in ids], dtype=bool)
    return header, scores, positive


def cmd_compare(ctx: _Context, args) -> dict:
    if len(args.predictions) < 2:
        raise ConfigError("compare needs at least two --predictions files")
    data = ctx.prepare(args.test)
    y = data.labels
    B, level = ctx.cfg.bootstrap()
    systems, reports, preds = [], {}, {}
    for path in args.predictions:
        header, scores, positive = _read_predictions(path, data.ids)
        name = header["system"]
        if name in reports:
            name = f"{name}#{len(systems)}"
        threshold = header.get("threshold")
        seed = stage_seed(ctx.cfg.seed, f"evaluate:{header['system']}")
        reports[name] = _report_document(name, positive if threshold is None else scores, threshold, data,
                                         B, level, seed)
        preds[name] = positive
        systems.append(name)
    table = {m: {s: reports[s]["metrics"][m] for s in systems} for m in reports[systems[0]]["metrics"]}
    overlap = {}
    for a in systems:
        overlap[a] = {}
        for b in systems:
            try:
                overlap[a][b] = tp_overlap(preds[a], preds[b], y)
            except DataError:
                overlap[a][b] = None
    doc = {"systems": systems, "metrics": table, "tp_overlap": overlap,
           "tp_overlap_definition": "fraction of the row system's true positives also caught by the column system",
           "reports": reports}
    dump_json(doc, _out_file(args.out))
    return {"command": "compare", "systems": systems}


def cmd_drift(ctx: _Context, args) -> dict:
    data = ctx.prepare(args.cohort)
    covid = np.array([bool(r.covid_diagnosed) for r in data.records])
    months = [r.month for r in data.records]
    predictions = {}
    if args.model:
        model = load_model(args.model)
        predictions["model"] = model.scores(data, ctx.dictionary) >= model.threshold
    for protocol in args.protocol or ["standard"]:
        predictions[protocol] = np.array(
            [s.positive for s in screen_predictions(protocol, data, ctx.dictionary, ctx.cfg.protocol())])
    month_arr = np.asarray(months)
    fractions = {float(covid[month_arr == m].mean()) for m in set(months)}
    if len(fractions) == 1:
        raise DataError(f"covid fraction is {fractions.pop():g} in every month, "
                        "so its correlation with FPR is undefined (zero variance)")
    series = drift_series(months, covid, predictions, data.labels)
    doc = series.to_dict()
    dump_json(doc, _out_file(args.out))
    return {"command": "drift", "correlation": {k: v["r"] for k, v in series.correlation.items()}}


def _write_matrix(path, grid) -> None:
    path.write_text("".join(",".join(str(int(v)) for v in row) + "\n" for row in grid), encoding="utf-8")


def cmd_heatmap(ctx: _Context, args) -> dict:
    data = ctx.prepare(args.cohort)
    x = np.array([np.nan if getattr(r.vitals, args.x) is None else getattr(r.vitals, args.x)
                  for r in data.records], dtype=np.float64)
    y = np.array([np.nan if getattr(r.vitals, args.y) is None else getattr(r.vitals, args.y)
                  for r in data.records], dtype=np.float64)
    ages = np.array([r.age_years for r in data.records], dtype=np.float64)
    grid = heatmap_grid(x, y, data.labels, ages, args.x, args.y)
    out = _out_dir(args.out)
    files = {}
    for panel, counts in grid.counts.items():
        name = f"heatmap_{args.x}_{args.y}_{panel}.csv"
        _write_matrix(out / name, counts)
        files[panel] = name
    side = grid.sidecar()
    side["files"] = files
    dump_json(side, out / f"heatmap_{args.x}_{args.y}.json")
    return {"command": "heatmap", "n": side["n"], "outside_sirs_fraction": side["outside_sirs_fraction"]}


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file (section.key names)")
    common.add_argument("--seed", type=int, help="global seed; per-stage seeds derive from it")
    common.add_argument("--threads", type=int, help="worker cap; never changes results")
    common.add_argument("--dictionary", help="concept dictionary TSV (default: bundled)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    parser = _Parser(prog="sepsis-triage", description="ED-triage sepsis screening toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort and latent sidecar")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="seeded train/test split")
    p.add_argument("cohort")
    p.add_argument("--fraction", type=float, help="train share (default split.train_fraction)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("extract", parents=[common], help="concepts per record, or features under a model")
    p.add_argument("cohort")
    p.add_argument("--model", help="emit sparse features under this model's vocabulary")
    p.add_argument("--out", required=True, help="output JSONL file")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("screen", parents=[common], help="run a rule-based protocol")
    p.add_argument("cohort")
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--out", required=True, help="output predictions JSONL")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("train", parents=[common], help="fit the boosted stack and pick its threshold")
    p.add_argument("train")
    p.add_argument("--out", required=True, help="output directory for model.json and train_log.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluation report for a protocol or model")
    p.add_argument("test")
    p.add_argument("--system", required=True, help="sirs, standard, qsofa or model")
    p.add_argument("--model", help="model file (for --system model)")
    p.add_argument("--features", help="precomputed features file from 'extract --model'")
    p.add_argument("--predictions-out", help="also write per-record predictions")
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="side-by-side metrics and TP overlap")
    p.add_argument("test")
    p.add_argument("--predictions", action="append", required=True, help="predictions file (repeat)")
    p.add_argument("--out", required=True, help="output comparison JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("drift", parents=[common], help="monthly covid fraction vs FPR")
    p.add_argument("cohort")
    p.add_argument("--model", help="model file")
    p.add_argument("--protocol", action="append", choices=PROTOCOLS, help="protocols to include (default standard)")
    p.add_argument("--out", required=True, help="output drift JSON")
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("heatmap", parents=[common], help="vital-sign count grids by label")
    p.add_argument("cohort")
    p.add_argument("--x", choices=sorted(HEATMAP_AXES), default="temperature")
    p.add_argument("--y", choices=sorted(HEATMAP_AXES), default="pulse_rate")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_heatmap)
    return parser


def _fail(exc, code) -> int:
    record = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    sys.stderr.write(json.dumps(record, separators=(",", ":")) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        ctx = _Context(args)
        summary = args.func(ctx, args)
    except ConfigError as exc:
        return _fail(exc, 2)
    except (DataError, ConvergenceError) as exc:
        return _fail(exc, 3)
    _emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
