"""JSON and CSV formats for models, traces, verdicts and experiment output."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path as FsPath
from typing import IO, Iterable, Mapping

import jsonschema
import numpy as np

from .mdp import GridConfig, Mdp, ModelError, Path, Policy, build_gridworld, policy_from_layout, validate_mdp

_PROB_ROW = {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}}
_POLICIES = {"type": "object", "additionalProperties": {"type": "object", "additionalProperties": {"type": "string"}}}
_CELL = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}

MODEL_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "required": ["states", "actions", "transitions", "init"],
            "properties": {
                "states": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "actions": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "transitions": {
                    "type": "object",
                    "additionalProperties": {"type": "object", "additionalProperties": _PROB_ROW},
                },
                "init": _PROB_ROW,
                "rewards": {
                    "type": "object",
                    "additionalProperties": {"type": "object", "additionalProperties": {"type": "number"}},
                },
                "labels": {
                    "type": "object",
                    "additionalProperties": {"type": "array", "items": {"type": "string"}},
                },
                "propositions": {"type": "array", "items": {"type": "string"}},
                "policies": _POLICIES,
            },
            "additionalProperties": False,
        },
        {
            "type": "object",
            "required": ["gridworld"],
            "properties": {
                "gridworld": {
                    "type": "object",
                    "properties": {
                        "rows": {"type": "integer", "minimum": 1},
                        "cols": {"type": "integer", "minimum": 1},
                        "start": _CELL,
                        "unsafe": {"type": "array", "items": _CELL},
                        "target": _CELL,
                        "slip": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                    "additionalProperties": False,
                },
                "policies": _POLICIES,
                "layouts": {
                    "type": "object",
                    "additionalProperties": {"type": "array", "items": {"type": "string"}},
                },
            },
            "additionalProperties": False,
        },
    ]
}

TRACE_SCHEMA = {
    "type": "object",
    "required": ["policy", "steps"],
    "properties": {
        "policy": {"type": "string"},
        "steps": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["state", "action"],
                "properties": {"state": {"type": "string"}, "action": {"type": "string"}},
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

TRACE_FILE_SCHEMA = {"oneOf": [TRACE_SCHEMA, {"type": "array", "items": TRACE_SCHEMA}]}

VERDICT_SCHEMA = {
    "type": "object",
    "required": ["formula", "verdict", "mean", "ci", "n", "method", "seed"],
    "properties": {
        "formula": {"type": "string"},
        "verdict": {"enum": ["true", "false", "undecided", None]},
        "mean": {"type": ["number", "null"]},
        "ci": {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 2, "maxItems": 2},
        "n": {"type": ["integer", "null"]},
        "method": {"type": ["string", "null"]},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

ABDUCT_HEADER = ("sample", "step", "state", "gumbel_value")
EXPERIMENT_HEADER = ("repetition", "arm", "phi_probability")
HISTOGRAM_HEADER = ("arm", "bin_low", "bin_high", "count")


class FormatError(ModelError):
    pass


def _validate(doc, schema, what: str) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise FormatError(f"invalid {what} at {where}: {e.message}") from None


def _read_json(source: str | FsPath | IO) -> object:
    try:
        if hasattr(source, "read"):
            return json.load(source)
        with open(source, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed JSON: {e}") from None


@dataclass(frozen=True)
class LoadedModel:
    mdp: Mdp
    policies: dict[str, Policy]


def model_from_dict(doc: Mapping) -> LoadedModel:
    _validate(doc, MODEL_SCHEMA, "model")
    if "gridworld" in doc:
        g = doc["gridworld"]
        cfg = GridConfig(
            rows=g.get("rows", 4),
            cols=g.get("cols", 4),
            start=tuple(g.get("start", (0, 0))),
            unsafe=frozenset(tuple(c) for c in g.get("unsafe", [(1, 2)])),
            target=tuple(g.get("target", (3, 3))),
            slip=g.get("slip", 0.1),
        )
        mdp = build_gridworld(cfg)
        try:
            policies = {name: policy_from_layout(rows) for name, rows in doc.get("layouts", {}).items()}
        except KeyError as e:
            raise FormatError(f"unknown layout arrow {e}") from None
    else:
        mdp = Mdp.from_tables(
            doc["states"],
            doc["actions"],
            doc["transitions"],
            doc["init"],
            doc.get("rewards"),
            doc.get("labels"),
            doc.get("propositions"),
        )
        policies = {}
    problems = validate_mdp(mdp)
    if problems:
        raise FormatError("; ".join(f"{v.kind} at {v.location}: {v.message}" for v in problems))
    policies.update({name: Policy(dict(table)) for name, table in doc.get("policies", {}).items()})
    for name, pol in policies.items():
        try:
            pol.check(mdp)
        except ModelError as e:
            raise FormatError(f"policy {name!r}: {e}") from None
    return LoadedModel(mdp, policies)


def load_model(source: str | FsPath | IO | None) -> LoadedModel:
    """Read a model file; ``None`` gives the built-in 4x4 grid world."""
    if source is None:
        text = resources.files("cfcheck.data").joinpath("gridworld.json").read_text(encoding="utf-8")
        return model_from_dict(json.loads(text))
    return model_from_dict(_read_json(source))


def trace_to_dict(path: Path, policy: str) -> dict:
    return {"policy": policy, "steps": [{"state": str(s), "action": a} for s, a in path]}


def trace_from_dict(doc: Mapping) -> tuple[Path, str]:
    _validate(doc, TRACE_SCHEMA, "trace")
    return Path(tuple((st["state"], st["action"]) for st in doc["steps"])), doc["policy"]


def load_traces(source) -> list[tuple[Path, str]]:
    """All traces in a file holding either one trace object or a list of them."""
    doc = _read_json(source)
    _validate(doc, TRACE_FILE_SCHEMA, "trace file")
    docs = doc if isinstance(doc, list) else [doc]
    return [trace_from_dict(d) for d in docs]


def dump_traces(traces: Iterable[tuple[Path, str]], fh: IO) -> None:
    json.dump([trace_to_dict(p, name) for p, name in traces], fh, indent=1)
    fh.write("\n")


def verdict_to_dict(formula: str, verdict, seed: int) -> dict:
    est = verdict.estimate
    doc = {
        "formula": formula,
        "verdict": None if verdict.value is None else verdict.value.value,
        "mean": None,
        "ci": [None, None],
        "n": None,
        "method": None,
        "seed": int(seed),
    }
    if est is not None:
        d = est.to_dict()
        doc.update(mean=d["mean"], ci=d["ci"], n=d["n"], method=d["method"])
    _validate(doc, VERDICT_SCHEMA, "verdict")
    return doc


def write_abduct_csv(contexts: np.ndarray, states: Iterable, fh: IO) -> None:
    """``contexts`` is ``(n, steps, |S|)``; one row per (sample, step, state)."""
    states = [str(s) for s in states]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ABDUCT_HEADER)
    for i, ctx in enumerate(contexts):
        for k, row in enumerate(ctx):
            for s, g in zip(states, row):
                w.writerow((i, k + 1, s, repr(float(g))))


def read_abduct_csv(fh: IO) -> list[dict]:
    return _read_csv(fh, ABDUCT_HEADER, {"sample": int, "step": int, "gumbel_value": float})


def write_experiment_csv(values: Mapping[str, np.ndarray], fh: IO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(EXPERIMENT_HEADER)
    for arm, vals in values.items():
        for rep, v in enumerate(vals):
            w.writerow((rep, arm, repr(float(v))))


def read_experiment_csv(fh: IO) -> list[dict]:
    return _read_csv(fh, EXPERIMENT_HEADER, {"repetition": int, "phi_probability": float})


def write_histogram_csv(hists: Mapping[str, dict], fh: IO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(HISTOGRAM_HEADER)
    for arm, h in hists.items():
        edges = h["edges"]
        for lo, hi, c in zip(edges[:-1], edges[1:], h["counts"]):
            w.writerow((arm, repr(float(lo)), repr(float(hi)), int(c)))


def _read_csv(fh: IO, header, casts) -> list[dict]:
    reader = csv.reader(fh)
    first = next(reader, None)
    if tuple(first or ()) != tuple(header):
        raise FormatError(f"expected CSV header {','.join(header)}")
    rows = []
    for line in reader:
        if len(line) != len(header):
            raise FormatError(f"bad CSV row {line!r}")
        row = dict(zip(header, line))
        for k, f in casts.items():
            row[k] = f(row[k])
        rows.append(row)
    return rows
