"""JSON model specifications and the built-in paper models.

Schema (``spec_version`` 1)::

    {
      "spec_version": 1,
      "name": "my_model",
      "n": 1, "d": 1, "m0": 2,
      "drift":     [[terms, ...n] ...m0],            # b(x, i)_k
      "diffusion": [[[terms, ...d] ...n] ...m0],     # sigma(x, i)_{k, r}
      "generator": [{"from": 0, "to": 1, "terms": terms}, ...],
      "clamp_negative": true,
      "probe_box": {"low": [-1.0], "high": [1.0], "points_per_axis": 3},
      "builtin": "example_2_9"                       # optional, overrides all of the above
    }

where ``terms`` is a list of ``{"exponents": [e_1, ..., e_n], "coeff": c}``.
States are 0-based.  An empty or missing ``drift``/``diffusion`` is the zero
polynomial.
"""

from __future__ import annotations

import itertools
import json

import jsonschema
import numpy as np

from .averaging import SwitchModel
from .chain import GeneratorField, validate_generator
from .errors import ModelSpecError
from .poisson import StateFunctionField
from .polynomial import PolyArray

BUILTINS = ("example_2_9", "example_2_11", "remark_5_4", "cubic")

_TERMS = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["exponents", "coeff"],
        "properties": {
            "exponents": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "coeff": {"type": "number"},
        },
        "additionalProperties": False,
    },
}

SCHEMA = {
    "type": "object",
    "properties": {
        "spec_version": {"const": 1},
        "name": {"type": "string"},
        "builtin": {"enum": list(BUILTINS)},
        "n": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "m0": {"type": "integer", "minimum": 1},
        "drift": {"type": "array", "items": {"type": "array", "items": _TERMS}},
        "diffusion": {"type": "array",
                      "items": {"type": "array", "items": {"type": "array", "items": _TERMS}}},
        "generator": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "terms"],
                "properties": {"from": {"type": "integer", "minimum": 0},
                               "to": {"type": "integer", "minimum": 0},
                               "terms": _TERMS},
                "additionalProperties": False,
            },
        },
        "clamp_negative": {"type": "boolean"},
        "probe_box": {
            "type": "object",
            "properties": {"low": {"type": "array", "items": {"type": "number"}},
                           "high": {"type": "array", "items": {"type": "number"}},
                           "points_per_axis": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
    },
    "anyOf": [{"required": ["builtin"]}, {"required": ["n", "d", "m0"]}],
}


def _const(c, n=1):
    return [{"exponents": [0] * n, "coeff": float(c)}] if c != 0 else []


_SWAP_2 = [{"from": 0, "to": 1, "terms": _const(1.0)},
           {"from": 1, "to": 0, "terms": _const(1.0)}]


def builtin_spec(name):
    """Spec document for one of the built-in models."""
    if name == "example_2_9":
        drift, diffusion = [[_const(1.0)], [_const(-1.0)]], [[[_const(1.0)]], [[_const(1.0)]]]
    elif name == "example_2_11":
        drift, diffusion = [[_const(1.0)], [_const(-1.0)]], [[[_const(1.0)]], [[_const(-1.0)]]]
    elif name == "remark_5_4":
        drift, diffusion = [[[]], [[]]], [[[_const(1.0)]], [[_const(-1.0)]]]
    elif name == "cubic":
        cube = {"exponents": [3], "coeff": -1.0}
        drift = [[[cube] + _const(1.0)], [[cube] + _const(-1.0)]]
        diffusion = [[[_const(1.0)]], [[_const(1.0)]]]
    else:
        raise ModelSpecError(f"unknown builtin model {name!r}; expected one of {BUILTINS}")
    return {"spec_version": 1, "name": name, "n": 1, "d": 1, "m0": 2, "drift": drift,
            "diffusion": diffusion, "generator": [dict(g) for g in _SWAP_2],
            "clamp_negative": True,
            "probe_box": {"low": [-5.0], "high": [5.0], "points_per_axis": 5}}


def _terms(raw):
    return [(t["exponents"], t["coeff"]) for t in raw]


def _check_len(seq, expected, path):
    if len(seq) != expected:
        raise ModelSpecError(f"{path}: expected {expected} entries, got {len(seq)}")


def probe_points(doc):
    n = doc["n"]
    box = doc.get("probe_box", {})
    low = np.asarray(box.get("low", [-1.0] * n), dtype=float)
    high = np.asarray(box.get("high", [1.0] * n), dtype=float)
    if low.shape != (n,) or high.shape != (n,):
        raise ModelSpecError(f"probe_box: low/high must have length n={n}")
    k = box.get("points_per_axis", 3)
    axes = [np.linspace(lo, hi, k) for lo, hi in zip(low, high)]
    return np.array(list(itertools.product(*axes)))


def spec_from_document(doc):
    """Validate and expand a parsed JSON document (builtin ids are expanded)."""
    try:
        jsonschema.Draft202012Validator(SCHEMA).validate(doc)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelSpecError(f"{path}: {exc.message}") from None
    if "builtin" in doc:
        return builtin_spec(doc["builtin"])
    return doc


def model_from_document(doc, validate=True):
    doc = spec_from_document(doc)
    n, d, m0 = doc["n"], doc["d"], doc["m0"]
    drift = doc.get("drift") or [[[] for _ in range(n)] for _ in range(m0)]
    diffusion = doc.get("diffusion") or [[[[] for _ in range(d)] for _ in range(n)]
                                         for _ in range(m0)]
    _check_len(drift, m0, "drift")
    _check_len(diffusion, m0, "diffusion")
    drift_entries, diff_entries, gen_entries = {}, {}, {}
    for i, per_state in enumerate(drift):
        _check_len(per_state, n, f"drift/{i}")
        for k, terms in enumerate(per_state):
            drift_entries[(i, k)] = _terms(terms)
    for i, per_state in enumerate(diffusion):
        _check_len(per_state, n, f"diffusion/{i}")
        for k, row in enumerate(per_state):
            _check_len(row, d, f"diffusion/{i}/{k}")
            for r, terms in enumerate(row):
                diff_entries[(i, k, r)] = _terms(terms)
    for g, entry in enumerate(doc.get("generator", [])):
        i, j = entry["from"], entry["to"]
        if i == j or i >= m0 or j >= m0:
            raise ModelSpecError(f"generator/{g}: invalid transition {i} -> {j} for m0={m0}")
        gen_entries.setdefault((i, j), []).extend(_terms(entry["terms"]))
    try:
        model = SwitchModel(
            n=n, d=d, m0=m0,
            drift=StateFunctionField(PolyArray.from_entry_terms(drift_entries, (m0, n), n)),
            diffusion=PolyArray.from_entry_terms(diff_entries, (m0, n, d), n),
            generator=GeneratorField.from_terms(m0, n, gen_entries,
                                                clamp_negative=doc.get("clamp_negative", True)),
            name=doc.get("name", "inline"))
    except ValueError as exc:
        raise ModelSpecError(str(exc)) from exc
    if validate:
        report = validate_generator(model.generator, probe_points(doc))
        if not report.valid:
            bad = [p for p in report.probes if not p.irreducible]
            where = f" at x={bad[0].x.tolist()}" if bad else ""
            reason = "degenerate state space" if report.degenerate else "not irreducible"
            raise ModelSpecError(f"generator: {reason}{where}")
    return model


def parse_model_spec(text, validate=True):
    """Parse a JSON model spec (string or bytes) into a :class:`SwitchModel`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSpecError(f"<root>: invalid JSON: {exc}") from None
    return model_from_document(doc, validate=validate)


def load_model(ref):
    """A builtin id, a path to a JSON spec, or an already-parsed document."""
    if isinstance(ref, dict):
        return model_from_document(ref)
    if ref in BUILTINS:
        return model_from_document({"builtin": ref})
    with open(ref, encoding="utf-8") as fh:
        return parse_model_spec(fh.read())


def model_document(ref):
    """Expanded spec document for a model reference (embedded in reports)."""
    if isinstance(ref, dict):
        return spec_from_document(ref)
    if ref in BUILTINS:
        return builtin_spec(ref)
    with open(ref, encoding="utf-8") as fh:
        return spec_from_document(json.load(fh))
