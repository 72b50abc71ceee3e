"""SCM specification documents (``*.scm.json``) and phrasing variations.

Document layout::

    {
      "name": "marathon_g1",
      "variables": [
        {"name": "u1", "kind": "exogenous", "values": ["John", ...],
         "phrasings": ["My name is {x}."], "notes": "optional"}
      ],
      "edges": [["u1", "g"], ...],
      "treatment": "g",
      "outcome": "m",
      "notes": "optional"
    }
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from typing import Any, Sequence

import numpy as np

from .errors import (
    InsufficientVariationsError,
    SpecSchemaError,
    SpecSemanticError,
    SpecSyntaxError,
    ValidationError,
)
from .graph import PLACEHOLDER, SENTENCE_END, CausalGraph, Kind, SdScm, SequenceVariable, topological_order, validate
from .scorers import Scorer

MAX_PHRASINGS = 1000
MAX_VALUES = 1000

VariationId = tuple[int, ...]


@dataclass(frozen=True)
class VariableEntry:
    name: str
    kind: Kind
    values: tuple[str, ...]
    phrasings: tuple[str, ...]
    notes: str | None = None


@dataclass(frozen=True)
class ScmSpecDocument:
    name: str
    variables: tuple[VariableEntry, ...]
    edges: tuple[tuple[str, str], ...]
    treatment: str
    outcome: str
    notes: str | None = None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def variable(self, name: str) -> VariableEntry:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def phrasing_counts(self) -> tuple[int, ...]:
        return tuple(len(v.phrasings) for v in self.variables)

    @property
    def n_variations(self) -> int:
        return math.prod(self.phrasing_counts)

    @property
    def graph(self) -> CausalGraph:
        return CausalGraph.from_edges(self.names, self.edges)


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _expect(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise SpecSchemaError(path, msg)


def _string(doc: dict, key: str, path: str, optional: bool = False) -> str | None:
    if key not in doc:
        _expect(optional, f"{path}.{key}", "missing required field")
        return None
    val = doc[key]
    _expect(isinstance(val, str), f"{path}.{key}", f"expected string, got {type(val).__name__}")
    return val


def _string_list(doc: dict, key: str, path: str) -> tuple[str, ...]:
    _expect(key in doc, f"{path}.{key}", "missing required field")
    val = doc[key]
    _expect(isinstance(val, list), f"{path}.{key}", "expected a list")
    for i, item in enumerate(val):
        _expect(isinstance(item, str), f"{path}.{key}[{i}]", "expected string")
    return tuple(val)


def _from_obj(doc: Any) -> ScmSpecDocument:
    _expect(isinstance(doc, dict), "$", "top level must be an object")
    allowed = {"name", "variables", "edges", "treatment", "outcome", "notes"}
    for key in doc:
        _expect(key in allowed, f"$.{key}", "unknown field")
    name = _string(doc, "name", "$")
    _expect("variables" in doc, "$.variables", "missing required field")
    _expect(isinstance(doc["variables"], list) and doc["variables"], "$.variables", "expected a nonempty list")
    variables = []
    for i, v in enumerate(doc["variables"]):
        p = f"$.variables[{i}]"
        _expect(isinstance(v, dict), p, "expected an object")
        for key in v:
            _expect(key in {"name", "kind", "values", "phrasings", "notes"}, f"{p}.{key}", "unknown field")
        vname = _string(v, "name", p)
        kind = _string(v, "kind", p)
        _expect(kind in ("exogenous", "endogenous"), f"{p}.kind", "must be 'exogenous' or 'endogenous'")
        variables.append(
            VariableEntry(
                name=vname,
                kind=Kind(kind),
                values=_string_list(v, "values", p),
                phrasings=_string_list(v, "phrasings", p),
                notes=_string(v, "notes", p, optional=True),
            )
        )
    _expect("edges" in doc and isinstance(doc["edges"], list), "$.edges", "expected a list")
    edges = []
    for i, e in enumerate(doc["edges"]):
        _expect(
            isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e),
            f"$.edges[{i}]",
            "expected a [parent, child] pair of strings",
        )
        edges.append((e[0], e[1]))
    return ScmSpecDocument(
        name=name,
        variables=tuple(variables),
        edges=tuple(edges),
        treatment=_string(doc, "treatment", "$"),
        outcome=_string(doc, "outcome", "$"),
        notes=_string(doc, "notes", "$", optional=True),
    )


def semantic_problems(spec: ScmSpecDocument) -> list[str]:
    out: list[str] = []
    names = spec.names
    if not spec.name:
        out.append("spec name is empty")
    if len(set(names)) != len(names):
        out.append("variable names are not unique")
    for v in spec.variables:
        where = f"variable {v.name!r}"
        if not v.name:
            out.append("variable with empty name")
        if not v.values:
            out.append(f"{where}: needs at least one value")
        if len(v.values) > MAX_VALUES:
            out.append(f"{where}: more than {MAX_VALUES} values")
        if len(set(v.values)) != len(v.values):
            out.append(f"{where}: values are not distinct")
        if not v.phrasings:
            out.append(f"{where}: needs at least one phrasing")
        if len(v.phrasings) > MAX_PHRASINGS:
            out.append(f"{where}: more than {MAX_PHRASINGS} phrasings")
        for j, ph in enumerate(v.phrasings):
            n = ph.count(PLACEHOLDER)
            if n != 1:
                out.append(f"{where}: phrasing {j} must contain {PLACEHOLDER} exactly once (found {n})")
                continue
            if not ph.rstrip().endswith(SENTENCE_END) or ph != ph.strip():
                out.append(f"{where}: phrasing {j} must end in sentence punctuation with no surrounding whitespace")
            rendered = [ph.replace(PLACEHOLDER, x) for x in v.values]
            if len(set(rendered)) != len(rendered):
                out.append(f"{where}: phrasing {j} renders duplicate phrases")
    known = set(names)
    kinds = {v.name: v.kind for v in spec.variables}
    for a, b in spec.edges:
        for end in (a, b):
            if end not in known:
                out.append(f"edge {a}->{b}: {end!r} is not declared")
        if a in kinds and b in kinds and kinds[a] is Kind.ENDOGENOUS and kinds[b] is Kind.EXOGENOUS:
            out.append(f"edge {a}->{b}: endogenous variable into exogenous variable")
    if all(a in known and b in known for a, b in spec.edges):
        out.extend(p for p in spec.graph.problems() if "not a declared node" not in p)
    for role, name in (("treatment", spec.treatment), ("outcome", spec.outcome)):
        if name not in known:
            out.append(f"{role} {name!r} is not a declared variable")
        elif kinds[name] is not Kind.ENDOGENOUS:
            out.append(f"{role} {name!r} must be endogenous")
    if spec.treatment == spec.outcome:
        out.append("treatment and outcome must differ")
    return out


def spec_warnings(spec: ScmSpecDocument) -> list[str]:
    """Non-fatal findings against the benchmark shape (outcome should be a sink)."""
    warnings = []
    if any(a == spec.outcome for a, _ in spec.edges):
        warnings.append(f"outcome {spec.outcome!r} is not a sink; fine for toy models, unusual for benchmarks")
    if (spec.treatment, spec.outcome) not in set(spec.edges):
        warnings.append(f"no direct edge {spec.treatment}->{spec.outcome}")
    return warnings


def parse_spec(text: str) -> ScmSpecDocument:
    if not text or not text.strip():
        raise SpecSyntaxError("empty document", 1, 1)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    spec = _from_obj(obj)
    problems = semantic_problems(spec)
    if problems:
        raise SpecSemanticError("; ".join(problems))
    return spec


def load_spec(path: str | os.PathLike) -> ScmSpecDocument:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def bundled_path(name: str):
    """Path-like handle to a file shipped in ``seqscm/data`` (e.g. ``breast_cancer.scm.json``)."""
    return resources.files("seqscm") / "data" / name


def bundled_spec(name: str) -> ScmSpecDocument:
    fname = name if name.endswith(".json") else f"{name}.scm.json"
    return parse_spec(bundled_path(fname).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def to_obj(spec: ScmSpecDocument) -> dict:
    variables = []
    for v in spec.variables:
        entry = {"name": v.name, "kind": v.kind.value, "values": list(v.values), "phrasings": list(v.phrasings)}
        if v.notes is not None:
            entry["notes"] = v.notes
        variables.append(entry)
    obj = {
        "name": spec.name,
        "variables": variables,
        "edges": [[a, b] for a, b in spec.edges],
        "treatment": spec.treatment,
        "outcome": spec.outcome,
    }
    if spec.notes is not None:
        obj["notes"] = spec.notes
    return obj


def serialize_spec(spec: ScmSpecDocument) -> str:
    return json.dumps(to_obj(spec), indent=2, ensure_ascii=False) + "\n"


# --------------------------------------------------------------------------
# variations
# --------------------------------------------------------------------------


def format_variation(variation: Sequence[int]) -> str:
    return "-".join(str(int(i)) for i in variation)


def parse_variation(text: str) -> VariationId:
    try:
        return tuple(int(x) for x in text.split("-")) if text else ()
    except ValueError:
        raise ValidationError(f"malformed variation id {text!r}") from None


def instantiate_variation(
    spec: ScmSpecDocument,
    variation: Sequence[int],
    scorer: Scorer,
    seed: int = 0,
) -> SdScm:
    variation = tuple(int(i) for i in variation)
    if len(variation) != len(spec.variables):
        raise ValidationError(f"variation has {len(variation)} indices, spec has {len(spec.variables)} variables")
    for v, i in zip(spec.variables, variation):
        if not 0 <= i < len(v.phrasings):
            raise ValidationError(f"variation index {i} out of range for {v.name!r} ({len(v.phrasings)} phrasings)")
    variables = [SequenceVariable(v.name, v.kind, v.phrasings[i], v.values) for v, i in zip(spec.variables, variation)]
    graph = spec.graph
    scm = SdScm(
        name=spec.name,
        graph=graph,
        variables={v.name: v for v in variables},
        scorer=scorer,
        order=topological_order(graph),
        variation=variation,
        seed=int(seed),
        treatment=spec.treatment,
        outcome=spec.outcome,
    )
    report = validate(scm)
    if report:
        raise ValidationError("; ".join(report))
    return scm


def sample_variations(spec: ScmSpecDocument, count: int, seed: int) -> list[VariationId]:
    """``count`` distinct phrasing choices drawn uniformly without replacement."""
    if count < 1:
        raise ValueError("count must be >= 1")
    sizes = spec.phrasing_counts
    total = math.prod(sizes)
    if count > total:
        raise InsufficientVariationsError(f"asked for {count} distinct variations, spec admits {total}")
    rng = np.random.default_rng(seed)
    if total <= 100_000:
        flat = rng.choice(total, size=count, replace=False)
        return [tuple(int(x) for x in np.unravel_index(int(f), sizes)) for f in flat]
    seen: set[VariationId] = set()
    out: list[VariationId] = []
    while len(out) < count:
        vid = tuple(int(rng.integers(n)) for n in sizes)
        if vid not in seen:
            seen.add(vid)
            out.append(vid)
    return out
