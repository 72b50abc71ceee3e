"""Observational, interventional and counterfactual sampling plus exact oracles.

Every unit draws from its own random stream derived from
``(master seed, unit index, mode, intervention)``, so a dataset is identical
whatever order or process its units are generated in.
"""

from __future__ import annotations

import itertools
import math
import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    MissingParentError,
    ScorerError,
    StateSpaceTooLargeError,
    ValidationError,
    VariationMismatchError,
)
from .graph import Kind, SdScm
from .kernels import draw_index
from .scorers import SEPARATOR, RestrictedDistribution, normalize_logs

OBSERVATIONAL = "observational"
INTERVENTIONAL = "interventional"
COUNTERFACTUAL = "counterfactual"
_MODE_CODE = {OBSERVATIONAL: 0, INTERVENTIONAL: 1, COUNTERFACTUAL: 2}

DEFAULT_STATE_CAP = 1_000_000


@dataclass(frozen=True)
class Intervention:
    variable: str
    value: int

    def check(self, scm: SdScm) -> None:
        var = scm.variables.get(self.variable)
        if var is None:
            raise ValidationError(f"intervention on unknown variable {self.variable!r}")
        if var.kind is not Kind.ENDOGENOUS:
            raise ValidationError(f"cannot intervene on exogenous variable {self.variable!r}")
        if not 0 <= self.value < var.card:
            raise ValidationError(f"intervention value {self.value} out of range for {self.variable!r}")

    def __str__(self) -> str:
        return f"do({self.variable}={self.value})"


@dataclass(frozen=True)
class Provenance:
    variation: tuple[int, ...]
    seed: int
    unit_index: int
    mode: str
    intervention: Intervention | None = None


@dataclass(frozen=True)
class Unit:
    """One full assignment, aligned to the topological order ``names``."""

    names: tuple[str, ...]
    indices: tuple[int, ...]
    phrases: tuple[str, ...]
    distributions: tuple[RestrictedDistribution | None, ...]
    provenance: Provenance

    def index(self, name: str) -> int:
        return self.indices[self.names.index(name)]

    def phrase(self, name: str) -> str:
        return self.phrases[self.names.index(name)]

    def distribution(self, name: str) -> RestrictedDistribution | None:
        return self.distributions[self.names.index(name)]

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.names, self.indices))

    def text(self) -> str:
        return SEPARATOR.join(self.phrases)

    def to_json(self) -> dict:
        prov = self.provenance
        return {
            "unit_index": prov.unit_index,
            "seed": prov.seed,
            "variation": list(prov.variation),
            "mode": prov.mode,
            "intervention": None
            if prov.intervention is None
            else {"variable": prov.intervention.variable, "value": prov.intervention.value},
            "values": self.as_dict(),
            "phrases": dict(zip(self.names, self.phrases)),
            "probs": {n: (None if d is None else list(d.probs)) for n, d in zip(self.names, self.distributions)},
        }

    @classmethod
    def from_json(cls, doc: Mapping, scm: SdScm) -> "Unit":
        values = doc["values"]
        indices = tuple(int(values[n]) for n in scm.order)
        phrases = tuple(space[i] for space, i in zip(scm.spaces, indices))
        assigned = dict(zip(scm.order, indices))
        dists = []
        for name, space in zip(scm.order, scm.spaces):
            probs = (doc.get("probs") or {}).get(name)
            if probs is None:
                dists.append(None)
            else:
                dists.append(RestrictedDistribution(parent_context(scm, assigned, name), space, tuple(probs)))
        iv = doc.get("intervention")
        prov = Provenance(
            variation=tuple(doc.get("variation", scm.variation)),
            seed=int(doc.get("seed", scm.seed)),
            unit_index=int(doc.get("unit_index", 0)),
            mode=doc.get("mode", OBSERVATIONAL),
            intervention=None if iv is None else Intervention(iv["variable"], int(iv["value"])),
        )
        return cls(scm.order, indices, phrases, tuple(dists), prov)


def unit_seed_key(seed: int, unit_index: int, mode: str, intervention: Intervention | None = None) -> list[int]:
    key = [int(seed), int(unit_index), _MODE_CODE[mode]]
    if intervention is not None:
        key += [zlib.crc32(intervention.variable.encode("utf-8")), int(intervention.value)]
    return key


def unit_rng(seed: int, unit_index: int, mode: str, intervention: Intervention | None = None) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(unit_seed_key(seed, unit_index, mode, intervention))))


# --------------------------------------------------------------------------
# per-unit sampling
# --------------------------------------------------------------------------


def parent_context(scm: SdScm, partial: Mapping[str, int], name: str) -> str:
    """Space-joined phrases of ``name``'s parents in topological order."""
    pos = scm.position
    parents = sorted(scm.graph.parents(name), key=pos.__getitem__)
    pieces = []
    for p in parents:
        if p not in partial:
            raise MissingParentError(f"parent {p!r} of {name!r} is not assigned")
        pieces.append(scm.variables[p].render(int(partial[p])))
    return SEPARATOR.join(pieces)


def _forward(
    scm: SdScm,
    rng: np.random.Generator,
    fixed: Mapping[int, int],
    provenance: Provenance,
) -> Unit:
    n = len(scm.order)
    spaces, parents = scm.spaces, scm.parent_positions
    score = scm.scorer.score_candidates
    idx = [0] * n
    phrases: list[str] = [""] * n
    dists: list[RestrictedDistribution | None] = [None] * n
    for t in range(n):
        space = spaces[t]
        if t in fixed:
            k = fixed[t]
            idx[t] = k
            phrases[t] = space[k]
            continue
        ctx = SEPARATOR.join([phrases[p] for p in parents[t]])
        try:
            probs = normalize_logs(score(ctx, space))
        except ScorerError as exc:
            if exc.variable is None:
                raise type(exc)(str(exc), variable=scm.order[t]) from exc
            raise
        k = draw_index(probs, rng.random())
        idx[t] = k
        phrases[t] = space[k]
        dists[t] = RestrictedDistribution(ctx, space, probs)
    return Unit(scm.order, tuple(idx), tuple(phrases), tuple(dists), provenance)


def sample_observational(scm: SdScm, rng: np.random.Generator | None = None, *, unit_index: int = 0) -> Unit:
    if rng is None:
        rng = unit_rng(scm.seed, unit_index, OBSERVATIONAL)
    prov = Provenance(scm.variation, scm.seed, unit_index, OBSERVATIONAL)
    return _forward(scm, rng, {}, prov)


def sample_interventional(
    scm: SdScm,
    intervention: Intervention,
    rng: np.random.Generator | None = None,
    *,
    unit_index: int = 0,
) -> Unit:
    intervention.check(scm)
    if rng is None:
        rng = unit_rng(scm.seed, unit_index, INTERVENTIONAL, intervention)
    prov = Provenance(scm.variation, scm.seed, unit_index, INTERVENTIONAL, intervention)
    return _forward(scm, rng, {scm.position[intervention.variable]: intervention.value}, prov)


def counterfactual_fixed(scm: SdScm, factual_indices: Sequence[int], intervention: Intervention) -> dict[int, int]:
    """Positions held at factual values (exogenous + non-descendants) plus the intervened one."""
    keep = set(scm.graph.non_descendants(intervention.variable)) | set(scm.exogenous)
    keep.discard(intervention.variable)
    fixed = {scm.position[n]: int(factual_indices[scm.position[n]]) for n in keep}
    fixed[scm.position[intervention.variable]] = intervention.value
    return fixed


def sample_counterfactual(
    scm: SdScm,
    factual: Unit,
    intervention: Intervention,
    rng: np.random.Generator | None = None,
) -> Unit:
    intervention.check(scm)
    prov_f = factual.provenance
    if tuple(prov_f.variation) != tuple(scm.variation) or factual.names != scm.order:
        raise VariationMismatchError(
            f"factual unit comes from variation {prov_f.variation}, model is variation {scm.variation}"
        )
    if rng is None:
        rng = unit_rng(prov_f.seed, prov_f.unit_index, COUNTERFACTUAL, intervention)
    prov = Provenance(scm.variation, prov_f.seed, prov_f.unit_index, COUNTERFACTUAL, intervention)
    return _forward(scm, rng, counterfactual_fixed(scm, factual.indices, intervention), prov)


# --------------------------------------------------------------------------
# compiled conditional tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CompiledModel:
    """Conditional probability tables of every variable, flattened for the kernels."""

    order: tuple[str, ...]
    cards: np.ndarray
    par_ptr: np.ndarray
    par_idx: np.ndarray
    cpt_ptr: np.ndarray
    cpt_flat: np.ndarray

    def rows(self, v: int, assignments: np.ndarray) -> np.ndarray:
        """Distribution rows of variable ``v`` for each assignment row of ``assignments``."""
        card = int(self.cards[v])
        row = np.zeros(assignments.shape[0], dtype=np.int64)
        for p in self.par_idx[self.par_ptr[v]:self.par_ptr[v + 1]]:
            row = row * int(self.cards[p]) + assignments[:, p]
        start = int(self.cpt_ptr[v]) + row * card
        return self.cpt_flat[start[:, None] + np.arange(card)[None, :]]


def cpt_size(scm: SdScm) -> int:
    cards = scm.cards
    return sum(math.prod(cards[p] for p in ps) * cards[t] for t, ps in enumerate(scm.parent_positions))


def compile_model(
    scm: SdScm,
    intervention: Intervention | None = None,
    max_entries: int = DEFAULT_STATE_CAP,
) -> CompiledModel:
    """Tabulate every restricted distribution for every parent configuration.

    With an intervention, the intervened variable's table becomes a parentless
    point mass.
    """
    size = cpt_size(scm)
    if size > max_entries:
        raise StateSpaceTooLargeError(f"conditional tables need {size} entries (cap {max_entries})")
    cards = scm.cards
    spaces = scm.spaces
    fixed_pos = None
    if intervention is not None:
        intervention.check(scm)
        fixed_pos = scm.position[intervention.variable]
    par_ptr = [0]
    par_idx: list[int] = []
    cpt_ptr: list[int] = []
    chunks: list[np.ndarray] = []
    offset = 0
    for t, parents in enumerate(scm.parent_positions):
        cpt_ptr.append(offset)
        if t == fixed_pos:
            row = np.zeros(cards[t])
            row[intervention.value] = 1.0
            chunks.append(row)
            offset += cards[t]
            par_ptr.append(len(par_idx))
            continue
        par_idx.extend(parents)
        par_ptr.append(len(par_idx))
        table = []
        for combo in itertools.product(*(range(cards[p]) for p in parents)):
            ctx = SEPARATOR.join(spaces[p][k] for p, k in zip(parents, combo))
            try:
                table.append(normalize_logs(scm.scorer.score_candidates(ctx, spaces[t])))
            except ScorerError as exc:
                raise type(exc)(str(exc), variable=scm.order[t]) from exc
        arr = np.asarray(table, dtype=np.float64).ravel()
        chunks.append(arr)
        offset += arr.size
    return CompiledModel(
        order=scm.order,
        cards=np.asarray(cards, dtype=np.int64),
        par_ptr=np.asarray(par_ptr, dtype=np.int64),
        par_idx=np.asarray(par_idx, dtype=np.int64),
        cpt_ptr=np.asarray(cpt_ptr, dtype=np.int64),
        cpt_flat=np.concatenate(chunks) if chunks else np.zeros(0),
    )


# --------------------------------------------------------------------------
# exact oracles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class JointTable:
    """Probability of every full assignment; axis ``i`` is ``names[i]``."""

    names: tuple[str, ...]
    probs: np.ndarray

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        names = list(names)
        keep = [self.names.index(n) for n in names]
        drop = tuple(i for i in range(len(self.names)) if i not in keep)
        m = self.probs.sum(axis=drop) if drop else self.probs
        remaining = [i for i in range(len(self.names)) if i in keep]
        return np.transpose(m, [remaining.index(k) for k in keep])

    def prob(self, assignment: Mapping[str, int]) -> float:
        return float(self.probs[tuple(int(assignment[n]) for n in self.names)])

    def expectation(self, name: str, values: Sequence[float]) -> float:
        return float(np.dot(self.marginal([name]), np.asarray(values, dtype=float)))

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {idx: float(p) for idx, p in np.ndenumerate(self.probs)}


def _joint(scm: SdScm, intervention: Intervention | None, cap: int) -> JointTable:
    total = math.prod(scm.cards)
    if total > cap:
        raise StateSpaceTooLargeError(f"joint has {total} cells (cap {cap})")
    model = compile_model(scm, intervention, max_entries=max(cap, cpt_size(scm)))
    flat = kernels.joint_table(model.cards, model.par_ptr, model.par_idx, model.cpt_ptr, model.cpt_flat)
    return JointTable(scm.order, np.asarray(flat).reshape(scm.cards))


def exact_joint(scm: SdScm, cap: int = DEFAULT_STATE_CAP) -> JointTable:
    return _joint(scm, None, cap)


def exact_interventional(scm: SdScm, intervention: Intervention, cap: int = DEFAULT_STATE_CAP) -> JointTable:
    return _joint(scm, intervention, cap)


# --------------------------------------------------------------------------
# batch sampling through compiled tables
# --------------------------------------------------------------------------


def stream_uniforms(
    seed: int,
    unit_indices: Sequence[int],
    mode: str,
    width: int,
    intervention: Intervention | None = None,
) -> np.ndarray:
    """The first ``width`` uniforms of each unit's stream, one row per unit."""
    out = np.empty((len(unit_indices), max(width, 1)))
    for r, i in enumerate(unit_indices):
        out[r, :width] = unit_rng(seed, i, mode, intervention).random(width)
    return out


def sample_observational_batch(scm: SdScm, model: CompiledModel, unit_indices: Sequence[int]) -> np.ndarray:
    """Index matrix identical to calling :func:`sample_observational` per unit."""
    n_vars = len(scm.order)
    base = np.full((len(unit_indices), n_vars), -1, dtype=np.int64)
    u = stream_uniforms(scm.seed, unit_indices, OBSERVATIONAL, n_vars)
    return kernels.sample_batch(model.cards, model.par_ptr, model.par_idx, model.cpt_ptr, model.cpt_flat, base, u)


def sample_counterfactual_batch(
    scm: SdScm,
    model: CompiledModel,
    factual: np.ndarray,
    intervention: Intervention,
    unit_indices: Sequence[int],
) -> np.ndarray:
    intervention.check(scm)
    fixed = counterfactual_fixed(scm, [0] * len(scm.order), intervention)
    base = np.full_like(factual, -1)
    for pos in fixed:
        base[:, pos] = factual[:, pos]
    base[:, scm.position[intervention.variable]] = intervention.value
    width = len(scm.order) - len(fixed)
    u = stream_uniforms(scm.seed, unit_indices, COUNTERFACTUAL, width, intervention)
    return kernels.sample_batch(model.cards, model.par_ptr, model.par_idx, model.cpt_ptr, model.cpt_flat, base, u)
