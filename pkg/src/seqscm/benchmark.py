"""Potential-outcome benchmarks built on the counterfactual sampler.

A record holds one observational unit together with the outcome it would have
shown under every treatment arm.  The factual arm reuses the factual outcome;
every other arm comes from a counterfactual with ``do(treatment=a)``, so all
upstream evidence stays fixed.  Effects can be read off three ways (see
:class:`OutcomeTarget`).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LogOfZeroError, SeqScmError, ValidationError
from .fileio import atomic_write_csv, atomic_write_json
from .graph import Kind, SdScm
from .sampling import (
    Intervention,
    compile_model,
    cpt_size,
    sample_counterfactual,
    sample_counterfactual_batch,
    sample_observational,
    sample_observational_batch,
)
from .scorers import CachedScorer, Scorer, TabularScorer
from .spec_format import ScmSpecDocument, format_variation, instantiate_variation, parse_variation, sample_variations

LOG_FLOOR = 1e-12
COMPILED_CAP = 200_000
DATASET_FORMAT = "seqscm-dataset/1"


class LogFloorWarning(UserWarning):
    """Zero probabilities were floored before taking logs."""


# --------------------------------------------------------------------------
# records and targets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialOutcomeRecord:
    unit_index: int
    covariates: tuple[int, ...]
    t: int
    y: int
    p_fact: tuple[float, ...]
    y_arms: tuple[int, ...]
    p_arms: tuple[tuple[float, ...], ...]
    seed: int

    def check(self, tol: float = 1e-12) -> None:
        for p in (self.p_fact, *self.p_arms):
            if abs(math.fsum(p) - 1.0) > tol or min(p) < 0.0:
                raise ValidationError(f"unit {self.unit_index}: outcome distribution is not normalized")
        if self.y_arms[self.t] != self.y or self.p_arms[self.t] != self.p_fact:
            raise ValidationError(f"unit {self.unit_index}: factual arm disagrees with the factual outcome")


_KIND_ALIASES = {
    "cat": "cat",
    "categorical": "cat",
    "indicator": "cat",
    "p": "p",
    "prob": "p",
    "probability": "p",
    "logp": "logp",
    "log-probability": "logp",
    "logprob": "logp",
}


@dataclass(frozen=True)
class OutcomeTarget:
    """Which scalar of the outcome a benchmark scores.

    ``cat:k`` is the indicator ``1[y = k]``, ``p:k`` the probability of value
    ``k`` and ``logp:k`` its natural log.
    """

    kind: str
    k: int

    def __post_init__(self):
        if self.kind not in ("cat", "p", "logp"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.k < 0:
            raise ValueError("target value index must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "OutcomeTarget":
        kind, sep, k = text.strip().partition(":")
        if not sep or kind.lower() not in _KIND_ALIASES:
            raise ValueError(f"malformed target {text!r}; expected cat:K, p:K or logp:K")
        try:
            return cls(_KIND_ALIASES[kind.lower()], int(k))
        except ValueError:
            raise ValueError(f"malformed target {text!r}; value index must be an integer") from None

    def __str__(self) -> str:
        return f"{self.kind}:{self.k}"

    def check(self, n_outcome: int) -> None:
        if self.k >= n_outcome:
            raise ValidationError(f"target {self} out of range for an outcome with {n_outcome} values")


def all_targets(n_outcome: int) -> list[OutcomeTarget]:
    return [OutcomeTarget(kind, k) for kind in ("cat", "p", "logp") for k in range(n_outcome)]


def ite(
    record: PotentialOutcomeRecord,
    target: OutcomeTarget,
    arms: tuple[int, int] = (0, 1),
    floor: float | None = None,
) -> float:
    """Unit-level effect of moving from ``arms[0]`` to ``arms[1]``.

    Log targets raise :class:`LogOfZeroError` on a zero probability unless
    ``floor`` is given.
    """
    a0, a1 = arms
    n_arms = len(record.p_arms)
    if not (0 <= a0 < n_arms and 0 <= a1 < n_arms):
        raise ValidationError(f"arms {arms} out of range for {n_arms} treatment values")
    k = target.k
    if target.kind == "cat":
        return float(record.y_arms[a1] == k) - float(record.y_arms[a0] == k)
    p1, p0 = record.p_arms[a1][k], record.p_arms[a0][k]
    if target.kind == "p":
        return p1 - p0
    if floor is None:
        if p1 <= 0.0 or p0 <= 0.0:
            raise LogOfZeroError(f"unit {record.unit_index}: log of zero probability for {target}")
    else:
        p1, p0 = max(p1, floor), max(p0, floor)
    return math.log(p1) - math.log(p0)


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkDataset:
    spec_name: str
    variation: tuple[int, ...]
    scorer_label: str
    seed: int
    treatment: str
    outcome: str
    covariate_names: tuple[str, ...]
    cards: Mapping[str, int]
    records: tuple[PotentialOutcomeRecord, ...]
    hidden: tuple[str, ...] = ()
    exogenous: tuple[str, ...] = ()
    meta: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.records:
            raise ValidationError("a dataset needs at least one record")
        width = len(self.covariate_names)
        for r in self.records:
            if len(r.covariates) != width or len(r.p_arms) != self.n_arms:
                raise ValidationError(f"record {r.unit_index} does not match the dataset schema")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_arms(self) -> int:
        return int(self.cards[self.treatment])

    @property
    def n_outcome(self) -> int:
        return int(self.cards[self.outcome])

    @cached_property
    def unit_ids(self) -> np.ndarray:
        return np.array([r.unit_index for r in self.records], dtype=np.int64)

    @cached_property
    def X(self) -> np.ndarray:
        return np.array([r.covariates for r in self.records], dtype=np.int64).reshape(len(self), -1)

    @cached_property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=np.int64)

    @cached_property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=np.int64)

    @cached_property
    def p_fact(self) -> np.ndarray:
        return np.array([r.p_fact for r in self.records], dtype=np.float64)

    @cached_property
    def y_arms(self) -> np.ndarray:
        return np.array([r.y_arms for r in self.records], dtype=np.int64)

    @cached_property
    def p_arms(self) -> np.ndarray:
        """Shape ``(n, arms, outcome values)``."""
        return np.array([r.p_arms for r in self.records], dtype=np.float64)

    def column(self, name: str) -> np.ndarray:
        if name == self.treatment:
            return self.t
        if name == self.outcome:
            return self.y
        return self.X[:, self.covariate_names.index(name)]

    def with_records(self, records: Sequence[PotentialOutcomeRecord], **changes) -> "BenchmarkDataset":
        return dataclasses.replace(self, records=tuple(records), **changes)


def _floored_log(p: np.ndarray, what: str) -> np.ndarray:
    n_zero = int(np.count_nonzero(p <= 0.0))
    if n_zero:
        warnings.warn(f"{n_zero} zero probabilities floored at {LOG_FLOOR:g} for {what}", LogFloorWarning, stacklevel=3)
    return np.log(np.maximum(p, LOG_FLOOR))


def observed_outcome(dataset: BenchmarkDataset, target: OutcomeTarget) -> np.ndarray:
    """The factual outcome as the estimators see it."""
    target.check(dataset.n_outcome)
    k = target.k
    if target.kind == "cat":
        return (dataset.y == k).astype(np.float64)
    p = dataset.p_fact[:, k]
    return p.copy() if target.kind == "p" else _floored_log(p, f"observed {target}")


def potential_outcomes(dataset: BenchmarkDataset, target: OutcomeTarget) -> np.ndarray:
    """Shape ``(n, arms)``: the target evaluated under every arm."""
    target.check(dataset.n_outcome)
    k = target.k
    if target.kind == "cat":
        return (dataset.y_arms == k).astype(np.float64)
    p = dataset.p_arms[:, :, k]
    return p.copy() if target.kind == "p" else _floored_log(p, f"potential outcomes {target}")


def ite_vector(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int] = (0, 1)) -> np.ndarray:
    a0, a1 = arms
    if not (0 <= a0 < dataset.n_arms and 0 <= a1 < dataset.n_arms):
        raise ValidationError(f"arms {arms} out of range for {dataset.n_arms} treatment values")
    po = potential_outcomes(dataset, target)
    return po[:, a1] - po[:, a0]


def sate(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int] = (0, 1)) -> float:
    return float(np.mean(ite_vector(dataset, target, arms)))


def observational_contrast(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int] = (0, 1)) -> float:
    """Treated-minus-control difference of mean observed outcomes."""
    y = observed_outcome(dataset, target)
    a0, a1 = arms
    m0, m1 = dataset.t == a0, dataset.t == a1
    if not m0.any() or not m1.any():
        raise ValidationError("both arms need at least one unit")
    return float(y[m1].mean() - y[m0].mean())


def hidden_projection(dataset: BenchmarkDataset) -> BenchmarkDataset:
    """Drop exogenous covariates from what estimators see; ground truth is untouched."""
    drop = [n for n in dataset.covariate_names if n in set(dataset.exogenous)]
    if not drop:
        return dataset
    keep = [i for i, n in enumerate(dataset.covariate_names) if n not in drop]
    records = [dataclasses.replace(r, covariates=tuple(r.covariates[i] for i in keep)) for r in dataset.records]
    return dataset.with_records(
        records,
        covariate_names=tuple(dataset.covariate_names[i] for i in keep),
        hidden=tuple(dataset.hidden) + tuple(drop),
    )


def restrict_covariates(dataset: BenchmarkDataset, names: Sequence[str]) -> BenchmarkDataset:
    """Keep only the listed covariates (in dataset order); the rest count as hidden."""
    unknown = set(names) - set(dataset.covariate_names)
    if unknown:
        raise ValidationError(f"not covariates of this dataset: {sorted(unknown)}")
    keep = [i for i, n in enumerate(dataset.covariate_names) if n in set(names)]
    records = [dataclasses.replace(r, covariates=tuple(r.covariates[i] for i in keep)) for r in dataset.records]
    dropped = tuple(n for n in dataset.covariate_names if n not in set(names))
    return dataset.with_records(
        records,
        covariate_names=tuple(dataset.covariate_names[i] for i in keep),
        hidden=tuple(dataset.hidden) + dropped,
    )


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def _roles(scm: SdScm, treatment: str | None, outcome: str | None) -> tuple[str, str]:
    treatment = treatment or scm.treatment
    outcome = outcome or scm.outcome
    if treatment is None or outcome is None:
        raise ValidationError("treatment and outcome must be named")
    for role, name in (("treatment", treatment), ("outcome", outcome)):
        if name not in scm.variables:
            raise ValidationError(f"{role} {name!r} is not a variable of {scm.name!r}")
    if treatment == outcome:
        raise ValidationError("treatment and outcome must differ")
    if scm.variables[treatment].kind is not Kind.ENDOGENOUS:
        raise ValidationError(f"treatment {treatment!r} must be endogenous")
    if scm.variables[treatment].card < 2:
        raise ValidationError(f"treatment {treatment!r} needs at least two values")
    return treatment, outcome


def covariates_of(scm: SdScm, treatment: str, outcome: str) -> tuple[str, ...]:
    return tuple(n for n in scm.order if n not in (treatment, outcome))


def generate_record(
    scm: SdScm,
    treatment: str | None = None,
    outcome: str | None = None,
    *,
    unit_index: int = 0,
    rng: np.random.Generator | None = None,
) -> PotentialOutcomeRecord:
    """Sample one unit and its outcome under every treatment arm.

    Without ``rng`` each draw uses the unit's own stream, which makes the
    record a function of ``(scm.seed, unit_index)`` alone.
    """
    treatment, outcome = _roles(scm, treatment, outcome)
    factual = sample_observational(scm, rng, unit_index=unit_index)
    t, y = factual.index(treatment), factual.index(outcome)
    p_fact = factual.distribution(outcome).probs
    y_arms, p_arms = [], []
    for a in range(scm.variables[treatment].card):
        if a == t:
            y_arms.append(y)
            p_arms.append(p_fact)
            continue
        cf = sample_counterfactual(scm, factual, Intervention(treatment, a), rng)
        dist = cf.distribution(outcome)
        y_arms.append(cf.index(outcome))
        # an outcome that is not downstream of the treatment is copied, not resampled
        p_arms.append(p_fact if dist is None else dist.probs)
    pos = scm.position
    return PotentialOutcomeRecord(
        unit_index=unit_index,
        covariates=tuple(factual.indices[pos[n]] for n in covariates_of(scm, treatment, outcome)),
        t=t,
        y=y,
        p_fact=tuple(p_fact),
        y_arms=tuple(y_arms),
        p_arms=tuple(tuple(p) for p in p_arms),
        seed=scm.seed,
    )


def _innermost(scorer: Scorer) -> Scorer:
    while isinstance(scorer, CachedScorer):
        scorer = scorer.inner
    return scorer


def compiled_eligible(scm: SdScm, cap: int = COMPILED_CAP) -> bool:
    """Whether the table-driven batch path applies: a local scorer and small tables."""
    return isinstance(_innermost(scm.scorer), TabularScorer) and cpt_size(scm) <= cap


def _records_compiled(scm: SdScm, treatment: str, outcome: str, unit_indices: Sequence[int]) -> list[PotentialOutcomeRecord]:
    model = compile_model(scm, max_entries=COMPILED_CAP)
    pos = scm.position
    tp, yp = pos[treatment], pos[outcome]
    factual = sample_observational_batch(scm, model, unit_indices)
    p_fact = model.rows(yp, factual)
    n_arms = scm.variables[treatment].card
    y_arms = np.empty((len(unit_indices), n_arms), dtype=np.int64)
    p_arms = np.empty((len(unit_indices), n_arms, p_fact.shape[1]))
    outcome_moves = outcome in scm.graph.descendants(treatment)
    for a in range(n_arms):
        cf = sample_counterfactual_batch(scm, model, factual, Intervention(treatment, a), unit_indices)
        y_arms[:, a] = cf[:, yp]
        p_arms[:, a] = model.rows(yp, cf) if outcome_moves else p_fact
    cov_pos = [pos[n] for n in covariates_of(scm, treatment, outcome)]
    out = []
    for r, i in enumerate(unit_indices):
        t, y = int(factual[r, tp]), int(factual[r, yp])
        pf = tuple(float(x) for x in p_fact[r])
        ya = [int(v) for v in y_arms[r]]
        pa = [tuple(float(x) for x in p_arms[r, a]) for a in range(n_arms)]
        ya[t], pa[t] = y, pf
        out.append(
            PotentialOutcomeRecord(
                unit_index=int(i),
                covariates=tuple(int(factual[r, p]) for p in cov_pos),
                t=t,
                y=y,
                p_fact=pf,
                y_arms=tuple(ya),
                p_arms=tuple(pa),
                seed=scm.seed,
            )
        )
    return out


def _records_job(args) -> list[PotentialOutcomeRecord]:
    scm, treatment, outcome, indices, engine = args
    if engine == "compiled":
        return _records_compiled(scm, treatment, outcome, indices)
    return [generate_record(scm, treatment, outcome, unit_index=i) for i in indices]


def _chunks(seq: Sequence[int], parts: int) -> list[list[int]]:
    parts = max(1, min(parts, len(seq)))
    size = math.ceil(len(seq) / parts)
    return [list(seq[i:i + size]) for i in range(0, len(seq), size)]


def generate_dataset(
    scm: SdScm,
    n: int,
    seed: int | None = None,
    *,
    treatment: str | None = None,
    outcome: str | None = None,
    workers: int = 1,
    engine: str = "auto",
    start: int = 0,
) -> BenchmarkDataset:
    """``n`` records with unit indices ``start .. start+n-1``.

    ``engine`` is ``"python"`` (per-unit scorer calls), ``"compiled"``
    (tabulated conditionals plus the batch kernels) or ``"auto"``.  Both
    engines produce identical records; so does any ``workers`` value.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if seed is not None and seed != scm.seed:
        scm = dataclasses.replace(scm, seed=int(seed))
    treatment, outcome = _roles(scm, treatment, outcome)
    if engine == "auto":
        engine = "compiled" if compiled_eligible(scm) else "python"
    if engine not in ("python", "compiled"):
        raise ValueError(f"unknown engine {engine!r}")
    indices = list(range(start, start + n))
    if workers <= 1:
        records = _records_job((scm, treatment, outcome, indices, engine))
    else:
        jobs = [(scm, treatment, outcome, chunk, engine) for chunk in _chunks(indices, workers * 4)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for part in pool.map(_records_job, jobs) for r in part]
    return BenchmarkDataset(
        spec_name=scm.name,
        variation=tuple(scm.variation),
        scorer_label=scm.scorer.label,
        seed=scm.seed,
        treatment=treatment,
        outcome=outcome,
        covariate_names=covariates_of(scm, treatment, outcome),
        cards={name: scm.variables[name].card for name in scm.order},
        records=tuple(records),
        exogenous=tuple(scm.exogenous),
    )


def dataset_seed(master: int, variation_index: int, dataset_index: int) -> int:
    """Seed of one dataset; distinct (variation, dataset) pairs get unrelated streams."""
    state = np.random.SeedSequence([int(master), int(variation_index), int(dataset_index)]).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def meta_path(csv_path: str | os.PathLike) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name[: -len(".csv")] + ".meta.json" if p.name.endswith(".csv") else p.name + ".meta.json")


def dataset_columns(dataset: BenchmarkDataset) -> list[str]:
    cols = ["unit_id", *dataset.covariate_names, "t", "y"]
    for a in range(dataset.n_arms):
        cols.append(f"y_arm_{a}")
        cols.extend(f"p_arm_{a}_{k}" for k in range(dataset.n_outcome))
    return cols


def _column_doc(dataset: BenchmarkDataset) -> dict[str, str]:
    doc = {"unit_id": "unit index within the seed's stream"}
    for n in dataset.covariate_names:
        doc[n] = f"value index of covariate {n} (0..{dataset.cards[n] - 1})"
    doc["t"] = f"factual value index of treatment {dataset.treatment}"
    doc["y"] = f"factual value index of outcome {dataset.outcome}"
    for a in range(dataset.n_arms):
        doc[f"y_arm_{a}"] = f"outcome value index under do({dataset.treatment}={a})"
        for k in range(dataset.n_outcome):
            doc[f"p_arm_{a}_{k}"] = f"P({dataset.outcome}={k}) under do({dataset.treatment}={a})"
    return doc


def dataset_meta(dataset: BenchmarkDataset, command: Sequence[str] | None = None, **extra) -> dict:
    meta = {
        "format": DATASET_FORMAT,
        "spec": dataset.spec_name,
        "variation": format_variation(dataset.variation),
        "scorer": dataset.scorer_label,
        "seed": dataset.seed,
        "treatment": dataset.treatment,
        "outcome": dataset.outcome,
        "covariates": list(dataset.covariate_names),
        "hidden": list(dataset.hidden),
        "exogenous": list(dataset.exogenous),
        "cards": dict(dataset.cards),
        "n": len(dataset),
        "columns": _column_doc(dataset),
    }
    meta.update(dataset.meta)
    meta.update(extra)
    if command is not None:
        meta["command"] = list(command)
    return meta


def dataset_rows(dataset: BenchmarkDataset) -> Iterable[list]:
    for r in dataset.records:
        row = [r.unit_index, *r.covariates, r.t, r.y]
        for a in range(dataset.n_arms):
            row.append(r.y_arms[a])
            row.extend(r.p_arms[a])
        yield row


def write_dataset(
    dataset: BenchmarkDataset,
    path: str | os.PathLike,
    command: Sequence[str] | None = None,
    **extra,
) -> Path:
    """Write ``path`` (CSV) and its ``.meta.json`` sidecar, each atomically."""
    path = Path(path)
    atomic_write_csv(path, dataset_columns(dataset), dataset_rows(dataset))
    atomic_write_json(meta_path(path), dataset_meta(dataset, command, **extra))
    return path


_META_KEYS = {"format", "spec", "variation", "scorer", "seed", "treatment", "outcome", "covariates",
              "hidden", "exogenous", "cards", "n", "columns"}


def read_dataset(path: str | os.PathLike) -> BenchmarkDataset:
    path = Path(path)
    mpath = meta_path(path)
    try:
        meta = json.loads(mpath.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"missing metadata sidecar {mpath}") from None
    if meta.get("format") != DATASET_FORMAT:
        raise ValidationError(f"{mpath}: unsupported dataset format {meta.get('format')!r}")
    cards = {k: int(v) for k, v in meta["cards"].items()}
    covs = tuple(meta["covariates"])
    treatment, outcome = meta["treatment"], meta["outcome"]
    n_arms, n_y = cards[treatment], cards[outcome]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        records = []
        for line_no, row in enumerate(reader, start=2):
            try:
                records.append(_parse_row(row, len(covs), n_arms, n_y, int(meta["seed"])))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{line_no}: malformed row ({exc})") from None
    expected = ["unit_id", *covs, "t", "y"]
    for a in range(n_arms):
        expected += [f"y_arm_{a}", *(f"p_arm_{a}_{k}" for k in range(n_y))]
    if header != expected:
        raise ValidationError(f"{path}: header does not match the metadata")
    return BenchmarkDataset(
        spec_name=meta["spec"],
        variation=parse_variation(meta["variation"]),
        scorer_label=meta["scorer"],
        seed=int(meta["seed"]),
        treatment=treatment,
        outcome=outcome,
        covariate_names=covs,
        cards=cards,
        records=tuple(records),
        hidden=tuple(meta.get("hidden", ())),
        exogenous=tuple(meta.get("exogenous", ())),
        meta={k: v for k, v in meta.items() if k not in _META_KEYS and k != "command"},
    )


def _parse_row(row: list[str], d: int, n_arms: int, n_y: int, seed: int) -> PotentialOutcomeRecord:
    if len(row) != 3 + d + n_arms * (1 + n_y):
        raise ValueError(f"expected {3 + d + n_arms * (1 + n_y)} fields, got {len(row)}")
    unit = int(row[0])
    cov = tuple(int(x) for x in row[1:1 + d])
    t, y = int(row[1 + d]), int(row[2 + d])
    y_arms, p_arms = [], []
    pos = 3 + d
    for _ in range(n_arms):
        y_arms.append(int(row[pos]))
        p_arms.append(tuple(float(x) for x in row[pos + 1:pos + 1 + n_y]))
        pos += 1 + n_y
    return PotentialOutcomeRecord(unit, cov, t, y, p_arms[t], tuple(y_arms), tuple(p_arms), seed)


# --------------------------------------------------------------------------
# audit
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRow:
    scorer: str
    variation: str
    target: str
    sate: float
    sate_sd_units: float
    datasets: int
    error: str = ""


def _quantiles(values: np.ndarray) -> dict[str, float]:
    if values.size == 0:
        return {k: math.nan for k in ("mean", "std", "min", "q1", "median", "q3", "max")}
    q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "mean": float(values.mean()),
        "std": float(values.std()),
        "min": float(q[0]),
        "q1": float(q[1]),
        "median": float(q[2]),
        "q3": float(q[3]),
        "max": float(q[4]),
    }


@dataclass(frozen=True)
class AuditReport:
    """SATE of every (scorer, variation, target) cell.

    ``sate`` and ``sate_sd_units`` are averages over the cell's datasets; the
    latter divides each dataset's SATE by the standard deviation of its
    observed outcome first.
    """

    spec_name: str
    scorers: tuple[str, ...]
    variations: tuple[str, ...]
    targets: tuple[str, ...]
    rows: tuple[AuditRow, ...]
    seed: int
    arms: tuple[int, int] = (0, 1)

    def values(self, scorer: str, target: str, field_name: str = "sate") -> np.ndarray:
        """Per-variation values in variation order; failed cells are NaN."""
        lookup = {(r.variation): getattr(r, field_name) for r in self.rows if r.scorer == scorer and r.target == target}
        return np.array([lookup.get(v, math.nan) for v in self.variations], dtype=np.float64)

    def failures(self) -> list[AuditRow]:
        return [r for r in self.rows if r.error]

    def summary(self) -> dict:
        out: dict = {
            "spec": self.spec_name,
            "seed": self.seed,
            "arms": list(self.arms),
            "variations": list(self.variations),
            "mode": "comparison" if len(self.scorers) >= 2 else "distribution",
            "scorers": {},
        }
        for s in self.scorers:
            out["scorers"][s] = {}
            for t in self.targets:
                sd = self.values(s, t, "sate_sd_units")
                raw = self.values(s, t, "sate")
                out["scorers"][s][t] = {
                    "cells": int(raw.size),
                    "failed": int(np.isnan(raw).sum()),
                    "sate": _quantiles(raw[~np.isnan(raw)]),
                    "sate_sd_units": _quantiles(sd[~np.isnan(sd)]),
                }
        if len(self.scorers) >= 2:
            pairs = []
            for i, a in enumerate(self.scorers):
                for b in self.scorers[i + 1:]:
                    for t in self.targets:
                        pairs.append({"a": a, "b": b, "target": t, **compare_scorers(self, a, b, t)})
            out["comparisons"] = pairs
        return out

    def csv_rows(self) -> list[list]:
        return [[r.scorer, r.variation, r.target, r.sate, r.sate_sd_units, r.datasets, r.error] for r in self.rows]

    def write(self, csv_path: str | os.PathLike, command: Sequence[str] | None = None) -> tuple[Path, Path]:
        csv_path = Path(csv_path)
        atomic_write_csv(
            csv_path,
            ["scorer", "variation", "target", "sate", "sate_sd_units", "datasets", "error"],
            self.csv_rows(),
        )
        summary = self.summary()
        if command is not None:
            summary["command"] = list(command)
        json_path = csv_path.with_name(csv_path.stem + ".summary.json")
        atomic_write_json(json_path, summary)
        return csv_path, json_path


def compare_scorers(report: AuditReport, a: str, b: str, target: str, field_name: str = "sate") -> dict:
    """Paired comparison of two scorers' per-variation SATEs."""
    va, vb = report.values(a, target, field_name), report.values(b, target, field_name)
    ok = ~(np.isnan(va) | np.isnan(vb))
    va, vb = va[ok], vb[ok]
    if va.size == 0:
        return {"paired": 0, "overlap": None, "sign_agreement": None, "mean_difference": None}
    overlap = bool(max(va.min(), vb.min()) <= min(va.max(), vb.max()))
    return {
        "paired": int(va.size),
        "overlap": overlap,
        "sign_agreement": float(np.mean(np.sign(va) == np.sign(vb))),
        "mean_difference": float(np.mean(va - vb)),
    }


def _audit_cell(args) -> list[AuditRow]:
    spec, scorer, vi, variation, n_datasets, size, seed, targets, arms = args
    label = scorer.label
    vid = format_variation(variation)
    sates = {t: [] for t in targets}
    sds = {t: [] for t in targets}
    try:
        scm = instantiate_variation(spec, variation, scorer, seed=seed)
        for d in range(n_datasets):
            ds = generate_dataset(scm, size, seed=dataset_seed(seed, vi, d))
            for t in targets:
                target = OutcomeTarget.parse(t)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", LogFloorWarning)
                    s = sate(ds, target, arms)
                    sd = float(np.std(observed_outcome(ds, target)))
                sates[t].append(s)
                sds[t].append(s / sd if sd > 0 else math.nan)
    except SeqScmError as exc:
        msg = f"{type(exc).__name__}: {exc}"
        return [AuditRow(label, vid, t, math.nan, math.nan, len(sates[t]), msg) for t in targets]
    return [
        AuditRow(label, vid, t, float(np.mean(sates[t])), float(np.mean(sds[t])), n_datasets)
        for t in targets
    ]


def audit_sate(
    spec: ScmSpecDocument,
    scorers: Sequence[Scorer],
    variation_count: int,
    datasets_per_variation: int,
    dataset_size: int,
    seed: int,
    *,
    targets: Sequence[OutcomeTarget | str] | None = None,
    arms: tuple[int, int] = (0, 1),
    workers: int = 1,
) -> AuditReport:
    """SATE of each scorer on the same sampled phrasing variations.

    Every scorer sees identical variation ids and dataset seeds, so cells are
    paired.  A cell whose scorer fails is kept with NaN values and the error
    text.
    """
    if not scorers:
        raise ValueError("audit needs at least one scorer")
    if min(variation_count, datasets_per_variation, dataset_size) < 1:
        raise ValueError("variation, dataset and size counts must be >= 1")
    labels = [s.label for s in scorers]
    if len(set(labels)) != len(labels) or not all(labels):
        raise ValueError(f"scorer labels must be nonempty and unique, got {labels}")
    n_y = len(spec.variable(spec.outcome).values)
    if targets is None:
        targets = [OutcomeTarget("p", k) for k in range(n_y)]
    targets = [t if isinstance(t, OutcomeTarget) else OutcomeTarget.parse(t) for t in targets]
    for t in targets:
        t.check(n_y)
    target_names = tuple(str(t) for t in targets)
    variations = sample_variations(spec, variation_count, seed)
    jobs = [
        (spec, scorer, vi, v, datasets_per_variation, dataset_size, seed, target_names, tuple(arms))
        for scorer in scorers
        for vi, v in enumerate(variations)
    ]
    if workers <= 1:
        parts = [_audit_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_audit_cell, jobs))
    return AuditReport(
        spec_name=spec.name,
        scorers=tuple(labels),
        variations=tuple(format_variation(v) for v in variations),
        targets=target_names,
        rows=tuple(r for part in parts for r in part),
        seed=seed,
        arms=tuple(arms),
    )
