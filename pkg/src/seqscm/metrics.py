"""Ground-truth evaluation of effect estimates.

Standard deviations use ``ddof=0`` throughout and are computed per dataset.
"""

from __future__ import annotations

import math
import os
import re
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .benchmark import BenchmarkDataset, LogFloorWarning, OutcomeTarget, ite_vector, observed_outcome
from .errors import LengthMismatchError, TooFewUnitsError, ZeroDenominatorError, ZeroVarianceError
from .estimators import EstimatorOutput
from .fileio import atomic_write_csv, atomic_write_json

OUTCOME_SD = "outcome-sd"
ITE_SD = "ite-sd"


def _pair(predictions, truths) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise LengthMismatchError(f"{p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise LengthMismatchError("need at least one unit")
    return p, t


def pehe(predictions, truths) -> float:
    """Root mean squared error of per-unit effect predictions."""
    p, t = _pair(predictions, truths)
    return math.sqrt(float(np.mean((p - t) ** 2)))


def standardized_pehe(
    predictions,
    truths,
    denominator: str = OUTCOME_SD,
    dataset: BenchmarkDataset | None = None,
    target: OutcomeTarget | None = None,
    outcomes=None,
) -> float:
    """PEHE divided by the SD of the observed outcomes or of the true ITEs.

    Observed outcomes come from ``outcomes`` if given, else from ``dataset``
    under ``target``.
    """
    value = pehe(predictions, truths)
    if denominator == ITE_SD:
        sd = float(np.std(np.asarray(truths, dtype=np.float64)))
    elif denominator == OUTCOME_SD:
        if outcomes is None:
            if dataset is None or target is None:
                raise ValueError("outcome-sd needs observed outcomes or a dataset and target")
            outcomes = observed_outcome(dataset, target)
        sd = float(np.std(np.asarray(outcomes, dtype=np.float64)))
    else:
        raise ValueError(f"denominator must be {OUTCOME_SD!r} or {ITE_SD!r}")
    if sd <= 0.0:
        raise ZeroDenominatorError(f"{denominator} is zero")
    return value / sd


def r2(predictions, truths) -> float:
    p, t = _pair(predictions, truths)
    if p.size < 2:
        raise LengthMismatchError("r2 needs at least two units")
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst <= 0.0:
        raise ZeroVarianceError("truths have zero variance")
    return 1.0 - float(np.sum((p - t) ** 2)) / sst


def r2_clipped(predictions, truths) -> float:
    return max(r2(predictions, truths), 0.0)


@dataclass(frozen=True)
class IntervalSet:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).ravel()
        hi = np.asarray(self.upper, dtype=np.float64).ravel()
        if lo.shape != hi.shape:
            raise LengthMismatchError("lower and upper bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("every lower bound must be <= its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self) -> int:
        return self.lower.size


def coverage(
    intervals: IntervalSet,
    truths,
    alpha: float = 0.05,
    outcome_sd: float | None = None,
) -> tuple[float, float]:
    """Fraction of truths inside their interval, and the mean width.

    ``alpha`` is carried for reporting only (nominal coverage ``1 - alpha``).
    The width is divided by ``outcome_sd`` when one is supplied.
    """
    t = np.asarray(truths, dtype=np.float64).ravel()
    if t.size != len(intervals):
        raise LengthMismatchError(f"{len(intervals)} intervals vs {t.size} truths")
    if t.size == 0:
        raise LengthMismatchError("need at least one unit")
    inside = (intervals.lower <= t) & (t <= intervals.upper)
    with np.errstate(invalid="ignore"):
        width = float(np.mean(intervals.upper - intervals.lower))
    if outcome_sd is not None:
        if outcome_sd <= 0.0:
            raise ZeroDenominatorError("outcome SD is zero")
        width /= outcome_sd
    return float(inside.mean()), width


def sate_error_sd_units(estimate: float, truth: float, outcome_sd: float) -> float:
    if outcome_sd <= 0.0:
        raise ZeroDenominatorError("outcome SD is zero")
    return (estimate - truth) / outcome_sd


def outcome_sd(dataset: BenchmarkDataset, target: OutcomeTarget) -> float:
    return float(np.std(observed_outcome(dataset, target)))


# --------------------------------------------------------------------------
# stratified correlation
# --------------------------------------------------------------------------

_PROB_CODE = re.compile(r"^P\((\w+)=(\d+)\)$")
_IND_CODE = re.compile(r"^(\w+)=(\d+)$")


def code_values(units, code: str) -> np.ndarray:
    """Numeric column for ``code`` over a sequence of sampled units.

    ``"g=1"`` is the indicator of value 1, ``"P(g=1)"`` the recorded
    probability of that value, and a bare name the value index itself.
    """
    m = _PROB_CODE.match(code)
    if m:
        name, k = m.group(1), int(m.group(2))
        out = []
        for u in units:
            dist = u.distribution(name)
            if dist is None:
                out.append(float(u.index(name) == k))  # fixed value: a point mass
            else:
                out.append(dist.probs[k])
        return np.asarray(out, dtype=np.float64)
    m = _IND_CODE.match(code)
    if m:
        name, k = m.group(1), int(m.group(2))
        return np.asarray([u.index(name) == k for u in units], dtype=np.float64)
    return np.asarray([u.index(code) for u in units], dtype=np.float64)


@dataclass(frozen=True)
class StratumCorrelation:
    value: int
    n: int
    rho: float | None
    note: str = ""


@dataclass(frozen=True)
class StratifiedCorrelation:
    pooled: float
    strata: tuple[StratumCorrelation, ...]

    @property
    def usable(self) -> list[StratumCorrelation]:
        return [s for s in self.strata if s.rho is not None]

    @property
    def mean_abs_within(self) -> float:
        vals = [abs(s.rho) for s in self.usable]
        return float(np.mean(vals)) if vals else math.nan


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    if a.size < 2:
        return None
    da, db = a - a.mean(), b - b.mean()
    sa, sb = float(np.sqrt(da @ da)), float(np.sqrt(db @ db))
    if sa == 0.0 or sb == 0.0:
        return None
    return float(da @ db) / (sa * sb)


def stratified_correlation(data, a: str, b: str, w: str, min_units: int = 3) -> StratifiedCorrelation:
    """Pearson correlation of ``a`` and ``b``, pooled and within each value of ``w``.

    ``data`` is either a sequence of sampled units (``a``/``b`` are codes as
    in :func:`code_values`) or a mapping from name to equal-length arrays.
    Strata with fewer than ``min_units`` units or a constant column are kept
    with ``rho=None`` and a note.
    """
    if isinstance(data, Mapping):
        xa = np.asarray(data[a], dtype=np.float64)
        xb = np.asarray(data[b], dtype=np.float64)
        xw = np.asarray(data[w])
    else:
        units = list(data)
        xa, xb, xw = code_values(units, a), code_values(units, b), code_values(units, w)
    if not (xa.size == xb.size == xw.size):
        raise LengthMismatchError("columns differ in length")
    if xa.size < min_units:
        raise TooFewUnitsError(f"need at least {min_units} units, got {xa.size}")
    pooled = pearson(xa, xb)
    if pooled is None:
        raise ZeroVarianceError("a pooled column is constant")
    strata = []
    for v in np.unique(xw):
        mask = xw == v
        n = int(mask.sum())
        if n < min_units:
            strata.append(StratumCorrelation(int(v), n, None, f"fewer than {min_units} units"))
            continue
        rho = pearson(xa[mask], xb[mask])
        strata.append(StratumCorrelation(int(v), n, rho, "" if rho is not None else "zero variance"))
    return StratifiedCorrelation(pooled, tuple(strata))


def weighted_stratified_correlation(
    weights: np.ndarray,
    xa: np.ndarray,
    xb: np.ndarray,
    xw: np.ndarray,
) -> StratifiedCorrelation:
    """Population version over a finite support with probability ``weights``."""

    def corr(wt, x, y):
        tot = wt.sum()
        if tot <= 0:
            return None
        wt = wt / tot
        mx, my = wt @ x, wt @ y
        vx, vy = wt @ (x - mx) ** 2, wt @ (y - my) ** 2
        if vx <= 0 or vy <= 0:
            return None
        return float(wt @ ((x - mx) * (y - my)) / math.sqrt(vx * vy))

    pooled = corr(weights, xa, xb)
    strata = []
    for v in np.unique(xw):
        m = xw == v
        strata.append(StratumCorrelation(int(v), int(m.sum()), corr(weights[m], xa[m], xb[m])))
    return StratifiedCorrelation(math.nan if pooled is None else pooled, tuple(strata))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    """Metrics for one estimator on one dataset and target.

    ``rmse`` is the absolute SATE error of this single dataset; aggregating
    it as a root mean square across datasets gives the usual ATE RMSE.
    Values that are undefined on the dataset (zero SD, constant truths) are
    NaN.
    """

    method: str
    dataset_id: str
    target: str
    sate: float
    ate_hat: float
    sate_error_sd_units: float
    rmse: float
    r2: float
    r2_clipped: float
    pehe: float
    pehe_std_outcome: float
    pehe_std_ite: float
    coverage: float | None = None
    mean_width_sd_units: float | None = None

    def as_row(self) -> list:
        return [getattr(self, f) for f in REPORT_FIELDS]


REPORT_FIELDS = [
    "method", "dataset_id", "target", "sate", "ate_hat", "sate_error_sd_units", "rmse", "r2", "r2_clipped",
    "pehe", "pehe_std_outcome", "pehe_std_ite", "coverage", "mean_width_sd_units",
]


def _or_nan(fn, *args, **kw) -> float:
    try:
        return fn(*args, **kw)
    except (ZeroDenominatorError, ZeroVarianceError, LengthMismatchError):
        return math.nan


def evaluate(
    dataset: BenchmarkDataset,
    output: EstimatorOutput,
    target: OutcomeTarget,
    arms: tuple[int, int] = (0, 1),
    dataset_id: str = "",
    intervals: IntervalSet | None = None,
    alpha: float = 0.05,
) -> MetricReport:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LogFloorWarning)
        truth = ite_vector(dataset, target, arms)
        y_obs = observed_outcome(dataset, target)
    true_sate = float(truth.mean())
    sd = float(np.std(y_obs))
    cate = output.cate
    if cate.size != truth.size:
        raise LengthMismatchError(f"{cate.size} predictions for {truth.size} units")
    cov = width = None
    if intervals is not None:
        cov, width = coverage(intervals, truth, alpha, outcome_sd=sd if sd > 0 else None)
        if sd <= 0:
            width = math.nan
    r2v = _or_nan(r2, cate, truth)
    return MetricReport(
        method=output.method,
        dataset_id=dataset_id,
        target=str(target),
        sate=true_sate,
        ate_hat=output.ate,
        sate_error_sd_units=_or_nan(sate_error_sd_units, output.ate, true_sate, sd),
        rmse=abs(output.ate - true_sate),
        r2=r2v,
        r2_clipped=r2v if math.isnan(r2v) else max(r2v, 0.0),
        pehe=pehe(cate, truth),
        pehe_std_outcome=_or_nan(standardized_pehe, cate, truth, OUTCOME_SD, outcomes=y_obs),
        pehe_std_ite=_or_nan(standardized_pehe, cate, truth, ITE_SD),
        coverage=cov,
        mean_width_sd_units=width,
    )


def _agg(values: Sequence[float]) -> dict:
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return {"n": 0}
    q = np.quantile(v, [0.25, 0.5, 0.75])
    return {"n": int(v.size), "mean": float(v.mean()), "q1": float(q[0]), "median": float(q[1]), "q3": float(q[2])}


def summarize(reports: Sequence[MetricReport]) -> dict:
    """Per (method, target) aggregates: mean and quartiles of each metric, plus ATE RMSE."""
    groups: dict[tuple[str, str], list[MetricReport]] = {}
    for r in reports:
        groups.setdefault((r.method, r.target), []).append(r)
    out = {}
    for (method, target), rs in sorted(groups.items()):
        entry = {"datasets": len(rs)}
        for f in REPORT_FIELDS[3:]:
            entry[f] = _agg([getattr(r, f) for r in rs])
        errs = np.array([r.rmse for r in rs])
        entry["ate_rmse_across_datasets"] = float(np.sqrt(np.mean(errs ** 2)))
        out.setdefault(method, {})[target] = entry
    return out


def write_reports(reports: Sequence[MetricReport], csv_path: str | os.PathLike, command=None) -> tuple[Path, Path]:
    csv_path = Path(csv_path)
    atomic_write_csv(csv_path, REPORT_FIELDS, (r.as_row() for r in reports))
    summary = {"summary": summarize(reports)}
    if command is not None:
        summary["command"] = list(command)
    json_path = csv_path.with_name(csv_path.stem + ".summary.json")
    atomic_write_json(json_path, summary)
    return csv_path, json_path


def report_dict(report: MetricReport) -> dict:
    return asdict(report)
