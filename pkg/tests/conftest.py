from __future__ import annotations

import itertools
import math
from typing import Callable, Mapping, Sequence

import numpy as np
import pytest

from seqscm.graph import Kind
from seqscm.mocks import tabulate
from seqscm.scorers import Scorer, TabularScorer, load_scorer
from seqscm.spec_format import ScmSpecDocument, VariableEntry, bundled_spec, instantiate_variation


def make_spec(
    variables: Sequence[tuple[str, str, int]],
    edges: Sequence[tuple[str, str]],
    treatment: str | None = None,
    outcome: str | None = None,
    name: str = "toy",
) -> ScmSpecDocument:
    """Spec with one phrasing per variable: ``"<name> is v<k>."``."""
    entries = tuple(
        VariableEntry(n, Kind(kind), tuple(f"v{k}" for k in range(card)), (f"{n} is {{x}}.",))
        for n, kind, card in variables
    )
    endo = [n for n, kind, _ in variables if kind == "endogenous"]
    return ScmSpecDocument(
        name=name,
        variables=entries,
        edges=tuple(edges),
        treatment=treatment or endo[0],
        outcome=outcome or endo[-1],
    )


def make_model(
    variables: Sequence[tuple[str, str, int]],
    edges: Sequence[tuple[str, str]],
    cpt: Callable[[str, Mapping[str, int]], Sequence[float] | None],
    seed: int = 0,
    **kw,
):
    spec = make_spec(variables, edges, **kw)
    scorer = TabularScorer(tabulate(spec, cpt), label=kw.get("name", "toy"))
    return instantiate_variation(spec, (0,) * len(variables), scorer, seed=seed)


def random_cpt(seed: int, cards: Mapping[str, int]):
    """Deterministic pseudo-random positive tables keyed on (name, parent values)."""

    def cpt(name, pa):
        key = [seed, sum(ord(c) for c in name), len(pa), *(pa[p] for p in sorted(pa))]
        return list(np.random.default_rng(key).uniform(0.05, 1.0, size=cards[name]))

    return cpt


class PreferenceScorer(Scorer):
    """Log-weight 0 for preferred phrases, -inf for the rest: point-mass mechanisms."""

    kind = "preference"

    def __init__(self, preferred, label: str = "pointmass"):
        super().__init__(label)
        self.preferred = frozenset(preferred)

    def score_continuation(self, context, candidate):
        return 0.0 if candidate in self.preferred else -math.inf


def toy_model(spec_name: str, mock: str, seed: int = 0, variation=None):
    spec = bundled_spec(spec_name)
    variation = variation or (0,) * len(spec.variables)
    return instantiate_variation(spec, variation, load_scorer(f"mock:{mock}"), seed=seed)


@pytest.fixture(scope="session")
def g1():
    return toy_model("marathon_g1", "marathon_g1_confounder", seed=11)


@pytest.fixture(scope="session")
def g2():
    return toy_model("marathon_g2", "marathon_g2_collider", seed=12)


@pytest.fixture(scope="session")
def flip():
    return toy_model("signflip", "signflip", seed=13)


def point_mass(scm, choice: Mapping[str, int] | None = None):
    """Same model with every mechanism a point mass (value 0 unless ``choice`` says otherwise)."""
    choice = choice or {}
    preferred = {scm.variables[n].render(choice.get(n, 0)) for n in scm.order}
    return scm.with_scorer(PreferenceScorer(preferred))


def all_assignments(cards):
    return itertools.product(*(range(c) for c in cards))


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    marker = next((m for m in getattr(report, "_criterion", ()) if m), None)
    if marker is None:
        return
    n, title = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _CRITERIA.get(n)
        if prev is None or prev[1] == "PASS":
            _CRITERIA[n] = (title, status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result()._criterion = ((m.args[0], m.args[1]),)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}")
