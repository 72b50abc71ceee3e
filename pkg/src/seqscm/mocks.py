"""Tabular mock scorers built from conditional tables over value indices.

A mock is described by a function ``cpt(name, parents) -> weights`` where
``parents`` maps each parent name to its value index.  :func:`tabulate` renders
every context the sampler can produce (for every requested phrasing
variation) and stores the weights under the exact strings, so the resulting
:class:`~seqscm.scorers.TabularScoreTable` reproduces the intended mechanism.

The shipped fixtures in ``seqscm/data/mocks`` are produced by
``python -m seqscm.mocks <outdir>``.
"""

from __future__ import annotations

import itertools
import sys
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .scorers import TabularScoreTable
from .spec_format import ScmSpecDocument, VariationId, bundled_spec, instantiate_variation
from .scorers import TabularScorer

CptFn = Callable[[str, Mapping[str, int]], "Sequence[float] | None"]


def all_variations(spec: ScmSpecDocument, limit: int = 10_000) -> list[VariationId]:
    if spec.n_variations > limit:
        raise ValueError(f"{spec.n_variations} variations exceed the tabulation limit {limit}")
    return [tuple(v) for v in itertools.product(*(range(n) for n in spec.phrasing_counts))]


def tabulate(
    spec: ScmSpecDocument,
    cpt: CptFn,
    variations: Iterable[VariationId] | None = None,
    default: float = 1.0,
    names: Iterable[str] | None = None,
) -> TabularScoreTable:
    """Build a table whose restricted distributions follow ``cpt``.

    Returning ``None`` from ``cpt`` leaves that row to the default score,
    i.e. uniform over the variable's values.  ``names`` limits tabulation to
    those variables, which matters when the others have huge parent sets.
    """
    wanted = None if names is None else set(names)
    table = TabularScoreTable(default=default)
    placeholder = TabularScorer(TabularScoreTable(), label="tabulate")
    for variation in variations if variations is not None else all_variations(spec):
        scm = instantiate_variation(spec, variation, placeholder)
        for t, name in enumerate(scm.order):
            if wanted is not None and name not in wanted:
                continue
            parents = [scm.order[p] for p in scm.parent_positions[t]]
            space = scm.spaces[t]
            for combo in itertools.product(*(range(scm.variables[p].card) for p in parents)):
                weights = cpt(name, dict(zip(parents, combo)))
                if weights is None:
                    continue
                if len(weights) != len(space):
                    raise ValueError(f"{name}: expected {len(space)} weights, got {len(weights)}")
                ctx = " ".join(scm.variables[p].render(k) for p, k in zip(parents, combo))
                for cand, w in zip(space, weights):
                    old = table.entries.get((ctx, cand))
                    if old is not None and old != float(w):
                        raise ValueError(f"conflicting weights for context {ctx!r}, candidate {cand!r}")
                    table.set(ctx, cand, float(w))
    return table


def bernoulli(p1: float) -> list[float]:
    return [1.0 - p1, p1]


# --------------------------------------------------------------------------
# recipes
# --------------------------------------------------------------------------

LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)

# Skewed root tables keep the toy joints peaked enough that 50k draws land
# within 0.02 total variation of the exact joint (uniform roots sit near 0.036).
NAME_WEIGHTS = (0.9, 0.025, 0.025, 0.025, 0.025)
WEATHER_WEIGHTS = (0.45, 0.03, 0.04, 0.03, 0.45)
EXTREME_WEIGHTS = (0.45, 0.04, 0.02, 0.04, 0.45)


def confounder_cpt(name: str, pa: Mapping[str, int]):
    """Marathon G1: weather pushes both gym-or-run and marathon time."""
    if name in ("u1", "u2"):
        return list(NAME_WEIGHTS)
    if name == "w":
        return list(WEATHER_WEIGHTS)
    if name == "g":
        return bernoulli(LEVELS[pa["w"]] + 0.02 * (pa["u1"] - 2))
    if name == "m":
        return bernoulli(LEVELS[pa["w"]] + 0.02 * (pa["u2"] - 2))
    return None


def collider_cpt(name: str, pa: Mapping[str, int]):
    """Marathon G2: weather records whether gym-or-run and marathon time agree."""
    if name in ("u1", "u2"):
        return list(EXTREME_WEIGHTS)
    if name == "g":
        return bernoulli(LEVELS[pa["u1"]])
    if name == "m":
        return bernoulli(LEVELS[pa["u2"]])
    if name == "w":
        agree = pa["g"] == pa["m"]
        return [0.9, 0.1, 1e-4, 1e-4, 1e-4] if agree else [0.1, 0.9, 1e-4, 1e-4, 1e-4]
    return None


def signflip_cpt(name: str, pa: Mapping[str, int]):
    """Severity confounds treatment; treatment helps (+0.1) yet treated units fare worse."""
    if name == "u":
        return [0.5, 0.5]
    if name == "t":
        return bernoulli(0.9 if pa["u"] else 0.1)
    if name == "y":
        base = 0.1 if pa["u"] else 0.8
        return bernoulli(base + 0.1 * pa["t"])
    return None


def shifted_effect_cpt(delta: float, spread: float = 0.05) -> CptFn:
    """Signflip-shaped model whose average effect on P(y=1) is exactly ``delta``.

    The unit-level effect is ``delta + spread`` for mild cases and
    ``delta - spread`` for severe ones; severity is a fair coin.
    """

    def cpt(name: str, pa: Mapping[str, int]):
        if name == "u":
            return [0.5, 0.5]
        if name == "t":
            return bernoulli(0.7 if pa["u"] else 0.3)
        if name == "y":
            base = 0.3 if pa["u"] else 0.6
            effect = delta - spread if pa["u"] else delta + spread
            return bernoulli(base + effect * pa["t"])
        return None

    return cpt


def breast_cancer_roots_cpt(name: str, pa: Mapping[str, int]):
    """Skews the age distribution; every other mechanism stays uniform."""
    if name == "u1":
        return [1, 2, 3, 4, 4, 3, 2]
    return None


def shipped_fixtures() -> dict[str, TabularScoreTable]:
    g1 = bundled_spec("marathon_g1")
    g2 = bundled_spec("marathon_g2")
    flip = bundled_spec("signflip")
    bc = bundled_spec("breast_cancer")
    bc_variations = [(i,) + (0,) * (len(bc.variables) - 1) for i in range(len(bc.variables[0].phrasings))]
    return {
        "marathon_g1_confounder": tabulate(g1, confounder_cpt),
        "marathon_g2_collider": tabulate(g2, collider_cpt),
        "signflip": tabulate(flip, signflip_cpt),
        "signflip_plus": tabulate(flip, shifted_effect_cpt(0.1)),
        "signflip_minus": tabulate(flip, shifted_effect_cpt(-0.1)),
        # u1 is the root; its context is empty so only its own phrasing matters
        "breast_cancer_roots": tabulate(bc, breast_cancer_roots_cpt, variations=bc_variations, names=("u1",)),
    }


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0] if argv else Path(__file__).parent / "data" / "mocks")
    out.mkdir(parents=True, exist_ok=True)
    for name, table in shipped_fixtures().items():
        table.dump(out / f"{name}.table.json")
        print(out / f"{name}.table.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
