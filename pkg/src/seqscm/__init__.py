"""Sequence-driven structural causal models.

Causal DAGs over natural-language sequence variables whose mechanisms come
from a sequence scorer, with observational, interventional and counterfactual
samplers and the treatment-effect benchmark tooling built on them.
"""

from .errors import SeqScmError
from .graph import CausalGraph, Kind, SdScm, SequenceVariable, non_descendants, topological_order, validate
from .sampling import (
    Intervention,
    JointTable,
    Unit,
    exact_interventional,
    exact_joint,
    parent_context,
    sample_counterfactual,
    sample_interventional,
    sample_observational,
)
from .scorers import (
    CachedScorer,
    RemoteConfig,
    RemoteScorer,
    RestrictedDistribution,
    Scorer,
    TabularScorer,
    TabularScoreTable,
    cached,
    restricted_distribution,
    sample_restricted,
)
from .spec_format import (
    ScmSpecDocument,
    bundled_spec,
    instantiate_variation,
    load_spec,
    parse_spec,
    sample_variations,
    serialize_spec,
)

__version__ = "0.1.0"
