from .exceptions import (  # noqa
    RoeLabError,
    DomainError,
    ConvergenceError,
    InvariantViolation,
    NotInHullError,
    UncertifiedHypothesis,
    ConclusionViolation,
)
from .settings import ExperimentConfig, Tolerances, OutputFormat  # noqa
from .space import MetricSpace, IndexSet, CoarseMap, SpaceKind, generate  # noqa
from .operators import BandedOperator, ProjectionFamily, op_norm  # noqa
from .vecmeasure import AtomicVectorMeasure, NormKind, round_to_subset  # noqa
from .localization import LocalizationParams, derive_params, localize  # noqa
from .rigidity import SpatialUnitary, Verdict, extract_map  # noqa

__version__ = "0.1.0"
