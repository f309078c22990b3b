"""Configuration of laboratory runs: tolerances, seeds, outputs and parallelism"""

import os
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar

import numpy as np
from prefect.blocks.core import Block
from pydantic import VERSION as PYDANTIC_VERSION

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field, validator
else:
    from pydantic import BaseModel, Field, validator

PROJECTION_TOL = 1e-10
UNITARY_TOL = 1e-10
NORM_TOL = 1e-10
NORM_MAX_ITER = 10000
FRACTIONAL_TAU = 1e-9
SUPPORT_TOL = 1e-12
MEMBERSHIP_TOL = 1e-9
CONCLUSION_SLACK = 1e-9
FLOOR_THRESHOLD = 1e-6
GHOST_THRESHOLD = 1e-6

THREADS_ENV_VAR = "ROE_LAB_THREADS"

T = TypeVar("T")
R = TypeVar("R")


class OutputFormat(Enum):
    """
    Formats reports can be written in.

    Attributes:
        JSON (Enum): Structured JSON documents.
        CSV (Enum): Flat tables only.
    """

    JSON = "json"
    CSV = "csv"


class Tolerances(BaseModel):
    """
    Numeric tolerances used throughout a run.

    Attributes:
        projection: Tolerance for idempotence, self-adjointness and orthogonality.
        unitary: Tolerance for unitarity of spatial implementations.
        norm: Relative tolerance of the iterative operator norm.
        norm_max_iter: Iteration budget of the iterative operator norm.
        fractional: Threshold below which pivot weights are snapped to 0 or 1.
        support: Relative magnitude below which vector coordinates are not support.
        membership: Residual allowed in convex hull membership.
        conclusion: Slack granted when asserting quantitative conclusions.
        floor_threshold: Smallest coefficient floor accepted as positive.
        ghost_threshold: Entry size below which a ghost profile counts as vanished.
    """

    projection: float = Field(
        default=PROJECTION_TOL,
        description="Tolerance for idempotence, self-adjointness and orthogonality.",
    )
    unitary: float = Field(
        default=UNITARY_TOL,
        description="Tolerance for unitarity of spatial implementations.",
    )
    norm: float = Field(
        default=NORM_TOL, description="Relative tolerance of the operator norm."
    )
    norm_max_iter: int = Field(
        default=NORM_MAX_ITER, description="Iteration budget of the operator norm."
    )
    fractional: float = Field(
        default=FRACTIONAL_TAU,
        description="Threshold below which pivot weights are snapped to 0 or 1.",
    )
    support: float = Field(
        default=SUPPORT_TOL,
        description="Relative magnitude below which coordinates are not support.",
    )
    membership: float = Field(
        default=MEMBERSHIP_TOL,
        description="Residual allowed in convex hull membership.",
    )
    conclusion: float = Field(
        default=CONCLUSION_SLACK,
        description="Slack granted when asserting quantitative conclusions.",
    )
    floor_threshold: float = Field(
        default=FLOOR_THRESHOLD,
        description="Smallest coefficient floor accepted as positive.",
    )
    ghost_threshold: float = Field(
        default=GHOST_THRESHOLD,
        description="Entry size below which a ghost profile counts as vanished.",
    )

    @validator("*")
    def _positive(cls, value, field):
        if value <= 0:
            raise ValueError(f"Tolerance {field.name!r} must be positive, got {value}")
        return value


def resolve_threads(threads: Optional[int] = None) -> int:
    """
    Resolves the parallelism cap: an explicit value wins, then the
    `ROE_LAB_THREADS` environment variable, then 1.
    """
    if threads is None:
        raw = os.environ.get(THREADS_ENV_VAR)
        if not raw:
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(
                f"{THREADS_ENV_VAR} must be an integer, got {raw!r}"
            ) from None
    if threads < 1:
        raise ValueError(f"The thread cap must be at least 1, got {threads}")
    return threads


def parallel_map(
    fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None
) -> List[R]:
    """
    Applies `fn` to every item, in order, using up to `threads` worker threads.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, items))


class ExperimentConfig(Block):
    """
    Block used to store the configuration of a laboratory run: the seed,
    tolerance overrides, where reports go and how much parallelism to use.

    Attributes:
        seed: Seed for every randomized step; required by randomized commands.
        tolerances: Numeric tolerances; every value must be positive.
        output_path: Where the report is written; stdout when omitted.
        output_format: The report format.
        threads: Parallelism cap; falls back to the ROE_LAB_THREADS variable.
        parameters: Command-specific parameters.

    Example:
        Load a stored experiment configuration:
        ```python
        from prefect_roe_lab import ExperimentConfig
        config = ExperimentConfig.load("BLOCK_NAME")
        ```
    """

    _block_type_name = "Roe Lab Experiment Config"
    _logo_url = "https://cdn.sanity.io/images/3ugk85nk/production/3c7dff04f70aaf4528e184a3b028f9e40b98d68c-250x250.png"  # noqa
    _documentation_url = "https://prefecthq.github.io/prefect-roe-lab/settings/#prefect_roe_lab.settings.ExperimentConfig"  # noqa

    seed: Optional[int] = Field(
        default=None,
        description="Seed for every randomized step; required by randomized runs.",
    )
    tolerances: Tolerances = Field(
        default_factory=Tolerances,
        description="Numeric tolerances; every value must be positive.",
    )
    output_path: Optional[str] = Field(
        default=None,
        description="Where the report is written; stdout when omitted.",
    )
    output_format: OutputFormat = Field(
        default=OutputFormat.JSON, description="The report format."
    )
    threads: Optional[int] = Field(
        default=None,
        description=(
            f"Parallelism cap; falls back to the {THREADS_ENV_VAR} environment "
            "variable, then to 1."
        ),
    )
    parameters: Dict[str, Any] = Field(
        default_factory=dict, description="Command-specific parameters."
    )

    def block_initialization(self):
        """
        Validates the seed and thread cap.
        """
        if self.seed is not None and self.seed < 0:
            raise ValueError(f"The seed must be non-negative, got {self.seed}")
        if self.threads is not None and self.threads < 1:
            raise ValueError(f"The thread cap must be at least 1, got {self.threads}")

    def require_seed(self) -> int:
        """
        Returns the seed, refusing to continue without one.

        Raises:
            ValueError: If no seed was configured.
        """
        if self.seed is None:
            raise ValueError("A seed is required for randomized commands.")
        return self.seed

    def rng(self) -> np.random.Generator:
        """
        Returns a generator seeded with the configured seed.
        """
        return np.random.default_rng(self.require_seed())

    def resolved_threads(self) -> int:
        """
        Returns the effective parallelism cap.
        """
        return resolve_threads(self.threads)
