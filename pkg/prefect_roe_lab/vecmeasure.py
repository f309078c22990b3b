"""Rounding points of the hull of the range of a vector measure to subsets"""

import itertools
import math
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from prefect.logging import get_logger
from pydantic import VERSION as PYDANTIC_VERSION
from scipy.linalg import null_space
from scipy.optimize import linprog

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field, validator
else:
    from pydantic import BaseModel, Field, validator

from prefect_roe_lab.exceptions import DomainError, InvariantViolation, NotInHullError
from prefect_roe_lab.settings import CONCLUSION_SLACK, FRACTIONAL_TAU, MEMBERSHIP_TOL
from prefect_roe_lab.space import IndexSet

logger = get_logger(__name__)

COMPLETION_BITS_CAP = 16
ORACLE_MAX_N = 22
ORACLE_CHUNK = 2**16
SUBSET_BOUND_ENUMERATION_CAP = 10**6


class NormKind(Enum):
    """
    Norms available on the target space of a vector measure.

    Attributes:
        L1 (Enum): Sum of absolute values.
        L2 (Enum): Euclidean norm.
        LINF (Enum): Largest absolute value.
    """

    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    def of(self, vectors: np.ndarray) -> Union[float, np.ndarray]:
        """
        Norms along the last axis.
        """
        vectors = np.asarray(vectors, dtype=float)
        if self == NormKind.L1:
            norms = np.abs(vectors).sum(axis=-1)
        elif self == NormKind.L2:
            norms = np.linalg.norm(vectors, axis=-1)
        else:
            norms = np.abs(vectors).max(axis=-1, initial=0.0)
        return float(norms) if np.ndim(norms) == 0 else norms


class AtomicVectorMeasure(BaseModel):
    """
    A vector measure on `{0, ..., n - 1}` given by its atoms in `R^m`.

    Attributes:
        atoms: The `n x m` matrix whose rows are the atoms.
        norm: The norm used in every bound.
    """

    atoms: np.ndarray = Field(default=..., description="The atoms, one per row.")
    norm: NormKind = Field(default=NormKind.L2, description="The norm used in bounds.")

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("atoms", pre=True)
    def _matrix(cls, value):
        atoms = np.array(value, dtype=float)
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise ValueError(
                f"Atoms must form an n x m matrix with m >= 1, got shape {atoms.shape}"
            )
        if not np.all(np.isfinite(atoms)):
            raise ValueError("Atoms must be finite.")
        atoms.setflags(write=False)
        return atoms

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def m(self) -> int:
        return self.atoms.shape[1]

    def measure(self, subset: Iterable[int]) -> np.ndarray:
        """
        The sum of the atoms indexed by `subset`.
        """
        indices = np.asarray(list(subset), dtype=int)
        if indices.size and (indices.min() < 0 or indices.max() >= self.n):
            raise DomainError(f"Subset {indices.tolist()} leaves range({self.n})")
        return self.atoms[indices].sum(axis=0)

    def total(self) -> np.ndarray:
        return self.atoms.sum(axis=0)

    def atom_norms(self) -> np.ndarray:
        return np.asarray(self.norm.of(self.atoms)).reshape(self.n)

    def restrict(self, subset: Iterable[int]) -> "AtomicVectorMeasure":
        indices = np.asarray(list(subset), dtype=int)
        return AtomicVectorMeasure(
            atoms=self.atoms[indices].reshape(len(indices), self.m), norm=self.norm
        )

    def check_vector(self, v: Any) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.m,):
            raise DomainError(
                f"Expected a vector of dimension {self.m}, got {v.shape[0]}"
            )
        return v

    def to_json(self) -> Dict[str, Any]:
        return {"m": self.m, "norm": self.norm.value, "atoms": self.atoms.tolist()}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "AtomicVectorMeasure":
        try:
            m = int(data["m"])
            atoms = np.asarray(data["atoms"], dtype=float).reshape(-1, m)
            norm = NormKind(data.get("norm", NormKind.L2.value))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"Malformed measure document: {exc}") from exc
        return cls(atoms=atoms, norm=norm)


class PivotStep(BaseModel):
    """
    One move of the weights along a kernel direction.

    Attributes:
        iteration: The step number, starting at 1.
        fractional_before: Number of fractional weights before the step.
        fractional_after: Number of fractional weights after the step.
        coordinate: The weight driven to a bound.
        step: The step length along the kernel direction.
    """

    iteration: int
    fractional_before: int
    fractional_after: int
    coordinate: int
    step: float

    def to_json(self) -> Dict[str, Any]:
        return self.dict()


class NotInHull(BaseModel):
    """
    The target lies outside the convex hull of the range.

    Attributes:
        target: The target vector.
        witness: A functional `w` with `w . target` above the support function.
        gap: `w . target` minus the support function at `w`.
    """

    target: np.ndarray
    witness: np.ndarray
    gap: float

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    def to_json(self) -> Dict[str, Any]:
        return {
            "status": "not_in_hull",
            "target": self.target.tolist(),
            "witness": self.witness.tolist(),
            "gap": self.gap,
        }


class RoundingResult(BaseModel):
    """
    A subset whose measure approximates the target.

    Attributes:
        subset: The chosen subset `F`.
        target: The target vector `v`.
        achieved: The measure of `F`.
        error: The distance from `mu(F)` to `v`.
        bound: The largest norm of `mu(C)` over `|C| <= m`.
        bound_exact: Whether `bound` was enumerated rather than estimated from above.
        weak_bound: `m` times the largest atom norm.
        weights: The sparse fractional weights the subset was rounded from.
        fractional_trace: The pivot log.
        completions: How many 0/1 completions were compared.
    """

    subset: IndexSet
    target: np.ndarray
    achieved: np.ndarray
    error: float
    bound: float
    bound_exact: bool
    weak_bound: float
    weights: np.ndarray
    fractional_trace: List[PivotStep] = Field(default_factory=list)
    completions: int = 1

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    def to_json(self) -> Dict[str, Any]:
        return {
            "status": "rounded",
            "subset": list(self.subset.members),
            "target": self.target.tolist(),
            "achieved": self.achieved.tolist(),
            "error": self.error,
            "bound": self.bound,
            "bound_exact": self.bound_exact,
            "weak_bound": self.weak_bound,
            "weights": self.weights.tolist(),
            "fractional_trace": [step.to_json() for step in self.fractional_trace],
            "completions": self.completions,
        }


def support_function(mu: AtomicVectorMeasure, w: Any) -> float:
    """
    The support function of the convex hull of the range at `w`:
    the sum of the positive parts of `w . atom_i`.
    """
    w = mu.check_vector(w)
    return float(np.maximum(mu.atoms @ w, 0.0).sum())


def _separating_functional(
    mu: AtomicVectorMeasure, v: np.ndarray
) -> Tuple[np.ndarray, float]:
    """
    Maximizes `w . v - h(w)` over the box `[-1, 1]^m`.
    """
    n, m = mu.n, mu.m
    objective = -np.concatenate([v, -np.ones(n)])
    constraints = np.hstack([mu.atoms, -np.eye(n)])
    bounds = [(-1.0, 1.0)] * m + [(0.0, None)] * n
    result = linprog(
        objective,
        A_ub=constraints if n else None,
        b_ub=np.zeros(n) if n else None,
        bounds=bounds,
        method="highs",
    )
    if result.status != 0:
        raise InvariantViolation(f"The separation problem failed: {result.message}")
    witness = result.x[:m]
    return witness, float(witness @ v - support_function(mu, witness))


def hull_membership(
    mu: AtomicVectorMeasure, v: Any, tol: float = MEMBERSHIP_TOL
) -> Union[np.ndarray, NotInHull]:
    """
    Decides whether `v` lies in the convex hull of the range of `mu`, the
    zonotope of the sums `sum_i t_i atom_i` with `t` in `[0, 1]^n`.

    Args:
        mu: The vector measure.
        v: The target.
        tol: The residual allowed, relative to the scale of the instance.

    Returns:
        Weights `t` reproducing `v`, or a `NotInHull` carrying a separating
        functional.

    Raises:
        DomainError: If `v` has the wrong dimension.

    Examples:
        ```python
        from prefect_roe_lab.vecmeasure import AtomicVectorMeasure, hull_membership

        mu = AtomicVectorMeasure(atoms=[[1, 0], [0, 1]])
        hull_membership(mu, [2, 0])  # NotInHull(...)
        ```
    """
    v = mu.check_vector(v)
    scale = max(1.0, float(np.abs(v).max()), float(np.abs(mu.atoms).max(initial=0.0)))
    if mu.n == 0:
        if np.abs(v).max() <= tol * scale:
            return np.zeros(0)
        witness = np.clip(v / np.abs(v).max(), -1.0, 1.0)
        return NotInHull(target=v, witness=witness, gap=float(witness @ v))

    result = linprog(
        np.zeros(mu.n),
        A_eq=mu.atoms.T,
        b_eq=v,
        bounds=[(0.0, 1.0)] * mu.n,
        method="highs",
    )
    if result.status == 0:
        weights = np.clip(result.x, 0.0, 1.0)
        residual = mu.atoms.T @ weights - v
        free = np.flatnonzero((weights > 0) & (weights < 1))
        if free.size and np.any(residual):
            correction = np.linalg.lstsq(mu.atoms[free].T, -residual, rcond=None)[0]
            weights[free] = np.clip(weights[free] + correction, 0.0, 1.0)
            residual = mu.atoms.T @ weights - v
        if np.linalg.norm(residual) <= tol * scale:
            return weights
        logger.debug(
            f"Feasible weights missed the target by {np.linalg.norm(residual)!r}"
        )

    witness, gap = _separating_functional(mu, v)
    return NotInHull(target=v, witness=witness, gap=gap)


def _fractional(weights: np.ndarray, tau: float) -> np.ndarray:
    return np.flatnonzero((weights > tau) & (weights < 1 - tau))


def _snap(weights: np.ndarray, tau: float) -> np.ndarray:
    weights[weights <= tau] = 0.0
    weights[weights >= 1 - tau] = 1.0
    return weights


def _pivot(
    mu: AtomicVectorMeasure, t: Any, tau: float
) -> Tuple[np.ndarray, List[PivotStep]]:
    weights = np.array(t, dtype=float).reshape(-1)
    if weights.shape != (mu.n,):
        raise DomainError(f"Expected {mu.n} weights, got {weights.shape[0]}")
    if np.any(weights < -tau) or np.any(weights > 1 + tau):
        raise DomainError("Weights must lie in [0, 1].")
    weights = _snap(np.clip(weights, 0.0, 1.0), tau)

    trace = []
    fractional = _fractional(weights, tau)
    while len(fractional) > mu.m:
        columns = fractional[: mu.m + 1]
        kernel = null_space(mu.atoms[columns].T)
        if kernel.shape[1] == 0:
            raise InvariantViolation(
                f"No kernel direction among {len(columns)} atoms in dimension {mu.m}"
            )
        direction = kernel[:, 0].real
        current = weights[columns]
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(
                direction > 0,
                (1.0 - current) / direction,
                np.where(direction < 0, -current / direction, np.inf),
            )
        hit = int(np.argmin(room))
        step = float(room[hit])
        weights[columns] = np.clip(current + step * direction, 0.0, 1.0)
        weights[columns[hit]] = 1.0 if direction[hit] > 0 else 0.0
        weights = _snap(weights, tau)

        remaining = _fractional(weights, tau)
        trace.append(
            PivotStep(
                iteration=len(trace) + 1,
                fractional_before=len(fractional),
                fractional_after=len(remaining),
                coordinate=int(columns[hit]),
                step=step,
            )
        )
        logger.debug(
            f"Pivot {len(trace)}: weight {int(columns[hit])} reached a bound, "
            f"{len(remaining)} fractional weights left."
        )
        fractional = remaining
    return weights, trace


def pivot_to_sparse(
    mu: AtomicVectorMeasure, t: Any, tau: float = FRACTIONAL_TAU
) -> np.ndarray:
    """
    Moves the weights along kernel directions of the atoms until at most `m`
    of them are fractional, keeping the weighted sum fixed.

    Args:
        mu: The vector measure.
        t: Weights in `[0, 1]^n`.
        tau: Weights within `tau` of 0 or 1 are snapped.

    Returns:
        Weights with the same weighted sum and at most `m` coordinates in
        `(tau, 1 - tau)`.

    Raises:
        DomainError: If the weights have the wrong length or leave `[0, 1]`.
        InvariantViolation: If no kernel direction is found.
    """
    return _pivot(mu, t, tau)[0]


def small_subset_bound(
    mu: AtomicVectorMeasure, enumeration_cap: int = SUBSET_BOUND_ENUMERATION_CAP
) -> Tuple[float, bool]:
    """
    The largest norm of `mu(C)` over subsets with at most `m` elements.

    Returns:
        The bound and whether it was enumerated exactly. Above
        `enumeration_cap` subsets, the sum of the `m` largest atom norms is
        returned instead, which is never smaller.
    """
    if mu.n == 0:
        return 0.0, True
    largest = min(mu.m, mu.n)
    count = sum(math.comb(mu.n, k) for k in range(1, largest + 1))
    if count > enumeration_cap:
        logger.debug(
            f"{count} subsets exceed the enumeration cap; using the sum of the "
            f"{largest} largest atom norms."
        )
        norms = np.sort(mu.atom_norms())[::-1]
        return float(norms[:largest].sum()), False
    best = 0.0
    for k in range(1, largest + 1):
        combos = np.array(list(itertools.combinations(range(mu.n), k)), dtype=int)
        sums = mu.atoms[combos].sum(axis=1)
        best = max(best, float(np.max(mu.norm.of(sums))))
    return best, True


def _completions(bits: int) -> np.ndarray:
    codes = np.arange(2**bits)
    return ((codes[:, None] >> np.arange(bits)[None, :]) & 1).astype(bool)


def _greedy_completion(
    mu: AtomicVectorMeasure, base: np.ndarray, fractional: np.ndarray, v: np.ndarray
) -> np.ndarray:
    chosen = np.zeros(len(fractional), dtype=bool)
    current = mu.norm.of(base - v)
    improved = True
    while improved:
        improved = False
        for index in range(len(fractional)):
            sign = -1.0 if chosen[index] else 1.0
            candidate = mu.norm.of(base + sign * mu.atoms[fractional[index]] - v)
            if candidate < current:
                base = base + sign * mu.atoms[fractional[index]]
                chosen[index] = not chosen[index]
                current = candidate
                improved = True
    return chosen


def _round_weights(
    mu: AtomicVectorMeasure,
    v: np.ndarray,
    t: Any,
    tau: float,
    slack: float,
) -> RoundingResult:
    weights, trace = _pivot(mu, t, tau)
    ones = np.flatnonzero(weights >= 1 - tau)
    fractional = _fractional(weights, tau)
    base = mu.measure(ones)

    if len(fractional) <= COMPLETION_BITS_CAP:
        bits = _completions(len(fractional))
        sums = base + bits.astype(float) @ mu.atoms[fractional]
        best = int(np.argmin(mu.norm.of(sums - v)))
        chosen = bits[best]
        completions = len(bits)
    else:
        logger.warning(
            f"{len(fractional)} fractional weights exceed the enumeration cap of "
            f"{COMPLETION_BITS_CAP}; refining the empty completion greedily."
        )
        chosen = _greedy_completion(mu, base, fractional, v)
        completions = 0

    subset = IndexSet.of(np.concatenate([ones, fractional[chosen]]), mu.n)
    achieved = mu.measure(subset)
    error = mu.norm.of(achieved - v)
    bound, exact = small_subset_bound(mu)
    weak_bound = float(mu.m * mu.atom_norms().max(initial=0.0))
    if error > bound + slack:
        raise InvariantViolation(
            f"Rounding error {error!r} exceeds the small subset bound {bound!r}"
        )
    return RoundingResult(
        subset=subset,
        target=v,
        achieved=achieved,
        error=error,
        bound=bound,
        bound_exact=exact,
        weak_bound=weak_bound,
        weights=weights,
        fractional_trace=trace,
        completions=completions,
    )


def round_to_subset(
    mu: AtomicVectorMeasure,
    v: Any,
    tau: float = FRACTIONAL_TAU,
    tol: float = MEMBERSHIP_TOL,
    slack: float = CONCLUSION_SLACK,
) -> RoundingResult:
    """
    Finds a subset `F` with `||mu(F) - v||` at most the largest norm of
    `mu(C)` over `|C| <= m`.

    Hull membership gives fractional weights, pivoting leaves at most `m` of
    them fractional, and the best 0/1 completion of those is returned.

    Args:
        mu: The vector measure.
        v: A point of the convex hull of the range.
        tau: Snapping threshold of the pivot.
        tol: Residual allowed in hull membership.
        slack: Slack granted to the guarantee.

    Returns:
        The rounding result.

    Raises:
        NotInHullError: If `v` is outside the convex hull of the range.
        InvariantViolation: If the guarantee fails.

    Examples:
        ```python
        from prefect_roe_lab.vecmeasure import AtomicVectorMeasure, round_to_subset

        mu = AtomicVectorMeasure(atoms=[[1], [1], [1], [1], [1]])
        round_to_subset(mu, [2.5]).error  # 0.5
        ```
    """
    v = mu.check_vector(v)
    weights = hull_membership(mu, v, tol=tol)
    if isinstance(weights, NotInHull):
        raise NotInHullError(weights)
    return _round_weights(mu, v, weights, tau, slack)


def approximate_halving(
    mu: AtomicVectorMeasure,
    subset: Iterable[int],
    tau: float = FRACTIONAL_TAU,
    slack: float = CONCLUSION_SLACK,
) -> RoundingResult:
    """
    Rounds half of `mu(M)` using only the atoms in `M`, starting from the
    weights `1/2`. The returned subset is indexed like `mu`.
    """
    members = np.asarray(list(subset), dtype=int)
    if members.size and (members.min() < 0 or members.max() >= mu.n):
        raise DomainError(f"Subset {members.tolist()} leaves range({mu.n})")
    restricted = mu.restrict(members)
    target = restricted.total() / 2
    result = _round_weights(
        restricted, target, np.full(restricted.n, 0.5), tau, slack
    )
    return result.copy(
        update={"subset": IndexSet.of(members[result.subset.as_array()], mu.n)}
    )


def brute_force_oracle(
    mu: AtomicVectorMeasure, v: Any, max_n: int = ORACLE_MAX_N
) -> Tuple[IndexSet, float]:
    """
    The exhaustive minimum of `||mu(F) - v||` over all subsets. Ties go to the
    subset with the smallest binary code.

    Raises:
        DomainError: If `mu` has more than `max_n` atoms.
    """
    v = mu.check_vector(v)
    if mu.n > max_n:
        raise DomainError(
            f"The oracle enumerates 2^n subsets and refuses n = {mu.n} > {max_n}"
        )
    best_code, best_error = 0, mu.norm.of(-v)
    for start in range(0, 2**mu.n, ORACLE_CHUNK):
        codes = np.arange(start, min(start + ORACLE_CHUNK, 2**mu.n))
        bits = ((codes[:, None] >> np.arange(mu.n)[None, :]) & 1).astype(float)
        errors = mu.norm.of(bits @ mu.atoms - v)
        index = int(np.argmin(errors))
        if errors[index] < best_error:
            best_code, best_error = int(codes[index]), float(errors[index])
    members = [i for i in range(mu.n) if best_code >> i & 1]
    return IndexSet.of(members, mu.n), float(best_error)
