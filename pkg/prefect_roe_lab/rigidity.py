"""Extracting coarse maps from spatially implemented isomorphisms"""

from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from prefect.logging import get_logger
from pydantic import VERSION as PYDANTIC_VERSION

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field, validator
else:
    from pydantic import BaseModel, Field, validator

from prefect_roe_lab.exceptions import (
    ConclusionViolation,
    DomainError,
    UncertifiedHypothesis,
)
from prefect_roe_lab.operators import (
    ApproximabilityCertificate,
    BandedOperator,
    ProjectionFamily,
    certified_radius,
    family_tail_certificate,
    ghost_profile,
    propagation,
    spectral_norm,
)
from prefect_roe_lab.reports import decode_complex, encode_complex, rows_to_csv
from prefect_roe_lab.settings import (
    CONCLUSION_SLACK,
    FLOOR_THRESHOLD,
    GHOST_THRESHOLD,
    PROJECTION_TOL,
    UNITARY_TOL,
    parallel_map,
)
from prefect_roe_lab.space import (
    CoarseMap,
    IndexSet,
    MetricSpace,
    closeness_defect,
    expansion_modulus,
    growth,
    radii,
)
from prefect_roe_lab.vecmeasure import AtomicVectorMeasure, approximate_halving

logger = get_logger(__name__)

ARGMAX_TIE_TOL = 1e-12
RESOLUTION_TOL = 1e-9
FLOOR_EPSILON = 1 / 5
STABLE_EPSILON = 1 / 8
STABLE_HYPOTHESIS = 7 / 8


class Verdict(Enum):
    """
    Outcome of a check.

    Attributes:
        PASS (Enum): Hypotheses certified and conclusions met.
        FAIL (Enum): Hypotheses certified but a conclusion failed, or a
            configured threshold was missed.
        UNVERIFIED (Enum): A hypothesis could not be certified.
    """

    PASS = "pass"
    FAIL = "fail"
    UNVERIFIED = "unverified"


class SpatialUnitary(BaseModel):
    """
    A unitary `u` from `l2(X, C^d)` to `l2(Y, C^d)` implementing the
    isomorphism `a -> u a u*`.

    Attributes:
        source: The space `X`.
        target: The space `Y`; must have as many points as `X`.
        fiber_dim: The fiber dimension `d`.
        tol: Tolerance of `||u* u - 1||` and `||u u* - 1||`.
        matrix: The `(|Y| d) x (|X| d)` unitary matrix.
    """

    source: MetricSpace = Field(default=..., description="The space X.")
    target: MetricSpace = Field(default=..., description="The space Y.")
    fiber_dim: int = Field(default=1, ge=1, description="The fiber dimension.")
    tol: float = Field(default=UNITARY_TOL, gt=0, description="Unitarity tolerance.")
    matrix: np.ndarray = Field(default=..., description="The unitary matrix.")

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("matrix", pre=True)
    def _unitary(cls, value, values):
        matrix = np.array(value, dtype=complex)
        source, target = values.get("source"), values.get("target")
        d, tol = values.get("fiber_dim"), values.get("tol")
        if source is None or target is None or d is None or tol is None:
            return matrix
        if source.n != target.n:
            raise ValueError(
                f"Finite spaces carrying a unitary must have equal size, got "
                f"{source.n} and {target.n}"
            )
        expected = (target.n * d, source.n * d)
        if matrix.shape != expected:
            raise ValueError(
                f"Expected a matrix of shape {expected}, got {matrix.shape}"
            )
        defect = unitarity_defect(matrix)
        if defect > tol:
            raise ValueError(f"The matrix is not unitary: defect {defect!r} > {tol!r}")
        matrix.setflags(write=False)
        return matrix

    @classmethod
    def from_matrix(
        cls,
        source: MetricSpace,
        target: MetricSpace,
        matrix: Any,
        fiber_dim: int = 1,
        tol: float = UNITARY_TOL,
    ) -> "SpatialUnitary":
        """
        Wraps a matrix, refusing non-unitary input.

        Raises:
            DomainError: If the matrix has the wrong shape or is not unitary.
        """
        try:
            return cls(
                source=source,
                target=target,
                fiber_dim=fiber_dim,
                tol=tol,
                matrix=matrix,
            )
        except ValueError as exc:
            raise DomainError(str(exc)) from exc

    @classmethod
    def from_bijection(
        cls,
        f: CoarseMap,
        fiber_dim: int = 1,
        phases: Optional[Sequence[complex]] = None,
    ) -> "SpatialUnitary":
        """
        The unitary with `u (delta_x ⊗ e) = phase_x delta_{f(x)} ⊗ e`.

        Raises:
            DomainError: If `f` is not a bijection.
        """
        if not f.is_bijective():
            raise DomainError("Only bijections induce permutation unitaries.")
        d = fiber_dim
        phases = np.ones(f.source.n) if phases is None else np.asarray(phases)
        matrix = np.zeros((f.target.n * d, f.source.n * d), dtype=complex)
        for x, y in enumerate(f.assignment):
            matrix[y * d : (y + 1) * d, x * d : (x + 1) * d] = phases[x] * np.eye(d)
        return cls.from_matrix(f.source, f.target, matrix, fiber_dim=d)

    def inverse(self) -> "SpatialUnitary":
        return SpatialUnitary(
            source=self.target,
            target=self.source,
            fiber_dim=self.fiber_dim,
            tol=self.tol,
            matrix=self.matrix.conj().T,
        )

    def blocks(self) -> np.ndarray:
        """
        The blocks `u_yx` as an array of shape `(|Y|, |X|, d, d)`.
        """
        d = self.fiber_dim
        blocks = self.matrix.reshape(self.target.n, d, self.source.n, d)
        return blocks.transpose(0, 2, 1, 3)

    def image_of(self, x: int, fiber_vector: np.ndarray) -> np.ndarray:
        """
        `u (delta_x ⊗ fiber_vector)`.
        """
        d = self.fiber_dim
        x = self.source.check_point(x)
        return self.matrix[:, x * d : (x + 1) * d] @ fiber_vector

    def to_json(self) -> Dict[str, Any]:
        return {
            "source": self.source.to_json(),
            "target": self.target.to_json(),
            "d": self.fiber_dim,
            "matrix": encode_complex(self.matrix),
        }

    @classmethod
    def from_json(
        cls, data: Dict[str, Any], tol: float = UNITARY_TOL
    ) -> "SpatialUnitary":
        try:
            source = MetricSpace.from_json(data["source"])
            target = MetricSpace.from_json(data["target"])
            d = int(data.get("d", 1))
            matrix = decode_complex(data["matrix"])
        except (KeyError, TypeError) as exc:
            raise DomainError(f"Malformed unitary document: {exc}") from exc
        return cls.from_matrix(source, target, matrix, fiber_dim=d, tol=tol)


def unitarity_defect(matrix: np.ndarray) -> float:
    """
    The larger of `||u* u - 1||` and `||u u* - 1||`.
    """
    matrix = np.asarray(matrix)
    if matrix.shape[0] != matrix.shape[1]:
        return float("inf")
    identity = np.eye(matrix.shape[0])
    return max(
        spectral_norm(matrix.conj().T @ matrix - identity),
        spectral_norm(matrix @ matrix.conj().T - identity),
    )


def conjugate(u: SpatialUnitary, a: BandedOperator) -> BandedOperator:
    """
    The image `u a u*` of an operator on `X`, as an operator on `Y`.

    Raises:
        DomainError: If `a` does not live on the source of `u` with its fiber.
    """
    if not a.space.same_as(u.source) or a.fiber_dim != u.fiber_dim:
        raise DomainError(
            f"The operator lives on {a.space.label!r} (d={a.fiber_dim}), not on "
            f"{u.source.label!r} (d={u.fiber_dim})."
        )
    image = BandedOperator(
        space=u.target,
        fiber_dim=u.fiber_dim,
        entries=u.matrix @ a.entries @ u.matrix.conj().T,
    )
    logger.debug(f"Conjugated operator has propagation {propagation(image)}.")
    return image


def coefficient_matrix(u: SpatialUnitary) -> np.ndarray:
    """
    The `|Y| x |X|` matrix of `||Phi(e_xx) (chi_{y} ⊗ 1)||`, which is the norm
    of the block `u_yx`; for fiber dimension 1 it is `|u_yx|`.
    """
    if u.fiber_dim == 1:
        return np.abs(u.matrix)
    return np.linalg.norm(u.blocks(), ord=2, axis=(2, 3))


def _argmax_columns(coefficients: np.ndarray) -> Tuple[int, ...]:
    choice = []
    for column in coefficients.T:
        choice.append(int(np.flatnonzero(column >= column.max() - ARGMAX_TIE_TOL)[0]))
    return tuple(choice)


def expansion_table(f: CoarseMap) -> List[Tuple[float, float]]:
    """
    `(r, omega_f(r))` for every realized distance `r` of the source.
    """
    return [(r, expansion_modulus(f, r)) for r in radii(f.source)]


class StableLemmaReport(BaseModel):
    """
    Measurements of the stable extraction hypotheses.

    Attributes:
        xi: The fiber unit vector.
        fiber_rank: Rank of the fiber projection `p`.
        hypothesis_value: `min_x ||p_Y (delta_x ⊗ xi)||`.
        hypothesis_bound: The required lower bound 7/8.
        r: A radius at which the pulled back family is 1/8-approximable, if any.
        growth: `N_r`.
        delta: `(16 N_r rank p)^(-1)`.
        measured_floor: `min_x max_y ||p_y (delta_x ⊗ xi)||`.
        verdict: The outcome.
    """

    xi: np.ndarray
    fiber_rank: int
    hypothesis_value: float
    hypothesis_bound: float = STABLE_HYPOTHESIS
    r: Optional[float]
    growth: Optional[int]
    delta: Optional[float]
    measured_floor: float
    verdict: Verdict

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    def to_json(self) -> Dict[str, Any]:
        data = {key: value for key, value in self.__dict__.items()}
        data["verdict"] = self.verdict.value
        return data


class CoarseMapReport(BaseModel):
    """
    A candidate coarse equivalence extracted from a unitary.

    Attributes:
        f: The map `X -> Y`.
        g: The map `Y -> X`, built from the adjoint.
        coefficient_floor: `min_x max_y` of the coefficient matrix.
        inverse_floor: The same quantity for the adjoint.
        expansion_table: `(r, omega_f(r))` over the realized distances of `X`.
        inverse_expansion_table: `(r, omega_g(r))` over the realized distances of `Y`.
        closeness: Displacements of `g f` on `X` and `f g` on `Y`.
        floor_threshold: The smallest floor accepted.
        verdict: The outcome.
        stable: Stable hypotheses, for fiber dimension above 1.
    """

    f: CoarseMap
    g: CoarseMap
    coefficient_floor: float
    inverse_floor: float
    expansion_table: List[Tuple[float, float]]
    inverse_expansion_table: List[Tuple[float, float]]
    closeness: Dict[str, float]
    floor_threshold: float = FLOOR_THRESHOLD
    verdict: Verdict
    stable: Optional[StableLemmaReport] = None

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("coefficient_floor", "inverse_floor")
    def _unit_interval(cls, value):
        if not -ARGMAX_TIE_TOL <= value <= 1 + 1e-9:
            raise ValueError(f"Coefficient floors lie in [0, 1], got {value!r}")
        return min(max(value, 0.0), 1.0)

    @validator("expansion_table", "inverse_expansion_table")
    def _nondecreasing(cls, value):
        moduli = [omega for _, omega in value]
        if any(later < earlier for earlier, later in zip(moduli, moduli[1:])):
            raise ValueError("Expansion tables must be nondecreasing.")
        return value

    def expansion_csv(self) -> str:
        """
        Both expansion tables as one flat table.
        """
        rows = [("f", r, omega) for r, omega in self.expansion_table]
        rows += [("g", r, omega) for r, omega in self.inverse_expansion_table]
        return rows_to_csv(("map", "r", "omega"), rows)

    def to_json(self) -> Dict[str, Any]:
        return {
            "f": list(self.f.assignment),
            "g": list(self.g.assignment),
            "coefficient_floor": self.coefficient_floor,
            "inverse_floor": self.inverse_floor,
            "expansion_table": [list(row) for row in self.expansion_table],
            "inverse_expansion_table": [
                list(row) for row in self.inverse_expansion_table
            ],
            "closeness": self.closeness,
            "floor_threshold": self.floor_threshold,
            "verdict": self.verdict.value,
            "stable": None if self.stable is None else self.stable.to_json(),
        }


def _map_report(
    u: SpatialUnitary,
    coefficients: np.ndarray,
    inverse_coefficients: np.ndarray,
    floor_threshold: float,
    stable: Optional[StableLemmaReport] = None,
) -> CoarseMapReport:
    f = CoarseMap(
        source=u.source, target=u.target, assignment=_argmax_columns(coefficients)
    )
    g = CoarseMap(
        source=u.target,
        target=u.source,
        assignment=_argmax_columns(inverse_coefficients),
    )
    floor = float(coefficients.max(axis=0).min())
    inverse_floor = float(inverse_coefficients.max(axis=0).min())
    passed = floor >= floor_threshold and inverse_floor >= floor_threshold
    if stable is not None and stable.verdict == Verdict.FAIL:
        passed = False
    report = CoarseMapReport(
        f=f,
        g=g,
        coefficient_floor=floor,
        inverse_floor=inverse_floor,
        expansion_table=expansion_table(f),
        inverse_expansion_table=expansion_table(g),
        closeness={
            "g_after_f": closeness_defect(f, g),
            "f_after_g": closeness_defect(g, f),
        },
        floor_threshold=floor_threshold,
        verdict=Verdict.PASS if passed else Verdict.FAIL,
        stable=stable,
    )
    logger.info(
        f"Extracted map {u.source.label!r} -> {u.target.label!r} with floor "
        f"{floor!r}; verdict {report.verdict.value}."
    )
    return report


def extract_map(
    u: SpatialUnitary, floor_threshold: float = FLOOR_THRESHOLD
) -> CoarseMapReport:
    """
    Extracts `f(x) = argmax_y ||Phi(e_xx) delta_y||` and `g` from the adjoint,
    with ties broken by the smallest index.

    Args:
        u: The spatial unitary.
        floor_threshold: The smallest coefficient floor accepted; the verdict
            passes when both floors reach it.

    Returns:
        The report with both maps, floors, expansion tables and closeness
        defects.

    Examples:
        ```python
        from prefect_roe_lab.instances import path_reflection
        from prefect_roe_lab.rigidity import SpatialUnitary, extract_map

        reflection = path_reflection(5)
        report = extract_map(SpatialUnitary.from_bijection(reflection))
        report.f.assignment  # (4, 3, 2, 1, 0)
        ```
    """
    coefficients = coefficient_matrix(u)
    return _map_report(u, coefficients, coefficients.T, floor_threshold)


class PointLemmaRecord(BaseModel):
    """
    The halving lemma at one point.

    Attributes:
        x: The point.
        members: `M(x, delta)`.
        norm: `||p_M delta_x||`.
        complement_norm: `||p_{M'} delta_x||` for the complement `M'`.
        halving_error: Error of the approximate halving of `M'`, if exercised.
        halving_bound: `2 N_r delta`, the bound on that error.
        midpoint: `||p_A p_{M'} delta_x - p_{M'} delta_x / 2||` for the halving `A`.
    """

    x: int
    members: Tuple[int, ...]
    norm: float
    complement_norm: float
    halving_error: Optional[float] = None
    halving_bound: Optional[float] = None
    midpoint: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        data = self.dict()
        data["members"] = list(self.members)
        return data


class LemmaReport(BaseModel):
    """
    The halving lemma over a projection family summing to 1.

    Attributes:
        epsilon: The approximability level.
        r: The radius.
        delta: The threshold defining `M(x, delta)`.
        growth: `N_r`.
        certificate: The family tail certificate at `r`.
        points: Per-point records.
        minimum: `min_x ||p_{M(x, delta)} delta_x||`.
        bound: `1 - 4 epsilon`.
        passed: Whether the minimum reaches the bound up to the slack.
        verdict: The outcome; unverified when the tail is not certified.
    """

    epsilon: float
    r: float
    delta: float
    growth: int
    certificate: ApproximabilityCertificate
    points: List[PointLemmaRecord]
    minimum: float
    bound: float
    passed: bool
    verdict: Verdict

    def to_json(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "r": self.r,
            "delta": self.delta,
            "growth": self.growth,
            "certificate": self.certificate.to_json(),
            "points": [point.to_json() for point in self.points],
            "minimum": self.minimum,
            "bound": self.bound,
            "passed": self.passed,
            "verdict": self.verdict.value,
        }

    def points_csv(self) -> str:
        return rows_to_csv(
            ("x", "members", "norm", "complement_norm", "halving_error", "midpoint"),
            [
                (
                    point.x,
                    list(point.members),
                    point.norm,
                    point.complement_norm,
                    point.halving_error,
                    point.midpoint,
                )
                for point in self.points
            ],
        )


def _require_resolution(ps: ProjectionFamily, require_certified: bool) -> bool:
    defect = spectral_norm(ps.total().entries - np.eye(ps.size))
    if defect <= RESOLUTION_TOL:
        return True
    if require_certified:
        raise UncertifiedHypothesis("resolution_of_identity", defect, RESOLUTION_TOL)
    return False


def _member_of_columns(ps: ProjectionFamily) -> np.ndarray:
    return np.repeat(np.arange(len(ps)), ps.ranks())


def check_halving_lemma(
    ps: ProjectionFamily,
    epsilon: float,
    r: Optional[float] = None,
    delta: Optional[float] = None,
    require_certified: bool = True,
    halving_points: Optional[Iterable[int]] = None,
    threads: Optional[int] = None,
    slack: float = CONCLUSION_SLACK,
) -> LemmaReport:
    """
    Checks `min_x ||p_{M(x, delta)} delta_x|| >= 1 - 4 epsilon` for a family of
    projections summing to 1 whose partial sums are uniformly
    `epsilon`-`r`-approximable, with `M(x, delta)` the members satisfying
    `||p_n delta_x|| >= delta`.

    At each point the complement `M'` of `M(x, delta)` is also halved with the
    vector measure `A -> pi p_A delta_x`, `pi` the restriction to the
    `r`-ball, and the resulting midpoint defect is recorded.

    Args:
        ps: The family; fiber dimension 1.
        epsilon: The approximability level.
        r: The radius; defaults to the smallest radius certified at `epsilon`.
        delta: Override of the default `epsilon / (2 N_r)`.
        require_certified: Refuse uncertified hypotheses instead of reporting
            an unverified verdict.
        halving_points: Points at which the halving is exercised; all by default.
        threads: Parallelism cap for the per-point halving.
        slack: Slack granted to the bound.

    Returns:
        The lemma report.

    Raises:
        DomainError: If the family has fiber dimension above 1 or epsilon is
            not positive.
        UncertifiedHypothesis: If a hypothesis fails and `require_certified`.
    """
    if ps.fiber_dim != 1:
        raise DomainError("The halving lemma is checked for fiber dimension 1.")
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    space = ps.space
    certified = _require_resolution(ps, require_certified)

    if r is None:
        r = certified_radius(ps, epsilon)
        if r is None:
            if require_certified:
                raise UncertifiedHypothesis(
                    "family_tail_bound",
                    family_tail_certificate(ps, epsilon, float(space.dist.max())).value,
                    epsilon,
                )
            r = float(space.dist.max())
    certificate = family_tail_certificate(ps, epsilon, r)
    if not certificate.certified:
        if require_certified:
            raise UncertifiedHypothesis("family_tail_bound", certificate.value, epsilon)
        certified = False

    n_r = growth(space, r)
    delta = epsilon / (2 * n_r) if delta is None else delta
    table = ps.column_norms()
    stacked = ps.stacked()
    owners = _member_of_columns(ps)
    exercised = set(space.points if halving_points is None else halving_points)

    records = []
    for x in space.points:
        in_m = table[:, x] >= delta
        members = tuple(int(k) for k in np.flatnonzero(in_m))
        column_mask = in_m[owners]
        norm = float(np.linalg.norm(stacked[x, column_mask]))
        complement = stacked[:, ~column_mask] @ stacked[x, ~column_mask].conj()
        records.append(
            dict(
                x=x,
                members=members,
                norm=norm,
                complement_norm=float(np.linalg.norm(complement)),
            )
        )

    def halve(x: int) -> Dict[str, float]:
        outside = table[:, x] < delta
        complement = stacked[:, outside[owners]] @ stacked[x, outside[owners]].conj()
        return _halving_at_point(
            ps, stacked, owners, outside, x, r, n_r, delta, complement
        )

    halved = sorted(x for x in exercised if 0 <= x < space.n)
    for x, outcome in zip(halved, parallel_map(halve, halved, threads)):
        records[x].update(outcome)
    points = [PointLemmaRecord(**record) for record in records]

    minimum = min(point.norm for point in points)
    bound = 1 - 4 * epsilon
    passed = minimum >= bound - slack
    if not certified:
        verdict = Verdict.UNVERIFIED
    else:
        verdict = Verdict.PASS if passed else Verdict.FAIL
    logger.info(
        f"Halving lemma at epsilon={epsilon}, r={r}: minimum {minimum!r} against "
        f"{bound!r}; verdict {verdict.value}."
    )
    return LemmaReport(
        epsilon=epsilon,
        r=r,
        delta=delta,
        growth=n_r,
        certificate=certificate,
        points=points,
        minimum=minimum,
        bound=bound,
        passed=passed,
        verdict=verdict,
    )


def _halving_at_point(
    ps: ProjectionFamily,
    stacked: np.ndarray,
    owners: np.ndarray,
    outside: np.ndarray,
    x: int,
    r: float,
    n_r: int,
    delta: float,
    complement: np.ndarray,
) -> Dict[str, float]:
    """
    Halves the complement of `M(x, delta)` with the measure `A -> pi p_A delta_x`.
    """
    ball = np.flatnonzero(ps.space.dist[x] <= r)
    complement_members = np.flatnonzero(outside)
    atoms = []
    for k in complement_members:
        columns = stacked[:, owners == k]
        image = columns[ball] @ columns[x].conj()
        atoms.append(np.concatenate([image.real, image.imag]))
    measure = AtomicVectorMeasure(
        atoms=np.asarray(atoms, dtype=float).reshape(len(atoms), 2 * len(ball))
    )
    result = approximate_halving(measure, range(len(complement_members)))
    chosen = complement_members[result.subset.as_array()]
    chosen_columns = np.isin(owners, chosen)
    half = stacked[:, chosen_columns] @ stacked[x, chosen_columns].conj()
    return {
        "halving_error": result.error,
        "halving_bound": 2 * n_r * delta,
        "midpoint": float(np.linalg.norm(half - complement / 2)),
    }


class FloorReport(BaseModel):
    """
    The coefficient floor of a projection family summing to 1.

    Attributes:
        epsilon: The approximability level, 1/5.
        r: The certified radius.
        growth: `N_r`.
        certified: The certified lower bound `1 / (10 N_r)`.
        measured: `min_x max_n ||p_n delta_x||`.
        passed: Whether the measured floor reaches the certified bound.
        verdict: The outcome.
    """

    epsilon: float
    r: float
    growth: int
    certified: float
    measured: float
    passed: bool
    verdict: Verdict

    def to_json(self) -> Dict[str, Any]:
        data = self.dict()
        data["verdict"] = self.verdict.value
        return data


def coefficient_floor_bound(
    ps: ProjectionFamily,
    r: Optional[float] = None,
    require_certified: bool = True,
    slack: float = CONCLUSION_SLACK,
) -> FloorReport:
    """
    Compares `min_x max_n ||p_n delta_x||` with the certified `1 / (10 N_r)`,
    where `r` certifies the family at level 1/5.

    Raises:
        UncertifiedHypothesis: If the family is not certified and
            `require_certified`.
        ConclusionViolation: If a certified family falls below the bound.
    """
    certified_hypotheses = _require_resolution(ps, require_certified)
    if r is None:
        r = certified_radius(ps, FLOOR_EPSILON)
        if r is None:
            if require_certified:
                raise UncertifiedHypothesis(
                    "family_tail_bound",
                    family_tail_certificate(
                        ps, FLOOR_EPSILON, float(ps.space.dist.max())
                    ).value,
                    FLOOR_EPSILON,
                )
            r = float(ps.space.dist.max())
            certified_hypotheses = False
    certificate = family_tail_certificate(ps, FLOOR_EPSILON, r)
    if not certificate.certified:
        if require_certified:
            raise UncertifiedHypothesis(
                "family_tail_bound", certificate.value, FLOOR_EPSILON
            )
        certified_hypotheses = False

    n_r = growth(ps.space, r)
    bound = 1 / (10 * n_r)
    measured = float(ps.column_norms().max(axis=0).min())
    passed = measured >= bound - slack
    if certified_hypotheses and not passed:
        raise ConclusionViolation("coefficient floor", measured, bound)
    return FloorReport(
        epsilon=FLOOR_EPSILON,
        r=r,
        growth=n_r,
        certified=bound,
        measured=measured,
        passed=passed,
        verdict=(
            Verdict.UNVERIFIED
            if not certified_hypotheses
            else (Verdict.PASS if passed else Verdict.FAIL)
        ),
    )


def _midpoint_bound(p: BandedOperator, delta: float, tol: float) -> float:
    if not p.is_idempotent(tol):
        raise DomainError("The midpoint estimate needs an idempotent.")
    if p.is_projection(tol):
        return 2 * delta
    reflection = 2 * p.entries - np.eye(p.size)
    return 2 * spectral_norm(reflection) * delta


def idempotent_midpoint_check(
    p: BandedOperator,
    v: Any,
    delta: float,
    tol: float = PROJECTION_TOL,
    slack: float = CONCLUSION_SLACK,
) -> bool:
    """
    Checks that `||p v - v/2|| < delta` forces `||v|| < 2 delta` for a
    projection, and `||v|| < 2 ||2p - 1|| delta` for a general idempotent.

    Returns:
        Whether the hypothesis held.

    Raises:
        DomainError: If `p` is not idempotent.
        ConclusionViolation: If the hypothesis held but the bound failed.
    """
    bound = _midpoint_bound(p, delta, tol)
    v = np.asarray(v, dtype=complex).reshape(-1)
    if v.shape != (p.size,):
        raise DomainError(f"Expected a vector of length {p.size}, got {v.shape[0]}")
    hypothesis = np.linalg.norm(p.entries @ v - v / 2) < delta
    if hypothesis and np.linalg.norm(v) >= bound + slack:
        raise ConclusionViolation("||v||", float(np.linalg.norm(v)), bound)
    return bool(hypothesis)


class MidpointSearch(BaseModel):
    """
    Outcome of a batch of midpoint trials.

    Attributes:
        trials: Number of vectors tried.
        hypothesis_hits: How many satisfied `||p v - v/2|| < delta`.
        violations: How many of those broke the norm bound.
        bound: The norm bound.
        worst_ratio: The largest `||v|| / bound` among hypothesis hits.
    """

    trials: int
    hypothesis_hits: int
    violations: int
    bound: float
    worst_ratio: float

    def to_json(self) -> Dict[str, Any]:
        return self.dict()


def midpoint_counterexample_search(
    p: BandedOperator,
    vectors: Any,
    delta: float,
    tol: float = PROJECTION_TOL,
    slack: float = CONCLUSION_SLACK,
) -> MidpointSearch:
    """
    Vectorized `idempotent_midpoint_check` over the rows of `vectors`,
    counting violations instead of raising.
    """
    bound = _midpoint_bound(p, delta, tol)
    vectors = np.atleast_2d(np.asarray(vectors, dtype=complex))
    if vectors.shape[1] != p.size:
        raise DomainError(
            f"Expected vectors of length {p.size}, got {vectors.shape[1]}"
        )
    defects = np.linalg.norm(vectors @ p.entries.T - vectors / 2, axis=1)
    norms = np.linalg.norm(vectors, axis=1)
    hits = defects < delta
    violations = hits & (norms >= bound + slack)
    return MidpointSearch(
        trials=len(vectors),
        hypothesis_hits=int(hits.sum()),
        violations=int(violations.sum()),
        bound=bound,
        worst_ratio=float((norms[hits] / bound).max()) if hits.any() else 0.0,
    )


def expanding_defect(u: SpatialUnitary, eta: float) -> float:
    """
    `max_x ||Phi(e_xx) (1 - chi_Y)||` with `Y` the points where the
    coefficient of `x` is at least `eta`: the mass of each image outside its
    `eta`-level set.
    """
    if eta <= 0:
        raise DomainError(f"eta must be positive, got {eta}")
    coefficients = coefficient_matrix(u)
    d = u.fiber_dim
    worst = 0.0
    for x in u.source.points:
        outside = np.repeat(coefficients[:, x] < eta, d)
        worst = max(worst, spectral_norm(u.matrix[outside, x * d : (x + 1) * d]))
    return worst


class FiberProjection(BaseModel):
    """
    A spectral projection of the fiber capturing a projection family.

    Attributes:
        projection: The `d x d` projection `p`.
        rank: Its rank.
        trace_tail: `trace((1 - p) R)`, at most `epsilon^2`.
        epsilon: The requested level.
        eigenvalues: The spectrum of `R`, descending.
    """

    projection: np.ndarray
    rank: int
    trace_tail: float
    epsilon: float
    eigenvalues: np.ndarray

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    def to_json(self) -> Dict[str, Any]:
        return {
            "projection": encode_complex(self.projection),
            "rank": self.rank,
            "trace_tail": self.trace_tail,
            "epsilon": self.epsilon,
            "eigenvalues": self.eigenvalues.tolist(),
        }


def dominant_fiber_projection(ps: ProjectionFamily, epsilon: float) -> FiberProjection:
    """
    The minimal rank spectral projection `p` of `R = sum_x (p_N)_xx` with
    `trace((1 - p) R) <= epsilon^2`, so that `||(1 ⊗ (1 - p)) p_A|| <= epsilon`
    for every partial sum `p_A`.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    n, d = ps.space.n, ps.fiber_dim
    stacked = ps.stacked().reshape(n, d, -1)
    weight = np.einsum("xir,xjr->ij", stacked, stacked.conj())
    eigenvalues, eigenvectors = np.linalg.eigh((weight + weight.conj().T) / 2)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]

    rank = d
    for k in range(d + 1):
        if eigenvalues[k:].sum() <= epsilon**2:
            rank = k
            break
    kept = eigenvectors[:, :rank]
    return FiberProjection(
        projection=kept @ kept.conj().T,
        rank=rank,
        trace_tail=float(eigenvalues[rank:].sum()),
        epsilon=epsilon,
        eigenvalues=eigenvalues,
    )


def _unit_fiber_vector(xi: Any, d: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=complex).reshape(-1)
    if xi.shape != (d,):
        raise DomainError(f"Expected a fiber vector of length {d}, got {xi.shape[0]}")
    if abs(np.linalg.norm(xi) - 1) > 1e-9:
        raise DomainError(f"xi must be a unit vector, has norm {np.linalg.norm(xi)!r}")
    return xi


def _images(u: SpatialUnitary, xi: np.ndarray) -> np.ndarray:
    """
    The columns `u (delta_x ⊗ xi)`.
    """
    d = u.fiber_dim
    return u.matrix.reshape(-1, u.source.n, d) @ xi


def _image_family(u: SpatialUnitary, xi: np.ndarray) -> ProjectionFamily:
    images = _images(u, xi)
    return ProjectionFamily.from_bases(
        u.target,
        [images[:, x] for x in u.source.points],
        fiber_dim=u.fiber_dim,
        tol=max(PROJECTION_TOL, u.tol),
    )


def _fiber_coefficients(u: SpatialUnitary, xi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """
    `||(chi_{y} ⊗ p) u (delta_x ⊗ xi)||` as a `|Y| x |X|` matrix.
    """
    images = _images(u, xi).reshape(u.target.n, u.fiber_dim, u.source.n)
    projected = np.einsum("ij,yjx->yix", p, images)
    return np.linalg.norm(projected, axis=1)


def stable_lemma_check(
    u: SpatialUnitary, xi: Any, p: Any, slack: float = CONCLUSION_SLACK
) -> StableLemmaReport:
    """
    Measures `min_x ||p_Y (delta_x ⊗ xi)||` against 7/8 for the family
    `p_y = u* (chi_{y} ⊗ p) u`, finds a radius at which that family is
    1/8-approximable, and compares the floor `min_x max_y ||p_y (delta_x ⊗ xi)||`
    with `(16 N_r rank p)^(-1)`.
    """
    d = u.fiber_dim
    xi = _unit_fiber_vector(xi, d)
    p = np.asarray(p, dtype=complex)
    eigenvalues, eigenvectors = np.linalg.eigh((p + p.conj().T) / 2)
    range_basis = eigenvectors[:, eigenvalues > 0.5]
    rank = range_basis.shape[1]

    coefficients = _fiber_coefficients(u, xi, p)
    hypothesis = float(np.sqrt((coefficients**2).sum(axis=0)).min())
    floor = float(coefficients.max(axis=0).min())

    r = n_r = delta = None
    if rank > 0:
        adjoint = u.matrix.conj().T
        bases = []
        for y in u.target.points:
            embedded = np.zeros((u.target.n * d, rank), dtype=complex)
            embedded[y * d : (y + 1) * d] = range_basis
            bases.append(adjoint @ embedded)
        pulled_back = ProjectionFamily.from_bases(
            u.source, bases, fiber_dim=d, tol=max(PROJECTION_TOL, u.tol)
        )
        r = certified_radius(pulled_back, STABLE_EPSILON)
    if r is not None:
        n_r = growth(u.source, r)
        delta = 1 / (16 * n_r * rank)

    if hypothesis < STABLE_HYPOTHESIS or r is None:
        verdict = Verdict.UNVERIFIED
    else:
        verdict = Verdict.PASS if floor >= delta - slack else Verdict.FAIL
    return StableLemmaReport(
        xi=xi,
        fiber_rank=rank,
        hypothesis_value=hypothesis,
        r=r,
        growth=n_r,
        delta=delta,
        measured_floor=floor,
        verdict=verdict,
    )


def stable_extract_map(
    u: SpatialUnitary,
    xi: Any,
    epsilon: float = STABLE_EPSILON,
    floor_threshold: float = FLOOR_THRESHOLD,
) -> CoarseMapReport:
    """
    Extracts `f(x) = argmax_y ||Phi(chi_{x} ⊗ p_xi) (chi_{y} ⊗ p)||` with `p`
    the dominant fiber projection of the images `u (delta_x ⊗ xi)`, and `g`
    symmetrically from the adjoint.

    Raises:
        DomainError: If the fiber dimension is 1 or `xi` is not a unit vector.
    """
    d = u.fiber_dim
    if d < 2:
        raise DomainError("Stable extraction needs fiber dimension above 1.")
    xi = _unit_fiber_vector(xi, d)
    inverse = u.inverse()
    forward = dominant_fiber_projection(_image_family(u, xi), epsilon).projection
    backward = dominant_fiber_projection(_image_family(inverse, xi), epsilon).projection
    stable = stable_lemma_check(u, xi, forward)
    return _map_report(
        u,
        _fiber_coefficients(u, xi, forward),
        _fiber_coefficients(inverse, xi, backward),
        floor_threshold,
        stable=stable,
    )


class GhostReport(BaseModel):
    """
    Ghost profiles of an operator and its image.

    Attributes:
        source_profile: The profile of `a` along the source chain.
        image_profile: The profile of `u a u*` along the target chain.
        source_vanishes: Whether the source profile drops below the threshold
            at its last proper stage.
        image_vanishes: The same for the image.
        prediction_holds: Not (source persists and image vanishes).
        threshold: The vanishing threshold.
    """

    source_profile: List[float]
    image_profile: List[float]
    source_vanishes: bool
    image_vanishes: bool
    prediction_holds: bool
    threshold: float

    def to_json(self) -> Dict[str, Any]:
        return self.dict()


def _vanishes(
    profile: List[float], chain: Sequence[IndexSet], threshold: float
) -> bool:
    proper = [value for value, stage in zip(profile, chain) if len(stage) < stage.size]
    return not proper or proper[-1] <= threshold


def ghost_transport_experiment(
    u: SpatialUnitary,
    a: BandedOperator,
    exhaustion: Sequence[IndexSet],
    target_exhaustion: Optional[Sequence[IndexSet]] = None,
    threshold: float = GHOST_THRESHOLD,
) -> GhostReport:
    """
    Places the ghost profiles of `a` and `u a u*` side by side. The target
    chain defaults to the image of the source chain under the extracted map.
    """
    image = conjugate(u, a)
    if target_exhaustion is None:
        f = extract_map(u).f
        target_exhaustion = [
            IndexSet.of({f(x) for x in stage}, u.target.n) for stage in exhaustion
        ]
    source_profile = ghost_profile(a, exhaustion)
    image_profile = ghost_profile(image, target_exhaustion)
    source_vanishes = _vanishes(source_profile, exhaustion, threshold)
    image_vanishes = _vanishes(image_profile, target_exhaustion, threshold)
    return GhostReport(
        source_profile=source_profile,
        image_profile=image_profile,
        source_vanishes=source_vanishes,
        image_vanishes=image_vanishes,
        prediction_holds=source_vanishes or not image_vanishes,
        threshold=threshold,
    )
