"""Localizing a projection onto a unit vector of controlled support diameter"""

import math
from typing import Any, Dict, List, Optional

import numpy as np
from prefect.logging import get_logger
from pydantic import VERSION as PYDANTIC_VERSION
from scipy.optimize import bisect

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field, validator
else:
    from pydantic import BaseModel, Field, validator

from prefect_roe_lab.exceptions import (
    ConclusionViolation,
    ConvergenceError,
    DomainError,
    InvariantViolation,
)
from prefect_roe_lab.operators import (
    BandedOperator,
    apply_to_vector,
    op_norm,
    propagation,
    spectral_norm,
    subtract,
)
from prefect_roe_lab.settings import CONCLUSION_SLACK, NORM_TOL, SUPPORT_TOL
from prefect_roe_lab.space import IndexSet, diameter

logger = get_logger(__name__)

GAMMA_SAFETY = 0.99


def _power_budget(k: int, gamma: float) -> float:
    """
    Bound on `||a^k - p||` for a projection `p` and `||a - p|| <= gamma`.
    """
    return k * gamma * (1 + gamma) ** (k - 1)


class LocalizationParams(BaseModel):
    """
    Parameters of a localization run.

    Attributes:
        epsilon: The target defect; the result satisfies `||p xi|| >= 1 - epsilon`.
        delta: The witness level `||p zeta|| >= delta`.
        s: Propagation of the approximant.
        t: Support diameter of the witness.
        k: The number of powers; minimal with `(delta / 2)^(1 / k) > 1 - epsilon`.
        gamma: How far the approximant may be from the projection.
    """

    epsilon: float = Field(default=..., gt=0, lt=1, description="The target defect.")
    delta: float = Field(default=..., gt=0, le=1, description="The witness level.")
    s: float = Field(default=..., ge=0, description="Propagation of the approximant.")
    t: float = Field(default=..., ge=0, description="Support diameter of the witness.")
    k: int = Field(default=..., ge=1, description="The number of powers.")
    gamma: float = Field(default=..., gt=0, description="The perturbation budget.")

    class Config:
        """Configuration of pydantic."""

        allow_mutation = False

    @validator("k")
    def _rate_beats_defect(cls, value, values):
        if "epsilon" in values and "delta" in values:
            if not (values["delta"] / 2) ** (1 / value) > 1 - values["epsilon"]:
                raise ValueError(
                    f"(delta/2)^(1/k) must exceed 1 - epsilon, which fails for "
                    f"k={value}"
                )
        return value

    @validator("gamma")
    def _budget(cls, value, values):
        if {"epsilon", "delta", "k"} <= values.keys():
            margin = (values["delta"] / 2) ** (1 / values["k"]) - 1 + values["epsilon"]
            if not value < margin:
                raise ValueError(f"gamma must be below {margin!r}, got {value!r}")
            budget = _power_budget(values["k"], value)
            if budget > values["delta"] / 2:
                raise ValueError(
                    f"k gamma (1 + gamma)^(k - 1) = {budget!r} exceeds delta/2"
                )
        return value

    @property
    def rate(self) -> float:
        """
        The per-power ratio `(delta / 2)^(1 / k)`.
        """
        return (self.delta / 2) ** (1 / self.k)

    @property
    def r(self) -> float:
        """
        The diameter bound `4 k s + t`.
        """
        return 4 * self.k * self.s + self.t

    def to_json(self) -> Dict[str, Any]:
        data = self.dict()
        data.update(rate=self.rate, r=self.r)
        return data


class LocalizationResult(BaseModel):
    """
    A unit vector of controlled support on which the projection is almost
    the identity.

    Attributes:
        xi: The unit vector.
        support: The points carrying it.
        diameter: The diameter of the support.
        defect: `1 - ||p xi||`.
        power_index: The power `j` with `xi` proportional to `a^j zeta`.
        ratio: `||a^(j+1) zeta|| / ||a^j zeta||` at the selected power.
        telescoped: `||a^k zeta||`.
        bound: The diameter bound `4 k s + t`.
        norms: `||a^j zeta||` for `j = 0, ..., k`.
    """

    xi: np.ndarray
    support: IndexSet
    diameter: float
    defect: float
    power_index: int
    ratio: float
    telescoped: float
    bound: float
    norms: List[float]

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("xi")
    def _unit(cls, value):
        if abs(np.linalg.norm(value) - 1) > 1e-12:
            raise ValueError(
                f"xi must be a unit vector, has norm {np.linalg.norm(value)!r}"
            )
        return value

    def to_json(self) -> Dict[str, Any]:
        return {
            "xi": self.xi,
            "support": list(self.support.members),
            "diameter": self.diameter,
            "defect": self.defect,
            "power_index": self.power_index,
            "ratio": self.ratio,
            "telescoped": self.telescoped,
            "bound": self.bound,
            "norms": self.norms,
        }


def minimal_power(epsilon: float, delta: float) -> int:
    """
    The smallest `k` with `(delta / 2)^(1 / k) > 1 - epsilon`.
    """
    k = max(1, math.floor(math.log(delta / 2) / math.log1p(-epsilon)) + 1)

    def holds(power: int) -> bool:
        return (delta / 2) ** (1 / power) > 1 - epsilon

    while not holds(k):
        k += 1
    while k > 1 and holds(k - 1):
        k -= 1
    return k


def derive_params(
    epsilon: float, delta: float, s: float, t: float
) -> LocalizationParams:
    """
    Derives the number of powers and the perturbation budget.

    Args:
        epsilon: The target defect, in `(0, 1)`.
        delta: The witness level, in `(0, 1]`.
        s: Propagation of the approximant.
        t: Support diameter of the witness.

    Returns:
        Parameters with `k` minimal and `gamma` 99% of the largest value
        meeting both `gamma < (delta / 2)^(1 / k) - 1 + epsilon` and
        `k gamma (1 + gamma)^(k - 1) <= delta / 2`.

    Raises:
        DomainError: If a parameter is out of range.

    Examples:
        ```python
        from prefect_roe_lab.localization import derive_params

        derive_params(0.1, 0.5, 1, 0).k  # 14
        ```
    """
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    if s < 0 or t < 0:
        raise DomainError(f"s and t must be non-negative, got s={s}, t={t}")

    k = minimal_power(epsilon, delta)
    margin = (delta / 2) ** (1 / k) - 1 + epsilon
    if k == 1:
        root = delta / 2
    else:
        root = bisect(
            lambda g: _power_budget(k, g) - delta / 2, 0.0, delta / (2 * k), xtol=1e-15
        )
    gamma = GAMMA_SAFETY * min(margin, root)
    return LocalizationParams(epsilon=epsilon, delta=delta, s=s, t=t, k=k, gamma=gamma)


def support_points(
    vector: np.ndarray, fiber_dim: int, n: int, tol: float = SUPPORT_TOL
) -> IndexSet:
    """
    The points owning a coordinate of magnitude above `tol` times the norm.
    """
    magnitudes = np.abs(vector).reshape(n, fiber_dim).max(axis=1)
    return IndexSet.of(np.flatnonzero(magnitudes > tol * np.linalg.norm(vector)), n)


def _check_distance(difference: BandedOperator, gamma: float, tol: float) -> None:
    """
    Raises `DomainError` unless `||difference|| <= gamma`.

    A stalled norm estimate still decides the bound whenever its bracket lies
    on one side of `gamma`; otherwise the dense norm settles it.
    """
    try:
        distance = op_norm(difference, tol=tol)
    except ConvergenceError as exc:
        if exc.upper <= gamma:
            return
        if exc.lower > gamma:
            distance = exc.lower
        else:
            logger.debug(
                f"Bracket [{exc.lower!r}, {exc.upper!r}] straddles gamma; "
                "using the dense norm."
            )
            distance = spectral_norm(difference.entries)
    if distance > gamma:
        raise DomainError(f"||p - a|| = {distance!r} exceeds gamma = {gamma!r}")


def localize(
    p: BandedOperator,
    a: BandedOperator,
    zeta: Any,
    params: LocalizationParams,
    norm_tol: float = NORM_TOL,
    support_tol: float = SUPPORT_TOL,
    slack: float = CONCLUSION_SLACK,
) -> LocalizationResult:
    """
    Finds a unit vector `xi` with `||p xi|| >= 1 - epsilon` and support
    diameter at most `4 k s + t`.

    Among `a^j zeta`, `j = 0, ..., k`, the first power whose next ratio
    `||a^(j+1) zeta|| / ||a^j zeta||` reaches `(delta / 2)^(1 / k)` is
    normalized; the ratios telescope to `||a^k zeta|| >= delta / 2`, so
    one exists.

    Args:
        p: The projection.
        a: An approximant of propagation at most `s`.
        zeta: The witness vector; normalized before use.
        params: Parameters from `derive_params`.
        norm_tol: Tolerance of the operator norm of `p - a`.
        support_tol: Relative magnitude below which coordinates are not support.
        slack: Slack granted to the guarantees.

    Returns:
        The localized vector and its diagnostics.

    Raises:
        DomainError: If a precondition fails; the message names the bound.
        InvariantViolation: If no power meets the ratio.
        ConclusionViolation: If a guarantee fails.
    """
    if not p.compatible_with(a):
        raise DomainError(
            "The projection and its approximant live on different spaces."
        )
    zeta = np.asarray(zeta, dtype=complex).reshape(-1)
    if zeta.shape != (p.size,):
        raise DomainError(f"Expected a witness of length {p.size}, got {zeta.shape[0]}")
    zeta_norm = np.linalg.norm(zeta)
    if zeta_norm == 0:
        raise DomainError("The witness vector is zero.")
    zeta = zeta / zeta_norm

    _check_distance(subtract(p, a), params.gamma, norm_tol)
    spread = propagation(a)
    if spread > params.s:
        raise DomainError(f"propagation(a) = {spread!r} exceeds s = {params.s!r}")
    witness_support = support_points(zeta, p.fiber_dim, p.n, support_tol)
    witness_diameter = diameter(p.space, witness_support)
    if witness_diameter > params.t:
        raise DomainError(
            f"diam(supp zeta) = {witness_diameter!r} exceeds t = {params.t!r}"
        )
    level = float(np.linalg.norm(apply_to_vector(p, zeta)))
    if level < params.delta:
        raise DomainError(
            f"||p zeta|| = {level!r} is below delta = {params.delta!r}"
        )

    vectors = [zeta]
    for _ in range(params.k):
        vectors.append(apply_to_vector(a, vectors[-1]))
    norms = [float(np.linalg.norm(vector)) for vector in vectors]

    selected = None
    for j in range(params.k):
        if norms[j] == 0:
            break
        if norms[j + 1] / norms[j] >= params.rate:
            selected = j
            break
    if selected is None:
        raise InvariantViolation(
            f"No power reaches the ratio {params.rate!r}; ||a^k zeta|| = "
            f"{norms[-1]!r} against delta/2 = {params.delta / 2!r}"
        )

    xi = vectors[selected] / norms[selected]
    support = support_points(xi, p.fiber_dim, p.n, support_tol)
    achieved_diameter = diameter(p.space, support)
    captured = float(np.linalg.norm(apply_to_vector(p, xi)))
    if captured < 1 - params.epsilon - slack:
        raise ConclusionViolation("||p xi||", captured, 1 - params.epsilon)
    if achieved_diameter > params.r:
        raise ConclusionViolation("diam(supp xi)", achieved_diameter, params.r)

    logger.info(
        f"Localized at power {selected} with support diameter {achieved_diameter} "
        f"(bound {params.r})."
    )
    return LocalizationResult(
        xi=xi,
        support=support,
        diameter=achieved_diameter,
        defect=1 - captured,
        power_index=selected,
        ratio=norms[selected + 1] / norms[selected],
        telescoped=norms[-1],
        bound=params.r,
        norms=norms,
    )


def localize_at_point(
    p: BandedOperator,
    a: BandedOperator,
    x: int,
    params: LocalizationParams,
    fiber_vector: Optional[Any] = None,
    **kwargs: Any,
) -> LocalizationResult:
    """
    Localizes starting from the witness `delta_x`, tensored with a fiber
    vector (the first basis vector by default).
    """
    x = p.space.check_point(x)
    d = p.fiber_dim
    if fiber_vector is None:
        fiber_vector = np.eye(d)[0]
    fiber_vector = np.asarray(fiber_vector, dtype=complex).reshape(-1)
    if fiber_vector.shape != (d,):
        raise DomainError(
            f"Expected a fiber vector of length {d}, got {fiber_vector.shape[0]}"
        )
    zeta = np.zeros(p.size, dtype=complex)
    zeta[x * d : (x + 1) * d] = fiber_vector
    return localize(p, a, zeta, params, **kwargs)
