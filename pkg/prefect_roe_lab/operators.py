"""Block matrices indexed by a metric space: propagation, norms and truncation"""

from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from prefect.logging import get_logger
from pydantic import VERSION as PYDANTIC_VERSION
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field, validator
else:
    from pydantic import BaseModel, Field, validator

from prefect_roe_lab.exceptions import ConvergenceError, DomainError
from prefect_roe_lab.reports import decode_complex, encode_complex
from prefect_roe_lab.settings import NORM_MAX_ITER, NORM_TOL, PROJECTION_TOL
from prefect_roe_lab.space import IndexSet, MetricSpace, radii

logger = get_logger(__name__)

NORM_START_SEED = 0
NORM_POWER_STEPS = 200


class CertificateKind(Enum):
    """
    How an approximability value was obtained.

    Attributes:
        TRUNCATION_UPPER (Enum): Distance to the truncation; an upper bound on
            the distance to the band.
        SEPARATED_LOWER (Enum): Largest norm of a separated corner; a lower bound
            on the distance to the band.
        SCHUR_FAMILY (Enum): Schur test on summed block norms, uniform over all
            partial sums of a projection family.
    """

    TRUNCATION_UPPER = "truncation_upper"
    SEPARATED_LOWER = "separated_lower"
    SCHUR_FAMILY = "schur_family"


class ApproximabilityCertificate(BaseModel):
    """
    A measured value bounding how well an operator is approximated by
    operators of propagation at most `r`.

    Attributes:
        epsilon: The tolerance the value is compared against.
        r: The propagation radius.
        kind: How the value was obtained.
        value: The measured value.
    """

    epsilon: float = Field(default=..., ge=0, description="The target tolerance.")
    r: float = Field(default=..., ge=0, description="The propagation radius.")
    kind: CertificateKind = Field(
        default=..., description="How the value was obtained."
    )
    value: float = Field(default=..., ge=0, description="The measured value.")

    class Config:
        """Configuration of pydantic."""

        allow_mutation = False

    @property
    def certified(self) -> bool:
        """
        Whether the value is within `epsilon`. For upper-bound kinds this
        witnesses approximability; for the lower-bound kind it only means the
        tested corners did not refute it.
        """
        return self.value <= self.epsilon

    def to_json(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "r": self.r,
            "kind": self.kind.value,
            "value": self.value,
            "certified": self.certified,
        }


class BandedOperator(BaseModel):
    """
    A complex `(n d) x (n d)` matrix viewed as `n x n` blocks of size `d x d`
    indexed by the points of a metric space.

    Attributes:
        space: The metric space indexing the blocks.
        fiber_dim: The block size `d`.
        entries: The dense matrix; point `x` owns rows `x d, ..., x d + d - 1`.
    """

    space: MetricSpace = Field(default=..., description="The indexing space.")
    fiber_dim: int = Field(default=1, ge=1, description="The block size.")
    entries: np.ndarray = Field(default=..., description="The dense matrix.")

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("entries", pre=True)
    def _block_shape(cls, value, values):
        entries = np.array(value, dtype=complex)
        space, d = values.get("space"), values.get("fiber_dim")
        if space is not None and d is not None:
            size = space.n * d
            if entries.shape != (size, size):
                raise ValueError(
                    f"Expected a {size}x{size} matrix for {space.n} points with fiber "
                    f"dimension {d}, got shape {entries.shape}"
                )
        entries.setflags(write=False)
        return entries

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def size(self) -> int:
        return self.space.n * self.fiber_dim

    def blocks(self) -> np.ndarray:
        """
        The entries as an array of shape `(n, n, d, d)` with `blocks[x, y] = a_xy`.
        """
        d = self.fiber_dim
        return self.entries.reshape(self.n, d, self.n, d).transpose(0, 2, 1, 3)

    def block(self, x: int, y: int) -> np.ndarray:
        x, y = self.space.check_point(x), self.space.check_point(y)
        d = self.fiber_dim
        return self.entries[x * d : (x + 1) * d, y * d : (y + 1) * d]

    def compatible_with(self, other: "BandedOperator") -> bool:
        return self.fiber_dim == other.fiber_dim and self.space.same_as(other.space)

    def same_as(self, other: "BandedOperator", atol: float = 0.0) -> bool:
        """
        Whether both operators live on the same space and fiber and agree
        entrywise up to `atol`.
        """
        return self.compatible_with(other) and np.allclose(
            self.entries, other.entries, rtol=0.0, atol=atol
        )

    def with_entries(self, entries: np.ndarray) -> "BandedOperator":
        return BandedOperator(
            space=self.space, fiber_dim=self.fiber_dim, entries=entries
        )

    def is_projection(self, tol: float = PROJECTION_TOL) -> bool:
        """
        Whether the operator is a self-adjoint idempotent within `tol`.
        """
        p = self.entries
        return (
            spectral_norm(p @ p - p) <= tol and spectral_norm(p - p.conj().T) <= tol
        )

    def is_idempotent(self, tol: float = PROJECTION_TOL) -> bool:
        p = self.entries
        return spectral_norm(p @ p - p) <= tol

    def to_json(self, embed_space: bool = False) -> Dict[str, Any]:
        """
        Serializes the operator as a sparse list of its nonzero blocks.
        """
        nonzero = np.argwhere(np.any(self.blocks() != 0, axis=(2, 3)))
        data = {
            "space_label": self.space.label,
            "n": self.n,
            "d": self.fiber_dim,
            "blocks": [
                [int(x), int(y), encode_complex(self.blocks()[x, y])]
                for x, y in nonzero
            ],
        }
        if embed_space:
            data["space"] = self.space.to_json()
        return data

    @classmethod
    def from_json(
        cls, data: Dict[str, Any], space: Optional[MetricSpace] = None
    ) -> "BandedOperator":
        """
        Reads an operator written by `to_json`. The space is taken from the
        document when embedded, otherwise it must be supplied.

        Raises:
            DomainError: If the document is malformed or does not fit the space.
        """
        if "space" in data:
            space = MetricSpace.from_json(data["space"])
        if space is None:
            raise DomainError(
                f"The operator on {data.get('space_label')!r} needs its space."
            )
        try:
            n, d = int(data["n"]), int(data["d"])
            blocks = data["blocks"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"Malformed operator document: {exc}") from exc
        if n != space.n:
            raise DomainError(
                f"The operator has {n} points but {space.label!r} has {space.n}."
            )
        entries = np.zeros((n * d, n * d), dtype=complex)
        for x, y, block in blocks:
            block = decode_complex(block)
            if block.shape != (d, d):
                raise DomainError(
                    f"Block ({x}, {y}) has shape {block.shape}, not {d}x{d}"
                )
            space.check_point(x)
            space.check_point(y)
            entries[x * d : (x + 1) * d, y * d : (y + 1) * d] = block
        return cls(space=space, fiber_dim=d, entries=entries)


def spectral_norm(matrix: np.ndarray) -> float:
    """
    Dense largest singular value; 0 for empty matrices.
    """
    matrix = np.asarray(matrix)
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.norm(matrix, 2))


def identity(space: MetricSpace, fiber_dim: int = 1) -> BandedOperator:
    return BandedOperator(
        space=space, fiber_dim=fiber_dim, entries=np.eye(space.n * fiber_dim)
    )


def zeros(space: MetricSpace, fiber_dim: int = 1) -> BandedOperator:
    size = space.n * fiber_dim
    return BandedOperator(
        space=space, fiber_dim=fiber_dim, entries=np.zeros((size, size))
    )


def matrix_unit(
    space: MetricSpace, x: int, y: int, fiber_dim: int = 1
) -> BandedOperator:
    """
    The matrix unit `e_xy`, tensored with the identity of the fiber.
    """
    x, y = space.check_point(x), space.check_point(y)
    d = fiber_dim
    entries = np.zeros((space.n * d, space.n * d), dtype=complex)
    entries[x * d : (x + 1) * d, y * d : (y + 1) * d] = np.eye(d)
    return BandedOperator(space=space, fiber_dim=d, entries=entries)


def chi(
    space: MetricSpace, subset: Iterable[int], fiber_dim: int = 1
) -> BandedOperator:
    """
    The diagonal projection onto the points of `subset`, tensored with the
    identity of the fiber.
    """
    members = [space.check_point(x) for x in subset]
    mask = IndexSet.of(members, space.n).mask()
    diagonal = np.repeat(mask.astype(float), fiber_dim)
    return BandedOperator(space=space, fiber_dim=fiber_dim, entries=np.diag(diagonal))


def from_dense(
    space: MetricSpace, matrix: np.ndarray, fiber_dim: int = 1
) -> BandedOperator:
    """
    Wraps a dense matrix.

    Raises:
        DomainError: If the shape does not fit the space and fiber.
    """
    try:
        return BandedOperator(space=space, fiber_dim=fiber_dim, entries=matrix)
    except ValueError as exc:
        raise DomainError(str(exc)) from exc


def _require_compatible(a: BandedOperator, b: BandedOperator) -> None:
    if not a.compatible_with(b):
        raise DomainError(
            f"Operators on {a.space.label!r} (d={a.fiber_dim}) and "
            f"{b.space.label!r} (d={b.fiber_dim}) cannot be combined."
        )


def multiply(a: BandedOperator, b: BandedOperator) -> BandedOperator:
    _require_compatible(a, b)
    return a.with_entries(a.entries @ b.entries)


def add(a: BandedOperator, b: BandedOperator) -> BandedOperator:
    _require_compatible(a, b)
    return a.with_entries(a.entries + b.entries)


def subtract(a: BandedOperator, b: BandedOperator) -> BandedOperator:
    _require_compatible(a, b)
    return a.with_entries(a.entries - b.entries)


def scale(a: BandedOperator, factor: complex) -> BandedOperator:
    return a.with_entries(factor * a.entries)


def adjoint(a: BandedOperator) -> BandedOperator:
    return a.with_entries(a.entries.conj().T)


def apply_to_vector(a: BandedOperator, v: np.ndarray) -> np.ndarray:
    """
    Applies the operator to a vector of length `n d`.

    Raises:
        DomainError: If the vector has the wrong length.
    """
    v = np.asarray(v)
    if v.shape != (a.size,):
        raise DomainError(f"Expected a vector of length {a.size}, got shape {v.shape}")
    return a.entries @ v


def power(a: BandedOperator, k: int) -> BandedOperator:
    if k < 0:
        raise DomainError(f"Only non-negative powers are defined, got {k}")
    return a.with_entries(np.linalg.matrix_power(a.entries, k))


def block_norms(a: BandedOperator) -> np.ndarray:
    """
    The `n x n` matrix of operator norms of the blocks `a_xy`.
    """
    if a.fiber_dim == 1:
        return np.abs(a.entries)
    return np.linalg.norm(a.blocks(), ord=2, axis=(2, 3))


def propagation(a: BandedOperator) -> float:
    """
    The largest distance between the indices of a nonzero block; 0 for the
    zero operator.

    Examples:
        ```python
        from prefect_roe_lab.operators import matrix_unit, propagation
        from prefect_roe_lab.space import generate

        path = generate("path", n=5)
        propagation(matrix_unit(path, 0, 3))  # 3.0
        ```
    """
    nonzero = np.any(a.blocks() != 0, axis=(2, 3))
    if not nonzero.any():
        return 0.0
    return float(a.space.dist[nonzero].max())


def op_norm(
    a: Union[BandedOperator, np.ndarray],
    tol: float = NORM_TOL,
    max_iter: int = NORM_MAX_ITER,
    seed: int = NORM_START_SEED,
    refine: bool = True,
) -> float:
    """
    The largest singular value, by power iteration on `a* a` from a seeded
    random start, finished by Lanczos when the top of the spectrum is clustered.

    The estimate is always `||a x||` for a unit vector `x`, so it never exceeds
    the norm. Iteration stops once `x` is an eigenvector of `a* a` up to a
    residual of `tol` relative to its eigenvalue; the squared estimate is then
    within relative error `tol` of the largest eigenvalue.

    Args:
        a: The operator or a dense matrix.
        tol: Relative tolerance on the largest eigenvalue of `a* a`.
        max_iter: The iteration budget; also the Lanczos restart budget.
        seed: Seed of the starting vector.
        refine: Whether a stalled power iteration is handed to Lanczos
            instead of running out its budget.

    Returns:
        The operator norm.

    Raises:
        DomainError: If `tol` is not positive.
        ConvergenceError: If the budget is exhausted; carries a certified bracket.
    """
    if tol <= 0:
        raise DomainError(f"The tolerance must be positive, got {tol}")
    matrix = (
        a.entries if isinstance(a, BandedOperator) else np.asarray(a, dtype=complex)
    )
    if matrix.size == 0 or not np.any(matrix):
        return 0.0
    if matrix.shape[0] < matrix.shape[1]:
        matrix = matrix.conj().T
    scale = float(np.linalg.norm(matrix))
    matrix = matrix / scale

    rng = np.random.default_rng(seed)
    cols = matrix.shape[1]
    v = rng.standard_normal(cols) + 1j * rng.standard_normal(cols)
    v /= np.linalg.norm(v)
    budget = min(max_iter, NORM_POWER_STEPS) if refine else max_iter
    best = 0.0
    for iteration in range(1, budget + 1):
        image = matrix @ v
        image_norm = float(np.linalg.norm(image))
        best = max(best, image_norm)
        w = matrix.conj().T @ image
        rayleigh = image_norm**2
        if rayleigh == 0.0:
            # the start landed in the kernel; restart from a fresh vector
            v = rng.standard_normal(cols) + 1j * rng.standard_normal(cols)
            v /= np.linalg.norm(v)
            continue
        residual = float(np.linalg.norm(w - rayleigh * v))
        if residual <= tol * rayleigh:
            logger.debug(f"Power iteration converged after {iteration} iterations.")
            return scale * image_norm
        v = w / np.linalg.norm(w)

    if refine:
        try:
            best = max(best, _lanczos_norm(matrix, v, tol, max_iter))
            logger.debug("Power iteration stalled; Lanczos refined the estimate.")
            return scale * best
        except ArpackNoConvergence:
            pass

    upper = min(
        1.0,
        float(
            np.sqrt(np.abs(matrix).sum(axis=0).max() * np.abs(matrix).sum(axis=1).max())
        ),
    )
    raise ConvergenceError(
        f"Power iteration did not converge within {max_iter} iterations",
        lower=scale * best,
        upper=scale * upper,
    )


def _lanczos_norm(
    matrix: np.ndarray, v0: np.ndarray, tol: float, max_iter: int
) -> float:
    """
    `||matrix x||` for the top Ritz vector `x` of `matrix* matrix`.
    """
    cols = matrix.shape[1]
    if cols < 3:
        # ARPACK needs k < n - 1 on complex operators
        gram = matrix.conj().T @ matrix
        return float(np.sqrt(max(np.linalg.eigvalsh(gram)[-1], 0.0)))
    gram = LinearOperator(
        (cols, cols),
        matvec=lambda x: matrix.conj().T @ (matrix @ x),
        dtype=complex,
    )
    _, vectors = eigsh(gram, k=1, which="LA", v0=v0, tol=tol, maxiter=max_iter)
    x = vectors[:, 0] / np.linalg.norm(vectors[:, 0])
    return float(np.linalg.norm(matrix @ x))


def truncate(a: BandedOperator, r: float) -> BandedOperator:
    """
    Zeroes every block `a_xy` with `d(x, y) > r`.
    """
    if r < 0:
        raise DomainError(f"Radii must be non-negative, got {r}")
    mask = np.kron(a.space.dist <= r, np.ones((a.fiber_dim, a.fiber_dim)))
    return a.with_entries(a.entries * mask)


def truncation_certificate(
    a: BandedOperator, epsilon: float, r: float, tol: float = NORM_TOL
) -> ApproximabilityCertificate:
    """
    Certifies `epsilon`-`r`-approximability through the truncation of `a`.
    The value is an upper bound on the distance to the operators of
    propagation at most `r`.
    """
    value = op_norm(subtract(a, truncate(a, r)), tol=tol)
    return ApproximabilityCertificate(
        epsilon=epsilon, r=r, kind=CertificateKind.TRUNCATION_UPPER, value=value
    )


def _separated_pairs(
    space: MetricSpace, r: float
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Pairs `(A, B)` with `A = ball(x, s)` over all points and realized radii,
    `B` the points farther than `r` from `A`, in both orders.
    """
    seen = set()
    pairs = []
    for x in space.points:
        for s in radii(space):
            inner = space.dist[x] <= s
            outer = space.dist[inner].min(axis=0) > r
            if not outer.any():
                break
            for first, second in ((inner, outer), (outer, inner)):
                key = (first.tobytes(), second.tobytes())
                if key not in seen:
                    seen.add(key)
                    pairs.append((np.flatnonzero(first), np.flatnonzero(second)))
    return pairs


def _expand(indices: np.ndarray, fiber_dim: int) -> np.ndarray:
    return (indices[:, None] * fiber_dim + np.arange(fiber_dim)[None, :]).ravel()


def separated_lower_bound(a: BandedOperator, r: float) -> float:
    """
    The largest `||chi_A a chi_B||` over a family of pairs with `d(A, B) > r`:
    balls `A` around every point for every realized radius, against the points
    farther than `r` from them. Any operator of propagation at most `r`
    vanishes on such corners, so this bounds the distance to the `r`-band
    from below.
    """
    if r < 0:
        raise DomainError(f"Radii must be non-negative, got {r}")
    best = 0.0
    d = a.fiber_dim
    for first, second in _separated_pairs(a.space, r):
        corner = a.entries[np.ix_(_expand(first, d), _expand(second, d))]
        if np.any(corner):
            best = max(best, spectral_norm(corner))
    return best


def quasi_locality_certificate(
    a: BandedOperator, epsilon: float, r: float
) -> ApproximabilityCertificate:
    """
    Tests `epsilon`-`r`-quasi-locality over the separated pairs of
    `separated_lower_bound`.
    """
    return ApproximabilityCertificate(
        epsilon=epsilon,
        r=r,
        kind=CertificateKind.SEPARATED_LOWER,
        value=separated_lower_bound(a, r),
    )


def band_bracket(
    a: BandedOperator, r: float, tol: float = NORM_TOL
) -> Tuple[float, float]:
    """
    Brackets the distance from `a` to the operators of propagation at most `r`.

    Returns:
        The separated lower bound and the truncation error.
    """
    lower = separated_lower_bound(a, r)
    upper = truncation_certificate(a, 0.0, r, tol=tol).value
    return lower, upper


class ProjectionFamily(BaseModel):
    """
    Mutually orthogonal projections `p_1, ..., p_N` on a common space and
    fiber, each stored through an orthonormal basis `V_i` of its range so
    that `p_i = V_i V_i*`.

    Attributes:
        space: The indexing space.
        fiber_dim: The block size.
        bases: One `(n d) x rank_i` matrix with orthonormal columns per member.
        tol: The tolerance orthonormality was checked against.
    """

    space: MetricSpace = Field(default=..., description="The indexing space.")
    fiber_dim: int = Field(default=1, ge=1, description="The block size.")
    tol: float = Field(
        default=PROJECTION_TOL, gt=0, description="Projection tolerance."
    )
    bases: Tuple[np.ndarray, ...] = Field(
        default=..., description="Orthonormal bases of the ranges."
    )

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("bases", pre=True)
    def _orthonormal(cls, value, values):
        space, d, tol = values.get("space"), values.get("fiber_dim"), values.get("tol")
        if space is None or d is None or tol is None:
            return value
        size = space.n * d
        bases = []
        for index, basis in enumerate(value):
            basis = np.array(basis, dtype=complex)
            if basis.ndim == 1:
                basis = basis[:, None]
            if basis.ndim != 2 or basis.shape[0] != size:
                raise ValueError(
                    f"Member {index} needs a basis with {size} rows, got {basis.shape}"
                )
            basis.setflags(write=False)
            bases.append(basis)
        if bases:
            stacked = np.hstack(bases)
            gram = stacked.conj().T @ stacked
            defect = spectral_norm(gram - np.eye(gram.shape[0]))
            if defect > tol:
                raise ValueError(
                    f"The members are not mutually orthogonal projections: the "
                    f"stacked bases deviate from orthonormal by {defect!r} > {tol!r}"
                )
        return tuple(bases)

    @classmethod
    def from_bases(
        cls,
        space: MetricSpace,
        bases: Sequence[np.ndarray],
        fiber_dim: int = 1,
        tol: float = PROJECTION_TOL,
    ) -> "ProjectionFamily":
        """
        Builds a family from orthonormal bases of the ranges.

        Raises:
            DomainError: If the bases are not jointly orthonormal within `tol`.
        """
        try:
            return cls(space=space, fiber_dim=fiber_dim, tol=tol, bases=tuple(bases))
        except ValueError as exc:
            raise DomainError(str(exc)) from exc

    @classmethod
    def from_operators(
        cls, members: Sequence[BandedOperator], tol: float = PROJECTION_TOL
    ) -> "ProjectionFamily":
        """
        Builds a family from explicit projections.

        Raises:
            DomainError: If a member is not a projection within `tol`, the
                members live on different spaces, or they are not mutually
                orthogonal.
        """
        if not members:
            raise DomainError("A projection family needs at least one member.")
        first = members[0]
        bases = []
        for index, member in enumerate(members):
            _require_compatible(first, member)
            p = member.entries
            idempotence = spectral_norm(p @ p - p)
            symmetry = spectral_norm(p - p.conj().T)
            if idempotence > tol or symmetry > tol:
                raise DomainError(
                    f"Member {index} is not a projection: ||p^2 - p|| = "
                    f"{idempotence!r}, ||p - p*|| = {symmetry!r}, tolerance {tol!r}"
                )
            eigenvalues, eigenvectors = np.linalg.eigh((p + p.conj().T) / 2)
            bases.append(eigenvectors[:, eigenvalues > 0.5])
        return cls.from_bases(first.space, bases, fiber_dim=first.fiber_dim, tol=tol)

    def __len__(self) -> int:
        return len(self.bases)

    def to_json(self) -> Dict[str, Any]:
        return {
            "space": self.space.to_json(),
            "d": self.fiber_dim,
            "ranks": self.ranks(),
            "bases": [encode_complex(basis) for basis in self.bases],
        }

    @classmethod
    def from_json(
        cls, data: Dict[str, Any], tol: float = PROJECTION_TOL
    ) -> "ProjectionFamily":
        """
        Reads a family written by `to_json`.

        Raises:
            DomainError: If the document is malformed or the bases are not
                jointly orthonormal.
        """
        try:
            space = MetricSpace.from_json(data["space"])
            d = int(data.get("d", 1))
            ranks = [int(rank) for rank in data["ranks"]]
            encoded = data["bases"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"Malformed family document: {exc}") from exc
        if len(ranks) != len(encoded):
            raise DomainError(f"Expected {len(ranks)} bases, got {len(encoded)}")
        bases = [
            decode_complex(basis).reshape(space.n * d, rank)
            if rank
            else np.zeros((space.n * d, 0), dtype=complex)
            for rank, basis in zip(ranks, encoded)
        ]
        return cls.from_bases(space, bases, fiber_dim=d, tol=tol)

    @property
    def size(self) -> int:
        return self.space.n * self.fiber_dim

    def ranks(self) -> List[int]:
        return [basis.shape[1] for basis in self.bases]

    def member(self, index: int) -> BandedOperator:
        basis = self.bases[index]
        return BandedOperator(
            space=self.space,
            fiber_dim=self.fiber_dim,
            entries=basis @ basis.conj().T,
        )

    @property
    def members(self) -> List[BandedOperator]:
        """
        The projections as operators, materialized on access.
        """
        return [self.member(index) for index in range(len(self))]

    def stacked(self, subset: Optional[Iterable[int]] = None) -> np.ndarray:
        indices = range(len(self)) if subset is None else list(subset)
        columns = [self.bases[index] for index in indices]
        if not columns:
            return np.zeros((self.size, 0), dtype=complex)
        return np.hstack(columns)

    def sum_to(self, subset: Iterable[int]) -> BandedOperator:
        """
        The partial sum `p_A` over the members indexed by `subset`.
        """
        subset = list(subset)
        for index in subset:
            if not 0 <= index < len(self):
                raise DomainError(f"Unknown member {index} of a family of {len(self)}")
        basis = self.stacked(subset)
        return BandedOperator(
            space=self.space, fiber_dim=self.fiber_dim, entries=basis @ basis.conj().T
        )

    def total(self) -> BandedOperator:
        """
        The sum of all members.
        """
        return self.sum_to(range(len(self)))

    def is_resolution_of_identity(self, tol: float = 1e-9) -> bool:
        """
        Whether the members sum to the identity within `tol`.
        """
        defect = spectral_norm(self.total().entries - np.eye(self.size))
        return defect <= tol

    def column_norms(self) -> np.ndarray:
        """
        The `N x n` table of `||p_k chi_{x}||`; for fiber dimension 1 this is
        `||p_k delta_x||`.
        """
        n, d = self.space.n, self.fiber_dim
        table = np.zeros((len(self), n))
        for index, basis in enumerate(self.bases):
            rows = basis.reshape(n, d, basis.shape[1])
            if d == 1:
                table[index] = np.linalg.norm(rows[:, 0, :], axis=1)
            else:
                table[index] = np.linalg.norm(rows, ord=2, axis=(1, 2))
        return table

    def block_norm_sum(self) -> np.ndarray:
        """
        The `n x n` matrix `sum_k ||(p_k)_xy||`.
        """
        n = self.space.n
        total = np.zeros((n, n))
        for index in range(len(self)):
            total += block_norms(self.member(index))
        return total


def family_tail_bound(ps: ProjectionFamily, r: float) -> float:
    """
    A bound, uniform over all subsets `A`, on `||p_A - truncate(p_A, r)||`:
    the larger of the maximal row and column sums of the summed block norms
    outside the `r`-band.

    Examples:
        ```python
        from prefect_roe_lab.instances import coordinate_family
        from prefect_roe_lab.operators import family_tail_bound
        from prefect_roe_lab.space import generate

        family_tail_bound(coordinate_family(generate("path", n=5)), 0)  # 0.0
        ```
    """
    if r < 0:
        raise DomainError(f"Radii must be non-negative, got {r}")
    tail = ps.block_norm_sum() * (ps.space.dist > r)
    return float(max(tail.sum(axis=1).max(), tail.sum(axis=0).max()))


def family_tail_certificate(
    ps: ProjectionFamily, epsilon: float, r: float
) -> ApproximabilityCertificate:
    return ApproximabilityCertificate(
        epsilon=epsilon,
        r=r,
        kind=CertificateKind.SCHUR_FAMILY,
        value=family_tail_bound(ps, r),
    )


def certified_radius(ps: ProjectionFamily, epsilon: float) -> Optional[float]:
    """
    The smallest realized distance `r` whose family tail bound is at most
    `epsilon`, or None if no radius qualifies.
    """
    summed = ps.block_norm_sum()
    for r in radii(ps.space):
        tail = summed * (ps.space.dist > r)
        if max(tail.sum(axis=1).max(), tail.sum(axis=0).max()) <= epsilon:
            return r
    return None


def _check_exhaustion(
    space: MetricSpace, exhaustion: Sequence[IndexSet]
) -> List[np.ndarray]:
    masks = []
    for index, stage in enumerate(exhaustion):
        if stage.size != space.n:
            raise DomainError(
                f"Stage {index} indexes {stage.size} points, not {space.n}."
            )
        mask = stage.mask()
        if masks and np.any(masks[-1] & ~mask):
            raise DomainError(f"The exhaustion shrinks at stage {index}.")
        masks.append(mask)
    return masks


def ghost_profile(a: BandedOperator, exhaustion: Sequence[IndexSet]) -> List[float]:
    """
    For every stage `E_k` of an increasing chain, the largest block norm
    `||a_xy||` with `x` or `y` outside `E_k`.

    Raises:
        DomainError: If the chain is not increasing.
    """
    masks = _check_exhaustion(a.space, exhaustion)
    norms = block_norms(a)
    profile = []
    for mask in masks:
        outside = ~(mask[:, None] & mask[None, :])
        profile.append(float(norms[outside].max()) if outside.any() else 0.0)
    return profile


def ball_exhaustion(space: MetricSpace, center: int = 0) -> List[IndexSet]:
    """
    Balls of every realized radius around `center`.
    """
    center = space.check_point(center)
    return [
        IndexSet.of(np.flatnonzero(space.dist[center] <= r), space.n)
        for r in radii(space)
    ]


def prefix_exhaustion(space: MetricSpace) -> List[IndexSet]:
    """
    The prefixes `{0}, {0, 1}, ..., X` of the index order.
    """
    return [IndexSet.of(range(k), space.n) for k in range(1, space.n + 1)]


def numeric_rank(a: Union[BandedOperator, np.ndarray], tol: float = 1e-8) -> int:
    matrix = a.entries if isinstance(a, BandedOperator) else np.asarray(a)
    return int(np.linalg.matrix_rank(matrix, tol=tol))
