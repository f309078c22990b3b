"""Seeded builders of test instances: banded Hamiltonians, unitaries and measures"""

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from prefect_roe_lab.exceptions import DomainError
from prefect_roe_lab.operators import (
    BandedOperator,
    ProjectionFamily,
    chi,
    spectral_norm,
    truncate,
)
from prefect_roe_lab.rigidity import SpatialUnitary
from prefect_roe_lab.space import CoarseMap, MetricSpace, ball, generate
from prefect_roe_lab.vecmeasure import AtomicVectorMeasure, NormKind


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise DomainError("Randomized instances need a seed.")
    return np.random.default_rng(seed)


def random_banded_hermitian(
    space: MetricSpace,
    s: float,
    norm: float,
    seed,
    fiber_dim: int = 1,
) -> BandedOperator:
    """
    A random self-adjoint operator of propagation at most `s`, scaled to
    operator norm `norm`.
    """
    rng = _rng(seed)
    size = space.n * fiber_dim
    raw = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    band = np.kron(space.dist <= s, np.ones((fiber_dim, fiber_dim)))
    hermitian = (raw + raw.conj().T) / 2 * band
    current = spectral_norm(hermitian)
    if current > 0:
        hermitian *= norm / current
    return BandedOperator(space=space, fiber_dim=fiber_dim, entries=hermitian)


def banded_unitary(h: BandedOperator) -> np.ndarray:
    """
    `exp(i H)` for a self-adjoint `H`.
    """
    return expm(1j * h.entries)


def pairwise_rotation_unitary(
    space: MetricSpace, pairs: Sequence[Tuple[int, int]], angle: float
) -> np.ndarray:
    """
    Rotates each pair of points `(x, y)` into each other by `angle`, fixing
    every other point. The propagation is the largest distance within a pair.
    """
    matrix = np.eye(space.n, dtype=complex)
    used = set()
    cos, sin = np.cos(angle), np.sin(angle)
    for x, y in pairs:
        x, y = space.check_point(x), space.check_point(y)
        if x == y or {x, y} & used:
            raise DomainError(f"Rotation pairs must be disjoint, got ({x}, {y})")
        used |= {x, y}
        matrix[x, x], matrix[x, y], matrix[y, x], matrix[y, y] = cos, -sin, sin, cos
    return matrix


def perturbed_permutation_unitary(
    f: CoarseMap,
    h: Optional[BandedOperator] = None,
    fiber_dim: int = 1,
) -> SpatialUnitary:
    """
    The permutation unitary of the bijection `f`, followed on the source
    side by `exp(i H)`.
    """
    permutation = SpatialUnitary.from_bijection(f, fiber_dim=fiber_dim)
    if h is None:
        return permutation
    return SpatialUnitary.from_matrix(
        f.source,
        f.target,
        permutation.matrix @ banded_unitary(h),
        fiber_dim=fiber_dim,
    )


def coordinate_family(
    space: MetricSpace, fiber_dim: int = 1, fiber_vector: Optional[np.ndarray] = None
) -> ProjectionFamily:
    """
    The projections `e_xx`, tensored with the identity of the fiber or, when
    given, with the projection onto `fiber_vector`.
    """
    d = fiber_dim
    bases = []
    for x in space.points:
        if fiber_vector is None:
            basis = np.zeros((space.n * d, d), dtype=complex)
            basis[x * d : (x + 1) * d] = np.eye(d)
        else:
            vector = np.asarray(fiber_vector, dtype=complex)
            basis = np.zeros((space.n * d, 1), dtype=complex)
            basis[x * d : (x + 1) * d, 0] = vector / np.linalg.norm(vector)
        bases.append(basis)
    return ProjectionFamily.from_bases(space, bases, fiber_dim=d)


def conjugated_family(
    family: ProjectionFamily, unitary: np.ndarray
) -> ProjectionFamily:
    """
    The family `u p_n u*` for a unitary matrix `u` on the same space.
    """
    unitary = np.asarray(unitary, dtype=complex)
    return ProjectionFamily.from_bases(
        family.space,
        [unitary @ basis for basis in family.bases],
        fiber_dim=family.fiber_dim,
        tol=family.tol,
    )


def random_projection(
    space: MetricSpace, rank: int, seed, fiber_dim: int = 1
) -> BandedOperator:
    """
    The orthogonal projection onto a random subspace of dimension `rank`.
    """
    rng = _rng(seed)
    size = space.n * fiber_dim
    if not 0 <= rank <= size:
        raise DomainError(f"The rank must lie in [0, {size}], got {rank}")
    raw = rng.standard_normal((size, rank)) + 1j * rng.standard_normal((size, rank))
    basis = np.linalg.qr(raw)[0] if rank else raw
    return BandedOperator(
        space=space, fiber_dim=fiber_dim, entries=basis @ basis.conj().T
    )


def random_idempotent(
    space: MetricSpace, rank: int, seed, skew: float = 0.3
) -> BandedOperator:
    """
    A random idempotent `S D S^-1` of the given rank, generally not
    self-adjoint; `skew` controls how far `S` is from the identity.
    """
    rng = _rng(seed)
    if not 0 <= rank <= space.n:
        raise DomainError(f"The rank must lie in [0, {space.n}], got {rank}")
    noise = rng.standard_normal((space.n, space.n)) / np.sqrt(space.n)
    similarity = np.eye(space.n) + skew * noise
    diagonal = np.diag(np.r_[np.ones(rank), np.zeros(space.n - rank)])
    return BandedOperator(
        space=space, entries=similarity @ diagonal @ np.linalg.inv(similarity)
    )


def random_measure(
    n: int, m: int, seed, norm: NormKind = NormKind.L2
) -> AtomicVectorMeasure:
    """
    `n` standard normal atoms in `R^m`.
    """
    rng = _rng(seed)
    return AtomicVectorMeasure(atoms=rng.standard_normal((n, m)), norm=norm)


def path_reflection(n: int) -> CoarseMap:
    """
    The isometry `x -> n - 1 - x` of the path on `n` points.
    """
    path = generate("path", n=n)
    return CoarseMap(source=path, target=path, assignment=tuple(range(n - 1, -1, -1)))


def localization_instance(
    space: MetricSpace,
    center: int,
    radius: float,
    h_norm: float,
    s: float,
    seed,
    h_propagation: float = 1,
) -> Tuple[BandedOperator, BandedOperator]:
    """
    `p = u chi_B u*` for the ball `B` around `center` and `u = exp(i H)` with
    `H` banded of norm `h_norm`, together with its truncation at `s`.
    """
    h = random_banded_hermitian(space, h_propagation, h_norm, seed)
    u = banded_unitary(h)
    projection = chi(space, ball(space, center, radius))
    p = projection.with_entries(u @ projection.entries @ u.conj().T)
    return p, truncate(p, s)
