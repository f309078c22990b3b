import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefect_roe_lab.exceptions import ConvergenceError, DomainError
from prefect_roe_lab.instances import coordinate_family, random_banded_hermitian
from prefect_roe_lab.operators import (
    BandedOperator,
    CertificateKind,
    ProjectionFamily,
    apply_to_vector,
    ball_exhaustion,
    band_bracket,
    block_norms,
    certified_radius,
    chi,
    family_tail_bound,
    from_dense,
    ghost_profile,
    identity,
    matrix_unit,
    multiply,
    numeric_rank,
    op_norm,
    prefix_exhaustion,
    propagation,
    quasi_locality_certificate,
    separated_lower_bound,
    truncate,
    truncation_certificate,
    zeros,
)
from prefect_roe_lab.space import IndexSet, generate


def test_propagation_of_matrix_units(path5):
    assert propagation(matrix_unit(path5, 0, 3)) == 3.0
    assert propagation(matrix_unit(path5, 2, 2, fiber_dim=2)) == 0.0
    assert propagation(zeros(path5)) == 0.0
    assert propagation(identity(path5)) == 0.0


def test_truncate_bounds_propagation(path5, rng):
    a = from_dense(path5, rng.standard_normal((5, 5)))
    for r in range(5):
        assert propagation(truncate(a, r)) <= r
    assert truncate(a, 4).same_as(a)


def test_from_dense_rejects_wrong_shape(path5):
    with pytest.raises(DomainError, match="Expected a 5x5 matrix"):
        from_dense(path5, np.eye(4))


def test_operators_on_different_spaces_do_not_mix(path5, cycle12):
    with pytest.raises(DomainError, match="cannot be combined"):
        multiply(identity(path5), identity(cycle12))
    with pytest.raises(DomainError, match="cannot be combined"):
        multiply(identity(path5), identity(path5, fiber_dim=2))


def test_apply_to_vector(path5):
    e = matrix_unit(path5, 1, 3)
    assert apply_to_vector(e, np.eye(5)[3]).tolist() == np.eye(5)[1].tolist()
    with pytest.raises(DomainError, match="length 5"):
        apply_to_vector(e, np.ones(4))


def test_blocks_and_block_norms(path5):
    a = matrix_unit(path5, 0, 1, fiber_dim=2)
    assert a.blocks().shape == (5, 5, 2, 2)
    assert np.array_equal(a.block(0, 1), np.eye(2))
    norms = block_norms(a.with_entries(3 * a.entries))
    assert norms[0, 1] == pytest.approx(3.0)
    assert norms.sum() == pytest.approx(3.0)


def test_chi_is_a_projection(path5):
    p = chi(path5, [0, 1])
    assert p.is_projection()
    assert numeric_rank(p) == 2
    assert not from_dense(path5, 0.5 * np.eye(5)).is_idempotent()


class TestOpNorm:
    def test_diagonal(self):
        assert op_norm(np.diag([3.0, 1.0, 0.5])) == pytest.approx(3.0, rel=1e-10)

    def test_zero(self, path5):
        assert op_norm(zeros(path5)) == 0.0
        assert op_norm(np.zeros((0, 0))) == 0.0

    def test_matches_singular_values(self, rng):
        for size in (1, 2, 3, 7, 20, 40):
            matrix = rng.standard_normal((size, size)) + 1j * rng.standard_normal(
                (size, size)
            )
            exact = np.linalg.norm(matrix, 2)
            assert op_norm(matrix) == pytest.approx(exact, rel=1e-9)

    def test_rectangular(self, rng):
        for shape in ((6, 3), (3, 6), (40, 2)):
            matrix = rng.standard_normal(shape)
            exact = np.linalg.norm(matrix, 2)
            assert op_norm(matrix) == pytest.approx(exact, rel=1e-9)

    @pytest.fixture
    def clustered(self, rng):
        size = 64
        u, _ = np.linalg.qr(rng.standard_normal((size, size)))
        v, _ = np.linalg.qr(rng.standard_normal((size, size)))
        sigma = np.concatenate([[1.0, 1.0 - 1e-4], np.linspace(0.9, 0.05, size - 2)])
        return u @ np.diag(sigma) @ v.T

    def test_clustered_top_singular_values(self, clustered):
        assert op_norm(clustered, tol=1e-8) == pytest.approx(1.0, rel=1e-8)
        assert op_norm(clustered) == pytest.approx(1.0, rel=1e-9)

    def test_clustered_never_overshoots(self, clustered):
        assert op_norm(clustered) <= 1.0 + 1e-12

    def test_clustered_without_refinement_stalls(self, clustered):
        with pytest.raises(ConvergenceError) as exc_info:
            op_norm(clustered, tol=1e-8, max_iter=500, refine=False)
        assert exc_info.value.lower <= 1.0 + 1e-12
        assert exc_info.value.upper >= 1.0 - 1e-12

    def test_tiny_operator(self, rng):
        matrix = 1e-9 * rng.standard_normal((30, 30))
        exact = np.linalg.norm(matrix, 2)
        assert op_norm(matrix) == pytest.approx(exact, rel=1e-9)

    def test_is_deterministic(self, rng):
        matrix = rng.standard_normal((15, 15))
        assert op_norm(matrix) == op_norm(matrix)

    def test_tolerance_must_be_positive(self):
        with pytest.raises(DomainError, match="positive"):
            op_norm(np.eye(2), tol=0)

    def test_budget_exhaustion_carries_a_bracket(self, rng):
        matrix = rng.standard_normal((12, 12))
        exact = np.linalg.norm(matrix, 2)
        with pytest.raises(ConvergenceError) as exc_info:
            op_norm(matrix, max_iter=1, refine=False)
        assert exc_info.value.lower <= exact * (1 + 1e-12)
        assert exc_info.value.upper >= exact * (1 - 1e-12)


class TestApproximability:
    def test_bracket_of_far_corner(self, path5):
        corner = matrix_unit(path5, 0, 4)
        assert separated_lower_bound(corner, 3) == pytest.approx(1.0)
        assert truncation_certificate(corner, 0.5, 3).value == pytest.approx(1.0)
        assert separated_lower_bound(corner, 4) == 0.0
        assert truncation_certificate(corner, 0.5, 4).value == 0.0

    def test_certificates(self, path5):
        corner = matrix_unit(path5, 0, 4)
        upper = truncation_certificate(corner, 0.5, 4)
        assert upper.kind == CertificateKind.TRUNCATION_UPPER
        assert upper.certified
        lower = quasi_locality_certificate(corner, 0.5, 3)
        assert lower.kind == CertificateKind.SEPARATED_LOWER
        assert not lower.certified

    @settings(deadline=None, max_examples=20)
    @given(
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        r=st.integers(min_value=0, max_value=5),
    )
    def test_lower_bound_never_exceeds_truncation_error(self, seed, r):
        space = generate("cycle", n=10)
        a = from_dense(space, np.random.default_rng(seed).standard_normal((10, 10)))
        lower, upper = band_bracket(a, r)
        assert 0.0 <= lower <= upper * (1 + 1e-6) + 1e-12

    def test_negative_radius(self, path5):
        with pytest.raises(DomainError, match="non-negative"):
            truncate(identity(path5), -1)
        with pytest.raises(DomainError, match="non-negative"):
            separated_lower_bound(identity(path5), -1)


class TestProjectionFamily:
    def test_coordinate_family(self, path5):
        family = coordinate_family(path5)
        assert len(family) == 5
        assert family.ranks() == [1] * 5
        assert family.is_resolution_of_identity()
        assert np.allclose(family.column_norms(), np.eye(5))
        assert family_tail_bound(family, 0) == 0.0
        assert certified_radius(family, 0.1) == 0.0

    def test_partial_sums(self, path5):
        family = coordinate_family(path5, fiber_dim=2)
        assert family.sum_to([0, 2]).same_as(chi(path5, [0, 2], fiber_dim=2))
        assert family.total().same_as(identity(path5, fiber_dim=2))
        with pytest.raises(DomainError, match="Unknown member 5"):
            family.sum_to([5])

    def test_members_must_be_projections(self, path5):
        with pytest.raises(DomainError, match="not a projection"):
            ProjectionFamily.from_operators([from_dense(path5, 0.5 * np.eye(5))])

    def test_members_must_be_orthogonal(self, path5):
        p = chi(path5, [0, 1])
        with pytest.raises(DomainError, match="not mutually orthogonal"):
            ProjectionFamily.from_operators([p, chi(path5, [1, 2])])

    def test_from_operators_recovers_ranges(self, path5):
        family = ProjectionFamily.from_operators(
            [chi(path5, [0, 1]), chi(path5, [2]), chi(path5, [3, 4])]
        )
        assert family.ranks() == [2, 1, 2]
        assert family.member(0).same_as(chi(path5, [0, 1]), atol=1e-12)

    def test_tail_of_spread_member(self, path5):
        vector = np.zeros(5)
        vector[[0, 4]] = 1 / np.sqrt(2)
        complement = np.linalg.qr(
            np.column_stack([vector, np.eye(5)[:, 1:4]])
        )[0][:, 1:]
        family = ProjectionFamily.from_bases(path5, [vector, complement])
        assert family_tail_bound(family, 3) == pytest.approx(0.5)
        assert family_tail_bound(family, 4) == 0.0
        assert certified_radius(family, 0.1) == 4.0

    def test_document(self, path5):
        family = coordinate_family(path5, fiber_dim=2)
        restored = ProjectionFamily.from_json(family.to_json())
        assert restored.ranks() == family.ranks()
        assert restored.total().same_as(family.total())

    def test_malformed_document(self, path5):
        with pytest.raises(DomainError, match="Malformed family"):
            ProjectionFamily.from_json({"space": path5.to_json()})


def test_operator_document(path5, rng):
    h = random_banded_hermitian(path5, 1, 1.0, rng, fiber_dim=2)
    restored = BandedOperator.from_json(h.to_json(embed_space=True))
    assert restored.same_as(h)
    with pytest.raises(DomainError, match="needs its space"):
        BandedOperator.from_json(h.to_json())


class TestGhostProfiles:
    def test_prefix_profile_of_identity(self, path5):
        profile = ghost_profile(identity(path5), prefix_exhaustion(path5))
        assert profile == [1.0, 1.0, 1.0, 1.0, 0.0]

    def test_ball_exhaustion(self, path5):
        sizes = [len(stage) for stage in ball_exhaustion(path5, center=2)]
        assert sizes == [1, 3, 5, 5, 5]

    def test_local_operator_vanishes(self, path5):
        profile = ghost_profile(matrix_unit(path5, 0, 0), prefix_exhaustion(path5))
        assert profile == [0.0] * 5

    def test_shrinking_chain_is_rejected(self, path5):
        chain = [IndexSet.of([0, 1], 5), IndexSet.of([0], 5)]
        with pytest.raises(DomainError, match="shrinks"):
            ghost_profile(identity(path5), chain)
