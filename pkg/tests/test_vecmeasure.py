import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefect_roe_lab.exceptions import DomainError, NotInHullError
from prefect_roe_lab.instances import random_measure
from prefect_roe_lab.vecmeasure import (
    AtomicVectorMeasure,
    NormKind,
    NotInHull,
    approximate_halving,
    brute_force_oracle,
    hull_membership,
    pivot_to_sparse,
    round_to_subset,
    small_subset_bound,
    support_function,
)


@pytest.fixture
def unit_atoms():
    return AtomicVectorMeasure(atoms=[[1], [1], [1], [1], [1]])


@pytest.mark.parametrize(
    "norm, expected", [("l1", 7.0), ("l2", 5.0), ("linf", 4.0)]
)
def test_norm_kinds(norm, expected):
    assert NormKind(norm).of([3.0, -4.0]) == pytest.approx(expected)
    assert NormKind(norm).of([[3.0, -4.0], [0.0, 0.0]]).tolist() == [expected, 0.0]


def test_measure_validation():
    with pytest.raises(ValueError, match="finite"):
        AtomicVectorMeasure(atoms=[[np.nan]])
    with pytest.raises(ValueError, match="n x m matrix"):
        AtomicVectorMeasure(atoms=[1.0, 2.0])


def test_measure_of_subsets(unit_atoms):
    assert unit_atoms.measure([0, 3]).tolist() == [2.0]
    assert unit_atoms.measure([]).tolist() == [0.0]
    assert unit_atoms.total().tolist() == [5.0]
    with pytest.raises(DomainError, match="leaves range"):
        unit_atoms.measure([5])


def test_measure_document():
    mu = AtomicVectorMeasure(atoms=[[1.0, -2.0], [0.5, 3.0]], norm="linf")
    restored = AtomicVectorMeasure.from_json(mu.to_json())
    assert np.array_equal(restored.atoms, mu.atoms)
    assert restored.norm == NormKind.LINF
    with pytest.raises(DomainError, match="Malformed measure"):
        AtomicVectorMeasure.from_json({"atoms": [[1.0]]})


def test_support_function():
    mu = AtomicVectorMeasure(atoms=[[1, 0], [0, 1], [-1, -1]])
    assert support_function(mu, [1, 1]) == pytest.approx(2.0)
    assert support_function(mu, [-1, 0]) == pytest.approx(1.0)


class TestHullMembership:
    def test_point_inside(self):
        mu = AtomicVectorMeasure(atoms=[[1, 0], [0, 1]])
        weights = hull_membership(mu, [0.5, 0.25])
        assert np.allclose(weights, [0.5, 0.25])

    def test_point_outside_has_a_separating_functional(self):
        mu = AtomicVectorMeasure(atoms=[[1, 0], [0, 1]])
        result = hull_membership(mu, [2, 0])
        assert isinstance(result, NotInHull)
        assert result.gap > 0
        assert result.witness @ result.target > support_function(mu, result.witness)

    def test_wrong_dimension(self):
        mu = AtomicVectorMeasure(atoms=[[1, 0], [0, 1]])
        with pytest.raises(DomainError, match="dimension 2"):
            hull_membership(mu, [1.0])


class TestRoundToSubset:
    def test_five_unit_atoms(self, unit_atoms):
        result = round_to_subset(unit_atoms, [2.5])
        assert result.error == pytest.approx(0.5)
        assert result.bound == 1.0
        assert result.bound_exact
        assert result.weak_bound == 1.0
        assert len(result.subset) in (2, 3)

    def test_exact_vertex(self, unit_atoms):
        result = round_to_subset(unit_atoms, [3.0])
        assert result.error == pytest.approx(0.0, abs=1e-9)
        assert len(result.subset) == 3

    def test_target_outside_the_hull(self, unit_atoms):
        with pytest.raises(NotInHullError) as exc_info:
            round_to_subset(unit_atoms, [6.0])
        assert exc_info.value.result.gap > 0
        assert exc_info.value.result.to_json()["status"] == "not_in_hull"

    def test_report(self, unit_atoms):
        report = round_to_subset(unit_atoms, [2.5]).to_json()
        assert report["status"] == "rounded"
        assert report["error"] == pytest.approx(0.5)
        assert len(report["weights"]) == 5

    @settings(deadline=None, max_examples=40)
    @given(
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        n=st.integers(min_value=1, max_value=10),
        m=st.integers(min_value=1, max_value=3),
        norm=st.sampled_from(list(NormKind)),
    )
    def test_error_within_bounds_and_above_oracle(self, seed, n, m, norm):
        rng = np.random.default_rng(seed)
        mu = random_measure(n, m, rng, norm=norm)
        target = mu.atoms.T @ rng.uniform(0, 1, n)
        result = round_to_subset(mu, target)
        _, oracle_error = brute_force_oracle(mu, target)
        assert result.error <= result.bound + 1e-9
        assert result.error <= result.weak_bound + 1e-9
        assert oracle_error <= result.error + 1e-9
        assert np.allclose(result.achieved, mu.measure(result.subset))


class TestPivot:
    @settings(deadline=None, max_examples=40)
    @given(
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        n=st.integers(min_value=1, max_value=15),
        m=st.integers(min_value=1, max_value=4),
    )
    def test_at_most_m_fractional_weights(self, seed, n, m):
        rng = np.random.default_rng(seed)
        mu = random_measure(n, m, rng)
        weights = rng.uniform(0, 1, n)
        sparse = pivot_to_sparse(mu, weights)
        fractional = np.sum((sparse > 1e-9) & (sparse < 1 - 1e-9))
        assert fractional <= m
        assert np.all((sparse >= 0) & (sparse <= 1))
        assert np.allclose(mu.atoms.T @ sparse, mu.atoms.T @ weights, atol=1e-8)

    def test_weights_must_lie_in_the_cube(self, unit_atoms):
        with pytest.raises(DomainError, match=r"\[0, 1\]"):
            pivot_to_sparse(unit_atoms, [0.5, 0.5, 0.5, 0.5, 1.5])

    def test_weights_must_match_the_atoms(self, unit_atoms):
        with pytest.raises(DomainError, match="Expected 5 weights"):
            pivot_to_sparse(unit_atoms, [0.5])

    def test_trace(self, unit_atoms):
        result = round_to_subset(unit_atoms, [2.5])
        for step in result.fractional_trace:
            assert step.fractional_after < step.fractional_before


class TestSmallSubsetBound:
    def test_enumerated(self):
        mu = AtomicVectorMeasure(atoms=[[1, 0], [0, 1], [-1, 0]])
        bound, exact = small_subset_bound(mu)
        assert exact
        assert bound == pytest.approx(np.sqrt(2))

    def test_capped_bound_dominates(self, rng):
        mu = random_measure(12, 3, rng)
        exact_bound, exact = small_subset_bound(mu)
        capped_bound, capped = small_subset_bound(mu, enumeration_cap=1)
        assert exact and not capped
        assert capped_bound >= exact_bound - 1e-12

    def test_empty_measure(self):
        mu = AtomicVectorMeasure(atoms=np.zeros((0, 2)))
        assert small_subset_bound(mu) == (0.0, True)


class TestOracle:
    def test_unit_atoms(self, unit_atoms):
        subset, error = brute_force_oracle(unit_atoms, [2.5])
        assert error == pytest.approx(0.5)
        assert subset.members == (0, 1)

    def test_refuses_large_instances(self, rng):
        with pytest.raises(DomainError, match="refuses n = 23"):
            brute_force_oracle(random_measure(23, 1, rng), [0.0])


def test_approximate_halving_stays_inside_the_subset(rng):
    mu = random_measure(10, 2, rng)
    members = [1, 2, 4, 7, 9]
    result = approximate_halving(mu, members)
    assert set(result.subset.members) <= set(members)
    assert result.subset.size == 10
    target = mu.measure(members) / 2
    assert np.allclose(result.target, target)
    assert result.error <= result.bound + 1e-9
