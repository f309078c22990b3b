import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefect_roe_lab.exceptions import DomainError
from prefect_roe_lab.instances import path_reflection
from prefect_roe_lab.space import (
    CoarseMap,
    IndexSet,
    MetricSpace,
    ball,
    closeness_defect,
    diameter,
    expansion_modulus,
    generate,
    growth,
    isometry_defect,
    neighborhood,
    radii,
    set_distance,
)


def test_ball_on_path(path5):
    assert ball(path5, 2, 1).members == (1, 2, 3)
    assert ball(path5, 0, 0).members == (0,)
    assert ball(path5, 4, 10).members == (0, 1, 2, 3, 4)


def test_ball_rejects_bad_input(path5):
    with pytest.raises(DomainError, match="Unknown point 5"):
        ball(path5, 5, 1)
    with pytest.raises(DomainError, match="non-negative"):
        ball(path5, 0, -1)
    with pytest.raises(DomainError, match="integer indices"):
        ball(path5, True, 1)


@pytest.mark.parametrize("r, expected", [(0, 1), (1, 3), (2, 5), (4, 5)])
def test_growth_on_path(path5, r, expected):
    assert growth(path5, r) == expected


def test_radii_and_diameter(path5, cycle12):
    assert radii(path5) == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert diameter(path5) == 4.0
    assert diameter(path5, [1, 3]) == 2.0
    assert diameter(path5, []) == 0.0
    assert diameter(cycle12) == 6.0


def test_set_distance_and_neighborhood(path5):
    assert set_distance(path5, [0], [3, 4]) == 3.0
    assert set_distance(path5, [], [1]) == math.inf
    assert neighborhood(path5, [0], 2).members == (0, 1, 2)
    assert len(neighborhood(path5, [], 2)) == 0


def test_cayley_graph_of_z12(z12):
    assert z12.n == 12
    assert diameter(z12) == 3.0
    assert z12.dist[0, 6] == 2.0
    assert z12.dist[0, 5] == 3.0


def test_cayley_graph_of_product_is_a_torus():
    torus = generate("cayley", group="z4xz6", generators=["1:0", "0:1"])
    assert torus.n == 24
    assert diameter(torus) == 5.0


def test_grid_defaults_to_square():
    grid = generate("grid", rows=3)
    assert grid.n == 9
    assert diameter(grid) == 4.0


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"kind": "hyperbolic", "n": 3}, "not supported"),
        ({"kind": "path"}, "needs n >= 1"),
        ({"kind": "cayley", "group": "s3", "generators": [1]}, "Unsupported group"),
        ({"kind": "cayley", "group": "z4xz6", "generators": [1]}, "does not match"),
        ({"kind": "random_graph", "n": 5}, "needs a seed"),
    ],
)
def test_generate_rejects_bad_parameters(kwargs, message):
    with pytest.raises(DomainError, match=message):
        generate(**kwargs)


def test_random_graph_is_reproducible():
    first = generate("random_graph", seed=3, n=10, p=0.5)
    second = generate("random_graph", seed=3, n=10, p=0.5)
    assert np.array_equal(first.dist, second.dist)
    assert first.edges == second.edges


def test_disconnected_random_graph_without_regeneration():
    with pytest.raises(DomainError, match="regeneration is off"):
        generate("random_graph", seed=0, n=3, p=0.0, regenerate=False)


@pytest.mark.parametrize(
    "dist, message",
    [
        ([[0, 1, 5], [1, 0, 1], [5, 1, 0]], "triangle inequality"),
        ([[0, 1], [2, 0]], "symmetric"),
        ([[0, 0], [0, 0]], "positive distance"),
        ([[1, 1], [1, 0]], "zero diagonal"),
        ([[0, math.inf], [math.inf, 0]], "finite"),
    ],
)
def test_metric_space_validation(dist, message):
    with pytest.raises(ValueError, match=message):
        MetricSpace(dist=dist)


def test_space_documents(cycle12):
    from_matrix = MetricSpace.from_json(cycle12.to_json())
    from_edges = MetricSpace.from_json(cycle12.to_json(edge_list=True))
    assert from_matrix.same_as(cycle12)
    assert from_edges.same_as(cycle12)
    assert from_edges.label == "cycle-12"


def test_space_document_without_metric():
    with pytest.raises(DomainError, match="either 'dist' or 'edges'"):
        MetricSpace.from_json({"n": 2})


def test_edge_list_needs_a_graph_metric():
    space = MetricSpace(dist=[[0, 2], [2, 0]])
    with pytest.raises(DomainError, match="not a graph metric"):
        space.to_json(edge_list=True)


class TestIndexSet:
    def test_members_are_sorted(self):
        assert IndexSet.of([3, 0, 2], 5).members == (0, 2, 3)

    def test_duplicates_are_rejected(self):
        with pytest.raises(ValueError, match="duplicates"):
            IndexSet.of([1, 1], 5)

    def test_members_must_fit(self):
        with pytest.raises(ValueError, match="range"):
            IndexSet.of([5], 5)

    def test_complement_and_mask(self):
        subset = IndexSet.of([1, 3], 5)
        assert subset.complement().members == (0, 2, 4)
        assert subset.mask().tolist() == [False, True, False, True, False]
        assert subset.issubset(IndexSet.full(5))
        assert 3 in subset and 2 not in subset


class TestCoarseMap:
    def test_expansion_modulus_of_doubling(self, path5):
        doubling = CoarseMap(
            source=path5, target=path5, assignment=[min(2 * i, 4) for i in range(5)]
        )
        assert expansion_modulus(doubling, 1) == 2.0
        assert expansion_modulus(doubling, 0) == 0.0

    def test_reflection_is_an_isometry(self):
        reflection = path_reflection(6)
        assert isometry_defect(reflection) == 0.0
        assert reflection.is_bijective()
        assert closeness_defect(reflection, reflection.inverse()) == 0.0
        assert reflection.compose(reflection).assignment == tuple(range(6))

    def test_closeness_of_collapse(self, path5):
        collapse = CoarseMap(source=path5, target=path5, assignment=[0] * 5)
        assert closeness_defect(collapse, CoarseMap.identity(path5)) == 4.0
        assert not collapse.is_bijective()
        with pytest.raises(DomainError, match="bijective"):
            collapse.inverse()

    def test_closeness_needs_matching_spaces(self, path5, cycle12):
        f = CoarseMap.identity(path5)
        g = CoarseMap.identity(cycle12)
        with pytest.raises(DomainError, match="Cannot compare"):
            closeness_defect(f, g)

    def test_map_must_be_total(self, path5):
        with pytest.raises(ValueError, match="all 5 source points"):
            CoarseMap(source=path5, target=path5, assignment=[0, 1])


@settings(deadline=None, max_examples=50)
@given(
    n=st.integers(min_value=1, max_value=30),
    data=st.data(),
)
def test_path_balls_are_intervals(n, data):
    path = generate("path", n=n)
    x = data.draw(st.integers(min_value=0, max_value=n - 1))
    r = data.draw(st.integers(min_value=0, max_value=n))
    expected = tuple(y for y in range(n) if abs(x - y) <= r)
    assert ball(path, x, r).members == expected


@settings(deadline=None, max_examples=25)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    n=st.integers(min_value=2, max_value=12),
)
def test_random_graph_metrics_are_connected_graph_metrics(seed, n):
    space = generate("random_graph", seed=seed, n=n, p=0.6)
    assert space.n == n
    assert np.all(space.dist[~np.eye(n, dtype=bool)] >= 1)
    assert float(space.dist.max()) <= n - 1
