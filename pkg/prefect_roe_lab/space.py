"""Finite uniformly locally finite metric spaces and coarse maps between them"""

import itertools
import math
import re
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from prefect.logging import get_logger
from pydantic import VERSION as PYDANTIC_VERSION

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field, validator
else:
    from pydantic import BaseModel, Field, validator

from prefect_roe_lab.exceptions import DomainError

logger = get_logger(__name__)

METRIC_ATOL = 1e-9
MAX_REGENERATION_ATTEMPTS = 100


class SpaceKind(Enum):
    """
    Families of connected graphs the generator knows how to build.

    Attributes:
        PATH (Enum): The path on `n` vertices.
        CYCLE (Enum): The cycle on `n` vertices.
        GRID (Enum): The `rows` by `cols` grid with the l1 (graph) metric.
        CAYLEY (Enum): Cayley graph of a product of cyclic groups.
        RANDOM_GRAPH (Enum): Erdos-Renyi graph, regenerated until connected.
    """

    PATH = "path"
    CYCLE = "cycle"
    GRID = "grid"
    CAYLEY = "cayley"
    RANDOM_GRAPH = "random_graph"


class MetricSpace(BaseModel):
    """
    A finite metric space on the points `0, ..., n - 1`.

    Attributes:
        label: A human readable name.
        dist: The symmetric distance matrix with zero diagonal.
        edges: The generating graph's edges, when the metric is a graph metric.
    """

    label: str = Field(default="space", description="A human readable name.")
    dist: np.ndarray = Field(default=..., description="The distance matrix.")
    edges: Optional[Tuple[Tuple[int, int], ...]] = Field(
        default=None, description="Edges of the generating graph, if any."
    )

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("dist", pre=True)
    def _check_metric(cls, value):
        dist = np.array(value, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1] or dist.shape[0] == 0:
            raise ValueError(
                f"The distance matrix must be square and non-empty, got {dist.shape}"
            )
        if not np.all(np.isfinite(dist)):
            raise ValueError("Distances must be finite; spaces are connected.")
        if np.any(np.diag(dist) != 0):
            raise ValueError("The distance matrix must have a zero diagonal.")
        if not np.array_equal(dist, dist.T):
            raise ValueError("The distance matrix must be symmetric.")
        off_diagonal = ~np.eye(dist.shape[0], dtype=bool)
        if np.any(dist[off_diagonal] <= 0):
            raise ValueError("Distinct points must be at positive distance.")
        for k in range(dist.shape[0]):
            through_k = dist[:, k, None] + dist[None, k, :]
            if np.any(dist > through_k + METRIC_ATOL):
                raise ValueError(
                    f"The triangle inequality fails through point {k}."
                )
        dist.setflags(write=False)
        return dist

    @property
    def n(self) -> int:
        """
        The number of points.
        """
        return self.dist.shape[0]

    @property
    def points(self) -> range:
        """
        The ordered index set of the space.
        """
        return range(self.n)

    def same_as(self, other: "MetricSpace") -> bool:
        """
        Whether both spaces have the same points and distances.
        """
        return self is other or (
            self.n == other.n and np.array_equal(self.dist, other.dist)
        )

    def check_point(self, x: int) -> int:
        """
        Returns `x` if it is a point of the space.

        Raises:
            DomainError: If `x` is not a point.
        """
        if isinstance(x, bool) or not isinstance(x, (int, np.integer)):
            raise DomainError(f"Points are integer indices, got {x!r}")
        if not 0 <= x < self.n:
            raise DomainError(f"Unknown point {x} in {self.label!r} of size {self.n}")
        return int(x)

    def to_json(self, edge_list: bool = False) -> Dict[str, Any]:
        """
        Serializes the space, either with its full distance matrix or, for graph
        metrics, as an edge list.
        """
        if edge_list:
            if self.edges is None:
                raise DomainError(
                    f"{self.label!r} is not a graph metric; no edge list to write."
                )
            return {
                "label": self.label,
                "n": self.n,
                "edges": [list(edge) for edge in self.edges],
            }
        return {
            "label": self.label,
            "n": self.n,
            "dist": self.dist.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "MetricSpace":
        """
        Reads either serialization variant written by `to_json`.
        """
        try:
            n = int(data["n"])
            label = str(data.get("label", "space"))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"Malformed space document: {exc}") from exc
        if "edges" in data:
            graph = nx.Graph()
            graph.add_nodes_from(range(n))
            graph.add_edges_from(tuple(edge) for edge in data["edges"])
            return from_graph(graph, label)
        if "dist" not in data:
            raise DomainError("A space document needs either 'dist' or 'edges'.")
        dist = np.asarray(data["dist"], dtype=float)
        if dist.size != n * n:
            raise DomainError(f"Expected {n * n} distances, got {dist.size}")
        return cls(label=label, dist=dist.reshape(n, n))


class IndexSet(BaseModel):
    """
    A subset of `{0, ..., size - 1}`, stored sorted.

    Attributes:
        members: The sorted members.
        size: The size of the ambient index set.
    """

    members: Tuple[int, ...] = Field(default=(), description="The sorted members.")
    size: int = Field(default=..., description="The size of the ambient index set.")

    class Config:
        """Configuration of pydantic."""

        allow_mutation = False

    @validator("members", pre=True)
    def _sorted_unique(cls, value):
        members = [int(member) for member in value]
        if len(set(members)) != len(members):
            raise ValueError("Index sets cannot contain duplicates.")
        return tuple(sorted(members))

    @validator("size")
    def _in_range(cls, value, values):
        if value < 0:
            raise ValueError(f"The ambient size must be non-negative, got {value}")
        members = values.get("members", ())
        if members and (members[0] < 0 or members[-1] >= value):
            raise ValueError(f"Members must lie in range({value}), got {members}")
        return value

    @classmethod
    def of(cls, members: Iterable[int], size: int) -> "IndexSet":
        """
        Builds an index set from any iterable of indices.
        """
        return cls(members=tuple(int(member) for member in members), size=size)

    @classmethod
    def full(cls, size: int) -> "IndexSet":
        return cls(members=tuple(range(size)), size=size)

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, item) -> bool:
        return item in set(self.members)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.members, dtype=int)

    def mask(self) -> np.ndarray:
        """
        Boolean indicator of the set over the ambient index set.
        """
        mask = np.zeros(self.size, dtype=bool)
        mask[list(self.members)] = True
        return mask

    def complement(self) -> "IndexSet":
        return IndexSet.of(np.flatnonzero(~self.mask()), self.size)

    def issubset(self, other: "IndexSet") -> bool:
        return set(self.members) <= set(other.members)


class CoarseMap(BaseModel):
    """
    A map between finite metric spaces.

    Attributes:
        source: The domain.
        target: The codomain.
        assignment: The image of every source point, in order.
    """

    source: MetricSpace = Field(default=..., description="The domain.")
    target: MetricSpace = Field(default=..., description="The codomain.")
    assignment: Tuple[int, ...] = Field(
        default=..., description="The image of every source point, in order."
    )

    class Config:
        """Configuration of pydantic."""

        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("assignment", pre=True)
    def _total(cls, value, values):
        assignment = tuple(int(y) for y in value)
        source, target = values.get("source"), values.get("target")
        if source is not None and len(assignment) != source.n:
            raise ValueError(
                f"The map must be defined on all {source.n} source points, "
                f"got {len(assignment)} images"
            )
        if target is not None and any(not 0 <= y < target.n for y in assignment):
            raise ValueError("Every image must be a point of the target.")
        return assignment

    def __call__(self, x: int) -> int:
        return self.assignment[self.source.check_point(x)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.assignment, dtype=int)

    @classmethod
    def identity(cls, space: MetricSpace) -> "CoarseMap":
        return cls(source=space, target=space, assignment=tuple(space.points))

    def compose(self, other: "CoarseMap") -> "CoarseMap":
        """
        Returns `other` followed by `self`.
        """
        if not other.target.same_as(self.source):
            raise DomainError("Cannot compose: the target of the inner map differs.")
        return CoarseMap(
            source=other.source,
            target=self.target,
            assignment=tuple(self.as_array()[other.as_array()]),
        )

    def is_bijective(self) -> bool:
        return self.source.n == self.target.n and len(set(self.assignment)) == len(
            self.assignment
        )

    def inverse(self) -> "CoarseMap":
        if not self.is_bijective():
            raise DomainError("Only bijective maps have an inverse.")
        inverse = np.empty(self.target.n, dtype=int)
        inverse[self.as_array()] = np.arange(self.source.n)
        return CoarseMap(
            source=self.target, target=self.source, assignment=tuple(inverse)
        )


def ball(space: MetricSpace, x: int, r: float) -> IndexSet:
    """
    The closed ball of radius `r` around `x`.

    Args:
        space: The metric space.
        x: The center.
        r: The radius.

    Returns:
        The points at distance at most `r` from `x`.

    Raises:
        DomainError: If `x` is not a point or `r` is negative.

    Examples:
        ```python
        from prefect_roe_lab.space import ball, generate

        path = generate("path", n=5)
        ball(path, 2, 1).members  # (1, 2, 3)
        ```
    """
    x = space.check_point(x)
    _check_radius(r)
    return IndexSet.of(np.flatnonzero(space.dist[x] <= r), space.n)


def growth(space: MetricSpace, r: float) -> int:
    """
    The largest cardinality of an `r`-ball, the growth function `N_r`.
    """
    _check_radius(r)
    return int((space.dist <= r).sum(axis=1).max())


def radii(space: MetricSpace) -> List[float]:
    """
    The distances realized in the space, sorted, starting with 0.
    """
    return [float(value) for value in np.unique(space.dist)]


def diameter(space: MetricSpace, subset: Optional[Iterable[int]] = None) -> float:
    """
    The largest distance within `subset`, or within the whole space.
    """
    if subset is None:
        return float(space.dist.max())
    indices = np.asarray(list(subset), dtype=int)
    if indices.size == 0:
        return 0.0
    return float(space.dist[np.ix_(indices, indices)].max())


def set_distance(
    space: MetricSpace, first: Iterable[int], second: Iterable[int]
) -> float:
    """
    The smallest distance between a point of `first` and a point of `second`.
    """
    first, second = list(first), list(second)
    if not first or not second:
        return math.inf
    return float(space.dist[np.ix_(first, second)].min())


def neighborhood(space: MetricSpace, subset: Iterable[int], r: float) -> IndexSet:
    """
    The points within distance `r` of `subset`.
    """
    _check_radius(r)
    subset = list(subset)
    if not subset:
        return IndexSet(size=space.n)
    return IndexSet.of(
        np.flatnonzero(space.dist[subset].min(axis=0) <= r), space.n
    )


def expansion_modulus(f: CoarseMap, r: float) -> float:
    """
    The largest image distance over pairs at distance at most `r`.

    Examples:
        ```python
        from prefect_roe_lab.space import CoarseMap, expansion_modulus, generate

        path = generate("path", n=5)
        doubling = CoarseMap(
            source=path, target=path, assignment=[min(2 * i, 4) for i in range(5)]
        )
        expansion_modulus(doubling, 1)  # 2.0
        ```
    """
    _check_radius(r)
    images = f.as_array()
    close = f.source.dist <= r
    return float(f.target.dist[np.ix_(images, images)][close].max())


def closeness_defect(f: CoarseMap, g: CoarseMap) -> float:
    """
    How far `g` after `f` moves points of the source of `f`.

    Raises:
        DomainError: If `g` does not map the target of `f` back to its source.
    """
    if not (g.source.same_as(f.target) and g.target.same_as(f.source)):
        raise DomainError(
            f"Cannot compare maps: {g.source.label!r} -> {g.target.label!r} does not "
            f"invert {f.source.label!r} -> {f.target.label!r}"
        )
    round_trip = g.as_array()[f.as_array()]
    points = np.arange(f.source.n)
    return float(f.source.dist[points, round_trip].max())


def isometry_defect(f: CoarseMap) -> float:
    """
    The largest distortion `|d(f x, f x') - d(x, x')|` over all pairs.
    """
    images = f.as_array()
    return float(
        np.abs(f.target.dist[np.ix_(images, images)] - f.source.dist).max()
    )


def from_graph(graph: nx.Graph, label: str) -> MetricSpace:
    """
    The shortest-path metric of a connected graph with unit edge lengths,
    computed by breadth-first search.

    Raises:
        DomainError: If the graph is empty or disconnected.
    """
    if graph.number_of_nodes() == 0:
        raise DomainError("Cannot build a metric on an empty graph.")
    if not nx.is_connected(graph):
        raise DomainError(f"The graph behind {label!r} is disconnected.")
    graph = nx.convert_node_labels_to_integers(graph, ordering="sorted")
    n = graph.number_of_nodes()
    dist = np.zeros((n, n))
    for source, lengths in nx.all_pairs_shortest_path_length(graph):
        for target, length in lengths.items():
            dist[source, target] = length
    edges = tuple(sorted(tuple(sorted(edge)) for edge in graph.edges()))
    return MetricSpace(label=label, dist=dist, edges=edges)


def _parse_group(group: str) -> Tuple[int, ...]:
    """
    Reads `z12` or `z4xz6` into the orders of the cyclic factors.
    """
    factors = group.lower().split("x")
    orders = []
    for factor in factors:
        match = re.fullmatch(r"z(\d+)", factor.strip())
        if match is None or int(match.group(1)) < 1:
            raise DomainError(
                f"Unsupported group {group!r}; use products of cyclic groups like "
                f"'z12' or 'z4xz6'."
            )
        orders.append(int(match.group(1)))
    return tuple(orders)


def _parse_generators(
    generators: Sequence[Any], orders: Tuple[int, ...]
) -> List[Tuple[int, ...]]:
    parsed = []
    for generator in generators:
        if isinstance(generator, str):
            generator = [int(part) for part in generator.split(":")]
        elif isinstance(generator, (int, np.integer)):
            generator = [int(generator)]
        generator = tuple(int(g) for g in generator)
        if len(generator) != len(orders):
            raise DomainError(
                f"Generator {generator} does not match the group with "
                f"{len(orders)} cyclic factors."
            )
        parsed.append(tuple(g % order for g, order in zip(generator, orders)))
    return parsed


def cayley_graph(group: str, generators: Sequence[Any]) -> nx.Graph:
    """
    The Cayley graph of a product of cyclic groups for a generating set closed
    under inverses; elements are ordered lexicographically.
    """
    orders = _parse_group(group)
    gens = _parse_generators(generators, orders)
    if not gens:
        raise DomainError("A Cayley graph needs at least one generator.")
    symmetric = set(gens) | {
        tuple(-g % order for g, order in zip(gen, orders)) for gen in gens
    }
    graph = nx.Graph()
    elements = list(itertools.product(*(range(order) for order in orders)))
    graph.add_nodes_from(elements)
    for element in elements:
        for gen in symmetric:
            neighbor = tuple(
                (e + g) % order for e, g, order in zip(element, gen, orders)
            )
            if neighbor != element:
                graph.add_edge(element, neighbor)
    return graph


def generate(
    kind: "SpaceKind | str",
    seed: Optional[int] = None,
    n: Optional[int] = None,
    rows: Optional[int] = None,
    cols: Optional[int] = None,
    group: Optional[str] = None,
    generators: Optional[Sequence[Any]] = None,
    p: float = 0.3,
    regenerate: bool = True,
    label: Optional[str] = None,
) -> MetricSpace:
    """
    Builds the shortest-path metric of a connected graph.

    Args:
        kind: Which family to build.
        seed: Seed of the random graph; required for `random_graph`.
        n: Number of vertices for paths, cycles and random graphs.
        rows: Grid rows.
        cols: Grid columns; defaults to `rows`.
        group: Cyclic group product for Cayley graphs, e.g. `"z12"`.
        generators: Cayley generators, e.g. `[1, 3]` or `["1:0", "0:1"]`;
            inverses are added automatically.
        p: Edge probability of random graphs.
        regenerate: Whether disconnected random graphs are redrawn.
        label: Label of the space; defaults to a description of the family.

    Returns:
        The generated metric space.

    Raises:
        DomainError: If the parameters are invalid for the family, or a random
            graph is disconnected and regeneration is off or exhausted.

    Examples:
        ```python
        from prefect_roe_lab.space import diameter, generate

        z12 = generate("cayley", group="z12", generators=[1, 3])
        diameter(z12)  # 3.0
        ```
    """
    try:
        kind = SpaceKind(kind)
    except ValueError:
        raise DomainError(
            f"{kind!r} is not supported; choose from "
            f"{', '.join(member.value for member in SpaceKind)}."
        ) from None

    if kind in (SpaceKind.PATH, SpaceKind.CYCLE, SpaceKind.RANDOM_GRAPH):
        if n is None or n < 1:
            raise DomainError(f"{kind.value} needs n >= 1, got {n}")

    if kind == SpaceKind.PATH:
        return from_graph(nx.path_graph(n), label or f"path-{n}")
    if kind == SpaceKind.CYCLE:
        return from_graph(nx.cycle_graph(n), label or f"cycle-{n}")
    if kind == SpaceKind.GRID:
        cols = cols if cols is not None else rows
        if rows is None or rows < 1 or cols < 1:
            raise DomainError(f"grid needs rows, cols >= 1, got {rows}, {cols}")
        return from_graph(nx.grid_2d_graph(rows, cols), label or f"grid-{rows}x{cols}")
    if kind == SpaceKind.CAYLEY:
        if group is None or generators is None:
            raise DomainError("cayley needs a group and generators.")
        return from_graph(
            cayley_graph(group, generators), label or f"cayley-{group.lower()}"
        )

    if seed is None:
        raise DomainError("random_graph needs a seed.")
    if not 0 <= p <= 1:
        raise DomainError(f"The edge probability must lie in [0, 1], got {p}")
    seeds = np.random.SeedSequence(seed).generate_state(MAX_REGENERATION_ATTEMPTS)
    for attempt, attempt_seed in enumerate(seeds):
        graph = nx.gnp_random_graph(n, p, seed=int(attempt_seed))
        if nx.is_connected(graph):
            return from_graph(graph, label or f"random-{n}-{seed}")
        if not regenerate:
            raise DomainError(
                f"The random graph with seed {seed} is disconnected and "
                f"regeneration is off."
            )
        logger.warning(
            f"Random graph attempt {attempt} is disconnected; regenerating."
        )
    raise DomainError(
        f"No connected random graph after {MAX_REGENERATION_ATTEMPTS} attempts "
        f"(n={n}, p={p})."
    )


def _check_radius(r: float) -> None:
    if r < 0 or math.isnan(r):
        raise DomainError(f"Radii must be non-negative, got {r}")
