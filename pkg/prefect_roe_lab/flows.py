"""Batch acceptance suites run as Prefect flows over seeded instance batches"""

from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from prefect import flow, get_run_logger, task
from pydantic import VERSION as PYDANTIC_VERSION

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field
else:
    from pydantic import BaseModel, Field

from prefect_roe_lab.exceptions import (
    ConclusionViolation,
    ConvergenceError,
    DomainError,
    InvariantViolation,
    UncertifiedHypothesis,
)
from prefect_roe_lab.instances import (
    banded_unitary,
    conjugated_family,
    coordinate_family,
    localization_instance,
    perturbed_permutation_unitary,
    random_banded_hermitian,
    random_idempotent,
    random_measure,
    random_projection,
)
from prefect_roe_lab.localization import derive_params, localize_at_point
from prefect_roe_lab.operators import op_norm, spectral_norm
from prefect_roe_lab.rigidity import (
    SpatialUnitary,
    Verdict,
    check_halving_lemma,
    coefficient_floor_bound,
    dominant_fiber_projection,
    extract_map,
    midpoint_counterexample_search,
)
from prefect_roe_lab.settings import CONCLUSION_SLACK
from prefect_roe_lab.space import CoarseMap, generate
from prefect_roe_lab.vecmeasure import (
    NormKind,
    brute_force_oracle,
    pivot_to_sparse,
    round_to_subset,
)

DEFAULT_BATCH_SIZE = 25


class SuiteReport(BaseModel):
    """
    Outcome of an acceptance suite.

    Attributes:
        suite: The suite name.
        seed: The root seed.
        instances: Number of instances checked.
        violations: Number of instances breaking a guarantee.
        unverified: Number of instances whose hypotheses could not be certified.
        worst_slack: The smallest margin by which a guarantee held.
        require_verified: Whether an unverified instance fails the suite.
        details: Per-instance measurements, in seed order.
    """

    suite: str
    seed: int
    instances: int
    violations: int
    unverified: int = 0
    worst_slack: Optional[float] = None
    require_verified: bool = True
    details: List[Dict[str, Any]] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.require_verified and self.unverified:
            return False
        return self.violations == 0

    def to_json(self) -> Dict[str, Any]:
        data = self.dict()
        data["passed"] = self.passed
        return data


def spawn_seeds(seed: int, count: int) -> List[int]:
    """
    Independent child seeds of `seed`; the same root always yields the same list.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def _batches(seeds: Sequence[int], batch_size: int) -> List[List[int]]:
    return [list(seeds[i : i + batch_size]) for i in range(0, len(seeds), batch_size)]


def _run_batches(
    suite: str,
    seed: int,
    instances: int,
    batch_task,
    batch_size: int,
    **parameters: Any,
) -> SuiteReport:
    logger = get_run_logger()
    futures = [
        batch_task.submit(batch, **parameters)
        for batch in _batches(spawn_seeds(seed, instances), batch_size)
    ]
    details = [record for future in futures for record in future.result()]
    slacks = [record["slack"] for record in details if record.get("slack") is not None]
    report = SuiteReport(
        suite=suite,
        seed=seed,
        instances=len(details),
        violations=sum(bool(record.get("violation")) for record in details),
        unverified=sum(bool(record.get("unverified")) for record in details),
        worst_slack=min(slacks) if slacks else None,
        details=details,
    )
    logger.info(
        f"{suite}: {report.instances} instances, {report.violations} violations, "
        f"{report.unverified} unverified, worst slack {report.worst_slack!r}."
    )
    return report


def _guarded(check: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
    try:
        return check()
    except (ConclusionViolation, InvariantViolation, ConvergenceError) as exc:
        return {"violation": True, "slack": None, "error": str(exc)}
    except (UncertifiedHypothesis, DomainError) as exc:
        return {"unverified": True, "slack": None, "error": str(exc)}


@task
def rounding_batch(
    seeds: List[int], max_n: int, dims: List[int], norms: List[str]
) -> List[Dict[str, Any]]:
    """
    Rounds random hull points and compares against the small subset bound,
    the weak bound and the exhaustive oracle.
    """
    records = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, max_n + 1))
        m = int(rng.choice(dims))
        norm = NormKind(rng.choice(norms))
        mu = random_measure(n, m, rng, norm=norm)
        target = mu.atoms.T @ rng.uniform(0, 1, n)

        def check():
            result = round_to_subset(mu, target)
            oracle_error = brute_force_oracle(mu, target)[1]
            violation = (
                result.error > result.bound + CONCLUSION_SLACK
                or result.error > result.weak_bound + CONCLUSION_SLACK
                or oracle_error > result.error + CONCLUSION_SLACK
                or not result.bound_exact
            )
            return {
                "seed": seed,
                "n": n,
                "m": m,
                "norm": norm.value,
                "error": result.error,
                "bound": result.bound,
                "oracle_error": oracle_error,
                "slack": result.bound - result.error,
                "violation": violation,
            }

        records.append(_guarded(check))
    return records


@flow(name="rounding-suite")
def rounding_suite(
    seed: int,
    instances: int = 200,
    max_n: int = 20,
    dims: Sequence[int] = (1, 2, 3, 4),
    norms: Sequence[str] = (NormKind.L2.value,),
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> SuiteReport:
    """
    Random measures with `n <= max_n` and `m` in `dims`: the rounding error
    stays within the enumerated small subset bound and the weak bound, and
    never beats the exhaustive oracle.
    """
    return _run_batches(
        "rounding",
        seed,
        instances,
        rounding_batch,
        batch_size,
        max_n=max_n,
        dims=list(dims),
        norms=list(norms),
    )


@task
def pivot_batch(seeds: List[int], n: int, max_m: int) -> List[Dict[str, Any]]:
    records = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, max_m + 1))
        mu = random_measure(n, m, rng)
        weights = rng.uniform(0, 1, n)
        target = mu.atoms.T @ weights
        sparse = pivot_to_sparse(mu, weights)
        fractional = int(np.sum((sparse > 1e-9) & (sparse < 1 - 1e-9)))
        drift = float(np.abs(mu.atoms.T @ sparse - target).max())
        inside = bool(np.all((sparse >= 0) & (sparse <= 1)))
        records.append(
            {
                "seed": seed,
                "m": m,
                "fractional": fractional,
                "drift": drift,
                "slack": 1e-9 - drift,
                "violation": fractional > m or drift > 1e-9 or not inside,
            }
        )
    return records


@flow(name="pivot-sparsity-suite")
def pivot_sparsity_suite(
    seed: int,
    instances: int = 1000,
    n: int = 15,
    max_m: int = 3,
    batch_size: int = 250,
) -> SuiteReport:
    """
    Pivoting leaves at most `m` fractional weights, keeps the weighted sum
    and stays inside the unit cube.
    """
    return _run_batches(
        "pivot-sparsity", seed, instances, pivot_batch, batch_size, n=n, max_m=max_m
    )


@task
def halving_lemma_batch(
    seeds: List[int],
    sizes: List[int],
    epsilons: List[float],
    h_norm: float,
    halving_points: int,
) -> List[Dict[str, Any]]:
    """
    Conjugates coordinate projections by `exp(i H)` and checks both the
    halving lemma and the coefficient floor at the certified radius.
    """
    records = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.choice(sizes))
        epsilon = float(rng.choice(epsilons))
        space = generate("cycle", n=n)
        h = random_banded_hermitian(space, 1, h_norm, rng)
        family = conjugated_family(coordinate_family(space), banded_unitary(h))
        points = rng.choice(n, size=min(halving_points, n), replace=False).tolist()

        def check():
            lemma = check_halving_lemma(family, epsilon, halving_points=points)
            floor = coefficient_floor_bound(family)
            return {
                "seed": seed,
                "n": n,
                "epsilon": epsilon,
                "r": lemma.r,
                "minimum": lemma.minimum,
                "bound": lemma.bound,
                "floor_measured": floor.measured,
                "floor_certified": floor.certified,
                "slack": min(
                    lemma.minimum - lemma.bound, floor.measured - floor.certified
                ),
                "violation": Verdict.FAIL in (lemma.verdict, floor.verdict),
            }

        records.append(_guarded(check))
    return records


@flow(name="halving-lemma-suite")
def halving_lemma_suite(
    seed: int,
    runs: int = 50,
    sizes: Sequence[int] = (64, 128, 256, 512),
    epsilons: Sequence[float] = (1 / 5, 1 / 10),
    h_norm: float = 0.1,
    halving_points: int = 8,
    batch_size: int = 5,
) -> SuiteReport:
    """
    The halving lemma bound `1 - 4 epsilon` and the coefficient floor
    `1 / (10 N_r)` on certified `exp(i H)`-conjugated coordinate families.
    """
    return _run_batches(
        "halving-lemma",
        seed,
        runs,
        halving_lemma_batch,
        batch_size,
        sizes=list(sizes),
        epsilons=list(epsilons),
        h_norm=h_norm,
        halving_points=halving_points,
    )


@task
def midpoint_batch(
    seeds: List[int], trials_per_seed: int, max_n: int, idempotents: bool
) -> List[Dict[str, Any]]:
    records = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, max_n + 1))
        rank = int(rng.integers(0, n + 1))
        space = generate("path", n=n)
        if idempotents and rng.uniform() < 0.5:
            p = random_idempotent(space, rank, rng)
        else:
            p = random_projection(space, rank, rng)
        delta = float(rng.uniform(0.01, 1.0))
        shape = (trials_per_seed, n)
        directions = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        vectors = directions * rng.uniform(0, 4 * delta, (trials_per_seed, 1))

        def check():
            search = midpoint_counterexample_search(p, vectors, delta, tol=1e-8)
            return {
                "seed": seed,
                "n": n,
                "rank": rank,
                "trials": search.trials,
                "hits": search.hypothesis_hits,
                "slack": 1 - search.worst_ratio,
                "violation": search.violations > 0,
            }

        records.append(_guarded(check))
    return records


@flow(name="midpoint-search-suite")
def midpoint_search_suite(
    seed: int,
    trials: int = 100_000,
    max_n: int = 64,
    trials_per_seed: int = 1000,
    idempotents: bool = True,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> SuiteReport:
    """
    Randomized search for vectors with `||p v - v/2|| < delta` but `||v||`
    beyond the midpoint bound.
    """
    return _run_batches(
        "midpoint-search",
        seed,
        max(1, trials // trials_per_seed),
        midpoint_batch,
        batch_size,
        trials_per_seed=trials_per_seed,
        max_n=max_n,
        idempotents=idempotents,
    )


@task
def localization_batch(
    seeds: List[int], epsilon: float, delta: float, s: float, h_norm: float
) -> List[Dict[str, Any]]:
    records = []
    params = derive_params(epsilon, delta, s, 0)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(12, 41))
        center = int(rng.integers(0, n))
        radius = int(rng.integers(1, 4))
        space = generate("path", n=n)
        p, a = localization_instance(space, center, radius, h_norm, s, rng)

        def check():
            result = localize_at_point(p, a, center, params)
            return {
                "seed": seed,
                "n": n,
                "power_index": result.power_index,
                "diameter": result.diameter,
                "bound": result.bound,
                "defect": result.defect,
                "slack": min(epsilon - result.defect, result.bound - result.diameter),
                "violation": False,
            }

        records.append(_guarded(check))
    return records


@flow(name="localization-suite")
def localization_suite(
    seed: int,
    instances: int = 100,
    epsilon: float = 0.5,
    delta: float = 0.8,
    s: float = 2,
    h_norm: float = 0.05,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> SuiteReport:
    """
    Localization from `delta_x` reaches `||p xi|| >= 1 - epsilon` within the
    diameter bound `4 k s`.
    """
    return _run_batches(
        "localization",
        seed,
        instances,
        localization_batch,
        batch_size,
        epsilon=epsilon,
        delta=delta,
        s=s,
        h_norm=h_norm,
    )


@task
def rigidity_batch(seeds: List[int], n: int, h_norm: float) -> List[Dict[str, Any]]:
    """
    Random isometries of a cycle composed with `exp(i H)`: extraction must
    return the isometry with floor at least `1 - h_norm` and zero closeness
    defects; without the perturbation the floor is exactly 1.
    """
    records = []
    space = generate("cycle", n=n)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        shift = int(rng.integers(0, n))
        sign = 1 if rng.uniform() < 0.5 else -1
        f = CoarseMap(
            source=space,
            target=space,
            assignment=tuple((sign * x + shift) % n for x in range(n)),
        )
        h = random_banded_hermitian(space, 1, h_norm, rng)
        perturbed = extract_map(perturbed_permutation_unitary(f, h))
        exact = extract_map(SpatialUnitary.from_bijection(f))
        recovered = perturbed.f.assignment == f.assignment
        closeness = max(perturbed.closeness.values())
        records.append(
            {
                "seed": seed,
                "recovered": recovered,
                "floor": perturbed.coefficient_floor,
                "exact_floor": exact.coefficient_floor,
                "closeness": closeness,
                "slack": perturbed.coefficient_floor - (1 - h_norm),
                "violation": (
                    not recovered
                    or perturbed.coefficient_floor < 1 - h_norm
                    or closeness != 0
                    or exact.coefficient_floor != 1.0
                ),
            }
        )
    return records


@flow(name="rigidity-recovery-suite")
def rigidity_recovery_suite(
    seed: int,
    pairs: int = 50,
    n: int = 24,
    h_norm: float = 0.1,
    batch_size: int = 10,
) -> SuiteReport:
    """
    Recovery of bijective isometries from perturbed permutation unitaries.
    """
    return _run_batches(
        "rigidity-recovery", seed, pairs, rigidity_batch, batch_size, n=n, h_norm=h_norm
    )


@task
def op_norm_batch(seeds: List[int], max_size: int, tol: float) -> List[Dict[str, Any]]:
    records = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, max_size // d + 1))
        s = float(rng.integers(0, 4))
        space = generate("path", n=n)
        h = random_banded_hermitian(space, s, 1.0, rng, fiber_dim=d)
        matrix = h.entries + rng.standard_normal(h.entries.shape) * (h.entries != 0)

        def check():
            estimate = op_norm(matrix)
            exact = float(np.linalg.svd(matrix, compute_uv=False)[0])
            relative = abs(estimate - exact) / exact if exact else abs(estimate)
            return {
                "seed": seed,
                "size": n * d,
                "estimate": estimate,
                "exact": exact,
                "slack": tol - relative,
                "violation": relative > tol,
            }

        records.append(_guarded(check))
    return records


@flow(name="op-norm-oracle-suite")
def op_norm_oracle_suite(
    seed: int,
    instances: int = 200,
    max_size: int = 256,
    tol: float = 1e-8,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> SuiteReport:
    """
    The iterative operator norm against the dense singular value decomposition.
    """
    return _run_batches(
        "op-norm-oracle",
        seed,
        instances,
        op_norm_batch,
        batch_size,
        max_size=max_size,
        tol=tol,
    )


@task
def stable_projection_batch(
    seeds: List[int], max_fiber: int, samples: int, h_norm: float
) -> List[Dict[str, Any]]:
    """
    Perturbs a family concentrated on one fiber direction and checks the
    trace certificate of the dominant fiber projection on sampled subsets.
    """
    records = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, max_fiber + 1))
        n = int(rng.integers(3, 9))
        epsilon = float(rng.uniform(0.05, 0.5))
        space = generate("path", n=n)
        fiber_vector = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        h = random_banded_hermitian(space, 1, h_norm, rng, fiber_dim=d)
        family = conjugated_family(
            coordinate_family(space, fiber_dim=d, fiber_vector=fiber_vector),
            banded_unitary(h),
        )
        fiber = dominant_fiber_projection(family, epsilon)
        complement = np.kron(np.eye(n), np.eye(d) - fiber.projection)
        worst = 0.0
        for _ in range(samples):
            subset = np.flatnonzero(rng.uniform(size=len(family)) < 0.5)
            worst = max(worst, spectral_norm(complement @ family.stacked(subset)))
        records.append(
            {
                "seed": seed,
                "d": d,
                "epsilon": epsilon,
                "rank": fiber.rank,
                "worst": worst,
                "slack": epsilon - worst,
                "violation": worst > epsilon + CONCLUSION_SLACK,
            }
        )
    return records


@flow(name="stable-projection-suite")
def stable_projection_suite(
    seed: int,
    instances: int = 20,
    max_fiber: int = 8,
    samples: int = 500,
    h_norm: float = 0.3,
    batch_size: int = 5,
) -> SuiteReport:
    """
    `||(1 ⊗ (1 - p)) p_A|| <= epsilon` over sampled subsets `A` for the
    dominant fiber projection `p`.
    """
    return _run_batches(
        "stable-projection",
        seed,
        instances,
        stable_projection_batch,
        batch_size,
        max_fiber=max_fiber,
        samples=samples,
        h_norm=h_norm,
    )
