"""The `roe-lab` command line"""

import sys
from enum import IntEnum
from typing import Any, Dict, List, Optional, Sequence

import click
import numpy as np

from prefect_roe_lab.exceptions import (
    ConclusionViolation,
    ConvergenceError,
    DomainError,
    InvariantViolation,
    NotInHullError,
    UncertifiedHypothesis,
)
from prefect_roe_lab.instances import (
    banded_unitary,
    conjugated_family,
    coordinate_family,
    perturbed_permutation_unitary,
    random_banded_hermitian,
    random_measure,
)
from prefect_roe_lab.localization import derive_params, localize, support_points
from prefect_roe_lab.operators import (
    BandedOperator,
    ProjectionFamily,
    ball_exhaustion,
    prefix_exhaustion,
    truncate,
)
from prefect_roe_lab.reports import (
    decode_complex,
    dump_json,
    input_hash,
    parameter_hash,
    read_json,
    rows_to_csv,
    write_atomic,
)
from prefect_roe_lab.rigidity import (
    SpatialUnitary,
    Verdict,
    check_halving_lemma,
    coefficient_floor_bound,
    extract_map,
    ghost_transport_experiment,
    stable_extract_map,
)
from prefect_roe_lab.settings import ExperimentConfig, OutputFormat, Tolerances
from prefect_roe_lab.space import (
    CoarseMap,
    MetricSpace,
    SpaceKind,
    diameter,
    generate,
)
from prefect_roe_lab.vecmeasure import (
    AtomicVectorMeasure,
    NormKind,
    brute_force_oracle,
    round_to_subset,
)


class ExitCode(IntEnum):
    """
    Exit codes of `roe-lab`.

    Attributes:
        OK (IntEnum): The command passed.
        USAGE (IntEnum): Bad flags or a missing seed.
        NOT_IN_HULL (IntEnum): The rounding target lies outside the hull.
        INVALID_INPUT (IntEnum): An input file or parameter is invalid.
        UNCERTIFIED (IntEnum): A hypothesis could not be certified.
        CONCLUSION_FAILED (IntEnum): A conclusion or verdict failed.
    """

    OK = 0
    USAGE = 1
    NOT_IN_HULL = 2
    INVALID_INPUT = 3
    UNCERTIFIED = 4
    CONCLUSION_FAILED = 5


def _fail(exc: Exception, code: ExitCode) -> ExitCode:
    click.echo(f"Error: {exc}", err=True)
    return code


class RoeLabGroup(click.Group):
    """
    Runs commands outside click's standalone mode so that library errors map
    onto `ExitCode`.
    """

    def main(self, *args: Any, standalone_mode: bool = True, **kwargs: Any):
        try:
            result = super().main(*args, standalone_mode=False, **kwargs)
            code = ExitCode(result) if isinstance(result, int) else ExitCode.OK
        except click.UsageError as exc:
            exc.show()
            code = ExitCode.USAGE
        except click.Abort:
            code = ExitCode.USAGE
        except click.ClickException as exc:
            exc.show()
            code = ExitCode.INVALID_INPUT
        except UncertifiedHypothesis as exc:
            code = _fail(exc, ExitCode.UNCERTIFIED)
        except (ConclusionViolation, InvariantViolation) as exc:
            code = _fail(exc, ExitCode.CONCLUSION_FAILED)
        except NotInHullError as exc:
            code = _fail(exc, ExitCode.NOT_IN_HULL)
        except (DomainError, ConvergenceError, ValueError, OSError) as exc:
            code = _fail(exc, ExitCode.INVALID_INPUT)
        if standalone_mode:
            sys.exit(int(code))
        return int(code)


def _parse_tolerances(overrides: Sequence[str]) -> Tolerances:
    values = {}
    for override in overrides:
        name, _, value = override.partition("=")
        if not value or name not in Tolerances.__fields__:
            raise click.BadParameter(
                f"expected NAME=VALUE with NAME one of "
                f"{', '.join(Tolerances.__fields__)}, got {override!r}",
                param_hint="--tol",
            )
        values[name] = value
    return Tolerances(**values)


def _parse_vector(text: str, dtype=float) -> np.ndarray:
    items = [item.strip() for item in text.split(",") if item.strip()]
    try:
        return np.array([dtype(item) for item in items], dtype=dtype)
    except ValueError:
        raise DomainError(f"Expected comma separated numbers, got {text!r}") from None


def _require_seed(config: ExperimentConfig, what: str) -> int:
    if config.seed is None:
        raise click.UsageError(f"--seed is required to generate {what}.")
    return config.seed


def _emit(
    config: ExperimentConfig,
    command: str,
    result: Any,
    inputs: Optional[Dict[str, str]] = None,
    table: Optional[str] = None,
) -> None:
    """
    Writes the report of `command`, atomically to `--out` or to stdout.

    JSON reports wrap the result with the parameters of the run, their hash
    and the hashes of every input file; CSV reports hold the flat table only.
    """
    if config.output_format == OutputFormat.CSV:
        if table is None:
            raise click.UsageError(
                f"{command!r} has no flat table; use --format json."
            )
        text = table
    else:
        parameters = dict(
            config.parameters,
            seed=config.seed,
            tolerances=config.tolerances.dict(),
        )
        report = {
            "command": command,
            "parameters": parameters,
            "parameter_hash": parameter_hash(**parameters),
            "inputs": {
                name: {"path": path, "hash": input_hash(path)}
                for name, path in (inputs or {}).items()
            },
            "result": result,
        }
        text = dump_json(report) + "\n"
    if config.output_path:
        write_atomic(config.output_path, text)
    else:
        click.echo(text, nl=False)


def _load_artifact(path: str) -> Dict[str, Any]:
    """
    Reads an artifact, unwrapping the report written by `generate`.
    """
    data = read_json(path)
    if isinstance(data, dict) and "command" in data and "result" in data:
        return data["result"]
    return data


def _load_operator(path: str, space: Optional[MetricSpace] = None) -> BandedOperator:
    return BandedOperator.from_json(_load_artifact(path), space=space)


@click.group(cls=RoeLabGroup)
@click.option("--seed", type=int, default=None, help="Seed of every randomized step.")
@click.option(
    "--tol",
    "tolerances",
    multiple=True,
    metavar="NAME=VALUE",
    help="Tolerance override such as unitary=1e-8; repeatable.",
)
@click.option("--out", "output_path", default=None, help="Report path.")
@click.option(
    "--format",
    "output_format",
    type=click.Choice([member.value for member in OutputFormat]),
    default=OutputFormat.JSON.value,
    help="Report format.",
)
@click.option(
    "--threads",
    type=int,
    default=None,
    help="Parallelism cap; defaults to ROE_LAB_THREADS.",
)
@click.pass_context
def cli(ctx, seed, tolerances, output_path, output_format, threads):
    """
    Finite-scale laboratory for the rigidity of uniform Roe algebras.
    """
    ctx.obj = ExperimentConfig(
        seed=seed,
        tolerances=_parse_tolerances(tolerances),
        output_path=output_path,
        output_format=OutputFormat(output_format),
        threads=threads,
    )


def _space_options(command):
    options = [
        click.option(
            "--kind",
            type=click.Choice([member.value for member in SpaceKind]),
            default=SpaceKind.PATH.value,
            help="Family of the space.",
        ),
        click.option("--n", type=int, default=None, help="Number of points."),
        click.option("--rows", type=int, default=None, help="Grid rows."),
        click.option("--cols", type=int, default=None, help="Grid columns."),
        click.option("--group", default=None, help="Group such as z4xz6."),
        click.option("--gens", default=None, help="Generators such as 1,3 or 1:0,0:1."),
        click.option(
            "--p",
            "edge_probability",
            type=float,
            default=0.3,
            help="Edge probability of random graphs.",
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _build_space(
    config: ExperimentConfig, kind, n, rows, cols, group, gens, edge_probability
) -> MetricSpace:
    if kind == SpaceKind.RANDOM_GRAPH.value:
        _require_seed(config, "a random graph")
    generators = [item.strip() for item in gens.split(",")] if gens else None
    config.parameters.update(
        kind=kind,
        n=n,
        rows=rows,
        cols=cols,
        group=group,
        gens=gens,
        p=edge_probability,
    )
    return generate(
        kind,
        seed=config.seed,
        n=n,
        rows=rows,
        cols=cols,
        group=group,
        generators=generators,
        p=edge_probability,
    )


def _family(
    config: ExperimentConfig, space: MetricSpace, h_norm: float, propagation: float
) -> ProjectionFamily:
    family = coordinate_family(space)
    if h_norm == 0:
        return family
    seed = _require_seed(config, "a conjugated family")
    h = random_banded_hermitian(space, propagation, h_norm, seed)
    return conjugated_family(family, banded_unitary(h))


@cli.command(name="generate")
@click.option(
    "--artifact",
    type=click.Choice(["space", "unitary", "family", "measure"]),
    default="space",
    help="What to generate.",
)
@_space_options
@click.option("--edge-list", is_flag=True, help="Write graph metrics as edge lists.")
@click.option("--h-norm", type=float, default=0.1, help="Norm of H.")
@click.option("--propagation", type=float, default=1.0, help="Propagation of H.")
@click.option("--fiber-dim", type=int, default=1, help="Fiber dimension.")
@click.option(
    "--map",
    "bijection",
    type=click.Choice(["identity", "permutation"]),
    default="identity",
    help="Bijection underlying generated unitaries.",
)
@click.option("--dim", type=int, default=2, help="Dimension of generated measures.")
@click.option(
    "--norm",
    type=click.Choice([member.value for member in NormKind]),
    default=NormKind.L2.value,
    help="Norm of generated measures.",
)
@click.pass_obj
def cmd_generate(
    config: ExperimentConfig,
    artifact,
    kind,
    n,
    rows,
    cols,
    group,
    gens,
    edge_probability,
    edge_list,
    h_norm,
    propagation,
    fiber_dim,
    bijection,
    dim,
    norm,
):
    """
    Generates a space, a perturbed permutation unitary, a conjugated
    coordinate family or a random vector measure.
    """
    config.parameters.update(artifact=artifact)
    if artifact == "measure":
        seed = _require_seed(config, "a measure")
        if n is None:
            raise click.UsageError("--n is required to generate a measure.")
        config.parameters.update(n=n, dim=dim, norm=norm)
        measure = random_measure(n, dim, seed, norm=NormKind(norm))
        _emit(config, "generate", measure)
        return ExitCode.OK

    space = _build_space(config, kind, n, rows, cols, group, gens, edge_probability)
    if artifact == "space":
        config.parameters.update(edge_list=edge_list)
        _emit(config, "generate", space.to_json(edge_list=edge_list))
    elif artifact == "family":
        config.parameters.update(h_norm=h_norm, propagation=propagation)
        _emit(config, "generate", _family(config, space, h_norm, propagation))
    else:
        seed = _require_seed(config, "a unitary")
        config.parameters.update(
            h_norm=h_norm, propagation=propagation, fiber_dim=fiber_dim, map=bijection
        )
        rng = np.random.default_rng(seed)
        if bijection == "permutation":
            assignment = rng.permutation(space.n)
        else:
            assignment = np.arange(space.n)
        f = CoarseMap(source=space, target=space, assignment=assignment)
        h = random_banded_hermitian(
            space, propagation, h_norm, rng, fiber_dim=fiber_dim
        )
        unitary = perturbed_permutation_unitary(f, h, fiber_dim=fiber_dim)
        _emit(config, "generate", unitary)
    return ExitCode.OK


@cli.command(name="round")
@click.option("--measure", "measure_path", required=True, help="Measure file.")
@click.option("--target", required=True, help="Target vector, comma separated.")
@click.option("--oracle", is_flag=True, help="Embed the exhaustive oracle.")
@click.pass_obj
def cmd_round(config: ExperimentConfig, measure_path, target, oracle):
    """
    Rounds a point of the hull of the range to the measure of a subset.
    """
    mu = AtomicVectorMeasure.from_json(_load_artifact(measure_path))
    v = _parse_vector(target)
    config.parameters.update(target=v.tolist(), oracle=oracle)
    tolerances = config.tolerances
    inputs = {"measure": measure_path}
    try:
        result = round_to_subset(
            mu,
            v,
            tau=tolerances.fractional,
            tol=tolerances.membership,
            slack=tolerances.conclusion,
        )
    except NotInHullError as exc:
        _emit(config, "round", exc.result, inputs=inputs)
        return _fail(exc, ExitCode.NOT_IN_HULL)

    payload = result.to_json()
    if oracle:
        subset, error = brute_force_oracle(mu, v)
        payload["oracle"] = {"subset": list(subset.members), "error": error}
    table = rows_to_csv(
        ("iteration", "fractional_before", "fractional_after", "coordinate", "step"),
        [
            (
                step.iteration,
                step.fractional_before,
                step.fractional_after,
                step.coordinate,
                step.step,
            )
            for step in result.fractional_trace
        ],
    )
    _emit(config, "round", payload, inputs=inputs, table=table)
    return ExitCode.OK


@cli.command(name="rigidity")
@click.option("--unitary", "unitary_path", required=True, help="Unitary file.")
@click.option("--stable", is_flag=True, help="Extract through a fiber vector.")
@click.option("--xi", default=None, help="Unit fiber vector, comma separated.")
@click.option("--floor-threshold", type=float, default=None, help="Smallest floor.")
@click.pass_obj
def cmd_rigidity(config: ExperimentConfig, unitary_path, stable, xi, floor_threshold):
    """
    Extracts the coarse maps induced by a spatially implemented isomorphism.
    """
    tolerances = config.tolerances
    if floor_threshold is None:
        floor_threshold = tolerances.floor_threshold
    u = SpatialUnitary.from_json(_load_artifact(unitary_path), tol=tolerances.unitary)
    config.parameters.update(stable=stable, xi=xi, floor_threshold=floor_threshold)
    if stable:
        if xi is None:
            raise click.UsageError("--stable needs --xi.")
        report = stable_extract_map(
            u, _parse_vector(xi, complex), floor_threshold=floor_threshold
        )
    else:
        report = extract_map(u, floor_threshold=floor_threshold)
    _emit(
        config,
        "rigidity",
        report,
        inputs={"unitary": unitary_path},
        table=report.expansion_csv(),
    )
    if report.verdict == Verdict.PASS:
        return ExitCode.OK
    return ExitCode.CONCLUSION_FAILED


@cli.command(name="lemma")
@click.option("--family", "family_path", default=None, help="Projection family file.")
@_space_options
@click.option("--h-norm", type=float, default=0.0, help="Conjugate by exp(iH).")
@click.option("--propagation", type=float, default=1.0, help="Propagation of H.")
@click.option("--epsilon", type=float, required=True, help="Approximability level.")
@click.option("--radius", type=float, default=None, help="Certified if omitted.")
@click.option("--delta", type=float, default=None, help="Membership threshold.")
@click.option("--floor", is_flag=True, help="Also check the coefficient floor.")
@click.pass_obj
def cmd_lemma(
    config: ExperimentConfig,
    family_path,
    kind,
    n,
    rows,
    cols,
    group,
    gens,
    edge_probability,
    h_norm,
    propagation,
    epsilon,
    radius,
    delta,
    floor,
):
    """
    Checks the halving lemma on a family of projections summing to 1, read
    from `--family` or built as a coordinate family conjugated by `exp(iH)`.
    """
    tolerances = config.tolerances
    inputs = {}
    if family_path is not None:
        family = ProjectionFamily.from_json(
            _load_artifact(family_path), tol=tolerances.projection
        )
        inputs["family"] = family_path
    else:
        space = _build_space(config, kind, n, rows, cols, group, gens, edge_probability)
        config.parameters.update(h_norm=h_norm, propagation=propagation)
        family = _family(config, space, h_norm, propagation)
    config.parameters.update(epsilon=epsilon, radius=radius, delta=delta, floor=floor)

    report = check_halving_lemma(
        family,
        epsilon,
        r=radius,
        delta=delta,
        threads=config.resolved_threads(),
        slack=tolerances.conclusion,
    )
    payload = report.to_json()
    if floor:
        payload["floor"] = coefficient_floor_bound(family, slack=tolerances.conclusion)
    _emit(config, "lemma", payload, inputs=inputs, table=report.points_csv())
    if report.verdict == Verdict.PASS:
        return ExitCode.OK
    return ExitCode.CONCLUSION_FAILED


@cli.command(name="localize")
@click.option("--projection", "projection_path", required=True, help="Projection.")
@click.option("--approximant", "approximant_path", default=None, help="Approximant.")
@click.option("--s", "s", type=float, required=True, help="Approximant propagation.")
@click.option("--epsilon", type=float, required=True, help="Target defect.")
@click.option("--delta", type=float, required=True, help="Lower bound of ||p zeta||.")
@click.option("--point", type=int, default=None, help="Start from delta_x.")
@click.option("--zeta", "zeta_path", default=None, help="Witness vector file.")
@click.pass_obj
def cmd_localize(
    config: ExperimentConfig,
    projection_path,
    approximant_path,
    s,
    epsilon,
    delta,
    point,
    zeta_path,
):
    """
    Finds a unit vector of controlled support almost fixed by a projection.

    Without `--approximant`, the truncation of the projection at `s` is used.
    A failed precondition exits with the uncertified code.
    """
    if (point is None) == (zeta_path is None):
        raise click.UsageError("Pass exactly one of --point and --zeta.")
    tolerances = config.tolerances
    p = _load_operator(projection_path)
    inputs = {"projection": projection_path}
    if approximant_path is None:
        a = truncate(p, s)
    else:
        a = _load_operator(approximant_path, space=p.space)
        inputs["approximant"] = approximant_path

    if zeta_path is None:
        x = p.space.check_point(point)
        zeta = np.zeros(p.size, dtype=complex)
        zeta[x * p.fiber_dim] = 1.0
    else:
        document = _load_artifact(zeta_path)
        if isinstance(document, dict):
            document = document["zeta"]
        zeta = decode_complex(document)
        if zeta.shape != (p.size,):
            raise DomainError(
                f"Expected a witness of length {p.size}, got shape {zeta.shape}"
            )
        inputs["zeta"] = zeta_path
    support = support_points(zeta, p.fiber_dim, p.space.n, tolerances.support)
    t = diameter(p.space, support)
    params = derive_params(epsilon, delta, s, t)
    config.parameters.update(s=s, epsilon=epsilon, delta=delta, point=point, t=t)

    try:
        result = localize(
            p,
            a,
            zeta,
            params,
            norm_tol=tolerances.norm,
            support_tol=tolerances.support,
            slack=tolerances.conclusion,
        )
    except DomainError as exc:
        return _fail(exc, ExitCode.UNCERTIFIED)

    weights = np.linalg.norm(result.xi.reshape(p.space.n, p.fiber_dim), axis=1)
    table = rows_to_csv(("point", "weight"), [(x, weights[x]) for x in result.support])
    _emit(
        config,
        "localize",
        {"params": params, "localization": result},
        inputs=inputs,
        table=table,
    )
    return ExitCode.OK


@cli.command(name="ghost")
@click.option("--unitary", "unitary_path", required=True, help="Unitary file.")
@click.option("--operator", "operator_path", required=True, help="Operator file.")
@click.option(
    "--exhaustion",
    type=click.Choice(["balls", "prefix"]),
    default="balls",
    help="Exhaustion of the source space.",
)
@click.option("--center", type=int, default=0, help="Center of the balls.")
@click.pass_obj
def cmd_ghost(
    config: ExperimentConfig, unitary_path, operator_path, exhaustion, center
):
    """
    Compares the ghost profiles of an operator and of its image.
    """
    tolerances = config.tolerances
    u = SpatialUnitary.from_json(_load_artifact(unitary_path), tol=tolerances.unitary)
    a = _load_operator(operator_path, space=u.source)
    config.parameters.update(exhaustion=exhaustion, center=center)
    if exhaustion == "balls":
        chain = ball_exhaustion(u.source, center)
    else:
        chain = prefix_exhaustion(u.source)
    report = ghost_transport_experiment(
        u, a, chain, threshold=tolerances.ghost_threshold
    )
    table = rows_to_csv(
        ("stage", "source", "image"),
        [
            (stage, source, image)
            for stage, (source, image) in enumerate(
                zip(report.source_profile, report.image_profile)
            )
        ],
    )
    _emit(
        config,
        "ghost",
        report,
        inputs={"unitary": unitary_path, "operator": operator_path},
        table=table,
    )
    if report.prediction_holds:
        return ExitCode.OK
    return ExitCode.CONCLUSION_FAILED


def main(argv: Optional[List[str]] = None) -> None:
    """
    Entry point of the `roe-lab` console script.
    """
    cli.main(args=argv, prog_name="roe-lab")
