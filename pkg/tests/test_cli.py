import json

import numpy as np
import pytest
from click.testing import CliRunner

from prefect_roe_lab.cli import ExitCode, cli
from prefect_roe_lab.instances import path_reflection
from prefect_roe_lab.operators import chi, identity
from prefect_roe_lab.reports import dump_json
from prefect_roe_lab.rigidity import SpatialUnitary
from prefect_roe_lab.space import generate
from prefect_roe_lab.vecmeasure import AtomicVectorMeasure


@pytest.fixture
def invoke():
    runner = CliRunner()

    def _invoke(*args):
        return runner.invoke(cli, [str(arg) for arg in args])

    return _invoke


def write_document(path, document):
    path.write_text(dump_json(document))
    return path


def read_report(path):
    return json.loads(path.read_text())


@pytest.fixture
def unit_atoms_file(tmp_path):
    return write_document(
        tmp_path / "measure.json",
        AtomicVectorMeasure(atoms=[[1.0]] * 5).to_json(),
    )


class TestGenerate:
    def test_space(self, invoke, tmp_path):
        out = tmp_path / "space.json"
        result = invoke("--out", out, "generate", "--kind", "cycle", "--n", 6)
        assert result.exit_code == ExitCode.OK
        report = read_report(out)
        assert report["command"] == "generate"
        assert report["parameters"]["kind"] == "cycle"
        assert report["parameter_hash"]
        assert report["result"]["n"] == 6

    @pytest.mark.parametrize(
        "args",
        [
            ("generate", "--artifact", "measure", "--n", 8, "--dim", 3),
            ("generate", "--artifact", "unitary", "--kind", "cycle", "--n", 8),
        ],
    )
    def test_reports_are_byte_identical_for_a_seed(self, invoke, tmp_path, args):
        first, second = tmp_path / "first.json", tmp_path / "second.json"
        assert invoke("--seed", 7, "--out", first, *args).exit_code == ExitCode.OK
        assert invoke("--seed", 7, "--out", second, *args).exit_code == ExitCode.OK
        assert first.read_bytes() == second.read_bytes()

    @pytest.mark.parametrize("artifact", ["measure", "unitary"])
    def test_randomized_artifacts_need_a_seed(self, invoke, artifact):
        result = invoke("generate", "--artifact", artifact, "--n", 4)
        assert result.exit_code == ExitCode.USAGE

    def test_csv_needs_a_table(self, invoke, tmp_path):
        result = invoke(
            "--format", "csv", "--out", tmp_path / "space.csv", "generate", "--n", 3
        )
        assert result.exit_code == ExitCode.USAGE
        assert not (tmp_path / "space.csv").exists()


class TestRound:
    def test_rounds_with_oracle(self, invoke, tmp_path, unit_atoms_file):
        out = tmp_path / "round.json"
        result = invoke(
            "--out", out, "round", "--measure", unit_atoms_file, "--target", "2.5",
            "--oracle",
        )
        assert result.exit_code == ExitCode.OK
        report = read_report(out)
        assert report["result"]["error"] == pytest.approx(0.5)
        assert report["result"]["oracle"]["error"] == pytest.approx(0.5)
        assert report["inputs"]["measure"]["hash"]

    def test_target_outside_the_hull(self, invoke, tmp_path, unit_atoms_file):
        out = tmp_path / "round.json"
        result = invoke(
            "--out", out, "round", "--measure", unit_atoms_file, "--target", "6"
        )
        assert result.exit_code == ExitCode.NOT_IN_HULL
        witness = read_report(out)["result"]
        assert witness["status"] == "not_in_hull"
        assert witness["gap"] > 0

    def test_malformed_target(self, invoke, unit_atoms_file):
        result = invoke("round", "--measure", unit_atoms_file, "--target", "abc")
        assert result.exit_code == ExitCode.INVALID_INPUT

    def test_csv_trace(self, invoke, tmp_path, unit_atoms_file):
        out = tmp_path / "trace.csv"
        result = invoke(
            "--format", "csv", "--out", out, "round", "--measure", unit_atoms_file,
            "--target", "2.5",
        )
        assert result.exit_code == ExitCode.OK
        header = out.read_text().splitlines()[0]
        assert header == "iteration,fractional_before,fractional_after,coordinate,step"

    def test_generated_measure_is_accepted(self, invoke, tmp_path):
        measure = tmp_path / "measure.json"
        assert (
            invoke(
                "--seed", 1, "--out", measure, "generate", "--artifact", "measure",
                "--n", 6, "--dim", 1,
            ).exit_code
            == ExitCode.OK
        )
        out = tmp_path / "round.json"
        result = invoke("--out", out, "round", "--measure", measure, "--target", "0")
        assert result.exit_code == ExitCode.OK
        report = read_report(out)["result"]
        assert report["error"] <= report["bound"] + 1e-9


class TestRigidity:
    def test_generated_unitary_passes(self, invoke, tmp_path):
        unitary = tmp_path / "unitary.json"
        generated = invoke(
            "--seed", 3, "--out", unitary, "generate", "--artifact", "unitary",
            "--kind", "cycle", "--n", 12, "--map", "permutation", "--h-norm", 0.1,
        )
        assert generated.exit_code == ExitCode.OK
        out = tmp_path / "rigidity.json"
        result = invoke("--out", out, "rigidity", "--unitary", unitary)
        assert result.exit_code == ExitCode.OK
        report = read_report(out)["result"]
        assert report["verdict"] == "pass"
        assert sorted(report["f"]) == list(range(12))

    def test_high_floor_threshold_fails(self, invoke, tmp_path):
        unitary = write_document(
            tmp_path / "unitary.json",
            SpatialUnitary.from_bijection(path_reflection(4)).to_json(),
        )
        result = invoke("rigidity", "--unitary", unitary, "--floor-threshold", 1.5)
        assert result.exit_code == ExitCode.CONCLUSION_FAILED

    def test_non_unitary_document(self, invoke, tmp_path):
        document = SpatialUnitary.from_bijection(path_reflection(3)).to_json()
        document["matrix"] = (2 * np.asarray(document["matrix"])).tolist()
        unitary = write_document(tmp_path / "unitary.json", document)
        result = invoke("rigidity", "--unitary", unitary)
        assert result.exit_code == ExitCode.INVALID_INPUT

    def test_stable_extraction(self, invoke, tmp_path):
        unitary = write_document(
            tmp_path / "unitary.json",
            SpatialUnitary.from_bijection(path_reflection(4), fiber_dim=2).to_json(),
        )
        out = tmp_path / "rigidity.json"
        result = invoke(
            "--out", out, "rigidity", "--unitary", unitary, "--stable", "--xi", "1,0"
        )
        assert result.exit_code == ExitCode.OK
        assert read_report(out)["result"]["f"] == [3, 2, 1, 0]


class TestLemma:
    def test_coordinate_family_passes(self, invoke, tmp_path):
        out = tmp_path / "lemma.json"
        result = invoke(
            "--out", out, "lemma", "--n", 8, "--epsilon", 0.1, "--floor"
        )
        assert result.exit_code == ExitCode.OK
        report = read_report(out)["result"]
        assert report["verdict"] == "pass"
        assert report["floor"]["verdict"] == "pass"

    def test_conjugation_needs_a_seed(self, invoke):
        result = invoke("lemma", "--n", 8, "--epsilon", 0.1, "--h-norm", 0.1)
        assert result.exit_code == ExitCode.USAGE

    def test_uncertified_radius(self, invoke):
        result = invoke(
            "--seed", 0, "lemma", "--kind", "cycle", "--n", 10, "--h-norm", 0.5,
            "--epsilon", 0.01, "--radius", 0,
        )
        assert result.exit_code == ExitCode.UNCERTIFIED

    def test_family_file(self, invoke, tmp_path):
        family = tmp_path / "family.json"
        generated = invoke(
            "--seed", 2, "--out", family, "generate", "--artifact", "family",
            "--kind", "cycle", "--n", 10, "--h-norm", 0.05,
        )
        assert generated.exit_code == ExitCode.OK
        out = tmp_path / "lemma.csv"
        result = invoke(
            "--format", "csv", "--out", out, "lemma", "--family", family,
            "--epsilon", 0.2,
        )
        assert result.exit_code == ExitCode.OK
        rows = out.read_text().splitlines()
        assert rows[0] == "x,members,norm,complement_norm,halving_error,midpoint"
        assert len(rows) == 11


class TestLocalize:
    @pytest.fixture
    def projection(self, tmp_path):
        path = generate("path", n=9)
        return write_document(
            tmp_path / "projection.json",
            chi(path, [3, 4, 5]).to_json(embed_space=True),
        )

    def test_point_in_range(self, invoke, tmp_path, projection):
        out = tmp_path / "localize.json"
        result = invoke(
            "--out", out, "localize", "--projection", projection, "--s", 0,
            "--epsilon", 0.5, "--delta", 0.8, "--point", 4,
        )
        assert result.exit_code == ExitCode.OK
        report = read_report(out)["result"]
        assert report["localization"]["support"] == [4]
        assert report["params"]["k"] == 2

    def test_point_outside_range(self, invoke, projection):
        result = invoke(
            "localize", "--projection", projection, "--s", 0, "--epsilon", 0.5,
            "--delta", 0.8, "--point", 0,
        )
        assert result.exit_code == ExitCode.UNCERTIFIED

    def test_needs_exactly_one_witness(self, invoke, projection):
        result = invoke(
            "localize", "--projection", projection, "--s", 0, "--epsilon", 0.5,
            "--delta", 0.8,
        )
        assert result.exit_code == ExitCode.USAGE


def test_ghost(invoke, tmp_path):
    reflection = path_reflection(6)
    unitary = write_document(
        tmp_path / "unitary.json", SpatialUnitary.from_bijection(reflection).to_json()
    )
    operator = write_document(
        tmp_path / "operator.json", identity(reflection.source).to_json()
    )
    out = tmp_path / "ghost.json"
    result = invoke(
        "--out", out, "ghost", "--unitary", unitary, "--operator", operator,
        "--exhaustion", "prefix",
    )
    assert result.exit_code == ExitCode.OK
    report = read_report(out)["result"]
    assert report["prediction_holds"] is True


class TestGroupOptions:
    def test_unknown_tolerance(self, invoke):
        result = invoke("--tol", "bogus=1", "generate", "--n", 3)
        assert result.exit_code == ExitCode.USAGE

    def test_negative_tolerance(self, invoke):
        result = invoke("--tol", "unitary=-1", "generate", "--n", 3)
        assert result.exit_code == ExitCode.INVALID_INPUT

    def test_tolerances_are_recorded(self, invoke, tmp_path):
        out = tmp_path / "space.json"
        result = invoke("--tol", "unitary=1e-8", "--out", out, "generate", "--n", 3)
        assert result.exit_code == ExitCode.OK
        assert read_report(out)["parameters"]["tolerances"]["unitary"] == 1e-8
