import numpy as np
import pytest

from prefect_roe_lab.settings import (
    THREADS_ENV_VAR,
    ExperimentConfig,
    OutputFormat,
    Tolerances,
    parallel_map,
    resolve_threads,
)


def test_tolerances_must_be_positive():
    with pytest.raises(ValueError, match="must be positive"):
        Tolerances(unitary=-1e-8)
    assert Tolerances(unitary="1e-8").unitary == 1e-8


class TestResolveThreads:
    def test_explicit_value_wins(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "8")
        assert resolve_threads(2) == 2

    def test_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "3")
        assert resolve_threads() == 3

    def test_default(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        assert resolve_threads() == 1

    @pytest.mark.parametrize("raw", ["many", "0"])
    def test_invalid_environment(self, monkeypatch, raw):
        monkeypatch.setenv(THREADS_ENV_VAR, raw)
        with pytest.raises(ValueError):
            resolve_threads()


def test_parallel_map_keeps_order():
    assert parallel_map(lambda x: x * x, range(20), threads=4) == [
        x * x for x in range(20)
    ]


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()
        assert config.seed is None
        assert config.output_format == OutputFormat.JSON
        assert config.tolerances == Tolerances()

    @pytest.mark.parametrize("kwargs", [{"seed": -1}, {"threads": 0}])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig(**kwargs)

    def test_require_seed(self):
        with pytest.raises(ValueError, match="seed is required"):
            ExperimentConfig().require_seed()

    def test_rng_is_seeded(self):
        config = ExperimentConfig(seed=5)
        assert np.array_equal(config.rng().random(3), config.rng().random(3))

    def test_resolved_threads(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        assert ExperimentConfig().resolved_threads() == 1
        assert ExperimentConfig(threads=4).resolved_threads() == 4
