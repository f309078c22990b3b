import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefect_roe_lab.exceptions import ConvergenceError, DomainError
from prefect_roe_lab.instances import localization_instance
from prefect_roe_lab.localization import (
    LocalizationParams,
    derive_params,
    localize,
    localize_at_point,
    minimal_power,
    support_points,
)
from prefect_roe_lab.operators import chi, zeros
from prefect_roe_lab.space import generate


class TestDeriveParams:
    def test_minimal_power(self):
        params = derive_params(0.1, 0.5, 1, 0)
        assert params.k == 14
        assert params.rate > 0.9
        assert (0.25) ** (1 / 13) <= 0.9

    def test_gamma_meets_both_budgets(self):
        params = derive_params(0.5, 0.8, 2, 3)
        assert params.k == 2
        assert params.gamma < params.rate - 1 + params.epsilon
        assert params.k * params.gamma * (1 + params.gamma) ** (params.k - 1) <= 0.4
        assert params.r == 4 * 2 * 2 + 3

    def test_report_carries_derived_values(self):
        data = derive_params(0.5, 0.8, 2, 3).to_json()
        assert data["k"] == 2
        assert data["r"] == 19
        assert data["rate"] == pytest.approx(0.4**0.5)

    @pytest.mark.parametrize(
        "epsilon, delta, s, t",
        [
            (0, 0.5, 1, 0),
            (1, 0.5, 1, 0),
            (0.5, 0, 1, 0),
            (0.5, 1.5, 1, 0),
            (0.5, 0.5, -1, 0),
        ],
    )
    def test_out_of_range(self, epsilon, delta, s, t):
        with pytest.raises(DomainError):
            derive_params(epsilon, delta, s, t)

    def test_too_few_powers_are_rejected(self):
        with pytest.raises(ValueError, match="must exceed 1 - epsilon"):
            LocalizationParams(epsilon=0.1, delta=0.5, s=1, t=0, k=3, gamma=0.001)

    @settings(deadline=None, max_examples=100)
    @given(
        epsilon=st.floats(min_value=0.01, max_value=0.99),
        delta=st.floats(min_value=0.01, max_value=1.0),
    )
    def test_power_is_minimal(self, epsilon, delta):
        k = minimal_power(epsilon, delta)
        assert (delta / 2) ** (1 / k) > 1 - epsilon
        assert k == 1 or not (delta / 2) ** (1 / (k - 1)) > 1 - epsilon


def test_support_points():
    vector = np.array([0, 1e-14, 0.5, -0.5, 0])
    assert support_points(vector, 1, 5).members == (2, 3)
    assert support_points(vector, 1, 5, tol=1e-16).members == (1, 2, 3)


class TestLocalize:
    def test_exact_projection_stays_at_the_witness(self):
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        params = derive_params(0.5, 0.8, 0, 0)
        result = localize_at_point(p, p, 4, params)
        assert result.power_index == 0
        assert result.support.members == (4,)
        assert result.diameter == 0.0
        assert result.defect == pytest.approx(0.0)
        assert result.norms == [1.0] * (params.k + 1)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_perturbed_ball_projection(self, seed):
        space = generate("path", n=24)
        p, a = localization_instance(space, 12, 2, 0.05, 2, seed)
        params = derive_params(0.5, 0.8, 2, 0)
        result = localize_at_point(p, a, 12, params)
        assert 1 - result.defect >= 0.5
        assert result.diameter <= result.bound == params.r
        assert result.telescoped >= 0.4 - 1e-9
        assert np.linalg.norm(result.xi) == pytest.approx(1.0)

    def test_report(self):
        path = generate("path", n=5)
        p = chi(path, [1, 2])
        result = localize_at_point(p, p, 1, derive_params(0.5, 0.8, 0, 0))
        data = result.to_json()
        assert data["support"] == [1]
        assert data["power_index"] == 0

    def test_witness_outside_the_range(self):
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        with pytest.raises(DomainError, match="below delta"):
            localize_at_point(p, p, 0, derive_params(0.5, 0.8, 0, 0))

    @pytest.fixture
    def stalled_norm(self, monkeypatch):
        def install(lower, upper):
            def op_norm(*args, **kwargs):
                raise ConvergenceError("stalled", lower=lower, upper=upper)

            monkeypatch.setattr("prefect_roe_lab.localization.op_norm", op_norm)

        return install

    def test_stalled_norm_below_gamma(self, stalled_norm):
        stalled_norm(0.0, 0.0)
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        result = localize_at_point(p, p, 4, derive_params(0.5, 0.8, 0, 0))
        assert result.support.members == (4,)

    def test_stalled_norm_above_gamma(self, stalled_norm):
        stalled_norm(1.0, 2.0)
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        with pytest.raises(DomainError, match="exceeds gamma"):
            localize_at_point(p, p, 4, derive_params(0.5, 0.8, 0, 0))

    def test_straddling_bracket_uses_the_dense_norm(self, stalled_norm):
        stalled_norm(0.0, 10.0)
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        params = derive_params(0.5, 0.8, 0, 0)
        result = localize_at_point(p, p, 4, params)
        assert result.support.members == (4,)
        with pytest.raises(DomainError, match="exceeds gamma"):
            localize_at_point(p, zeros(path), 4, params)

    def test_far_approximant(self):
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        with pytest.raises(DomainError, match="exceeds gamma"):
            localize_at_point(p, zeros(path), 4, derive_params(0.5, 0.8, 0, 0))

    def test_spread_witness(self):
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        zeta = np.zeros(9)
        zeta[[3, 5]] = 1
        with pytest.raises(DomainError, match="diam"):
            localize(p, p, zeta, derive_params(0.5, 0.8, 0, 1))

    def test_zero_witness(self):
        path = generate("path", n=9)
        p = chi(path, [3, 4, 5])
        with pytest.raises(DomainError, match="zero"):
            localize(p, p, np.zeros(9), derive_params(0.5, 0.8, 0, 0))

    def test_fiber_vector_length(self):
        path = generate("path", n=3)
        p = chi(path, [0], fiber_dim=2)
        with pytest.raises(DomainError, match="fiber vector of length 2"):
            localize_at_point(p, p, 0, derive_params(0.5, 0.8, 0, 0), [1, 0, 0])
