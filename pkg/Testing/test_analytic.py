"""
Tests for the closed-form evaluators and grid energies.
"""

import math

import numpy as np
import pytest

from walsh_snapping.analytic import (
    AnalyticDomainError,
    SnappingParameter,
    barrier_origin_probability,
    barrier_resistance,
    bm_exit_laplace,
    coupling_energy,
    energy_identity_target,
    energy_measure_density,
    expected_local_time,
    feller_limit_closed_form,
    feller_limit_quadrature,
    feller_pair_weight,
    form_energy,
    half_normal_cdf,
    hitting_kernel,
    lambda_kernel,
    reflected_transition_cdf,
    snowb_switch_probability,
    trace_coupling_coefficient,
    trace_form_energy,
)
from walsh_snapping.domain import AngularMeasure, BarrierProfile, ConfigurationError, power_law_profile
from walsh_snapping.grid import DiscreteFunction, FormKind, Grid, OriginMode, ShapeMismatchError


class TestExitFunctionals:
    """Test Brownian exit Laplace transforms."""

    def test_values(self):
        exits = bm_exit_laplace(0.3, 1.0, 0.5)
        assert exits.outer_first == pytest.approx(math.sinh(0.3) / math.sinh(1.0))
        assert exits.origin_first == pytest.approx(math.sinh(0.7) / math.sinh(1.0))
        assert exits.symmetric_exit == pytest.approx(1.0 / math.cosh(1.0))

    def test_large_argument_does_not_overflow(self):
        exits = bm_exit_laplace(0.5, 1.0, 1e5)
        assert 0.0 <= exits.outer_first < 1e-50
        assert exits.symmetric_exit >= 0.0

    def test_endpoints(self):
        assert bm_exit_laplace(0.0, 1.0, 1.0).outer_first == 0.0
        assert bm_exit_laplace(1.0, 1.0, 1.0).outer_first == pytest.approx(1.0)

    @pytest.mark.parametrize("r,a,lam", [(1.5, 1.0, 1.0), (0.5, 0.0, 1.0), (0.5, 1.0, 0.0), (-0.1, 1.0, 1.0)])
    def test_domain(self, r, a, lam):
        with pytest.raises(AnalyticDomainError):
            bm_exit_laplace(r, a, lam)


class TestHittingKernels:
    """Test the hitting kernel of the complement of a ball."""

    def test_masses(self):
        kernel = hitting_kernel(0.3, 1.0)
        assert kernel.same_ray_mass == pytest.approx(0.3)
        assert kernel.eta_mixture_mass == pytest.approx(0.7)
        assert kernel.expectation(2.0, 1.0) == pytest.approx(0.3 * 2.0 + 0.7)

    def test_lambda_kernel_tends_to_hitting_kernel(self):
        kernel = lambda_kernel(0.3, 1.0, 1e-10)
        assert kernel.same_ray_coeff == pytest.approx(0.3, rel=1e-6)
        assert kernel.total_mass == pytest.approx(1.0, rel=1e-6)

    def test_lambda_kernel_subprobability(self):
        assert lambda_kernel(0.3, 1.0, 2.0).total_mass < 1.0


class TestSnappingParameter:
    """Test the kappa / trace radius / resistance correspondence."""

    def test_conversions(self):
        assert SnappingParameter.from_trace_radius(0.5).kappa == pytest.approx(1.0)
        assert SnappingParameter(2.0).trace_radius == pytest.approx(0.25)
        assert SnappingParameter.from_resistance(0.25).kappa == pytest.approx(2.0)

    def test_invalid(self):
        with pytest.raises(AnalyticDomainError):
            SnappingParameter(0.0)
        with pytest.raises(AnalyticDomainError):
            SnappingParameter.from_resistance(math.inf)


class TestFeller:
    """Test the Feller measure of the trace."""

    def test_pair_weight(self):
        assert feller_pair_weight(1.0) == 0.5
        assert trace_coupling_coefficient(0.5) == pytest.approx(SnappingParameter.from_trace_radius(0.5).kappa / 2)

    @pytest.mark.parametrize("lam", [1.0, 10.0, 100.0, 1000.0, 10000.0])
    def test_quadrature_matches_closed_form(self, lam):
        assert feller_limit_quadrature(1.0, lam) == pytest.approx(feller_limit_closed_form(1.0, lam), abs=1e-8)

    def test_known_value(self):
        assert feller_limit_closed_form(1.0, 0.5) == pytest.approx(0.5 - 1.0 / math.sinh(2.0))

    def test_limit(self):
        values = [feller_limit_closed_form(1.0, lam) for lam in (1.0, 10.0, 100.0, 1e4)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert abs(values[-1] - 0.5) < 1e-4

    def test_scales_with_boundary_means(self):
        assert feller_limit_quadrature(2.0, 3.0, 0.5, 0.4) == pytest.approx(0.2 * feller_limit_quadrature(2.0, 3.0))


class TestOracles:
    """Test the probability oracles of the simulators."""

    def test_switch_probability(self):
        assert snowb_switch_probability(0.2, 1.0, 1.0) == pytest.approx(1.6 / 3.0)
        assert snowb_switch_probability(1.0, 1.0, 1.0) == 0.0

    def test_switch_probability_to_another_ray(self):
        switched = snowb_switch_probability(0.2, 1.0, 1.0)
        assert snowb_switch_probability(0.2, 1.0, 1.0, w_start=0.5) == pytest.approx(0.5 * switched)
        assert snowb_switch_probability(0.2, 1.0, 1.0, w_start=1.0) == 0.0
        with pytest.raises(AnalyticDomainError):
            snowb_switch_probability(0.2, 1.0, 1.0, w_start=1.5)

    def test_switch_probability_equals_trace_gamblers_ruin(self):
        a, x, outer = 0.5, 0.2, 1.0
        kappa = SnappingParameter.from_trace_radius(a).kappa
        assert snowb_switch_probability(x, outer, kappa) == pytest.approx((outer - x) / (a + outer))

    def test_barrier_origin_probability(self):
        profile = power_law_profile(2.0, -1.0, 0.01)
        expected = (profile.scale(1.0) - profile.scale(0.5)) / profile.scale(1.0)
        assert barrier_origin_probability(0.5, 1.0, profile) == pytest.approx(expected)

    def test_barrier_probability_approaches_snapping(self):
        x, outer = 0.5, 1.0
        profile = power_law_profile(2.0, -1.0, 1e-6)
        kappa = SnappingParameter.from_resistance(0.5).kappa
        assert barrier_origin_probability(x, outer, profile) == pytest.approx(
            snowb_switch_probability(x, outer, kappa), abs=1e-5
        )

    def test_unit_barrier_is_plain_ruin(self):
        profile = BarrierProfile.constant(1.0, 0.1)
        assert barrier_origin_probability(0.25, 1.0, profile) == pytest.approx(0.75)

    def test_reflected_cdf(self):
        x = np.array([0.0, 0.5, 10.0])
        cdf = reflected_transition_cdf(x, 0.3, 1.0)
        assert cdf[0] == pytest.approx(0.0)
        assert cdf[-1] == pytest.approx(1.0)
        assert half_normal_cdf(np.array([1.0]), 1.0)[0] == pytest.approx(0.6826894921370859)

    def test_expected_local_time(self):
        assert expected_local_time(1.0) == pytest.approx(2.0 * math.sqrt(2.0 / math.pi))
        assert expected_local_time(0.0) == 0.0


class TestEnergies:
    """Test the four form energies on grid functions."""

    @pytest.fixture
    def grid(self):
        return Grid.covering(4, 1.0, 0.01)

    def test_linear_function(self, grid, uniform4):
        f = DiscreteFunction.from_callable(grid, lambda j, r: r, OriginMode.SHARED)
        for kind in (FormKind.reflecting(), FormKind.walsh(), FormKind.snapping(3.0)):
            assert form_energy(kind, f, grid, uniform4) == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "kind",
        [FormKind.reflecting(), FormKind.snapping(2.0), FormKind.walsh(), FormKind.barrier(BarrierProfile.constant(0.3, 0.1))],
        ids=lambda k: k.family.value,
    )
    def test_quadratic_form(self, kind, grid, uniform4):
        rng = np.random.default_rng(7)

        def _random():
            values = rng.standard_normal((grid.n_rays, grid.n_nodes))
            return DiscreteFunction(values, OriginMode.PER_RAY).conform(kind.origin_mode, uniform4)

        def energy(f):
            return form_energy(kind, f, grid, uniform4)

        f, g = _random(), _random()
        for alpha in (-2.0, 0.0, 0.5, 3.0):
            assert energy(alpha * f) == pytest.approx(alpha**2 * energy(f), rel=1e-12, abs=1e-12)
        parallelogram = energy(f + g) + energy(f + (-1.0) * g)
        assert parallelogram == pytest.approx(2.0 * energy(f) + 2.0 * energy(g), rel=1e-10)

    def test_coupling_energy(self, uniform4):
        values = np.array([0.0, 1.0, 0.0, 1.0])
        direct = 0.5 * 2.0 * sum(
            0.25 * 0.25 * (values[j] - values[k]) ** 2 for j in range(4) for k in range(4)
        )
        assert coupling_energy(values, uniform4, 2.0) == pytest.approx(direct)

    def test_snapping_adds_coupling(self, grid, uniform4):
        f = DiscreteFunction.from_callable(grid, lambda j, r: np.full_like(r, float(j % 2)))
        assert form_energy(FormKind.reflecting(), f, grid, uniform4) == 0.0
        assert form_energy(FormKind.snapping(2.0), f, grid, uniform4) == pytest.approx(2.0 * 0.25)

    def test_shared_forms_reject_split_origin(self, grid, uniform4):
        f = DiscreteFunction.from_callable(grid, lambda j, r: np.full_like(r, float(j)))
        with pytest.raises(ShapeMismatchError):
            form_energy(FormKind.walsh(), f, grid, uniform4)

    def test_barrier_conductivity(self, grid, uniform4):
        profile = BarrierProfile.constant(0.5, 0.1)
        f = DiscreteFunction.from_callable(grid, lambda j, r: r, OriginMode.SHARED)
        assert form_energy(FormKind.barrier(profile), f, grid, uniform4) == pytest.approx(0.5 * (0.1 * 0.5 + 0.9))
        assert barrier_resistance(FormKind.barrier(profile)) == pytest.approx(0.2)
        assert barrier_resistance(FormKind.walsh()) == 0.0

    def test_energy_measure_density(self, grid):
        f = DiscreteFunction.from_callable(grid, lambda j, r: 2.0 * r)
        np.testing.assert_allclose(energy_measure_density(f, grid), 4.0)

    def test_trace_form_energy(self, uniform4):
        grid = Grid.covering(4, 5.0, 0.01)
        a = 0.5
        energy = trace_form_energy(lambda j, r: np.full_like(r, float(j % 2)), grid, uniform4, a)
        assert energy == pytest.approx(trace_coupling_coefficient(a) * 0.5)

    def test_trace_form_needs_long_grid(self, uniform4):
        grid = Grid.covering(4, 1.0, 0.01)
        with pytest.raises(ConfigurationError):
            trace_form_energy(lambda j, r: r, grid, uniform4, 0.5)

    def test_energy_identity_target(self):
        measure = AngularMeasure.uniform(2)
        origin = np.array([1.0, -1.0])
        assert energy_identity_target(origin, 0.3, 0.5, measure) == pytest.approx(0.3 + 1.0)
        with pytest.raises(AnalyticDomainError):
            energy_identity_target(origin, 0.3, 0.0, measure)
