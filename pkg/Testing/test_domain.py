"""
Tests for the star-graph state space, angular measures and barrier profiles.
"""

import math

import numpy as np
import pytest

from walsh_snapping.domain import (
    AngularMeasure,
    BarrierProfile,
    ConfigurationError,
    StarPoint,
    Topology,
    concatenate,
    darning_project,
    power_law_profile,
    resistance,
    sample_angle,
    sample_angles,
    shift,
    unshift,
)


class TestAngularMeasure:
    """Test angular measure validation and sampling."""

    def test_uniform(self):
        measure = AngularMeasure.uniform(4)
        assert measure.n_rays == 4
        assert measure.weights == (0.25, 0.25, 0.25, 0.25)
        assert measure.angles[1] == pytest.approx(math.pi / 2)

    def test_cdf_ends_at_one(self):
        measure = AngularMeasure.from_weights([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(measure.cdf, [0.1, 0.3, 0.6, 1.0])
        assert measure.cdf[-1] == 1.0

    @pytest.mark.parametrize("weights", [[1.0], [0.5, 0.6], [0.5, 0.5, 0.0], [1.2, -0.2]])
    def test_invalid_weights(self, weights):
        with pytest.raises(ConfigurationError):
            AngularMeasure.from_weights(weights)

    def test_angles_must_increase(self):
        with pytest.raises(ConfigurationError):
            AngularMeasure(angles=(1.0, 0.5), weights=(0.5, 0.5))

    def test_mean(self, skewed3):
        assert skewed3.mean(np.array([1.0, 2.0, 3.0])) == pytest.approx(0.5 + 0.6 + 0.6)
        with pytest.raises(ConfigurationError):
            skewed3.mean(np.ones(4))

    def test_sample_angles_frequencies(self):
        measure = AngularMeasure.from_weights([0.1, 0.2, 0.3, 0.4])
        rng = np.random.default_rng(7)
        rays = sample_angles(measure, rng, 200_000)
        frequencies = np.bincount(rays, minlength=4) / rays.size
        np.testing.assert_allclose(frequencies, measure.weight_array, atol=0.005)

    def test_sample_angle_in_range(self, uniform4):
        rng = np.random.default_rng(0)
        assert all(0 <= sample_angle(uniform4, rng) < 4 for _ in range(100))


class TestStarPoint:
    """Test points of the glued and separated star."""

    def test_glued_origin_identifies_rays(self):
        assert StarPoint(0, 0.0, Topology.GLUED) == StarPoint(3, 0.0, Topology.GLUED)
        assert hash(StarPoint(0, 0.0, Topology.GLUED)) == hash(StarPoint(2, 0.0, Topology.GLUED))

    def test_separated_origin_keeps_rays(self):
        assert StarPoint(0, 0.0) != StarPoint(1, 0.0)
        assert StarPoint(1, 0.5) == StarPoint(1, 0.5)

    def test_topologies_never_equal(self):
        assert StarPoint(0, 0.5, Topology.GLUED) != StarPoint(0, 0.5, Topology.SEPARATED)

    @pytest.mark.parametrize("ray,r", [(-1, 0.0), (0, -0.1), (0, math.inf), (1.5, 0.0)])
    def test_invalid_points(self, ray, r):
        with pytest.raises(ConfigurationError):
            StarPoint(ray, r)

    def test_check_ray(self, uniform4):
        StarPoint(3, 0.1).check_ray(uniform4)
        with pytest.raises(ConfigurationError):
            StarPoint(4, 0.1).check_ray(uniform4)

    def test_shift_roundtrip(self):
        point = StarPoint(2, 0.3)
        moved = shift(point, 0.5)
        assert moved.r == pytest.approx(0.8)
        back = unshift(moved, 0.5)
        assert back.ray == 2
        assert back.r == pytest.approx(0.3)

    def test_unshift_inside_ball(self):
        with pytest.raises(ConfigurationError):
            unshift(StarPoint(0, 0.2), 0.5)

    def test_darning_glues_origins(self):
        a = darning_project(StarPoint(0, 0.0))
        b = darning_project(StarPoint(1, 0.0))
        assert a == b
        assert darning_project(StarPoint(1, 0.4)) == StarPoint(1, 0.4, Topology.GLUED)


class TestBarrierProfile:
    """Test barrier profiles, resistance and the scale function."""

    def test_constant_profile(self):
        profile = BarrierProfile.constant(0.5, 0.1)
        assert profile.n_pieces == 1
        assert resistance(profile) == pytest.approx(0.2)
        assert profile.conductivity(0.05) == 0.5
        assert profile.conductivity(0.2) == 1.0

    def test_scale_function(self):
        profile = BarrierProfile(0.3, (0.0, 0.1, 0.3), (0.5, 2.0))
        assert profile.scale(0.1) == pytest.approx(0.2)
        assert profile.scale(0.3) == pytest.approx(0.3)
        assert profile.scale(1.3) == pytest.approx(1.3)
        np.testing.assert_allclose(profile.scale(np.array([0.0, 0.2])), [0.0, 0.25])
        assert profile.scale(profile.epsilon) == pytest.approx(resistance(profile))

    def test_unit_profile(self):
        assert BarrierProfile.constant(1.0, 0.1).is_unit
        assert not BarrierProfile.constant(2.0, 0.1).is_unit

    @pytest.mark.parametrize(
        "epsilon,breakpoints,values",
        [
            (0.1, (0.0, 0.1), (0.0,)),
            (0.1, (0.0, 0.05), (1.0,)),
            (0.1, (0.01, 0.1), (1.0,)),
            (0.1, (0.0, 0.06, 0.05, 0.1), (1.0, 1.0, 1.0)),
            (0.1, (0.0, 0.1), (1.0, 2.0)),
            (-0.1, (0.0, -0.1), (1.0,)),
        ],
    )
    def test_invalid_profiles(self, epsilon, breakpoints, values):
        with pytest.raises(ConfigurationError):
            BarrierProfile(epsilon, breakpoints, values)

    def test_bounds_checked(self):
        with pytest.raises(ConfigurationError):
            BarrierProfile(0.1, (0.0, 0.1), (5.0,), lower_bound=1.0, upper_bound=2.0)

    @pytest.mark.parametrize("alpha", [-2.0, -1.0, -0.5, 0.0])
    def test_power_law_resistance(self, alpha):
        kappa, epsilon = 2.0, 0.01
        profile = power_law_profile(kappa, alpha, epsilon)
        assert resistance(profile) == pytest.approx(kappa**alpha * epsilon ** (1.0 + alpha))

    def test_power_law_critical_exponent(self):
        profile = power_law_profile(2.0, -1.0, 0.001)
        assert resistance(profile) == pytest.approx(0.5)

    def test_concatenate_adds_resistance(self):
        inner = BarrierProfile.constant(0.5, 0.1)
        outer = BarrierProfile(0.2, (0.0, 0.1, 0.2), (2.0, 4.0))
        joined = concatenate(inner, outer)
        assert joined.epsilon == pytest.approx(0.3)
        assert joined.n_pieces == 3
        assert resistance(joined) == pytest.approx(resistance(inner) + resistance(outer))
