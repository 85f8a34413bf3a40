"""
State space, angular measure and barrier profiles for star-graph diffusions.

A star graph is a family of half-lines (rays) joined at the origin. Points are
polar pairs (ray, r). Whether the origins of different rays coincide depends
on the topology: glued for the plane-like star, separated for the snapping-out
state space.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from numbers import Real
from typing import Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

WEIGHT_SUM_TOLERANCE = 1e-12
TWO_PI = 2.0 * math.pi


class ConfigurationError(ValueError):
    """Invalid domain or experiment configuration."""
    pass


class Topology(Enum):
    """Origin semantics of the star graph."""
    GLUED = "glued"
    SEPARATED = "separated"


@dataclass(frozen=True)
class AngularMeasure:
    """
    Finitely supported probability measure on the circle.

    Each atom is a ray of the star graph. Every configured ray carries
    positive weight.
    """

    angles: Tuple[float, ...]
    weights: Tuple[float, ...]

    def __post_init__(self) -> None:
        angles = tuple(float(a) for a in self.angles)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "weights", weights)

        if len(weights) < 2:
            raise ConfigurationError(
                f"An angular measure needs at least 2 rays, got {len(weights)}"
            )
        if len(angles) != len(weights):
            raise ConfigurationError(
                f"Got {len(angles)} angles for {len(weights)} weights"
            )
        if any(not math.isfinite(w) or w <= 0.0 for w in weights):
            raise ConfigurationError(f"Ray weights must be strictly positive: {weights}")
        total = math.fsum(weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ConfigurationError(f"Ray weights must sum to 1, got {total!r}")
        if any(a < 0.0 or a >= TWO_PI for a in angles):
            raise ConfigurationError(f"Angles must lie in [0, 2*pi): {angles}")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise ConfigurationError(f"Angles must be strictly increasing: {angles}")

    @classmethod
    def uniform(cls, n_rays: int) -> "AngularMeasure":
        """Equal weights on n equally spaced rays."""
        if n_rays < 2:
            raise ConfigurationError(f"An angular measure needs at least 2 rays, got {n_rays}")
        return cls.from_weights([1.0 / n_rays] * n_rays)

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> "AngularMeasure":
        """Rays at equally spaced angles carrying the given weights."""
        n_rays = len(weights)
        angles = tuple(TWO_PI * j / n_rays for j in range(n_rays)) if n_rays else ()
        return cls(angles=angles, weights=tuple(weights))

    @property
    def n_rays(self) -> int:
        return len(self.weights)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def cdf(self) -> np.ndarray:
        """Cumulative weights, last entry pinned to 1."""
        cdf = np.cumsum(self.weight_array)
        cdf[-1] = 1.0
        return cdf

    def mean(self, values: np.ndarray) -> float:
        """Integral of per-ray values against the measure."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_rays,):
            raise ConfigurationError(
                f"Expected {self.n_rays} per-ray values, got shape {values.shape}"
            )
        return float(np.dot(self.weight_array, values))


@dataclass(frozen=True, eq=False)
class StarPoint:
    """
    Point (ray, r) of the star graph.

    Under the glued topology all points with r = 0 are the same point and
    compare equal regardless of their ray index.
    """

    ray: int
    r: Real
    topology: Topology = Topology.SEPARATED

    def __post_init__(self) -> None:
        if isinstance(self.ray, bool) or int(self.ray) != self.ray or self.ray < 0:
            raise ConfigurationError(f"Ray index must be a nonnegative integer, got {self.ray!r}")
        object.__setattr__(self, "ray", int(self.ray))
        if not isinstance(self.r, Real) or not math.isfinite(self.r) or self.r < 0:
            raise ConfigurationError(f"Radial coordinate must be finite and >= 0, got {self.r!r}")

    @property
    def at_origin(self) -> bool:
        return self.r == 0

    def _is_glued_origin(self) -> bool:
        return self.topology is Topology.GLUED and self.at_origin

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StarPoint):
            return NotImplemented
        if self.topology is not other.topology:
            return False
        if self._is_glued_origin() and other._is_glued_origin():
            return True
        return self.ray == other.ray and self.r == other.r

    def __hash__(self) -> int:
        if self._is_glued_origin():
            return hash((Topology.GLUED, "origin"))
        return hash((self.topology, self.ray, self.r))

    def check_ray(self, measure: AngularMeasure) -> "StarPoint":
        """Raise unless the ray index exists under the given measure."""
        if self.ray >= measure.n_rays:
            raise ConfigurationError(
                f"Ray {self.ray} out of range for a measure with {measure.n_rays} rays"
            )
        return self


@dataclass(frozen=True)
class BarrierProfile:
    """
    Piecewise-constant conductivity b on [0, epsilon).

    Beyond the barrier the conductivity is 1. Piece k covers
    [breakpoints[k], breakpoints[k + 1]) with value values[k].
    """

    epsilon: float
    breakpoints: Tuple[float, ...]
    values: Tuple[float, ...]
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None
    _scale_nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        epsilon = float(self.epsilon)
        if not math.isfinite(epsilon) or epsilon <= 0.0:
            raise ConfigurationError(f"Barrier width must be positive, got {self.epsilon!r}")
        breakpoints = [float(b) for b in self.breakpoints]
        values = tuple(float(v) for v in self.values)
        if len(breakpoints) < 2 or len(values) != len(breakpoints) - 1:
            raise ConfigurationError(
                f"Need one value per piece: {len(breakpoints)} breakpoints, {len(values)} values"
            )
        if breakpoints[0] != 0.0:
            raise ConfigurationError(f"Breakpoints must start at 0, got {breakpoints[0]!r}")
        if abs(breakpoints[-1] - epsilon) > 1e-12 * epsilon:
            raise ConfigurationError(
                f"Breakpoints must end at epsilon={epsilon!r}, got {breakpoints[-1]!r}"
            )
        breakpoints[-1] = epsilon
        if any(b <= a for a, b in zip(breakpoints, breakpoints[1:])):
            raise ConfigurationError(f"Breakpoints must be strictly increasing: {breakpoints}")
        if any(not math.isfinite(v) or v <= 0.0 for v in values):
            raise ConfigurationError(f"Conductivities must be positive: {values}")

        lower = min(values) if self.lower_bound is None else float(self.lower_bound)
        upper = max(values) if self.upper_bound is None else float(self.upper_bound)
        if lower <= 0.0 or upper < lower:
            raise ConfigurationError(f"Invalid conductivity bounds [{lower}, {upper}]")
        if any(v < lower or v > upper for v in values):
            raise ConfigurationError(
                f"Conductivities {values} violate bounds [{lower}, {upper}]"
            )

        object.__setattr__(self, "epsilon", epsilon)
        object.__setattr__(self, "breakpoints", tuple(breakpoints))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lower_bound", lower)
        object.__setattr__(self, "upper_bound", upper)
        lengths = np.diff(breakpoints)
        nodes = np.concatenate(([0.0], np.cumsum(lengths / np.asarray(values))))
        object.__setattr__(self, "_scale_nodes", nodes)

    @classmethod
    def constant(cls, value: float, epsilon: float) -> "BarrierProfile":
        return cls(epsilon=epsilon, breakpoints=(0.0, epsilon), values=(value,))

    @property
    def n_pieces(self) -> int:
        return len(self.values)

    @property
    def piece_lengths(self) -> Tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.breakpoints, self.breakpoints[1:]))

    @property
    def is_unit(self) -> bool:
        """True when the barrier conducts exactly like the free medium."""
        return all(v == 1.0 for v in self.values)

    def conductivity(self, r: ArrayLike) -> ArrayLike:
        """Conductivity a(r): b on [0, epsilon), 1 beyond."""
        r_arr = np.asarray(r, dtype=float)
        piece = np.clip(
            np.searchsorted(self.breakpoints, r_arr, side="right") - 1, 0, self.n_pieces - 1
        )
        result = np.where(r_arr >= self.epsilon, 1.0, np.asarray(self.values)[piece])
        return float(result) if result.ndim == 0 else result

    def scale(self, r: ArrayLike) -> ArrayLike:
        """Scale function s(r), the integral of 1/a from 0 to r."""
        r_arr = np.asarray(r, dtype=float)
        inside = np.clip(r_arr, 0.0, self.epsilon)
        piece = np.clip(
            np.searchsorted(self.breakpoints, inside, side="right") - 1, 0, self.n_pieces - 1
        )
        starts = np.asarray(self.breakpoints[:-1])[piece]
        result = (
            self._scale_nodes[piece]
            + (inside - starts) / np.asarray(self.values)[piece]
            + np.maximum(r_arr - self.epsilon, 0.0)
        )
        return float(result) if result.ndim == 0 else result


def sample_angle(measure: AngularMeasure, rng: np.random.Generator) -> int:
    """Draw a ray index with probability equal to its weight."""
    return int(sample_angles(measure, rng, 1)[0])


def sample_angles(measure: AngularMeasure, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorised form of sample_angle."""
    u = rng.random(size)
    rays = np.searchsorted(measure.cdf, u, side="right")
    return np.minimum(rays, measure.n_rays - 1).astype(np.int64)


def resistance(profile: BarrierProfile) -> float:
    """Total thermal resistance of the barrier, the sum of length/b over pieces."""
    return math.fsum(
        length / value for length, value in zip(profile.piece_lengths, profile.values)
    )


def power_law_profile(kappa: float, alpha: float, epsilon: float) -> BarrierProfile:
    """Single-piece barrier with conductivity (kappa * epsilon) ** -alpha."""
    if not (kappa > 0.0 and math.isfinite(kappa)):
        raise ConfigurationError(f"kappa must be positive, got {kappa!r}")
    if not (epsilon > 0.0 and math.isfinite(epsilon)):
        raise ConfigurationError(f"epsilon must be positive, got {epsilon!r}")
    return BarrierProfile.constant((kappa * epsilon) ** (-alpha), epsilon)


def concatenate(inner: BarrierProfile, outer: BarrierProfile) -> BarrierProfile:
    """Barrier made of `inner` followed by `outer`; resistances add."""
    offset = inner.epsilon
    breakpoints = inner.breakpoints + tuple(offset + b for b in outer.breakpoints[1:])
    return BarrierProfile(
        epsilon=inner.epsilon + outer.epsilon,
        breakpoints=breakpoints,
        values=inner.values + outer.values,
        lower_bound=min(inner.lower_bound, outer.lower_bound),
        upper_bound=max(inner.upper_bound, outer.upper_bound),
    )


def shift(point: StarPoint, beta: Real) -> StarPoint:
    """Radial shift (r, ray) -> (r + beta, ray) onto {r >= beta}."""
    if beta < 0:
        raise ConfigurationError(f"Shift must be nonnegative, got {beta!r}")
    return replace(point, r=point.r + beta)


def unshift(point: StarPoint, beta: Real) -> StarPoint:
    """Inverse of shift on {r >= beta}."""
    if beta < 0:
        raise ConfigurationError(f"Shift must be nonnegative, got {beta!r}")
    if point.r < beta:
        raise ConfigurationError(f"Point at r={point.r!r} lies inside the ball of radius {beta!r}")
    return replace(point, r=point.r - beta)


def darning_project(point: StarPoint) -> StarPoint:
    """Collapse the origin circle to one point: same coordinates, glued topology."""
    return replace(point, topology=Topology.GLUED)
