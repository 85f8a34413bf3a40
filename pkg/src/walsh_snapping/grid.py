"""
Radial grids on the truncated star graph and functions living on them.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .domain import AngularMeasure, BarrierProfile, ConfigurationError

ALIGNMENT_TOLERANCE = 1e-9


class AlignmentError(ConfigurationError):
    """Barrier breakpoints do not fall on grid nodes."""
    pass


class ShapeMismatchError(ValueError):
    """Function shape or origin representation conflicts with its use."""
    pass


class OriginMode(Enum):
    """How a grid function stores its value at r = 0."""
    SHARED = "shared"
    PER_RAY = "per_ray"


class FormFamily(Enum):
    REFLECTING = "reflecting"
    SNAPPING = "snapping"
    WALSH = "walsh"
    BARRIER = "barrier"


@dataclass(frozen=True)
class FormKind:
    """One of the four Dirichlet forms, with its parameter where it has one."""

    family: FormFamily
    kappa: Optional[float] = None
    profile: Optional[BarrierProfile] = None

    def __post_init__(self) -> None:
        if self.family is FormFamily.SNAPPING:
            if self.kappa is None or not math.isfinite(self.kappa) or self.kappa <= 0.0:
                raise ConfigurationError(f"Snapping form needs kappa > 0, got {self.kappa!r}")
        elif self.kappa is not None:
            raise ConfigurationError(f"{self.family.value} form takes no kappa")
        if self.family is FormFamily.BARRIER:
            if self.profile is None:
                raise ConfigurationError("Barrier form needs a profile")
        elif self.profile is not None:
            raise ConfigurationError(f"{self.family.value} form takes no profile")

    @classmethod
    def reflecting(cls) -> "FormKind":
        return cls(FormFamily.REFLECTING)

    @classmethod
    def snapping(cls, kappa: float) -> "FormKind":
        return cls(FormFamily.SNAPPING, kappa=float(kappa))

    @classmethod
    def walsh(cls) -> "FormKind":
        return cls(FormFamily.WALSH)

    @classmethod
    def barrier(cls, profile: BarrierProfile) -> "FormKind":
        return cls(FormFamily.BARRIER, profile=profile)

    @property
    def origin_mode(self) -> OriginMode:
        if self.family in (FormFamily.WALSH, FormFamily.BARRIER):
            return OriginMode.SHARED
        return OriginMode.PER_RAY

    @property
    def label(self) -> str:
        if self.family is FormFamily.SNAPPING:
            return f"snapping({self.kappa!r})"
        if self.family is FormFamily.BARRIER:
            return f"barrier(epsilon={self.profile.epsilon!r})"
        return self.family.value


@dataclass(frozen=True)
class Grid:
    """
    Uniform radial grid with M rays and N nodes per ray, node 0 at the origin.
    """

    n_rays: int
    n_nodes: int
    h: float

    def __post_init__(self) -> None:
        if self.n_rays < 2:
            raise ConfigurationError(f"Grid needs at least 2 rays, got {self.n_rays}")
        if self.n_nodes < 3:
            raise ConfigurationError(f"Grid needs at least 3 nodes per ray, got {self.n_nodes}")
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ConfigurationError(f"Grid spacing must be positive, got {self.h!r}")

    @classmethod
    def covering(cls, n_rays: int, length: float, h: float) -> "Grid":
        """Grid whose truncation length is `length`, rounded to whole cells."""
        return cls(n_rays=n_rays, n_nodes=int(round(length / h)) + 1, h=h)

    @property
    def length(self) -> float:
        return (self.n_nodes - 1) * self.h

    @property
    def radii(self) -> np.ndarray:
        return self.h * np.arange(self.n_nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return self.h * (np.arange(self.n_nodes - 1) + 0.5)

    def node_index(self, r: float) -> int:
        """Index of the node at radius r; raises unless r is a node."""
        ratio = r / self.h
        index = int(round(ratio))
        if abs(ratio - index) > ALIGNMENT_TOLERANCE * max(1.0, abs(ratio)) or not 0 <= index < self.n_nodes:
            raise AlignmentError(f"Radius {r!r} is not a node of a grid with h={self.h!r}")
        return index

    def check_aligned(self, profile: BarrierProfile) -> None:
        for breakpoint in profile.breakpoints:
            self.node_index(breakpoint)

    def check_truncation(self, trace_radius: float) -> None:
        if self.length < 10.0 * trace_radius:
            raise ConfigurationError(
                f"Truncation length {self.length!r} is below 10x the trace radius {trace_radius!r}"
            )

    def trapezoid_weights(self) -> np.ndarray:
        """Node weights of the trapezoidal rule for dr on one ray."""
        weights = np.full(self.n_nodes, self.h)
        weights[0] = weights[-1] = 0.5 * self.h
        return weights

    def n_dofs(self, mode: OriginMode) -> int:
        if mode is OriginMode.SHARED:
            return 1 + self.n_rays * (self.n_nodes - 1)
        return self.n_rays * self.n_nodes

    def dof_map(self, mode: OriginMode) -> np.ndarray:
        """M x N array of degree-of-freedom indices."""
        M, N = self.n_rays, self.n_nodes
        if mode is OriginMode.PER_RAY:
            return np.arange(M * N).reshape(M, N)
        dofs = np.empty((M, N), dtype=np.int64)
        dofs[:, 0] = 0
        dofs[:, 1:] = 1 + np.arange(M * (N - 1)).reshape(M, N - 1)
        return dofs


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """Values f_j(r_i) of a function on the grid, one row per ray."""

    values: np.ndarray
    origin_mode: OriginMode

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeMismatchError(f"Expected an M x N array, got shape {values.shape}")
        if self.origin_mode is OriginMode.SHARED and np.any(values[:, 0] != values[0, 0]):
            raise ShapeMismatchError("Shared-origin function has differing origin values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(
        cls,
        grid: Grid,
        fn: Callable[[int, np.ndarray], np.ndarray],
        origin_mode: OriginMode = OriginMode.PER_RAY,
    ) -> "DiscreteFunction":
        """Evaluate fn(ray, radii) on every ray."""
        radii = grid.radii
        values = np.vstack(
            [np.broadcast_to(np.asarray(fn(j, radii), dtype=float), radii.shape) for j in range(grid.n_rays)]
        )
        if origin_mode is OriginMode.SHARED:
            if not np.allclose(values[:, 0], values[0, 0], rtol=1e-12, atol=1e-12):
                raise ShapeMismatchError("Callable is not single-valued at the origin")
            values[:, 0] = values[0, 0]
        return cls(values, origin_mode)

    @classmethod
    def constant(cls, grid: Grid, value: float, origin_mode: OriginMode = OriginMode.PER_RAY) -> "DiscreteFunction":
        return cls(np.full((grid.n_rays, grid.n_nodes), float(value)), origin_mode)

    @classmethod
    def from_dofs(cls, vector: np.ndarray, grid: Grid, origin_mode: OriginMode) -> "DiscreteFunction":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (grid.n_dofs(origin_mode),):
            raise ShapeMismatchError(
                f"Expected {grid.n_dofs(origin_mode)} degrees of freedom, got {vector.shape}"
            )
        return cls(vector[grid.dof_map(origin_mode)], origin_mode)

    @property
    def shape(self):
        return self.values.shape

    @property
    def origin_values(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def has_common_origin(self) -> bool:
        return bool(np.all(self.origin_values == self.origin_values[0]))

    def check_grid(self, grid: Grid) -> None:
        if self.values.shape != (grid.n_rays, grid.n_nodes):
            raise ShapeMismatchError(
                f"Function of shape {self.values.shape} does not live on a "
                f"{grid.n_rays} x {grid.n_nodes} grid"
            )

    def conform(self, mode: OriginMode, measure: AngularMeasure) -> "DiscreteFunction":
        """
        Representation in the requested origin mode.

        Per-ray origin data entering a shared-origin system is replaced by its
        average against the angular measure.
        """
        if mode is self.origin_mode:
            return self
        if mode is OriginMode.PER_RAY:
            return DiscreteFunction(self.values, OriginMode.PER_RAY)
        values = self.values.copy()
        values[:, 0] = measure.mean(self.origin_values)
        return DiscreteFunction(values, OriginMode.SHARED)

    def to_dofs(self, grid: Grid) -> np.ndarray:
        self.check_grid(grid)
        vector = np.empty(grid.n_dofs(self.origin_mode))
        vector[grid.dof_map(self.origin_mode)] = self.values
        return vector

    def __add__(self, other: "DiscreteFunction") -> "DiscreteFunction":
        mode = self.origin_mode if self.origin_mode is other.origin_mode else OriginMode.PER_RAY
        return DiscreteFunction(self.values + other.values, mode)

    def __mul__(self, scalar: float) -> "DiscreteFunction":
        return DiscreteFunction(self.values * float(scalar), self.origin_mode)

    __rmul__ = __mul__


def l2_norm(
    f: DiscreteFunction,
    grid: Grid,
    measure: AngularMeasure,
    exclude_origin: bool = False,
) -> float:
    """L2(dr x eta) norm by the trapezoidal rule."""
    f.check_grid(grid)
    weights = np.outer(measure.weight_array, grid.trapezoid_weights())
    squares = f.values**2
    if exclude_origin:
        weights = weights[:, 1:]
        squares = squares[:, 1:]
    return math.sqrt(float(np.sum(weights * squares)))
