"""
Closed-form evaluators: exit functionals of Brownian motion, hitting kernels
of Walsh Brownian motion for the complement of a ball, the Feller measure of
the trace on that complement, and energies of the four Dirichlet forms on
grid functions.

Hyperbolic ratios are evaluated through exponentials of nonpositive
arguments so that sqrt(2 lambda) * a may reach several hundred without
overflow.
"""

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, special

from .domain import AngularMeasure, BarrierProfile, resistance
from .grid import DiscreteFunction, FormFamily, FormKind, Grid, OriginMode, ShapeMismatchError


class AnalyticDomainError(ValueError):
    """Argument outside the domain of a closed-form expression."""
    pass


def _check_radius(r: float, a: float) -> None:
    if not (a > 0.0 and math.isfinite(a)):
        raise AnalyticDomainError(f"Radius a must be positive, got {a!r}")
    if not (0.0 <= r <= a):
        raise AnalyticDomainError(f"r={r!r} outside [0, {a!r}]")


def _check_lambda(lam: float) -> None:
    if not (lam > 0.0 and math.isfinite(lam)):
        raise AnalyticDomainError(f"lambda must be positive, got {lam!r}")


def _sinh_ratio(x: float, y: float) -> float:
    """sinh(x) / sinh(y) for 0 <= x <= y, y > 0."""
    if x == 0.0:
        return 0.0
    return math.exp(x - y) * math.expm1(-2.0 * x) / math.expm1(-2.0 * y)


def _sech(x: float) -> float:
    e = math.exp(-x)
    return 2.0 * e / (1.0 + e * e)


class ExitLaplace(NamedTuple):
    """Laplace transforms of Brownian exit from an interval."""

    outer_first: float
    """E_r[exp(-lambda tau_a); tau_a < tau_0]"""
    origin_first: float
    """E_r[exp(-lambda tau_0); tau_0 < tau_a]"""
    symmetric_exit: float
    """E_0[exp(-lambda (tau_-a ^ tau_a))]"""


def bm_exit_laplace(r: float, a: float, lam: float) -> ExitLaplace:
    """
    Exit functionals of one-dimensional Brownian motion from (0, a) and (-a, a):
    sinh(kr)/sinh(ka), sinh(k(a-r))/sinh(ka) and 1/cosh(ka) with k = sqrt(2 lambda).
    """
    _check_radius(r, a)
    _check_lambda(lam)
    k = math.sqrt(2.0 * lam)
    return ExitLaplace(
        outer_first=_sinh_ratio(k * r, k * a),
        origin_first=_sinh_ratio(k * (a - r), k * a),
        symmetric_exit=_sech(k * a),
    )


@dataclass(frozen=True)
class HittingKernel:
    """
    Hitting distribution of {|x| >= a} from (r, theta): mass r/a stays on the
    starting ray, the rest is spread over the circle according to eta.
    """

    same_ray_mass: float
    eta_mixture_mass: float
    radius: float

    def expectation(self, boundary_value_on_ray: float, boundary_mean: float) -> float:
        """H_F phi for boundary data with value phi(a, theta) and eta-mean phi_bar."""
        return self.same_ray_mass * boundary_value_on_ray + self.eta_mixture_mass * boundary_mean


@dataclass(frozen=True)
class LambdaKernel:
    """lambda-order hitting kernel, E[exp(-lambda sigma_F); W(sigma_F) in .]."""

    same_ray_coeff: float
    eta_coeff: float
    lam: float
    radius: float

    @property
    def total_mass(self) -> float:
        return self.same_ray_coeff + self.eta_coeff


def hitting_kernel(r: float, a: float) -> HittingKernel:
    _check_radius(r, a)
    same = r / a
    return HittingKernel(same_ray_mass=same, eta_mixture_mass=1.0 - same, radius=a)


def lambda_kernel(r: float, a: float, lam: float) -> LambdaKernel:
    """
    The walk either reaches radius a before the origin (same ray), or hits the
    origin first and then exits the ball of radius a from the origin along an
    eta-distributed ray.
    """
    exits = bm_exit_laplace(r, a, lam)
    return LambdaKernel(
        same_ray_coeff=exits.outer_first,
        eta_coeff=exits.origin_first * exits.symmetric_exit,
        lam=lam,
        radius=a,
    )


@dataclass(frozen=True)
class SnappingParameter:
    """Coupling strength kappa and the radius a = 1/(2 kappa) of its trace picture."""

    kappa: float

    def __post_init__(self) -> None:
        if not (self.kappa > 0.0 and math.isfinite(self.kappa)):
            raise AnalyticDomainError(f"kappa must be positive, got {self.kappa!r}")

    @classmethod
    def from_trace_radius(cls, a: float) -> "SnappingParameter":
        if not (a > 0.0 and math.isfinite(a)):
            raise AnalyticDomainError(f"Trace radius must be positive, got {a!r}")
        return cls(1.0 / (2.0 * a))

    @classmethod
    def from_resistance(cls, gamma_bar: float) -> "SnappingParameter":
        """kappa = 1 / (2 gamma_bar) for a barrier of finite positive resistance."""
        if not (gamma_bar > 0.0 and math.isfinite(gamma_bar)):
            raise AnalyticDomainError(f"Resistance must be finite and positive, got {gamma_bar!r}")
        return cls(1.0 / (2.0 * gamma_bar))

    @property
    def trace_radius(self) -> float:
        return 1.0 / (2.0 * self.kappa)


def feller_pair_weight(a: float) -> float:
    """Density 1/(2a) of the Feller measure of the trace on {|x| >= a} w.r.t. eta x eta."""
    if not (a > 0.0 and math.isfinite(a)):
        raise AnalyticDomainError(f"Radius must be positive, got {a!r}")
    return 1.0 / (2.0 * a)


def trace_coupling_coefficient(a: float) -> float:
    """Coefficient of the jump term of the trace form, 1/(4a); equals kappa/2."""
    return 0.5 * feller_pair_weight(a)


def _feller_integrand(r: float, a: float, k: float) -> float:
    # eta part of H^lambda_F times the full H_F, plus the same-ray part of
    # H^lambda_F against the eta part of H_F
    return _sinh_ratio(k * (a - r), k * a) * _sech(k * a) + (a - r) / a * _sinh_ratio(k * r, k * a)


def feller_limit_quadrature(a: float, lam: float, phi_bar: float = 1.0, psi_bar: float = 1.0) -> float:
    """
    lambda (H^lambda_F phi, H_F psi) over the ball of radius a for boundary data
    phi, psi with disjoint supports on the circle and eta-means phi_bar, psi_bar.
    Increases to feller_pair_weight(a) * phi_bar * psi_bar as lambda grows.
    """
    feller_pair_weight(a)
    _check_lambda(lam)
    k = math.sqrt(2.0 * lam)
    breaks = [p for p in (a - 1.0 / k, 1.0 / k) if 0.0 < p < a]
    value, _ = integrate.quad(
        _feller_integrand,
        0.0,
        a,
        args=(a, k),
        points=sorted(breaks) or None,
        limit=400,
        epsabs=1e-13,
        epsrel=1e-12,
    )
    return lam * phi_bar * psi_bar * value


def feller_limit_closed_form(a: float, lam: float, phi_bar: float = 1.0, psi_bar: float = 1.0) -> float:
    """Closed form of feller_limit_quadrature: (1/(2a) - k / sinh(2ka)) phi_bar psi_bar."""
    weight = feller_pair_weight(a)
    _check_lambda(lam)
    k = math.sqrt(2.0 * lam)
    x = 2.0 * k * a
    deficit = 2.0 * k * math.exp(-x) / -math.expm1(-2.0 * x)
    return (weight - deficit) * phi_bar * psi_bar


def snowb_switch_probability(x: float, outer: float, kappa: float, w_start: Optional[float] = None) -> float:
    """
    Probability that snapping-out Walsh Brownian motion started at radius x is
    reborn at least once before reaching radius `outer`: 2 kappa (R - x) / (1 + 2 kappa R).

    With w_start, the eta-weight of the starting ray, the probability of
    reaching `outer` on a different ray: the last rebirth picks the exit ray
    from eta, so the switch probability is multiplied by 1 - w_start.
    """
    _check_radius(x, outer)
    SnappingParameter(kappa)
    switched = 2.0 * kappa * (outer - x) / (1.0 + 2.0 * kappa * outer)
    if w_start is None:
        return switched
    if not 0.0 <= w_start <= 1.0:
        raise AnalyticDomainError(f"Ray weight must lie in [0, 1], got {w_start!r}")
    return switched * (1.0 - w_start)


def barrier_origin_probability(x: float, outer: float, profile: BarrierProfile) -> float:
    """Gambler's ruin for the barrier diffusion: P_x[reach 0 before outer] = (s(R) - s(x)) / s(R)."""
    _check_radius(x, outer)
    s_outer = profile.scale(outer)
    return (s_outer - profile.scale(x)) / s_outer


def reflected_transition_cdf(x: np.ndarray, r: float, t: float) -> np.ndarray:
    """P_r[|B_t| <= x] for Brownian motion started at r >= 0."""
    if t <= 0.0:
        raise AnalyticDomainError(f"t must be positive, got {t!r}")
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    scale = math.sqrt(t)
    return special.ndtr((x - r) / scale) + special.ndtr((x + r) / scale) - 1.0


def half_normal_cdf(x: np.ndarray, t: float) -> np.ndarray:
    """Law of |N(0, t)|, the radial marginal of Walsh Brownian motion from the origin."""
    return reflected_transition_cdf(x, 0.0, t)


def expected_local_time(t: float) -> float:
    """E_0 of the boundary local time of reflected Brownian motion, normalised against dr."""
    if t < 0.0:
        raise AnalyticDomainError(f"t must be nonnegative, got {t!r}")
    return 2.0 * math.sqrt(2.0 * t / math.pi)


def _check_conforms(kind: FormKind, f: DiscreteFunction, grid: Grid) -> None:
    if f.values.shape != (grid.n_rays, grid.n_nodes):
        raise ShapeMismatchError(
            f"Function of shape {f.values.shape} does not live on a {grid.n_rays} x {grid.n_nodes} grid"
        )
    if kind.origin_mode is OriginMode.SHARED and not f.has_common_origin:
        raise ShapeMismatchError(f"{kind.label} form needs a single origin value")


def cell_conductivity(kind: FormKind, grid: Grid) -> np.ndarray:
    """Conductivity on each grid cell: 1, or the barrier profile at the cell midpoint."""
    if kind.family is FormFamily.BARRIER:
        grid.check_aligned(kind.profile)
        return np.asarray(kind.profile.conductivity(grid.midpoints), dtype=float)
    return np.ones(grid.n_nodes - 1)


def coupling_energy(origin_values: np.ndarray, measure: AngularMeasure, kappa: float) -> float:
    """(kappa/2) sum_j sum_k w_j w_k (f_j - f_k)^2 written as kappa (E[f^2] - E[f]^2)."""
    w = measure.weight_array
    mean = float(np.dot(w, origin_values))
    return kappa * float(np.dot(w, (origin_values - mean) ** 2))


def form_energy(kind: FormKind, f: DiscreteFunction, grid: Grid, measure: AngularMeasure) -> float:
    """
    Quadratic form of the given kind at f:
    1/2 sum_j w_j sum_i a_i (f_j(r_{i+1}) - f_j(r_i))^2 / h, plus the origin
    coupling term for the snapping form.
    """
    _check_conforms(kind, f, grid)
    conductivity = cell_conductivity(kind, grid)
    increments = np.diff(f.values, axis=1)
    per_ray = (increments**2 * conductivity).sum(axis=1) / grid.h
    energy = 0.5 * float(np.dot(measure.weight_array, per_ray))
    if kind.family is FormFamily.SNAPPING:
        energy += coupling_energy(f.origin_values, measure, kind.kappa)
    return energy


def energy_measure_density(f: DiscreteFunction, grid: Grid) -> np.ndarray:
    """Per-cell density (f')^2 of the energy measure, shape M x (N - 1)."""
    f.check_grid(grid)
    return (np.diff(f.values, axis=1) / grid.h) ** 2


def trace_form_energy(u: Callable[[int, np.ndarray], np.ndarray], grid: Grid, measure: AngularMeasure, a: float) -> float:
    """
    Energy of the trace of the Walsh form on {|x| >= a}.

    u(ray, r) is evaluated for r >= a; the trace form is the snapping form
    with kappa = 1/(2a) composed with the shift by a, its jump coefficient
    1/(4a) being kappa/2.
    """
    grid.check_truncation(a)
    parameter = SnappingParameter.from_trace_radius(a)
    f = DiscreteFunction.from_callable(grid, lambda j, r: u(j, r + a), OriginMode.PER_RAY)
    return form_energy(FormKind.snapping(parameter.kappa), f, grid, measure)


def energy_identity_target(
    origin_values: np.ndarray,
    dirichlet_energy: float,
    gamma_bar: float,
    measure: AngularMeasure,
) -> float:
    """1/2 int g'^2 + (1/(2 gamma_bar)) int (g(0, theta) - c)^2 eta(dtheta), c the eta-mean."""
    if not gamma_bar > 0.0:
        raise AnalyticDomainError(f"Resistance must be positive, got {gamma_bar!r}")
    origin_values = np.asarray(origin_values, dtype=float)
    c = measure.mean(origin_values)
    spread = float(np.dot(measure.weight_array, (origin_values - c) ** 2))
    return dirichlet_energy + spread / (2.0 * gamma_bar)


def barrier_resistance(kind: FormKind) -> float:
    """Resistance of a barrier form; 0 for the forms without a barrier."""
    if kind.family is FormFamily.BARRIER:
        return resistance(kind.profile)
    return 0.0
