"""
Sparse assembly of the reflecting, snapping, Walsh and barrier forms on a
truncated star graph, their resolvents, and the convergence sweeps built on
them.

Convergence of a family of forms is observed through strong convergence of
resolvents: for fixed lambda and g the L2 distance between the resolvent of
each member and that of the limit form is tabulated.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import structlog
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from .analytic import cell_conductivity, form_energy
from .domain import AngularMeasure, BarrierProfile, ConfigurationError, resistance
from .grid import (
    DiscreteFunction,
    FormFamily,
    FormKind,
    Grid,
    OriginMode,
    ShapeMismatchError,
    l2_norm,
)

logger = structlog.get_logger(__name__)

DIRECT_SOLVE_LIMIT = 100_000
RESIDUAL_TOLERANCE = 1e-10
ITERATIVE_TOLERANCE = 1e-12
KERNEL_TOLERANCE = 1e-10
EIGEN_SHIFT = -1.0


class SolverError(RuntimeError):
    """Linear solve failed or missed the backward-error tolerance."""
    pass


class EigenSolverError(SolverError):
    """Shift-invert eigensolve did not converge."""
    pass


@dataclass(frozen=True, eq=False)
class FormMatrix:
    """Stiffness matrix A and lumped mass diagonal of one assembled form."""

    kind: FormKind
    grid: Grid
    measure: AngularMeasure
    stiffness: sp.csr_matrix
    mass: np.ndarray

    @property
    def origin_mode(self) -> OriginMode:
        return self.kind.origin_mode

    @property
    def n_dofs(self) -> int:
        return self.mass.size

    def energy(self, f: DiscreteFunction) -> float:
        x = f.to_dofs(self.grid)
        return float(x @ (self.stiffness @ x))


def _check_measure(grid: Grid, measure: AngularMeasure) -> None:
    if measure.n_rays != grid.n_rays:
        raise ShapeMismatchError(
            f"Angular measure has {measure.n_rays} rays, grid has {grid.n_rays}"
        )


def assemble(kind: FormKind, grid: Grid, measure: AngularMeasure) -> FormMatrix:
    """
    Assemble the form from its edge list.

    Each cell contributes c (f_l - f_r)^2 with c = w_j a_i / (2h); the
    snapping form adds kappa (diag(w) - w w^T) on the per-ray origin values.
    The outer node is left free.
    """
    _check_measure(grid, measure)
    mode = kind.origin_mode
    dofs = grid.dof_map(mode)
    w = measure.weight_array
    conductivity = cell_conductivity(kind, grid)

    coefficient = (0.5 / grid.h) * np.outer(w, conductivity)
    left = dofs[:, :-1].ravel()
    right = dofs[:, 1:].ravel()
    c = coefficient.ravel()
    rows = [left, right, left, right]
    cols = [left, right, right, left]
    data = [c, c, -c, -c]

    if kind.family is FormFamily.SNAPPING:
        origin = dofs[:, 0]
        block = kind.kappa * (np.diag(w) - np.outer(w, w))
        rows.append(np.repeat(origin, origin.size))
        cols.append(np.tile(origin, origin.size))
        data.append(block.ravel())

    n = grid.n_dofs(mode)
    stiffness = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    stiffness.sum_duplicates()
    mass = np.bincount(
        dofs.ravel(), weights=np.outer(w, grid.trapezoid_weights()).ravel(), minlength=n
    )
    logger.debug("assemble", kind=kind.label, dofs=n, nnz=stiffness.nnz)
    return FormMatrix(kind=kind, grid=grid, measure=measure, stiffness=stiffness, mass=mass)


def _jacobi(system: sp.csr_matrix) -> spla.LinearOperator:
    inverse_diagonal = 1.0 / system.diagonal()
    return spla.LinearOperator(system.shape, matvec=lambda x: inverse_diagonal * x)


def _iterative_solve(system: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    """Preconditioned CG, retried with a larger iteration cap from the last iterate."""
    preconditioner = _jacobi(system)
    guess = np.zeros_like(rhs)
    try:
        for attempt in Retrying(
            stop=stop_after_attempt(3),
            retry=retry_if_exception_type(SolverError),
        ):
            with attempt:
                maxiter = 10 * rhs.size * attempt.retry_state.attempt_number
                x, info = spla.cg(
                    system, rhs, x0=guess, rtol=ITERATIVE_TOLERANCE, maxiter=maxiter, M=preconditioner
                )
                if info != 0:
                    guess = x
                    raise SolverError(f"CG stopped with info={info} after {maxiter} iterations")
    except RetryError as e:
        raise SolverError(str(e.last_attempt.exception())) from e
    return x


def resolvent(form: FormMatrix, lam: float, g: DiscreteFunction) -> DiscreteFunction:
    """
    Solve (lambda Mm + A) f = Mm g.

    g is brought into the origin mode of the form first; per-ray origin data
    entering a shared-origin form is replaced by its eta-average.
    """
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ConfigurationError(f"lambda must be positive, got {lam!r}")
    grid = form.grid
    g = g.conform(form.origin_mode, form.measure)
    g.check_grid(grid)
    rhs = form.mass * g.to_dofs(grid)
    if not np.any(rhs):
        return DiscreteFunction.from_dofs(np.zeros(form.n_dofs), grid, form.origin_mode)

    system = (sp.diags(lam * form.mass) + form.stiffness).tocsr()
    if form.n_dofs <= DIRECT_SOLVE_LIMIT:
        try:
            x = spla.splu(system.tocsc()).solve(rhs)
        except RuntimeError as e:
            raise SolverError(f"Factorisation of the {form.kind.label} system failed: {e}") from e
    else:
        x = _iterative_solve(system, rhs)

    error = backward_error(system, x, rhs)
    if not error < RESIDUAL_TOLERANCE:
        raise SolverError(
            f"Resolvent of {form.kind.label} has backward error {error:.3e}"
        )
    return DiscreteFunction.from_dofs(x, grid, form.origin_mode)


def backward_error(system: sp.spmatrix, x: np.ndarray, rhs: np.ndarray) -> float:
    """
    Normwise backward error ||S x - b|| / (||S|| ||x|| + ||b||) in the max norm.

    Unlike ||S x - b|| / ||b|| it does not grow with the 1/h^2 spread between
    stiffness and mass entries on fine grids.
    """
    scale = spla.norm(system, np.inf) * np.linalg.norm(x, np.inf) + np.linalg.norm(rhs, np.inf)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(system @ x - rhs, np.inf) / scale)


def resolvent_difference_norm(
    f: DiscreteFunction, reference: DiscreteFunction, grid: Grid, measure: AngularMeasure
) -> float:
    """L2 distance of two resolvents, the origin node excluded."""
    return l2_norm(f + (-1.0) * reference, grid, measure, exclude_origin=True)


def phase_of(gamma_limit: float) -> FormKind:
    """Limit form for barriers whose resistance tends to gamma_limit."""
    if gamma_limit < 0.0 or math.isnan(gamma_limit):
        raise ConfigurationError(f"Limiting resistance must be in [0, inf], got {gamma_limit!r}")
    if math.isinf(gamma_limit):
        return FormKind.reflecting()
    if gamma_limit == 0.0:
        return FormKind.walsh()
    return FormKind.snapping(1.0 / (2.0 * gamma_limit))


def power_law_resistance_limit(kappa: float, alpha: float) -> float:
    """Limit as epsilon -> 0 of the resistance kappa^alpha epsilon^(1 + alpha) of a power-law barrier."""
    if alpha < -1.0:
        return math.inf
    if alpha == -1.0:
        return 1.0 / kappa
    return 0.0


@dataclass(frozen=True)
class SweepRow:
    epsilon: Optional[float]
    gamma_bar: float
    norm: float
    lam: float
    grid_h: float
    grid_length: float
    n_rays: int
    shift_norm: Optional[float] = None
    shift_bound: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "epsilon": "" if self.epsilon is None else self.epsilon,
            "gamma_bar": self.gamma_bar,
            "norm": self.norm,
            "lambda": self.lam,
            "grid_h": self.grid_h,
            "grid_L": self.grid_length,
            "M": self.n_rays,
            "shift_defect": "" if self.shift_norm is None else self.shift_norm,
            "shift_bound": "" if self.shift_bound is None else self.shift_bound,
        }


@dataclass(frozen=True)
class SweepTable:
    """Resolvent distances to a limit form, one row per family member."""

    target: str
    rows: List[SweepRow]
    phase_consistent: bool = True

    @property
    def norms(self) -> np.ndarray:
        return np.array([row.norm for row in self.rows])

    def is_decreasing(self) -> bool:
        norms = self.norms
        return bool(np.all(np.diff(norms) < 0.0))

    def trend_holds(self, ratio: float = 0.5, floor: float = 1e-12) -> bool:
        """
        Norms decrease strictly with last/first below `ratio`, or every norm
        already sits at the floor.
        """
        norms = self.norms
        if norms.size == 0:
            return False
        if np.all(norms <= floor):
            return True
        return self.is_decreasing() and norms[-1] < ratio * norms[0]

    def ratios(self) -> np.ndarray:
        norms = self.norms
        return norms[1:] / norms[:-1]


def _map_tasks(task: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [task(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, items))


def _phase_consistent(gammas: Sequence[float], target: FormKind) -> bool:
    if len(gammas) < 2:
        return True
    first, last = gammas[0], gammas[-1]
    if target.family is FormFamily.WALSH:
        return last < first or last == 0.0
    if target.family is FormFamily.REFLECTING:
        return last > first
    if target.family is FormFamily.SNAPPING:
        limit = 1.0 / (2.0 * target.kappa)
        return abs(last - limit) <= abs(first - limit) + 1e-12 * limit
    return True


def mosco_sweep(
    profiles: Sequence[BarrierProfile],
    target: FormKind,
    lam: float,
    g: DiscreteFunction,
    grid: Grid,
    measure: AngularMeasure,
    workers: int = 1,
    check_product: bool = False,
) -> SweepTable:
    """
    Distance between the barrier resolvents along `profiles` and the resolvent
    of `target`. A warning is logged when the resistances do not move toward
    the phase of the target, and with check_product when epsilon * resistance
    fails to decrease.
    """
    if target.family is FormFamily.BARRIER:
        raise ConfigurationError("Sweep target must be a limit form, not a barrier")
    for profile in profiles:
        grid.check_aligned(profile)
    reference = resolvent(assemble(target, grid, measure), lam, g)
    gammas = [resistance(p) for p in profiles]

    def _row(profile: BarrierProfile) -> SweepRow:
        f = resolvent(assemble(FormKind.barrier(profile), grid, measure), lam, g)
        defect = shift_defect(f, profile, grid, measure)
        return SweepRow(
            epsilon=profile.epsilon,
            gamma_bar=resistance(profile),
            norm=resolvent_difference_norm(f, reference, grid, measure),
            lam=lam,
            grid_h=grid.h,
            grid_length=grid.length,
            n_rays=grid.n_rays,
            shift_norm=defect.norm,
            shift_bound=defect.bound,
        )

    rows = _map_tasks(_row, list(profiles), workers)
    consistent = _phase_consistent(gammas, target)
    if not consistent:
        logger.warning("phase_mismatch", target=target.label, gamma_first=gammas[0], gamma_last=gammas[-1])
    if check_product:
        products = [p.epsilon * gamma for p, gamma in zip(profiles, gammas)]
        if any(b >= a for a, b in zip(products, products[1:])):
            logger.warning("epsilon_resistance_not_vanishing", products=products)
    logger.info("mosco_sweep", target=target.label, norms=[row.norm for row in rows])
    return SweepTable(target=target.label, rows=rows, phase_consistent=consistent)


def gamma_continuity_sweep(
    gammas: Sequence[float],
    gamma_limit: float,
    lam: float,
    g: DiscreteFunction,
    grid: Grid,
    measure: AngularMeasure,
    workers: int = 1,
) -> SweepTable:
    """
    Distance between snapping resolvents with kappa = 1/(2 gamma_n) and the
    resolvent at gamma_limit; an infinite limit is the reflecting form and a
    zero limit the Walsh form.
    """
    for gamma in gammas:
        if not (gamma > 0.0 and math.isfinite(gamma)):
            raise ConfigurationError(f"Sweep resistances must be finite and positive, got {gamma!r}")
    target = phase_of(gamma_limit)
    reference = resolvent(assemble(target, grid, measure), lam, g)

    def _row(gamma: float) -> SweepRow:
        f = resolvent(assemble(phase_of(gamma), grid, measure), lam, g)
        return SweepRow(
            epsilon=None,
            gamma_bar=gamma,
            norm=resolvent_difference_norm(f, reference, grid, measure),
            lam=lam,
            grid_h=grid.h,
            grid_length=grid.length,
            n_rays=grid.n_rays,
        )

    rows = _map_tasks(_row, list(gammas), workers)
    logger.info("gamma_continuity_sweep", target=target.label, norms=[row.norm for row in rows])
    return SweepTable(target=target.label, rows=rows)


class RecoveryVariant(Enum):
    SHIFT = "shift"
    """Push g out by epsilon and interpolate in scale across the barrier."""
    TRUNCATE = "truncate"
    """Keep g beyond epsilon and interpolate from its eta-mean at epsilon."""


def recovery_sequence(
    g: DiscreteFunction,
    profile: BarrierProfile,
    grid: Grid,
    measure: AngularMeasure,
    variant: RecoveryVariant = RecoveryVariant.SHIFT,
) -> DiscreteFunction:
    """
    Barrier-domain function approximating g.

    SHIFT: inside the barrier c + (g(0, j) - c) s(r) / gamma_bar with c the
    eta-mean of the origin values, and g(r - epsilon) beyond. TRUNCATE: the
    same interpolation between the eta-mean of g(epsilon, .) and g(epsilon, j),
    with g left as is beyond epsilon.
    """
    g.check_grid(grid)
    _check_measure(grid, measure)
    grid.check_aligned(profile)
    m = grid.node_index(profile.epsilon)
    gamma_bar = resistance(profile)
    radii = grid.radii
    s = np.asarray(profile.scale(radii[:m]))[np.newaxis, :]
    values = np.empty_like(g.values)

    if variant is RecoveryVariant.SHIFT:
        anchor = g.origin_values
        values[:, m:] = g.values[:, : grid.n_nodes - m]
    else:
        anchor = g.values[:, m]
        values[:, m:] = g.values[:, m:]
    c = measure.mean(anchor)
    values[:, :m] = c + (anchor[:, np.newaxis] - c) * s / gamma_bar
    values[:, 0] = c
    return DiscreteFunction(values, OriginMode.SHARED)


def recovery_energy(g: DiscreteFunction, profile: BarrierProfile, grid: Grid, measure: AngularMeasure) -> float:
    """Barrier energy of the shifted recovery sequence of g."""
    g_n = recovery_sequence(g, profile, grid, measure)
    return form_energy(FormKind.barrier(profile), g_n, grid, measure)


class ShiftDefect(NamedTuple):
    norm: float
    bound: float


def shift_defect(f: DiscreteFunction, profile: BarrierProfile, grid: Grid, measure: AngularMeasure) -> ShiftDefect:
    """
    L2 distance between f and f(. + epsilon) on the nodes where both are
    defined, with the bound sqrt(2 epsilon (gamma_bar + epsilon) E(f, f))
    from the barrier energy.
    """
    kind = FormKind.barrier(profile)
    energy = form_energy(kind, f, grid, measure)
    m = grid.node_index(profile.epsilon)
    n = grid.n_nodes - m
    difference = f.values[:, m:] - f.values[:, :n]
    weights = np.full(n, grid.h)
    weights[0] = weights[-1] = 0.5 * grid.h
    norm = math.sqrt(float(np.dot(measure.weight_array, (difference**2 * weights).sum(axis=1))))
    bound = math.sqrt(2.0 * profile.epsilon * (resistance(profile) + profile.epsilon) * energy)
    return ShiftDefect(norm=norm, bound=bound)


def kernel_dimension(form: FormMatrix, n_eigenvalues: Optional[int] = None) -> int:
    """
    Number of generalised eigenvalues of (A, Mm) below KERNEL_TOLERANCE.

    The symmetric pencil is reduced to D A D with D = Mm^(-1/2) and its lowest
    eigenvalues are found by shift-invert Lanczos around a negative shift.
    """
    k = min(n_eigenvalues or form.grid.n_rays + 2, form.n_dofs - 1)
    scaling = sp.diags(1.0 / np.sqrt(form.mass))
    operator = (scaling @ form.stiffness @ scaling).tocsc()
    try:
        for attempt in Retrying(
            stop=stop_after_attempt(3),
            retry=retry_if_exception_type(spla.ArpackNoConvergence),
        ):
            with attempt:
                number = attempt.retry_state.attempt_number
                eigenvalues = spla.eigsh(
                    operator,
                    k=k,
                    sigma=EIGEN_SHIFT,
                    which="LM",
                    ncv=min(form.n_dofs, max(2 * k + 1, 20) * number),
                    maxiter=1000 * number,
                    return_eigenvectors=False,
                )
    except RetryError as e:
        raise EigenSolverError(f"Eigensolve for {form.kind.label} did not converge") from e
    eigenvalues = np.sort(eigenvalues)
    dimension = int(np.count_nonzero(eigenvalues < KERNEL_TOLERANCE))
    if dimension == k:
        logger.warning("kernel_dimension_saturated", kind=form.kind.label, k=k)
    logger.debug("kernel_dimension", kind=form.kind.label, lowest=eigenvalues[: dimension + 1].tolist())
    return dimension


def export_coordinates(form: FormMatrix, path: Union[str, Path]) -> Path:
    """
    Write the stiffness matrix as 'row col value' lines after a
    '# kind=<label> dofs=<n>' header, then the mass diagonal after '# mass'.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = form.stiffness.tocoo()
    with path.open("w") as handle:
        handle.write(f"# kind={form.kind.label} dofs={form.n_dofs}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            handle.write(f"{i:d} {j:d} {v:.17g}\n")
        handle.write("# mass\n")
        for i, v in enumerate(form.mass):
            handle.write(f"{i:d} {i:d} {v:.17g}\n")
    return path
