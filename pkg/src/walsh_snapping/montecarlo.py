"""
Path simulators for Walsh Brownian motion (WBM), snapping-out Walsh Brownian
motion (SNOWB), the trace of WBM outside a ball, and the thin-barrier
diffusion, plus the one-dimensional exit and local-time samplers used as
oracles.

All simulators are vectorised over a batch of independent paths, and each
batch draws from its own stream (see seeding). A path is therefore fixed by
the seed together with batch_size: changing batch_size regroups the paths
into other streams and changes the sample, while the worker count does not.
The radial part is advanced with the exact transition of reflected Brownian
motion; what happens at the origin during a step is decided from the
Brownian bridge of the underlying free motion.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .domain import (
    AngularMeasure,
    BarrierProfile,
    ConfigurationError,
    StarPoint,
    Topology,
    darning_project,
    sample_angles,
)
from .seeding import (
    BARRIER_STREAM,
    LAPLACE_STREAM,
    SNOWB_STREAM,
    TRACE_STREAM,
    WBM_STREAM,
    check_seed,
    run_batches,
)

logger = structlog.get_logger(__name__)

ORIGIN_RAY = -1
DEFAULT_BATCH_SIZE = 8192


class SimulationError(RuntimeError):
    """Simulator reached an inconsistent state."""
    pass


class ExitKind(Enum):
    """How a jump-chain record was closed."""

    SAME_RAY = 0
    """Target reached without any ray re-selection."""
    REBIRTH = 1
    """Target reached after at least one ray re-selection (or the origin itself when it is the target)."""
    OUTER_BOUNDARY = 2
    """Censored: the simulated horizon ran out first."""

    @property
    def code(self) -> int:
        return self.value


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters shared by all path simulators."""

    measure: AngularMeasure
    dt: float
    horizon: float
    n_paths: int
    seed: int
    kappa: Optional[float] = None
    profile: Optional[BarrierProfile] = None
    outer_radius: Optional[float] = None
    record_times: Optional[Tuple[float, ...]] = None
    batch_size: int = DEFAULT_BATCH_SIZE
    workers: int = 1
    stream_key: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")
        if not (self.horizon > self.dt and math.isfinite(self.horizon)):
            raise ConfigurationError(f"horizon {self.horizon!r} must exceed dt {self.dt!r}")
        if self.n_paths <= 0:
            raise ConfigurationError(f"n_paths must be positive, got {self.n_paths}")
        check_seed(self.seed)
        if self.kappa is not None and not (self.kappa > 0.0 and math.isfinite(self.kappa)):
            raise ConfigurationError(f"kappa must be positive, got {self.kappa!r}")
        if self.outer_radius is not None and not (self.outer_radius > 0.0 and math.isfinite(self.outer_radius)):
            raise ConfigurationError(f"outer_radius must be positive, got {self.outer_radius!r}")
        if self.batch_size <= 0 or self.workers <= 0:
            raise ConfigurationError("batch_size and workers must be positive")
        times = (self.horizon,) if self.record_times is None else tuple(float(t) for t in self.record_times)
        if any(not 0.0 < t <= self.horizon for t in times) or list(times) != sorted(times):
            raise ConfigurationError(f"record_times must be increasing within (0, horizon]: {times}")
        object.__setattr__(self, "record_times", times)

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))

    @property
    def record_steps(self) -> np.ndarray:
        steps = np.rint(np.asarray(self.record_times) / self.dt).astype(np.int64)
        return np.clip(steps, 1, self.n_steps)

    def check_start(self, start: StarPoint) -> None:
        start.check_ray(self.measure)
        if self.outer_radius is not None and start.r >= self.outer_radius:
            raise ConfigurationError(
                f"Start radius {start.r!r} must lie inside the outer radius {self.outer_radius!r}"
            )


@dataclass
class WalkerState:
    """Struct-of-arrays state of a batch of walkers."""

    ray: np.ndarray
    r: np.ndarray
    clock: np.ndarray
    local_time: np.ndarray
    kill_threshold: np.ndarray

    @classmethod
    def start(cls, point: StarPoint, measure: AngularMeasure, rng: np.random.Generator, count: int) -> "WalkerState":
        """
        Walkers at `point`. A start at the origin of the glued star has no ray
        of its own; the first ray is then drawn from the angular measure.
        """
        if point.topology is Topology.GLUED and point.at_origin:
            ray = sample_angles(measure, rng, count)
        else:
            ray = np.full(count, point.ray, dtype=np.int64)
        return cls(
            ray=ray,
            r=np.full(count, float(point.r)),
            clock=np.zeros(count),
            local_time=np.zeros(count),
            kill_threshold=np.full(count, np.inf),
        )


@dataclass
class JumpChainSample:
    """
    Exit records, one per path. `elapsed` is the process time at which the
    record closed; censored records carry the simulated horizon.
    """

    exit_ray: np.ndarray
    exit_radius: np.ndarray
    kind: np.ndarray
    elapsed: np.ndarray
    start_ray: np.ndarray
    switches: np.ndarray

    def __post_init__(self) -> None:
        self.exit_ray = np.asarray(self.exit_ray, dtype=np.int64)
        self.exit_radius = np.asarray(self.exit_radius, dtype=float)
        self.kind = np.asarray(self.kind, dtype=np.int8)
        self.elapsed = np.asarray(self.elapsed, dtype=float)
        self.start_ray = np.asarray(self.start_ray, dtype=np.int64)
        self.switches = np.asarray(self.switches, dtype=np.int64)
        n = self.exit_ray.shape[0]
        for name in ("exit_radius", "kind", "elapsed", "start_ray", "switches"):
            if getattr(self, name).shape != (n,):
                raise SimulationError(f"Jump-chain field {name} does not hold {n} records")
        if n and not np.all(self.elapsed > 0.0):
            raise SimulationError("Jump-chain records must have positive elapsed time")

    def __len__(self) -> int:
        return int(self.exit_ray.shape[0])

    @classmethod
    def concatenate(cls, samples: Sequence["JumpChainSample"]) -> "JumpChainSample":
        if not samples:
            empty = np.zeros(0)
            return cls(empty, empty, empty, empty, empty, empty)
        return cls(
            **{
                name: np.concatenate([getattr(s, name) for s in samples])
                for name in ("exit_ray", "exit_radius", "kind", "elapsed", "start_ray", "switches")
            }
        )

    @property
    def reached(self) -> np.ndarray:
        return self.kind != ExitKind.OUTER_BOUNDARY.code

    def first_passage_times(self) -> np.ndarray:
        """Elapsed times of the records that reached their target."""
        return self.elapsed[self.reached]

    def rows(self):
        for i in range(len(self)):
            yield {
                "record": i,
                "start_ray": int(self.start_ray[i]),
                "exit_ray": int(self.exit_ray[i]),
                "exit_radius": float(self.exit_radius[i]),
                "kind": ExitKind(int(self.kind[i])).name,
                "elapsed": float(self.elapsed[i]),
                "switches": int(self.switches[i]),
            }


@dataclass
class RebirthRecords:
    """Rebirths of snapping-out paths: which path, when, onto which ray, and the local time consumed."""

    path: np.ndarray
    time: np.ndarray
    ray: np.ndarray
    local_time: np.ndarray

    def __len__(self) -> int:
        return int(self.path.shape[0])

    @classmethod
    def concatenate(cls, records: Sequence["RebirthRecords"]) -> "RebirthRecords":
        if not records:
            return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64), np.zeros(0))
        return cls(
            path=np.concatenate([r.path for r in records]),
            time=np.concatenate([r.time for r in records]),
            ray=np.concatenate([r.ray for r in records]),
            local_time=np.concatenate([r.local_time for r in records]),
        )

    def first_per_path(self) -> "RebirthRecords":
        _, first = np.unique(self.path, return_index=True)
        return RebirthRecords(self.path[first], self.time[first], self.ray[first], self.local_time[first])


@dataclass
class PathSample:
    """States of every path at the recorded times, plus per-path summaries."""

    times: np.ndarray
    rays: np.ndarray
    radii: np.ndarray
    topology: Topology = Topology.SEPARATED
    exits: Optional[JumpChainSample] = None
    rebirths: Optional[RebirthRecords] = None
    local_time: Optional[np.ndarray] = None
    duration: Optional[np.ndarray] = None
    input_duration: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return int(self.radii.shape[0])

    def radii_at(self, t: float) -> np.ndarray:
        return self.radii[:, self._time_index(t)]

    def rays_at(self, t: float) -> np.ndarray:
        return self.rays[:, self._time_index(t)]

    def _time_index(self, t: float) -> int:
        index = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[index], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ConfigurationError(f"Time {t!r} was not recorded; recorded times are {self.times}")
        return index

    def points(self, time_index: int) -> List[StarPoint]:
        return [
            StarPoint(max(int(ray), 0), float(r), self.topology)
            for ray, r in zip(self.rays[:, time_index], self.radii[:, time_index])
        ]


def _concatenate_paths(parts: Sequence[PathSample]) -> PathSample:
    def _cat(name: str):
        values = [getattr(p, name) for p in parts]
        return None if values[0] is None else np.concatenate(values)

    exits = [p.exits for p in parts]
    rebirths = [p.rebirths for p in parts]
    return PathSample(
        times=parts[0].times,
        rays=np.concatenate([p.rays for p in parts]),
        radii=np.concatenate([p.radii for p in parts]),
        topology=parts[0].topology,
        exits=None if exits[0] is None else JumpChainSample.concatenate(exits),
        rebirths=None if rebirths[0] is None else RebirthRecords.concatenate(rebirths),
        local_time=_cat("local_time"),
        duration=_cat("duration"),
        input_duration=_cat("input_duration"),
    )


def _free_step(r: np.ndarray, dt: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Endpoint y of the free motion from r and whether its bridge touched 0."""
    y = r + math.sqrt(dt) * rng.standard_normal(r.shape)
    u = rng.random(r.shape)
    with np.errstate(over="ignore"):
        crossing = np.exp(-2.0 * r * np.maximum(y, 0.0) / dt)
    hit = (y <= 0.0) | (u < crossing)
    return y, hit


def reflected_step(r, dt: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    One exact step of reflected Brownian motion from r.

    r' = |r + sqrt(dt) Z|; hit_origin is true when the free Brownian bridge
    from r to r + sqrt(dt) Z crosses 0, which happens with probability
    exp(-2 r y / dt) for an endpoint y > 0 and surely otherwise.
    """
    if not dt > 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt!r}")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    y, hit = _free_step(r, dt, rng)
    return np.abs(y), hit


def local_time_increment(
    r: np.ndarray,
    r_new: np.ndarray,
    dt: float,
    hit: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Boundary local time collected during a step, normalised against dr.

    Given a zero in the step, the symmetric local time L of the free motion
    satisfies P(L > l) = exp(-((s + l)^2 - s^2) / (2 dt)) with s = r + r',
    sampled by inversion. The reflected process collects 2L.
    """
    u = rng.random(r.shape)
    s = r + r_new
    with np.errstate(divide="ignore"):
        ell = -s + np.sqrt(s * s - 2.0 * dt * np.log(u))
    return np.where(hit, 2.0 * ell, 0.0)


def _outer_crossed(
    r: np.ndarray, y: np.ndarray, level: float, dt: float, rng: np.random.Generator
) -> np.ndarray:
    """Whether |free motion| reached `level` during the step."""
    u = rng.random(r.shape)
    with np.errstate(over="ignore"):
        upper = np.where(y >= level, 1.0, np.exp(-2.0 * (level - r) * np.maximum(level - y, 0.0) / dt))
        lower = np.where(y <= -level, 1.0, np.exp(-2.0 * (level + r) * np.maximum(level + y, 0.0) / dt))
    return u < np.minimum(upper + lower, 1.0)


class _Recorder:
    """Snapshots of (ray, r) at the configured step indices."""

    def __init__(self, config: SimConfig, count: int):
        self.steps = config.record_steps
        self.rays = np.empty((count, self.steps.size), dtype=np.int64)
        self.radii = np.empty((count, self.steps.size))
        self._next = 0

    def after_step(self, step: int, ray: np.ndarray, r: np.ndarray) -> None:
        while self._next < self.steps.size and self.steps[self._next] == step:
            self.rays[:, self._next] = ray
            self.radii[:, self._next] = r
            self._next += 1

    def finish(self, ray: np.ndarray, r: np.ndarray) -> None:
        while self._next < self.steps.size:
            self.rays[:, self._next] = ray
            self.radii[:, self._next] = r
            self._next += 1


class _ExitBuffer:
    def __init__(self, start_ray: np.ndarray):
        count = start_ray.size
        self.start_ray = start_ray.copy()
        self.exit_ray = np.full(count, ORIGIN_RAY, dtype=np.int64)
        self.exit_radius = np.zeros(count)
        self.kind = np.full(count, ExitKind.OUTER_BOUNDARY.code, dtype=np.int8)
        self.elapsed = np.zeros(count)
        self.open = np.ones(count, dtype=bool)

    def close(self, idx: np.ndarray, ray: np.ndarray, radius: float, switched: np.ndarray, elapsed: np.ndarray) -> None:
        self.exit_ray[idx] = ray
        self.exit_radius[idx] = radius
        self.kind[idx] = np.where(switched, ExitKind.REBIRTH.code, ExitKind.SAME_RAY.code)
        self.elapsed[idx] = elapsed
        self.open[idx] = False

    def finish(self, ray: np.ndarray, radius: np.ndarray, horizon: float, switches: np.ndarray) -> JumpChainSample:
        idx = np.flatnonzero(self.open)
        self.exit_ray[idx] = ray[idx]
        self.exit_radius[idx] = radius[idx]
        self.elapsed[idx] = horizon
        return JumpChainSample(
            exit_ray=self.exit_ray,
            exit_radius=self.exit_radius,
            kind=self.kind,
            elapsed=self.elapsed,
            start_ray=self.start_ray,
            switches=switches,
        )


def _run(batch, config: SimConfig, stream: int) -> PathSample:
    parts = run_batches(
        batch,
        config.n_paths,
        config.batch_size,
        config.seed,
        (stream,) + tuple(config.stream_key),
        config.workers,
    )
    return _concatenate_paths(parts)


def wbm_path(start: StarPoint, config: SimConfig) -> PathSample:
    """
    Walsh Brownian motion from `start`. Whenever a step contains a visit to the
    origin the ray at the end of the step is drawn afresh from the angular
    measure. With an outer radius, paths are absorbed there and exit records
    are returned.
    """
    config.check_start(start)
    measure = config.measure
    dt = config.dt
    outer = config.outer_radius

    def batch(rng: np.random.Generator, first: int, count: int) -> PathSample:
        state = WalkerState.start(start, measure, rng, count)
        switches = np.zeros(count, dtype=np.int64)
        recorder = _Recorder(config, count)
        exits = _ExitBuffer(state.ray) if outer is not None else None
        active = np.ones(count, dtype=bool)

        for step in range(1, config.n_steps + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            r_old = state.r[idx]
            y, hit = _free_step(r_old, dt, rng)
            hit_idx = idx[hit]
            state.ray[hit_idx] = sample_angles(measure, rng, hit_idx.size)
            switches[hit_idx] += 1
            state.r[idx] = np.abs(y)
            state.clock[idx] += dt
            if exits is not None:
                crossed = _outer_crossed(r_old, y, outer, dt, rng)
                done = idx[crossed]
                exits.close(done, state.ray[done], outer, switches[done] > 0, (step - 0.5) * dt)
                state.r[done] = outer
                active[done] = False
            recorder.after_step(step, state.ray, state.r)
        recorder.finish(state.ray, state.r)

        return PathSample(
            times=config.record_steps * dt,
            rays=recorder.rays,
            radii=recorder.radii,
            exits=None if exits is None else exits.finish(state.ray, state.r, config.horizon, switches),
            duration=state.clock.copy(),
            input_duration=state.clock.copy(),
        )

    sample = _run(batch, config, WBM_STREAM)
    logger.info("wbm_path", n_paths=config.n_paths, dt=dt, horizon=config.horizon, outer=outer)
    return sample


def snowb_path(start: StarPoint, config: SimConfig, stop_at_first_rebirth: bool = False) -> PathSample:
    """
    Snapping-out Walsh Brownian motion from `start`.

    Each ray carries reflected Brownian motion whose boundary local time is
    accumulated; once it exceeds an Exp(kappa) threshold the path is reborn,
    with no time elapsing, at the origin of a ray drawn from the angular
    measure. Local time collected after the death within the same step is
    carried into the new life.
    """
    if config.kappa is None:
        raise ConfigurationError("snowb_path needs kappa")
    config.check_start(start)
    measure = config.measure
    dt = config.dt
    outer = config.outer_radius
    mean_threshold = 1.0 / config.kappa

    def batch(rng: np.random.Generator, first: int, count: int) -> PathSample:
        state = WalkerState.start(start, measure, rng, count)
        state.kill_threshold = rng.exponential(mean_threshold, count)
        cumulative = np.zeros(count)
        rebirth_count = np.zeros(count, dtype=np.int64)
        recorder = _Recorder(config, count)
        exits = _ExitBuffer(state.ray) if outer is not None else None
        active = np.ones(count, dtype=bool)
        reborn: List[RebirthRecords] = []

        for step in range(1, config.n_steps + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            r_old = state.r[idx]
            y, hit = _free_step(r_old, dt, rng)
            r_new = np.abs(y)
            collected = local_time_increment(r_old, r_new, dt, hit, rng)
            state.local_time[idx] += collected
            cumulative[idx] += collected
            state.r[idx] = r_new
            state.clock[idx] += dt

            while True:
                candidates = idx[active[idx]]
                dead = candidates[state.local_time[candidates] >= state.kill_threshold[candidates]]
                if dead.size == 0:
                    break
                consumed = state.kill_threshold[dead].copy()
                state.local_time[dead] -= consumed
                state.kill_threshold[dead] = rng.exponential(mean_threshold, dead.size)
                state.ray[dead] = sample_angles(measure, rng, dead.size)
                rebirth_count[dead] += 1
                reborn.append(
                    RebirthRecords(
                        path=first + dead,
                        time=np.full(dead.size, step * dt),
                        ray=state.ray[dead].copy(),
                        local_time=consumed,
                    )
                )
                if stop_at_first_rebirth:
                    active[dead] = False

            if exits is not None:
                live = active[idx]
                crossed = _outer_crossed(r_old, y, outer, dt, rng) & live
                done = idx[crossed]
                exits.close(done, state.ray[done], outer, rebirth_count[done] > 0, (step - 0.5) * dt)
                state.r[done] = outer
                active[done] = False
            recorder.after_step(step, state.ray, state.r)
        recorder.finish(state.ray, state.r)

        return PathSample(
            times=config.record_steps * dt,
            rays=recorder.rays,
            radii=recorder.radii,
            exits=None if exits is None else exits.finish(state.ray, state.r, config.horizon, rebirth_count),
            rebirths=RebirthRecords.concatenate(reborn),
            local_time=cumulative,
            duration=state.clock.copy(),
            input_duration=state.clock.copy(),
        )

    sample = _run(batch, config, SNOWB_STREAM)
    logger.info(
        "snowb_path",
        n_paths=config.n_paths,
        kappa=config.kappa,
        rebirths=len(sample.rebirths),
        dt=dt,
    )
    return sample


def _fraction_above(r0: np.ndarray, r1: np.ndarray, level: float) -> np.ndarray:
    """Fraction of a step spent at radius >= level, linear in between the endpoints."""
    hi = np.maximum(r0, r1)
    lo = np.minimum(r0, r1)
    span = np.where(hi > lo, hi - lo, 1.0)
    straddle = np.clip((hi - level) / span, 0.0, 1.0)
    return np.where(lo >= level, 1.0, np.where(hi < level, 0.0, straddle))


def trace_wbm_path(start: StarPoint, a: float, config: SimConfig) -> PathSample:
    """
    Walsh Brownian motion watched only while outside the ball of radius a.

    `start` and all outputs are in shifted coordinates: radius r here is
    radius r + a of the underlying motion. The output clock counts only time
    spent at radius >= a. Record times and the horizon of exit records refer
    to that clock; `input_duration` holds the clock of the underlying motion.
    """
    if not (a > 0.0 and math.isfinite(a)):
        raise ConfigurationError(f"Trace radius must be positive, got {a!r}")
    config.check_start(start)
    measure = config.measure
    dt = config.dt
    level = None if config.outer_radius is None else config.outer_radius + a
    record_times = np.asarray(config.record_times)

    def batch(rng: np.random.Generator, first: int, count: int) -> PathSample:
        state = WalkerState.start(start, measure, rng, count)
        state.r += a
        trace_clock = np.zeros(count)
        switches = np.zeros(count, dtype=np.int64)
        rays = np.empty((count, record_times.size), dtype=np.int64)
        radii = np.empty((count, record_times.size))
        recorded = np.zeros((count, record_times.size), dtype=bool)
        exits = _ExitBuffer(state.ray) if level is not None else None
        active = np.ones(count, dtype=bool)

        for step in range(1, config.n_steps + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            r_old = state.r[idx]
            y, hit = _free_step(r_old, dt, rng)
            r_new = np.abs(y)
            hit_idx = idx[hit]
            state.ray[hit_idx] = sample_angles(measure, rng, hit_idx.size)
            switches[hit_idx] += 1
            gained = _fraction_above(r_old, r_new, a) * dt
            before = trace_clock[idx].copy()
            trace_clock[idx] += gained
            state.r[idx] = r_new
            state.clock[idx] += dt
            if exits is not None:
                crossed = _outer_crossed(r_old, y, level, dt, rng)
                done = idx[crossed]
                exits.close(
                    done,
                    state.ray[done],
                    config.outer_radius,
                    switches[done] > 0,
                    before[crossed] + 0.5 * gained[crossed],
                )
                state.r[done] = level
                active[done] = False
            for k, t in enumerate(record_times):
                due = idx[~recorded[idx, k] & (trace_clock[idx] >= t)]
                rays[due, k] = state.ray[due]
                radii[due, k] = np.maximum(state.r[due] - a, 0.0)
                recorded[due, k] = True

        for k in range(record_times.size):
            pending = ~recorded[:, k]
            rays[pending, k] = state.ray[pending]
            radii[pending, k] = np.maximum(state.r[pending] - a, 0.0)

        return PathSample(
            times=record_times.copy(),
            rays=rays,
            radii=radii,
            exits=None if exits is None else exits.finish(
                state.ray, np.maximum(state.r - a, 0.0), config.horizon, switches
            ),
            duration=trace_clock,
            input_duration=state.clock.copy(),
        )

    sample = _run(batch, config, TRACE_STREAM)
    logger.info("trace_wbm_path", n_paths=config.n_paths, a=a, dt=dt)
    return sample


def darned(sample: PathSample) -> PathSample:
    """
    Darning applied to every recorded state: the topology becomes glued and
    states at the origin lose their ray.
    """
    rays = np.where(sample.radii == 0.0, ORIGIN_RAY, sample.rays)
    projected = darning_project(StarPoint(0, 0.0, sample.topology))
    return PathSample(
        times=sample.times,
        rays=rays,
        radii=sample.radii,
        topology=projected.topology,
        exits=sample.exits,
        rebirths=sample.rebirths,
        local_time=sample.local_time,
        duration=sample.duration,
        input_duration=sample.input_duration,
    )


@dataclass(frozen=True)
class BarrierChain:
    """Node set and transition data of the scale/speed random walk for a barrier."""

    nodes: np.ndarray
    p_left: np.ndarray
    duration: np.ndarray

    @property
    def last(self) -> int:
        return self.nodes.size - 1


def _aligned_count(length: float, h: float, what: str) -> int:
    ratio = length / h
    count = int(round(ratio))
    if count < 1 or abs(ratio - count) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"{what} of length {length!r} is not a whole number of steps {h!r}")
    return count


def barrier_chain(profile: BarrierProfile, grid_h: float, outer: float, outer_h: Optional[float] = None) -> BarrierChain:
    """
    Random walk on the nodes of the barrier grid that is exact for the
    embedded chain of the diffusion 1/2 (a u')': from node i it steps left
    with probability (s_{i+1} - s_i) / (s_{i+1} - s_{i-1}), s the scale
    function, and the expected holding time is the interval Green function
    integrated against the speed measure 2 dr.
    """
    if not grid_h > 0.0:
        raise ConfigurationError(f"grid_h must be positive, got {grid_h!r}")
    for breakpoint in profile.breakpoints[1:]:
        _aligned_count(breakpoint, grid_h, "Barrier piece")
    if outer <= profile.epsilon:
        raise ConfigurationError(f"Outer radius {outer!r} must lie beyond the barrier {profile.epsilon!r}")
    outer_h = grid_h if outer_h is None else outer_h
    if not outer_h > 0.0:
        raise ConfigurationError(f"outer_h must be positive, got {outer_h!r}")
    n_inner = _aligned_count(profile.epsilon, grid_h, "Barrier")
    # outer nodes count back from the outer radius; the first cell past the
    # barrier takes the remainder
    span = outer - profile.epsilon
    n_outer = int(math.floor(span / outer_h + 1e-9))
    outer_nodes = outer - outer_h * np.arange(n_outer, -1, -1, dtype=float)
    if outer_nodes[0] - profile.epsilon <= 1e-9 * outer_h:
        outer_nodes[0] = profile.epsilon
    else:
        outer_nodes = np.concatenate(([profile.epsilon], outer_nodes))
    nodes = np.concatenate((grid_h * np.arange(n_inner), outer_nodes))
    nodes[-1] = outer

    s = np.asarray(profile.scale(nodes))
    widths = np.diff(nodes)
    conductivity = np.asarray(profile.conductivity(0.5 * (nodes[:-1] + nodes[1:])))
    ds = np.diff(s)

    p_left = np.zeros(nodes.size)
    duration = np.zeros(nodes.size)
    ds_left, ds_right = ds[:-1], ds[1:]
    green_left = widths[:-1] ** 2 / (2.0 * conductivity[:-1])
    green_right = widths[1:] ** 2 / (2.0 * conductivity[1:])
    total = ds_left + ds_right
    p_left[1:-1] = ds_right / total
    duration[1:-1] = 2.0 * (ds_right * green_left + ds_left * green_right) / total
    duration[0] = widths[0] ** 2 / conductivity[0]
    return BarrierChain(nodes=nodes, p_left=p_left, duration=duration)


def barrier_walk(
    start: StarPoint,
    profile: BarrierProfile,
    grid_h: float,
    config: SimConfig,
    outer_h: Optional[float] = None,
    stop_at_origin: bool = False,
) -> JumpChainSample:
    """
    Jump chain of the thin-barrier diffusion, absorbed at the outer radius.

    Inside the barrier nodes are grid_h apart. Beyond it they sit outer_h
    apart (default grid_h) counting back from the outer radius, so the start
    must be a barrier node or R - k outer_h. At the origin node the next ray
    is drawn from the angular measure. With stop_at_origin the walk instead
    ends on its first arrival at the origin, recorded as a REBIRTH at radius 0.
    """
    if config.outer_radius is None:
        raise ConfigurationError("barrier_walk needs an outer radius")
    config.check_start(start)
    chain = barrier_chain(profile, grid_h, config.outer_radius, outer_h)
    matches = np.flatnonzero(np.isclose(chain.nodes, float(start.r), rtol=0.0, atol=1e-9 * max(grid_h, 1.0)))
    if matches.size != 1:
        raise ConfigurationError(f"Start radius {start.r!r} is not a node of the barrier walk")
    start_node = int(matches[0])
    if stop_at_origin and start_node == 0:
        raise ConfigurationError("A walk stopped at the origin cannot start there")
    measure = config.measure
    last = chain.last

    def batch(rng: np.random.Generator, first: int, count: int) -> JumpChainSample:
        state = WalkerState.start(start, measure, rng, count)
        node = np.full(count, start_node, dtype=np.int64)
        switches = np.zeros(count, dtype=np.int64)
        exits = _ExitBuffer(state.ray)
        active = np.ones(count, dtype=bool)

        while True:
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            here = node[idx]
            u = rng.random(idx.size)
            at_origin = here == 0
            if stop_at_origin and at_origin.any():
                done = idx[at_origin]
                exits.close(done, state.ray[done], 0.0, np.ones(done.size, dtype=bool), state.clock[done])
                active[done] = False
                keep = ~at_origin
                idx, here, u, at_origin = idx[keep], here[keep], u[keep], at_origin[keep]
            origin_idx = idx[at_origin]
            state.ray[origin_idx] = sample_angles(measure, rng, origin_idx.size)
            switches[origin_idx] += 1
            state.clock[idx] += chain.duration[here]
            step = np.where(u < chain.p_left[here], -1, 1)
            node[idx] = np.where(at_origin, 1, here + step)

            arrived = idx[node[idx] == last]
            exits.close(arrived, state.ray[arrived], chain.nodes[last], switches[arrived] > 0, state.clock[arrived])
            active[arrived] = False
            expired = idx[active[idx] & (state.clock[idx] >= config.horizon)]
            active[expired] = False

        return exits.finish(state.ray, chain.nodes[node], config.horizon, switches)

    parts = run_batches(
        batch,
        config.n_paths,
        config.batch_size,
        config.seed,
        (BARRIER_STREAM,) + tuple(config.stream_key),
        config.workers,
    )
    sample = JumpChainSample.concatenate(parts)
    logger.info(
        "barrier_walk",
        n_paths=config.n_paths,
        epsilon=profile.epsilon,
        nodes=chain.nodes.size,
        censored=int(np.count_nonzero(~sample.reached)),
    )
    return sample


@dataclass(frozen=True)
class LaplaceEstimate:
    """Monte Carlo exit functionals with their standard errors."""

    outer_first: float
    outer_first_se: float
    origin_first: float
    origin_first_se: float
    symmetric_exit: float
    symmetric_exit_se: float
    censored: int = 0


def _two_sided_exit(
    x0: float, lo: float, hi: float, dt: float, n_steps: int, rng: np.random.Generator, count: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Exit times and sides (-1 low, +1 high, 0 censored) of free Brownian motion from (lo, hi)."""
    x = np.full(count, float(x0))
    time = np.zeros(count)
    side = np.zeros(count, dtype=np.int8)
    active = np.ones(count, dtype=bool)
    sqrt_dt = math.sqrt(dt)
    for step in range(1, n_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x_old = x[idx]
        y = x_old + sqrt_dt * rng.standard_normal(idx.size)
        u_lo = rng.random(idx.size)
        u_hi = rng.random(idx.size)
        with np.errstate(over="ignore"):
            p_lo = np.where(y <= lo, 1.0, np.exp(-2.0 * (x_old - lo) * np.maximum(y - lo, 0.0) / dt))
            p_hi = np.where(y >= hi, 1.0, np.exp(-2.0 * (hi - x_old) * np.maximum(hi - y, 0.0) / dt))
        exit_lo = u_lo < p_lo
        exit_hi = ~exit_lo & (u_hi < p_hi)
        x[idx] = y
        for mask, value in ((exit_lo, -1), (exit_hi, 1)):
            done = idx[mask]
            side[done] = value
            time[done] = (step - 0.5) * dt
            active[done] = False
    return time, side


def exit_laplace_mc(r: float, a: float, lam: float, config: SimConfig) -> LaplaceEstimate:
    """
    Monte Carlo counterparts of the three exit functionals: from r in (0, a)
    the discounted probabilities of leaving at a and at 0, and from 0 the
    discounted exit from (-a, a).
    """
    if not 0.0 <= r <= a:
        raise ConfigurationError(f"r={r!r} outside [0, {a!r}]")
    if not lam > 0.0:
        raise ConfigurationError(f"lambda must be positive, got {lam!r}")

    def batch(rng: np.random.Generator, first: int, count: int):
        time, side = _two_sided_exit(r, 0.0, a, config.dt, config.n_steps, rng, count)
        sym_time, sym_side = _two_sided_exit(0.0, -a, a, config.dt, config.n_steps, rng, count)
        discount = np.exp(-lam * time)
        sym_discount = np.where(sym_side != 0, np.exp(-lam * sym_time), 0.0)
        return (
            np.where(side == 1, discount, 0.0),
            np.where(side == -1, discount, 0.0),
            sym_discount,
            int(np.count_nonzero(side == 0) + np.count_nonzero(sym_side == 0)),
        )

    parts = run_batches(
        batch,
        config.n_paths,
        config.batch_size,
        config.seed,
        (LAPLACE_STREAM,) + tuple(config.stream_key),
        config.workers,
    )
    columns = [np.concatenate([p[k] for p in parts]) for k in range(3)]
    n = columns[0].size
    means = [float(c.mean()) for c in columns]
    ses = [float(c.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0 for c in columns]
    censored = sum(p[3] for p in parts)
    logger.info("exit_laplace_mc", n_paths=n, r=r, a=a, lam=lam, censored=censored)
    return LaplaceEstimate(means[0], ses[0], means[1], ses[1], means[2], ses[2], censored)


def random_walk_local_time(t: float, grid_h: float, n_reps: int, rng: np.random.Generator) -> np.ndarray:
    """
    Local time at 0 of reflected simple random walk on the grid h Z+ with time
    steps h^2, accumulated over n = t / h^2 steps: 2 h times the number of
    visits to 0 among steps 0 .. n - 1.

    Visits are generated from the return times of simple random walk,
    P(T > 2m) = C(2m, m) / 4^m, sampled by inversion.
    """
    if not (t > 0.0 and grid_h > 0.0 and n_reps > 0):
        raise ConfigurationError("random_walk_local_time needs t, grid_h and n_reps positive")
    n_steps = int(round(t / grid_h**2))
    m_max = n_steps // 2 + 1
    m = np.arange(1, m_max + 1)
    tail = np.concatenate(([1.0], np.cumprod((2.0 * m - 1.0) / (2.0 * m))))
    descending = -tail

    visits = np.ones(n_reps, dtype=np.int64)
    elapsed = np.zeros(n_reps, dtype=np.int64)
    active = np.ones(n_reps, dtype=bool)
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        u = rng.random(idx.size)
        gap_half = np.searchsorted(descending, -u, side="left")
        beyond = gap_half >= tail.size
        elapsed[idx] += np.where(beyond, n_steps, 2 * gap_half)
        returned = ~beyond & (elapsed[idx] < n_steps)
        visits[idx[returned]] += 1
        active[idx[~returned]] = False
    return 2.0 * grid_h * visits


def first_passage_times(sample: PathSample) -> np.ndarray:
    if sample.exits is None:
        raise ConfigurationError("Sample was simulated without an outer radius")
    return sample.exits.first_passage_times()
