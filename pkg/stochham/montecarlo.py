"""Ensembles of paths and the statistics taken over them.

Per-path seeds are ``mix_seed(master_seed, i)``: the first 64-bit word of
``numpy.random.SeedSequence([master_seed, i]).generate_state``. Paths are
integrated in batches whose size depends only on the EnsembleSpec and the settings, and
batches are reduced in path order, so an ensemble does not depend on the number
of workers.
"""
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from core.config import get_settings
from core.exceptions import (
    AllPathsExplodedError,
    ConfigurationError,
    GridMismatchError,
    ResourceLimitError,
)
from core.logger import get_simulation_logger
from stochham.integrators import (
    STATUS_ORDER,
    IntegratorConfig,
    Region,
    Trajectory,
    TrajectoryStatus,
    integrate_batch,
)
from stochham.noise import grid_steps
from stochham.structures import ScalarField
from stochham.systems import INITIAL_STREAM, SystemSpec

logger = get_simulation_logger()

Array = np.ndarray
InitialCondition = Union[Array, Sequence[float], Callable[[np.random.Generator], Array], None]

EXPLODED = STATUS_ORDER.index(TrajectoryStatus.EXPLODED)
EXITED = STATUS_ORDER.index(TrajectoryStatus.EXITED)


def mix_seed(master_seed: int, index: int) -> int:
    """Seed of path ``index`` derived from the master seed."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def ball(center: Sequence[float], radius: float) -> Region:
    """Open ball region ``|z - center| < radius``."""
    center = np.asarray(center, dtype=float)
    return lambda z: np.linalg.norm(np.asarray(z) - center, axis=-1) < radius


class Estimate(NamedTuple):
    mean: float
    stderr: float
    n_used: int
    exploded: int


@dataclass(frozen=True)
class EnsembleSpec:
    """What to simulate: path count, seeding, horizon and integrator.

    ``initial`` is a fixed state, a sampler called with the path's own generator,
    or None for the system's default initial state.
    """

    n_paths: int
    master_seed: int
    T: float
    dt: float
    initial: InitialCondition = None
    cfg: Optional[IntegratorConfig] = None
    record_stride: int = 1
    stop_region: Optional[Region] = None

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigurationError(f"n_paths must be at least 1, got {self.n_paths}")
        if self.master_seed < 0:
            raise ConfigurationError(f"master_seed must be non-negative, got {self.master_seed}")
        if self.record_stride < 1:
            raise ConfigurationError(f"record_stride must be at least 1, got {self.record_stride}")
        cfg = self.cfg or IntegratorConfig(dt=self.dt)
        if abs(cfg.dt - self.dt) > 1e-12 * self.dt:
            raise ConfigurationError(f"integrator dt={cfg.dt} differs from ensemble dt={self.dt}")
        object.__setattr__(self, "cfg", cfg)
        if self.n_steps % self.record_stride:
            raise ConfigurationError(
                f"record_stride {self.record_stride} does not divide {self.n_steps} steps"
            )

    @property
    def n_steps(self) -> int:
        return grid_steps(self.T, self.dt, self.cfg.max_steps if self.cfg else None)

    def path_seeds(self) -> Tuple[int, ...]:
        return tuple(mix_seed(self.master_seed, i) for i in range(self.n_paths))

    def with_changes(self, **changes: Any) -> "EnsembleSpec":
        if "dt" in changes and "cfg" not in changes:
            changes["cfg"] = replace(self.cfg, dt=changes["dt"])
        return replace(self, **changes)


@dataclass(frozen=True)
class Ensemble:
    """Recorded states of every path on the recorded grid.

    ``stop_index`` holds the full-grid step at which a path exited or exploded
    (-1 when it completed); stopped paths keep their last valid state afterwards.
    """

    times: Array
    states: Array
    driver_values: Array
    status: Array
    stop_index: Array
    seeds: Tuple[int, ...]
    dt: float
    record_stride: int = 1

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def exploded_mask(self) -> Array:
        return self.status == EXPLODED

    @property
    def exited_mask(self) -> Array:
        return self.status == EXITED

    @property
    def valid_mask(self) -> Array:
        return ~self.exploded_mask

    @property
    def exploded_count(self) -> int:
        return int(self.exploded_mask.sum())

    @property
    def exploded_fraction(self) -> float:
        return self.exploded_count / self.n_paths

    @property
    def initial_states(self) -> Array:
        return self.states[:, 0]

    def time_index(self, t: float) -> int:
        """Recorded index of time ``t``; t must lie on the recorded grid."""
        step = self.dt * self.record_stride
        index = int(round(t / step))
        if index < 0 or index >= self.times.size or abs(index * step - t) > 1e-9 * max(step, abs(t)):
            raise GridMismatchError(f"t={t} is not on the recorded grid (step {step})")
        return index

    def values(self, f: ScalarField) -> Array:
        """``f`` along every recorded state, shape (P, M)."""
        return f(self.states)

    def trajectory(self, i: int) -> Trajectory:
        status = STATUS_ORDER[int(self.status[i])]
        stop = int(self.stop_index[i])
        return Trajectory(
            times=self.times.copy(),
            states=self.states[i].copy(),
            status=status,
            stop_index=None if stop < 0 else stop,
            noise_seed=self.seeds[i],
        )

    def exit_histogram(self, edges: Optional[Sequence[float]] = None) -> Dict[str, Any]:
        """Status counts and a histogram of exit times."""
        counts = {s.value: int(np.sum(self.status == STATUS_ORDER.index(s))) for s in TrajectoryStatus}
        exit_times = self.stop_index[self.exited_mask] * self.dt
        edges = np.asarray(self.times if edges is None else edges, dtype=float)
        hist, _ = np.histogram(exit_times, bins=edges) if edges.size > 1 else (np.zeros(0), None)
        counts["exit_time_edges"] = [float(x) for x in edges]
        counts["exit_time_counts"] = [int(x) for x in hist]
        return counts

    def checkpoint_indices(self, n_checkpoints: int) -> Array:
        last = self.times.size - 1
        n_checkpoints = max(1, min(n_checkpoints, last)) if last else 0
        if n_checkpoints == 0:
            return np.array([0])
        return np.unique(np.round(np.linspace(0, last, n_checkpoints + 1)).astype(int))

    def summary(self, observables: Mapping[str, ScalarField], n_checkpoints: int = 20) -> Dict[str, Any]:
        """Per-checkpoint means and standard errors of each observable."""
        indices = self.checkpoint_indices(n_checkpoints)
        checkpoints = [float(self.times[i]) for i in indices]
        means: Dict[str, List[float]] = {}
        stderrs: Dict[str, List[float]] = {}
        for name, f in observables.items():
            estimates = [expectation(f, self, t) for t in checkpoints]
            means[name] = [e.mean for e in estimates]
            stderrs[name] = [e.stderr for e in estimates]
        return {
            "n_paths": self.n_paths,
            "dt": self.dt,
            "checkpoints": checkpoints,
            "means": means,
            "stderrs": stderrs,
            "exit_histogram": self.exit_histogram([self.times[i] for i in indices]),
            "exploded_count": self.exploded_count,
            "seeds": [int(s) for s in self.seeds],
        }


def _batch_size(n_steps: int, r: int) -> int:
    settings = get_settings()
    by_memory = max(1, settings.MAX_BATCH_INCREMENTS // max(1, n_steps * max(r, 1)))
    return max(1, min(settings.BATCH_SIZE, by_memory))


def _initial_state(system: SystemSpec, spec: EnsembleSpec, seed: int) -> Array:
    if spec.initial is None:
        return system.initial_state
    if callable(spec.initial):
        rng = np.random.default_rng([seed, INITIAL_STREAM])
        return np.asarray(spec.initial(rng), dtype=float)
    return np.asarray(spec.initial, dtype=float)


def _run_batch(system: SystemSpec, spec: EnsembleSpec, seeds: Sequence[int]):
    z0 = np.stack([_initial_state(system, spec, seed) for seed in seeds])
    paths = [system.sample_noise(spec.T, spec.dt, seed) for seed in seeds]
    increments = np.stack([p.increments for p in paths])
    driver = np.stack([p.values[:: spec.record_stride] for p in paths])
    result = integrate_batch(system.advance(spec.cfg), z0, increments, spec.cfg, spec.stop_region,
                             spec.record_stride)
    return result, driver


def run_ensemble(system: SystemSpec, spec: EnsembleSpec, n_jobs: Optional[int] = None,
                 progress: bool = False) -> Ensemble:
    """Simulate ``spec.n_paths`` independent paths of ``system``.

    Args:
        system: Catalog system
        spec: Ensemble description
        n_jobs: Worker threads; defaults to the THREADS setting
        progress: Show a progress bar over batches

    Returns:
        Ensemble in path-index order
    """
    settings = get_settings()
    n_steps = spec.n_steps
    n_recorded = n_steps // spec.record_stride + 1
    if spec.n_paths * n_recorded * (system.dim + system.driver.r) > settings.MAX_RECORDED_VALUES:
        raise ResourceLimitError(
            f"{spec.n_paths} paths x {n_recorded} recorded points exceed MAX_RECORDED_VALUES; "
            "raise record_stride"
        )
    probe = _initial_state(system, spec, 0)
    if probe.shape != (system.dim,):
        raise ConfigurationError(f"initial state must have dimension {system.dim}, got {probe.shape}")

    seeds = spec.path_seeds()
    size = _batch_size(n_steps, system.driver.r)
    batches = [seeds[start:start + size] for start in range(0, len(seeds), size)]
    workers = n_jobs or settings.THREADS
    logger.info(
        "Running %s: %d paths x %d steps (dt=%g, %s) in %d batches on %d worker(s)",
        system.name, spec.n_paths, n_steps, spec.dt, spec.cfg.scheme.value, len(batches), workers,
    )

    runner = Parallel(n_jobs=workers, prefer="threads", return_as="generator")
    results = runner(delayed(_run_batch)(system, spec, batch) for batch in batches)
    parts = list(tqdm(results, total=len(batches), disable=not progress, desc=system.name))

    ensemble = Ensemble(
        times=np.arange(n_recorded) * spec.dt * spec.record_stride,
        states=np.concatenate([r.states for r, _ in parts]),
        driver_values=np.concatenate([d for _, d in parts]),
        status=np.concatenate([r.status for r, _ in parts]),
        stop_index=np.concatenate([r.stop_index for r, _ in parts]),
        seeds=seeds,
        dt=spec.dt,
        record_stride=spec.record_stride,
    )
    logger.info("Finished %s: %d exploded, %d exited", system.name, ensemble.exploded_count,
                int(ensemble.exited_mask.sum()))
    return ensemble


def _estimate(values: Array, exploded: int) -> Estimate:
    n = values.size
    if n == 0:
        raise AllPathsExplodedError("every path exploded; nothing to estimate")
    stderr = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(np.mean(values)), stderr, n, exploded)


def expectation(f: ScalarField, e: Ensemble, t: float) -> Estimate:
    """Mean of ``f(Gamma_t)`` over non-exploded paths with its CLT standard error."""
    index = e.time_index(t)
    return _estimate(f(e.states[e.valid_mask, index]), e.exploded_count)


def first_exit_time(traj: Trajectory, region: Region) -> Optional[float]:
    """Smallest grid time with the state outside ``region``; None if it never leaves."""
    inside = np.asarray(region(traj.states), dtype=bool)
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return None
    return float(traj.times[outside[0]])


def sup_exceedance_probability(e: Ensemble, f: ScalarField, level: float, horizon: float) -> Estimate:
    """Fraction of paths with ``max_{t <= horizon} f(Gamma_t) > level`` and its binomial error."""
    if not level > 0:
        raise ConfigurationError(f"level must be positive, got {level}")
    index = e.time_index(horizon)
    sup = np.max(f(e.states[e.valid_mask, : index + 1]), axis=1)
    n = sup.size
    if n == 0:
        raise AllPathsExplodedError("every path exploded; nothing to estimate")
    p_hat = float(np.mean(sup > level))
    return Estimate(p_hat, float(np.sqrt(p_hat * (1.0 - p_hat) / n)), n, e.exploded_count)


@dataclass(frozen=True)
class StoppingTime:
    """A bounded stopping time: first exit from ``region`` truncated at ``horizon``.

    Without a region it is the fixed time ``horizon``. Both are read off the
    recorded grid.
    """

    horizon: float
    region: Optional[Region] = None
    label: str = ""

    @classmethod
    def fixed(cls, t: float) -> "StoppingTime":
        return cls(t, label=f"t={t:g}")

    @classmethod
    def first_exit(cls, region: Region, horizon: float, label: str = "exit") -> "StoppingTime":
        return cls(horizon, region, label)

    def indices(self, e: Ensemble) -> Array:
        """Recorded index of ``tau ^ horizon`` for every path."""
        last = e.time_index(self.horizon)
        indices = np.full(e.n_paths, last)
        if self.region is None:
            return indices
        outside = ~np.asarray(self.region(e.states[:, : last + 1]), dtype=bool)
        left = outside.any(axis=1)
        indices[left] = np.argmax(outside[left], axis=1)
        return indices


def stopped_values(f: ScalarField, e: Ensemble, tau: StoppingTime) -> Array:
    """``f(Gamma_{tau ^ T})`` on non-exploded paths."""
    indices = tau.indices(e)
    valid = e.valid_mask
    return f(e.states[np.flatnonzero(valid), indices[valid]])
