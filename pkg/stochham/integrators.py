"""Path integration of stochastic Hamilton equations.

The state equation is ``dGamma = sum_j X_{h_j}(Gamma) dX^j`` in Stratonovich form.
Two schemes are provided: the Heun predictor-corrector (Stratonovich) and an
explicit Euler step with the Itô drift correction
``0.5 * sum_ij D X_{h_j} . X_{h_i} d[X^j, X^i]``. Non-Hamiltonian Itô systems
``dz = C(z) dX`` use plain Euler-Maruyama.

All steppers work on a single state (n,) or a batch (P, n); ``integrate_batch``
drives a batch of paths forward together and is shared by ``simulate`` and the
ensemble runner.
"""
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
import pandas as pd

from core.config import get_settings
from core.exceptions import (
    ConfigurationError,
    DimensionMismatchError,
    GridMismatchError,
    NonFiniteStateError,
    PreconditionError,
)
from core.logger import get_simulation_logger
from stochham.noise import NoisePath
from stochham.structures import (
    HamiltonianBundle,
    PhaseStructure,
    stratonovich_operator_matrix,
    vector_field_jacobian,
)

logger = get_simulation_logger()

Array = np.ndarray
Region = Callable[[Array], Array]
Advance = Callable[[Array, Array], Array]


class Scheme(str, enum.Enum):
    STRATONOVICH_HEUN = "stratonovich_heun"
    ITO_EULER_CORRECTED = "ito_euler_corrected"


class TrajectoryStatus(str, enum.Enum):
    COMPLETED = "completed"
    EXITED = "exited"
    EXPLODED = "exploded"


# Batch results store statuses as indices into this tuple.
STATUS_ORDER = tuple(TrajectoryStatus)


@dataclass(frozen=True)
class IntegratorConfig:
    """Scheme and numerical limits for path integration.

    ``fd_step=None`` means the relative step FD_STEP * (1 + |z|) for vector-field
    Jacobians; ``fd_step=0`` forbids finite differences altogether.
    """

    scheme: Scheme = Scheme.STRATONOVICH_HEUN
    dt: float = 1e-3
    fd_step: Optional[float] = None
    max_steps: int = field(default_factory=lambda: get_settings().MAX_STEPS)
    blowup_threshold: float = field(default_factory=lambda: get_settings().BLOWUP_THRESHOLD)

    def __post_init__(self):
        try:
            object.__setattr__(self, "scheme", Scheme(self.scheme))
        except ValueError:
            valid = ", ".join(s.value for s in Scheme)
            raise ConfigurationError(f"unknown scheme '{self.scheme}'; valid schemes: {valid}")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.blowup_threshold > 0:
            raise ConfigurationError(f"blowup_threshold must be positive, got {self.blowup_threshold}")
        if self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be at least 1, got {self.max_steps}")
        if self.fd_step is not None and self.fd_step < 0:
            raise ConfigurationError(f"fd_step must be non-negative, got {self.fd_step}")

    @property
    def jacobian_step(self) -> Optional[float]:
        return None if not self.fd_step else self.fd_step


@dataclass(frozen=True)
class Trajectory:
    """States of one path on its driver grid, truncated at a terminal status."""

    times: Array
    states: Array
    status: TrajectoryStatus = TrajectoryStatus.COMPLETED
    stop_index: Optional[int] = None
    noise_seed: int = 0

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def final_state(self) -> Array:
        return self.states[-1]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times})
        for i in range(self.dim):
            frame[f"z{i + 1}"] = self.states[:, i]
        status = [""] * len(frame)
        status[-1] = self.status.value
        frame["status"] = status
        return frame

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


class BatchResult(NamedTuple):
    states: Array
    status: Array
    stop_index: Array


def _contract(matrix: Array, vector: Array) -> Array:
    return np.einsum("...ir,...r->...i", matrix, vector)


def _heun(s: PhaseStructure, h: HamiltonianBundle, z: Array, dX: Array) -> Array:
    k1 = _contract(stratonovich_operator_matrix(s, h, z), dX)
    k2 = _contract(stratonovich_operator_matrix(s, h, z + k1), dX)
    return z + 0.5 * (k1 + k2)


def _ito(s: PhaseStructure, h: HamiltonianBundle, z: Array, dX: Array, dQV: Array,
         fd_step: Optional[float]) -> Array:
    fields = stratonovich_operator_matrix(s, h, z)
    out = z + _contract(fields, dX)
    for j, component in enumerate(h):
        weights = dQV[:, j]
        if not np.any(weights):
            continue
        # sum_i X_{h_i} dQV^{ij}
        carried = _contract(fields, np.broadcast_to(weights, dX.shape))
        jac = vector_field_jacobian(s, component, z, fd_step)
        out = out + 0.5 * np.einsum("...ik,...k->...i", jac, carried)
    return out


def _check_increment(h_r: int, dX: Array) -> Array:
    dX = np.asarray(dX, dtype=float)
    if dX.shape[-1] != h_r:
        raise DimensionMismatchError("driver increment", h_r, dX.shape[-1])
    return dX


def _finite(z: Array) -> Array:
    if not np.all(np.isfinite(z)):
        raise NonFiniteStateError("step produced a non-finite state")
    return z


def step_heun(s: PhaseStructure, h: HamiltonianBundle, z: Array, dX: Array) -> Array:
    """One Heun step: predictor ``z + H(z) dX``, corrector averaging both operators."""
    z = s.point(z)
    return _finite(_heun(s, h, z, _check_increment(h.r, dX)))


def step_ito(s: PhaseStructure, h: HamiltonianBundle, z: Array, dX: Array, dQV: Array,
             fd_step: Optional[float] = None) -> Array:
    """One Euler step of the Itô form with the second-order drift correction.

    Args:
        s: Phase structure
        h: Hamiltonian components
        z: State
        dX: Driver increment, length r
        dQV: Covariation increment kappa * dt, shape (r, r)
        fd_step: Finite-difference step for Jacobians without Hessians

    Returns:
        Next state
    """
    z = s.point(z)
    dX = _check_increment(h.r, dX)
    dQV = np.asarray(dQV, dtype=float)
    if dQV.shape != (h.r, h.r):
        raise DimensionMismatchError("covariation increment", (h.r, h.r), dQV.shape)
    return _finite(_ito(s, h, z, dX, dQV, fd_step))


@dataclass(frozen=True)
class ItoDynamics:
    """A non-Hamiltonian Itô system ``dz = C(z) dX`` against the full driver.

    ``coefficients`` maps states (..., n) to matrices (..., n, r); the column of a
    DeterministicTime component carries the drift.
    """

    dim: int
    coefficients: Callable[[Array], Array]
    label: str = ""


def step_euler_maruyama(dyn: ItoDynamics, z: Array, dX: Array) -> Array:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != dyn.dim:
        raise DimensionMismatchError("state", dyn.dim, z.shape[-1])
    return _finite(z + _contract(dyn.coefficients(z), np.asarray(dX, dtype=float)))


def integrate_batch(advance: Advance, z0: Array, increments: Array, cfg: IntegratorConfig,
                    stop_region: Optional[Region] = None, record_stride: int = 1) -> BatchResult:
    """Advance P paths together over N steps.

    Args:
        advance: Map (states (P, n), increments (P, r)) -> next states
        z0: Initial states, shape (P, n)
        increments: Driver increments, shape (P, N, r)
        cfg: Integrator configuration (blow-up threshold)
        stop_region: Predicate on states; paths leaving it are stopped
        record_stride: Record every k-th grid point; must divide N

    Returns:
        BatchResult with recorded states (P, N // stride + 1, n), status codes (index into
        TrajectoryStatus order) and stop indices (-1 when the path completed). Stopped and
        exploded paths hold their last valid state.
    """
    z = np.array(z0, dtype=float)
    n_paths, n_steps = increments.shape[0], increments.shape[1]
    if n_steps % record_stride:
        raise ConfigurationError(f"record stride {record_stride} does not divide {n_steps} steps")
    if not np.all(np.isfinite(z)):
        raise ConfigurationError("initial states must be finite")

    completed, exited, exploded = (STATUS_ORDER.index(s) for s in TrajectoryStatus)
    status = np.full(n_paths, completed)
    stop_index = np.full(n_paths, -1)
    active = np.ones(n_paths, dtype=bool)

    if stop_region is not None:
        outside = ~np.asarray(stop_region(z), dtype=bool)
        status[outside] = exited
        stop_index[outside] = 0
        active &= ~outside

    recorded = np.empty((n_paths, n_steps // record_stride + 1, z.shape[1]))
    recorded[:, 0] = z

    with np.errstate(all="ignore"):
        for k in range(n_steps):
            if active.any():
                proposal = advance(z, increments[:, k])
                norms = np.linalg.norm(proposal, axis=1)
                blown = active & ~(np.isfinite(norms) & (norms <= cfg.blowup_threshold))
                status[blown] = exploded
                stop_index[blown] = k + 1
                moved = active & ~blown
                z[moved] = proposal[moved]
                active = moved
                if stop_region is not None and moved.any():
                    left = moved & ~np.asarray(stop_region(z), dtype=bool)
                    status[left] = exited
                    stop_index[left] = k + 1
                    active &= ~left
            if (k + 1) % record_stride == 0:
                recorded[:, (k + 1) // record_stride] = z

    return BatchResult(recorded, status, stop_index)


def hamiltonian_advance(s: PhaseStructure, h: HamiltonianBundle, cfg: IntegratorConfig,
                        qv_rates: Array) -> Advance:
    """The configured one-step map for a Hamiltonian system."""
    if cfg.scheme == Scheme.STRATONOVICH_HEUN:
        return lambda z, dX: _heun(s, h, z, dX)
    dQV = np.asarray(qv_rates, dtype=float) * cfg.dt
    return lambda z, dX: _ito(s, h, z, dX, dQV, cfg.jacobian_step)


def ito_dynamics_advance(dyn: ItoDynamics) -> Advance:
    return lambda z, dX: z + _contract(dyn.coefficients(z), dX)


def _check_grid(X: NoisePath, cfg: IntegratorConfig) -> None:
    if abs(X.dt - cfg.dt) > 1e-12 * max(X.dt, cfg.dt):
        raise ConfigurationError(f"integrator dt={cfg.dt} differs from driver dt={X.dt}")
    if X.n_steps > cfg.max_steps:
        raise ConfigurationError(f"{X.n_steps} steps exceed max_steps={cfg.max_steps}")


def _to_trajectory(X: NoisePath, result: BatchResult) -> Trajectory:
    status = STATUS_ORDER[int(result.status[0])]
    stop = int(result.stop_index[0])
    states = result.states[0]
    if status == TrajectoryStatus.EXITED:
        states = states[: stop + 1]
    elif status == TrajectoryStatus.EXPLODED:
        states = states[:stop]
    return Trajectory(
        times=X.times[: states.shape[0]].copy(),
        states=states.copy(),
        status=status,
        stop_index=None if status == TrajectoryStatus.COMPLETED else stop,
        noise_seed=X.seed,
    )


def simulate(s: PhaseStructure, h: HamiltonianBundle, z0: Array, X: NoisePath,
             cfg: IntegratorConfig, stop_region: Optional[Region] = None) -> Trajectory:
    """Integrate one path of the stochastic Hamilton equations along X.

    The exit step is recorded and its state retained; exploded paths keep the
    states before the offending step.
    """
    z0 = s.point(z0)
    if h.r != X.r:
        raise DimensionMismatchError("driver components", h.r, X.r)
    _check_grid(X, cfg)
    advance = hamiltonian_advance(s, h, cfg, X.qv_rates)
    result = integrate_batch(advance, z0[None, :], X.increments[None], cfg, stop_region)
    traj = _to_trajectory(X, result)
    logger.debug("simulated %d steps with %s: %s", X.n_steps, cfg.scheme.value, traj.status.value)
    return traj


def simulate_ito_dynamics(dyn: ItoDynamics, z0: Array, X: NoisePath, cfg: IntegratorConfig,
                          stop_region: Optional[Region] = None) -> Trajectory:
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (dyn.dim,):
        raise DimensionMismatchError("initial state", dyn.dim, z0.shape)
    _check_grid(X, cfg)
    result = integrate_batch(ito_dynamics_advance(dyn), z0[None, :], X.increments[None], cfg,
                             stop_region)
    return _to_trajectory(X, result)


def tangent_flow(s: PhaseStructure, h: HamiltonianBundle, traj: Trajectory, X: NoisePath,
                 cfg: IntegratorConfig) -> Array:
    """Linearized flow ``J_t`` along a completed trajectory, shape (N+1, n, n).

    J is advanced with the same predictor-corrector staging as the state, so it is
    the exact derivative of the discrete Heun map.
    """
    if traj.status != TrajectoryStatus.COMPLETED:
        raise PreconditionError(f"tangent flow needs a completed trajectory, got {traj.status.value}")
    states = traj.states
    if states.shape[0] != X.times.size:
        raise GridMismatchError("trajectory and driver grids differ", X.times.size, states.shape[0])
    if cfg.fd_step == 0 and not all(c.has_hessian for c in h):
        raise PreconditionError("Hessians are missing and finite differences are disabled (fd_step=0)")

    step = cfg.jacobian_step
    dX = X.increments
    n = s.dim

    def drift_jacobian(points: Array) -> Array:
        # sum_j D X_{h_j}(z_k) dX^j_k for every grid step k
        total = np.zeros(points.shape[:-1] + (n, n))
        for j, component in enumerate(h):
            total += vector_field_jacobian(s, component, points, step) * dX[:, j, None, None]
        return total

    base = states[:-1]
    predictor = base + _contract(stratonovich_operator_matrix(s, h, base), dX)
    A = drift_jacobian(base)
    A_star = drift_jacobian(predictor)

    J = np.empty((states.shape[0], n, n))
    J[0] = np.eye(n)
    for k in range(X.n_steps):
        first = A[k] @ J[k]
        J[k + 1] = J[k] + 0.5 * (first + A_star[k] @ (J[k] + first))
    return J
