"""Driver semimartingales sampled on uniform grids.

Brownian channels are generated from numpy ``Generator`` streams keyed by
SeedSequence entropy lists, so a path is a pure function of (spec, T, dt, seed).
When ``T / dt`` is a power of two the channel is built by Brownian-bridge
bisection from the horizon down: level ``d`` draws its midpoints from the stream
keyed by ``(seed, channel, 1, d)``. Paths sampled at ``dt`` and ``dt / 2`` with the
same seed therefore coincide on the coarse grid. Other grids use i.i.d.
increments from the stream ``(seed, channel, 0)``. Gaussians come from numpy's
ziggurat ``standard_normal``.
"""
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.config import get_settings
from core.exceptions import ConfigurationError, DimensionMismatchError, GridMismatchError

Array = np.ndarray
ForcingSampler = Callable[[Array, Array, int], Dict[str, Array]]

_IID_STREAM = 0
_BRIDGE_STREAM = 1


class ComponentKind(str, enum.Enum):
    DETERMINISTIC_TIME = "deterministic_time"
    BROWNIAN = "brownian"
    AFFINE = "affine"
    FORCING = "forcing"


@dataclass(frozen=True)
class ComponentSpec:
    """One driver component.

    FORCING columns are produced by a system-specific sampler; ``loadings`` then
    declares their Brownian part so the quadratic covariation stays analytic.
    """

    kind: ComponentKind
    channel: Optional[int] = None
    slope: float = 0.0
    loadings: Tuple[float, ...] = ()
    label: str = ""

    @classmethod
    def time(cls) -> "ComponentSpec":
        return cls(ComponentKind.DETERMINISTIC_TIME, label="t")

    @classmethod
    def brownian(cls, channel: int) -> "ComponentSpec":
        return cls(ComponentKind.BROWNIAN, channel=channel, label=f"B{channel + 1}")

    @classmethod
    def affine(cls, a: float, b: Sequence[float], label: str = "affine") -> "ComponentSpec":
        return cls(ComponentKind.AFFINE, slope=float(a), loadings=tuple(float(x) for x in b),
                   label=label)

    @classmethod
    def forcing(cls, label: str, loadings: Sequence[float]) -> "ComponentSpec":
        return cls(ComponentKind.FORCING, loadings=tuple(float(x) for x in loadings), label=label)

    def loading_vector(self, channels: int) -> Array:
        if self.kind == ComponentKind.DETERMINISTIC_TIME:
            return np.zeros(channels)
        if self.kind == ComponentKind.BROWNIAN:
            unit = np.zeros(channels)
            unit[self.channel] = 1.0
            return unit
        if not self.loadings:
            return np.zeros(channels)
        return np.asarray(self.loadings, dtype=float)


@dataclass(frozen=True)
class DriverSpec:
    components: Tuple[ComponentSpec, ...]
    channels: int = 0

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise ConfigurationError("a driver needs at least one component")
        if self.channels < 0:
            raise ConfigurationError(f"channel count must be non-negative, got {self.channels}")
        for j, c in enumerate(components):
            if c.kind == ComponentKind.BROWNIAN:
                if c.channel is None or not 0 <= c.channel < self.channels:
                    raise ConfigurationError(
                        f"component {j}: channel {c.channel} outside 0..{self.channels - 1}"
                    )
            elif c.kind in (ComponentKind.AFFINE, ComponentKind.FORCING) and c.loadings:
                if len(c.loadings) != self.channels:
                    raise DimensionMismatchError(f"loadings of component {j}", self.channels,
                                                 len(c.loadings))
        object.__setattr__(self, "components", components)

    @property
    def r(self) -> int:
        return len(self.components)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(c.label or f"X{j + 1}" for j, c in enumerate(self.components))

    @property
    def has_forcing(self) -> bool:
        return any(c.kind == ComponentKind.FORCING for c in self.components)

    def loading_matrix(self) -> Array:
        """Brownian loadings of every component, shape (r, k)."""
        if self.channels == 0:
            return np.zeros((self.r, 0))
        return np.stack([c.loading_vector(self.channels) for c in self.components])

    def qv_matrix(self) -> Array:
        """Rates kappa with d[X^i, X^j] = kappa_ij dt."""
        L = self.loading_matrix()
        return L @ L.T

    def is_uncorrelated(self) -> bool:
        kappa = self.qv_matrix()
        return bool(np.all(kappa[~np.eye(self.r, dtype=bool)] == 0.0))

    @classmethod
    def time_only(cls) -> "DriverSpec":
        return cls((ComponentSpec.time(),), channels=0)

    @classmethod
    def time_and_brownian(cls, k: int) -> "DriverSpec":
        """The driver (t, B^1, ..., B^k)."""
        return cls((ComponentSpec.time(),) + tuple(ComponentSpec.brownian(c) for c in range(k)),
                   channels=k)


def qv_rate(spec: DriverSpec, i: int, j: int) -> float:
    """Quadratic covariation rate between components i and j."""
    for index in (i, j):
        if not 0 <= index < spec.r:
            raise ConfigurationError(f"component index {index} outside 0..{spec.r - 1}")
    a = spec.components[i].loading_vector(spec.channels)
    b = spec.components[j].loading_vector(spec.channels)
    return float(a @ b)


@dataclass(frozen=True)
class NoisePath:
    """A sampled driver on the grid ``t_i = i * dt`` with analytic covariation rates."""

    dt: float
    times: Array
    values: Array
    qv_rates: Array
    seed: int = 0
    labels: Tuple[str, ...] = ()
    increments: Array = field(init=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        times = np.asarray(self.times, dtype=float)
        if values.shape[0] != times.size:
            raise GridMismatchError("driver values and times differ in length",
                                    times.size, values.shape[0])
        if np.any(values[0] != 0.0):
            raise ConfigurationError("driver paths must start at 0")
        r = values.shape[1]
        kappa = np.asarray(self.qv_rates, dtype=float)
        if kappa.shape != (r, r):
            raise DimensionMismatchError("qv rates", (r, r), kappa.shape)
        labels = tuple(self.labels) or tuple(f"X{j + 1}" for j in range(r))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "qv_rates", kappa)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "increments", np.diff(values, axis=0))

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def r(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def component(self, j: int) -> Array:
        return self.values[:, j]

    def qv_increment(self) -> Array:
        return self.qv_rates * self.dt

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times})
        for j in range(self.r):
            frame[f"X{j + 1}"] = self.values[:, j]
        return frame

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: Union[str, Path], qv_rates: Optional[Array] = None,
                 seed: int = 0) -> "NoisePath":
        """Replay a path written by ``to_csv``; rates default to zero (finite variation)."""
        frame = pd.read_csv(path)
        columns = [c for c in frame.columns if c != "t"]
        times = frame["t"].to_numpy(dtype=float)
        if times.size < 2:
            raise GridMismatchError("a driver path needs at least two grid points")
        dt = float(times[1] - times[0])
        if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=0.0):
            raise GridMismatchError("driver grid is not uniform")
        r = len(columns)
        kappa = np.zeros((r, r)) if qv_rates is None else qv_rates
        return cls(dt, times, frame[columns].to_numpy(dtype=float), kappa, seed)

    @classmethod
    def from_values(cls, dt: float, values: Array, qv_rates: Array, seed: int = 0,
                    labels: Sequence[str] = ()) -> "NoisePath":
        values = np.asarray(values, dtype=float)
        times = np.arange(values.shape[0]) * dt
        return cls(dt, times, values, qv_rates, seed, tuple(labels))


def grid_steps(T: float, dt: float, max_steps: Optional[int] = None) -> int:
    """Number of steps of the uniform grid on [0, T]."""
    if not T > 0 or not dt > 0:
        raise ConfigurationError(f"T and dt must be positive, got T={T}, dt={dt}")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * T:
        raise ConfigurationError(f"T={T} is not a whole number of steps dt={dt}")
    limit = get_settings().MAX_STEPS if max_steps is None else max_steps
    if n_steps > limit:
        raise ConfigurationError(f"step count overflow: {n_steps} steps exceeds {limit}")
    return n_steps


def _dyadic_levels(n_steps: int) -> Optional[int]:
    if n_steps >= 1 and n_steps & (n_steps - 1) == 0:
        return n_steps.bit_length() - 1
    return None


def _bridge_channel(T: float, levels: int, seed: int, channel: int) -> Array:
    root = np.random.default_rng([seed, channel, _BRIDGE_STREAM, 0]).standard_normal()
    values = np.array([0.0, np.sqrt(T) * root])
    for depth in range(1, levels + 1):
        half = T / 2 ** depth
        xi = np.random.default_rng([seed, channel, _BRIDGE_STREAM, depth]).standard_normal(
            values.size - 1
        )
        midpoints = 0.5 * (values[:-1] + values[1:]) + np.sqrt(half / 2.0) * xi
        refined = np.empty(2 * values.size - 1)
        refined[0::2] = values
        refined[1::2] = midpoints
        values = refined
    return values


def brownian_channels(channels: int, T: float, n_steps: int, seed: int) -> Array:
    """Independent standard Brownian channels on the grid, shape (n_steps + 1, channels)."""
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    out = np.zeros((n_steps + 1, channels))
    levels = _dyadic_levels(n_steps)
    for c in range(channels):
        if levels is not None:
            out[:, c] = _bridge_channel(T, levels, seed, c)
        else:
            rng = np.random.default_rng([seed, c, _IID_STREAM])
            out[1:, c] = np.cumsum(rng.standard_normal(n_steps) * np.sqrt(T / n_steps))
    return out


def sample_path(spec: DriverSpec, T: float, dt: float, seed: int,
                forcing: Optional[ForcingSampler] = None,
                max_steps: Optional[int] = None) -> NoisePath:
    """Sample the driver on [0, T] with step dt.

    Args:
        spec: Driver description
        T: Horizon
        dt: Grid step; T must be a whole number of steps
        seed: Non-negative integer; the same seed gives a bit-identical path
        forcing: Sampler for FORCING components, called with (times, channels, seed)
            and returning a column per component label
        max_steps: Overrides the MAX_STEPS setting

    Returns:
        NoisePath with analytic covariation rates from the DriverSpec
    """
    n_steps = grid_steps(T, dt, max_steps)
    seed = int(seed)
    times = np.arange(n_steps + 1) * dt
    W = brownian_channels(spec.channels, T, n_steps, seed)

    forced: Dict[str, Array] = {}
    if spec.has_forcing:
        if forcing is None:
            raise ConfigurationError("driver has forcing components but no forcing sampler")
        forced = forcing(times, W, seed)

    columns = []
    for c in spec.components:
        if c.kind == ComponentKind.DETERMINISTIC_TIME:
            columns.append(times.copy())
        elif c.kind == ComponentKind.BROWNIAN:
            columns.append(W[:, c.channel])
        elif c.kind == ComponentKind.AFFINE:
            columns.append(c.slope * times + W @ c.loading_vector(spec.channels))
        else:
            if c.label not in forced:
                raise ConfigurationError(f"forcing sampler did not provide '{c.label}'")
            column = np.asarray(forced[c.label], dtype=float)
            if column.shape != times.shape:
                raise GridMismatchError(f"forcing column '{c.label}' has the wrong length",
                                        times.size, column.size)
            columns.append(column)

    return NoisePath(float(dt), times, np.column_stack(columns), spec.qv_matrix(), seed,
                     spec.labels)


def realized_covariation(a: Array, b: Array) -> Array:
    """Partial sums of ``sum_{k<i} da_k db_k``; the first entry is 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise GridMismatchError("realized covariation needs paths on the same grid",
                                a.shape[0], b.shape[0])
    out = np.zeros(a.shape)
    out[1:] = np.cumsum(np.diff(a, axis=0) * np.diff(b, axis=0), axis=0)
    return out


def realized_covariation_matrix(path: NoisePath) -> Array:
    """Realized covariation of all component pairs at the horizon, shape (r, r)."""
    dX = path.increments
    return dX.T @ dX
