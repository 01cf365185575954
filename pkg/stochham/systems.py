"""
Catalog of ready-to-run stochastic systems.

Each entry:
    name : CatalogEntry(
        builder     : params -> SystemSpec,
        params      : parameter schema (defaults and ranges),
        category    : "hamiltonian" or "ito",
        description : str,
    )

Usage:
    from stochham.systems import build_system
    system = build_system("damped_oscillator", {"nu": 0.5})
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import (
    ConfigurationError,
    DimensionMismatchError,
    NoClosedFormError,
    UnknownSystemError,
)
from stochham.integrators import (
    Advance,
    IntegratorConfig,
    ItoDynamics,
    Region,
    Trajectory,
    hamiltonian_advance,
    ito_dynamics_advance,
    simulate,
    simulate_ito_dynamics,
)
from stochham.noise import ComponentSpec, DriverSpec, NoisePath, realized_covariation, sample_path
from stochham.structures import HamiltonianBundle, PhaseStructure, ScalarField

Array = np.ndarray
ClosedForm = Callable[[NoisePath, Array], Trajectory]

# SeedSequence words reserved for per-path auxiliary streams
INITIAL_STREAM = 0xFFFFFFFF
FORCING_STREAM = 0xFFFFFFFE


@dataclass(frozen=True)
class ParamSpec:
    name: str
    default: float
    description: str
    minimum: Optional[float] = None
    exclusive_minimum: bool = False
    maximum: Optional[float] = None
    integer: bool = False

    def validate(self, value: Any) -> float:
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"parameter '{self.name}' must be a number, got {value!r}")
        if not np.isfinite(value):
            raise ConfigurationError(f"parameter '{self.name}' must be finite")
        if self.integer and value != int(value):
            raise ConfigurationError(f"parameter '{self.name}' must be an integer, got {value}")
        if self.minimum is not None:
            if value < self.minimum or (self.exclusive_minimum and value == self.minimum):
                bound = ">" if self.exclusive_minimum else ">="
                raise ConfigurationError(f"parameter '{self.name}' must be {bound} {self.minimum}, got {value}")
        if self.maximum is not None and value > self.maximum:
            raise ConfigurationError(f"parameter '{self.name}' must be <= {self.maximum}, got {value}")
        return value

    def schema(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"default": self.default, "description": self.description}
        if self.minimum is not None:
            out["exclusive_minimum" if self.exclusive_minimum else "minimum"] = self.minimum
        if self.maximum is not None:
            out["maximum"] = self.maximum
        if self.integer:
            out["type"] = "integer"
        return out


@dataclass(frozen=True)
class SystemSpec:
    """A fully wired system: structure and Hamiltonian (or Itô dynamics) plus driver."""

    name: str
    driver: DriverSpec
    params: Mapping[str, float]
    initial_state: Array
    structure: Optional[PhaseStructure] = None
    hamiltonian: Optional[HamiltonianBundle] = None
    dynamics: Optional[ItoDynamics] = None
    closed_form: Optional[ClosedForm] = None
    equilibria: Tuple[Array, ...] = ()
    forcing: Optional[Callable[[Array, Array, int], Dict[str, Array]]] = None
    initial_sampler: Optional[Callable[[np.random.Generator], Array]] = None
    observables: Mapping[str, ScalarField] = field(default_factory=dict)
    state_labels: Tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self):
        if (self.hamiltonian is None) == (self.dynamics is None):
            raise ConfigurationError(f"system '{self.name}' needs exactly one of a Hamiltonian or Itô dynamics")
        if self.hamiltonian is not None:
            if self.structure is None:
                raise ConfigurationError(f"Hamiltonian system '{self.name}' needs a phase structure")
            if self.hamiltonian.r != self.driver.r:
                raise DimensionMismatchError("driver components", self.hamiltonian.r, self.driver.r)
            self.hamiltonian.check_dim(self.structure.dim)
        initial = np.asarray(self.initial_state, dtype=float)
        if initial.shape != (self.dim,):
            raise DimensionMismatchError("initial state", self.dim, initial.shape)
        object.__setattr__(self, "initial_state", initial)
        object.__setattr__(self, "equilibria", tuple(np.asarray(e, dtype=float) for e in self.equilibria))

    @property
    def dim(self) -> int:
        return self.structure.dim if self.structure is not None else self.dynamics.dim

    @property
    def is_hamiltonian(self) -> bool:
        return self.hamiltonian is not None

    @property
    def symplectic(self) -> bool:
        return self.is_hamiltonian and self.structure.symplectic

    def observable(self, name: str) -> ScalarField:
        try:
            return self.observables[name]
        except KeyError:
            known = ", ".join(sorted(self.observables))
            raise ConfigurationError(f"system '{self.name}' has no observable '{name}'; known: {known}")

    def sample_noise(self, T: float, dt: float, seed: int) -> NoisePath:
        return sample_path(self.driver, T, dt, seed, forcing=self.forcing)

    def advance(self, cfg: IntegratorConfig) -> Advance:
        if self.is_hamiltonian:
            return hamiltonian_advance(self.structure, self.hamiltonian, cfg, self.driver.qv_matrix())
        return ito_dynamics_advance(self.dynamics)

    def simulate(self, z0: Array, X: NoisePath, cfg: IntegratorConfig,
                 stop_region: Optional[Region] = None) -> Trajectory:
        if self.is_hamiltonian:
            return simulate(self.structure, self.hamiltonian, z0, X, cfg, stop_region)
        return simulate_ito_dynamics(self.dynamics, z0, X, cfg, stop_region)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    builder: Callable[[Dict[str, float]], SystemSpec]
    params: Tuple[ParamSpec, ...]
    category: str
    description: str

    def resolve(self, overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, float]:
        overrides = dict(overrides or {})
        known = {p.name for p in self.params}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigurationError(
                f"unknown parameter(s) {', '.join(unknown)} for '{self.name}'; "
                f"known: {', '.join(sorted(known)) or 'none'}"
            )
        return {p.name: p.validate(overrides.get(p.name, p.default)) for p in self.params}

    def schema(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "category": self.category,
            "description": self.description,
            "params": {p.name: p.schema() for p in self.params},
        }


CATALOG: Dict[str, CatalogEntry] = {}


def register(name: str, category: str, description: str, params: Sequence[ParamSpec] = ()):
    """Decorator adding a builder to the catalog."""

    def decorator(builder: Callable[[Dict[str, float]], SystemSpec]):
        CATALOG[name] = CatalogEntry(name, builder, tuple(params), category, description)
        return builder

    return decorator


def build_system(name: str, params: Optional[Mapping[str, Any]] = None) -> SystemSpec:
    """Build a catalog system with validated parameters."""
    if name not in CATALOG:
        raise UnknownSystemError(name, CATALOG)
    entry = CATALOG[name]
    return entry.builder(entry.resolve(params))


def list_catalog() -> Tuple[Dict[str, Any], ...]:
    return tuple(CATALOG[name].schema() for name in CATALOG)


def closed_form_reference(sys: SystemSpec, X: NoisePath, z0: Optional[Array] = None) -> Trajectory:
    """Exact trajectory of ``sys`` on the grid of X."""
    if sys.closed_form is None:
        raise NoClosedFormError(f"system '{sys.name}' has no closed form")
    z0 = sys.initial_state if z0 is None else np.asarray(z0, dtype=float)
    if z0.shape != (sys.dim,):
        raise DimensionMismatchError("initial state", sys.dim, z0.shape)
    return sys.closed_form(X, z0)


def _exact(X: NoisePath, states: Array) -> Trajectory:
    return Trajectory(times=X.times.copy(), states=states, noise_seed=X.seed)


def _rotation(z0: Array, angle: Array, scale: float = 1.0) -> Array:
    """Rotate (q, p) by ``angle`` in the metric where ``p / scale`` is the partner of q."""
    q0, p0 = z0
    c, s = np.cos(angle), np.sin(angle)
    return np.column_stack([q0 * c + (p0 / scale) * s, p0 * c - scale * q0 * s])


# Hamiltonian diffusions


@register(
    "bismut_diffusion",
    category="hamiltonian",
    description="Harmonic energy driven by time plus r Brownian kicks h_j = sigma*q, sigma*p "
                "(driver (t, B^1..B^r))",
    params=(
        ParamSpec("m", 1.0, "mass", minimum=0.0, exclusive_minimum=True),
        ParamSpec("rho", 1.0, "spring constant", minimum=0.0, exclusive_minimum=True),
        ParamSpec("sigma", 0.5, "noise amplitude", minimum=0.0),
        ParamSpec("r", 1, "number of Brownian kicks, 1 (sigma*q) or 2 (sigma*q and sigma*p)",
                  minimum=1, maximum=2, integer=True),
    ),
)
def _bismut_diffusion(p: Dict[str, float]) -> SystemSpec:
    energy = ScalarField.quadratic(np.diag([p["rho"], 1.0 / p["m"]]), label="energy")
    kicks = (
        ScalarField.linear([p["sigma"], 0.0], label="sigma*q"),
        ScalarField.linear([0.0, p["sigma"]], label="sigma*p"),
    )
    r = int(p["r"])
    return SystemSpec(
        name="bismut_diffusion",
        structure=PhaseStructure.canonical(1),
        hamiltonian=HamiltonianBundle((energy,) + kicks[:r], ("dt",) + tuple(f"dB{j + 1}" for j in range(r))),
        driver=DriverSpec.time_and_brownian(r),
        params=p,
        initial_state=np.array([1.0, 0.0]),
        observables={"energy": energy, "q": ScalarField.coordinate(0, 2, "q"),
                     "p": ScalarField.coordinate(1, 2, "p")},
        state_labels=("q", "p"),
    )


@register(
    "damped_oscillator",
    category="hamiltonian",
    description="h = p^2/2m + rho q^2/2 driven by X = t + nu B; the mean obeys a damped oscillator",
    params=(
        ParamSpec("m", 1.0, "mass", minimum=0.0, exclusive_minimum=True),
        ParamSpec("rho", 1.0, "spring constant", minimum=0.0, exclusive_minimum=True),
        ParamSpec("nu", 0.5, "noise loading of the single driver component", minimum=0.0),
    ),
)
def _damped_oscillator(p: Dict[str, float]) -> SystemSpec:
    m, rho, nu = p["m"], p["rho"], p["nu"]
    energy = ScalarField.quadratic(np.diag([rho, 1.0 / m]), label="energy")
    if nu == 0.0:
        driver = DriverSpec.time_only()
    else:
        driver = DriverSpec((ComponentSpec.affine(1.0, (nu,), label="t+nu*B"),), channels=1)
    omega = np.sqrt(rho / m)

    def closed_form(X: NoisePath, z0: Array) -> Trajectory:
        # a single driver component makes the solution the classical flow at time X_t
        return _exact(X, _rotation(z0, omega * X.values[:, 0], m * omega))

    return SystemSpec(
        name="damped_oscillator",
        structure=PhaseStructure.canonical(1),
        hamiltonian=HamiltonianBundle.single(energy, "dX"),
        driver=driver,
        params=p,
        initial_state=np.array([1.0, 0.0]),
        closed_form=closed_form,
        equilibria=(np.zeros(2),),
        observables={"energy": energy, "q": ScalarField.coordinate(0, 2, "q"),
                     "p": ScalarField.coordinate(1, 2, "p")},
        state_labels=("q", "p"),
    )


@register(
    "integrable_torus",
    category="hamiltonian",
    description="Action-angle chart (theta, I) with h = (a I^2/2, sigma I) driven by (t, B); "
                "sigma = 0 drops the Brownian component",
    params=(
        ParamSpec("a", 1.0, "frequency slope, omega_0(I) = a I"),
        ParamSpec("sigma", 1.0, "Brownian frequency", minimum=0.0),
    ),
)
def _integrable_torus(p: Dict[str, float]) -> SystemSpec:
    a, sigma = p["a"], p["sigma"]
    h_time = ScalarField(
        value=lambda z: 0.5 * a * z[..., 1] ** 2,
        gradient=lambda z: np.stack([np.zeros_like(z[..., 0]), a * z[..., 1]], axis=-1),
        hessian=lambda z: np.broadcast_to(np.diag([0.0, a]), np.shape(z)[:-1] + (2, 2)).copy(),
        label="a*I^2/2",
    )
    components = [h_time]
    if sigma > 0.0:
        components.append(ScalarField.linear([0.0, sigma], label="sigma*I"))
        driver = DriverSpec.time_and_brownian(1)
    else:
        driver = DriverSpec.time_only()
    hamiltonian = HamiltonianBundle(tuple(components))

    def closed_form(X: NoisePath, z0: Array) -> Trajectory:
        theta0, action = z0
        frequencies = np.array([a * action, sigma])[: X.r]
        theta = theta0 + X.values @ frequencies
        return _exact(X, np.column_stack([theta, np.full_like(theta, action)]))

    return SystemSpec(
        name="integrable_torus",
        structure=PhaseStructure.canonical(1),
        hamiltonian=hamiltonian,
        driver=driver,
        params=p,
        initial_state=np.array([0.0, 1.0]),
        closed_form=closed_form,
        observables={"angle": ScalarField.coordinate(0, 2, "theta"),
                     "action": ScalarField.coordinate(1, 2, "I"), "energy": h_time},
        state_labels=("theta", "I"),
    )


@register(
    "circle_brownian",
    category="hamiltonian",
    description="Brownian motion on the unit circle embedded in R^2 with h = -(x^2+y^2)/2 "
                "driven by one Brownian motion",
)
def _circle_brownian(p: Dict[str, float]) -> SystemSpec:
    h = ScalarField.quadratic(-np.eye(2), label="-(x^2+y^2)/2")
    radius2 = ScalarField.quadratic(2.0 * np.eye(2), label="x^2+y^2")

    def closed_form(X: NoisePath, z0: Array) -> Trajectory:
        # counterclockwise rotation by the Brownian path
        c, s = np.cos(X.values[:, 0]), np.sin(X.values[:, 0])
        return _exact(X, np.column_stack([z0[0] * c - z0[1] * s, z0[0] * s + z0[1] * c]))

    return SystemSpec(
        name="circle_brownian",
        structure=PhaseStructure.canonical(1),
        hamiltonian=HamiltonianBundle.single(h, "dB"),
        driver=DriverSpec((ComponentSpec.brownian(0),), channels=1),
        params=p,
        initial_state=np.array([1.0, 0.0]),
        closed_form=closed_form,
        equilibria=(np.zeros(2),),
        observables={"radius2": radius2, "x": ScalarField.coordinate(0, 2, "x"),
                     "y": ScalarField.coordinate(1, 2, "y")},
        state_labels=("x", "y"),
    )


@register(
    "parallelizable_bm",
    category="hamiltonian",
    description="Brownian motion on the flat 2-torus with radii (R1, R2): h = (0, p1/R1, p2/R2) "
                "driven by (t, B^1, B^2)",
    params=(
        ParamSpec("R1", 1.0, "first radius", minimum=0.0, exclusive_minimum=True),
        ParamSpec("R2", 1.0, "second radius", minimum=0.0, exclusive_minimum=True),
    ),
)
def _parallelizable_bm(p: Dict[str, float]) -> SystemSpec:
    inverse = np.array([1.0 / p["R1"], 1.0 / p["R2"]])
    frame = (
        ScalarField.linear([0.0, 0.0, inverse[0], 0.0], label="p1/R1"),
        ScalarField.linear([0.0, 0.0, 0.0, inverse[1]], label="p2/R2"),
    )
    # flat frame: the connection term vanishes
    connection = ScalarField.constant(0.0, 4, label="0")

    def closed_form(X: NoisePath, z0: Array) -> Trajectory:
        q = z0[:2] + X.values[:, 1:3] * inverse
        return _exact(X, np.column_stack([q, np.broadcast_to(z0[2:], q.shape)]))

    observables = {name: ScalarField.coordinate(i, 4, name) for i, name in enumerate(("q1", "q2", "p1", "p2"))}
    return SystemSpec(
        name="parallelizable_bm",
        structure=PhaseStructure.canonical(2),
        hamiltonian=HamiltonianBundle((connection,) + frame, ("dt", "dB1", "dB2")),
        driver=DriverSpec.time_and_brownian(2),
        params=p,
        initial_state=np.zeros(4),
        closed_form=closed_form,
        observables=observables,
        state_labels=("q1", "q2", "p1", "p2"),
    )


@register(
    "rigid_body",
    category="hamiltonian",
    description="Free rigid body on so(3)* with kinetic energy and stochastic torques "
                "sigma*mu1, sigma*mu2 driven by (t, B^1, B^2); Casimir |mu|^2",
    params=(
        ParamSpec("I1", 1.0, "first principal moment", minimum=0.0, exclusive_minimum=True),
        ParamSpec("I2", 2.0, "second principal moment", minimum=0.0, exclusive_minimum=True),
        ParamSpec("I3", 3.0, "third principal moment", minimum=0.0, exclusive_minimum=True),
        ParamSpec("sigma", 0.1, "torque amplitude", minimum=0.0),
    ),
)
def _rigid_body(p: Dict[str, float]) -> SystemSpec:
    structure = PhaseStructure.lie_poisson_so3()
    kinetic = ScalarField.quadratic(np.diag([1.0 / p["I1"], 1.0 / p["I2"], 1.0 / p["I3"]]),
                                    label="kinetic")
    torques = (
        ScalarField.linear([p["sigma"], 0.0, 0.0], label="sigma*mu1"),
        ScalarField.linear([0.0, p["sigma"], 0.0], label="sigma*mu2"),
    )
    equilibria = tuple(np.eye(3)) if p["sigma"] == 0.0 else ()
    observables = {"casimir": structure.casimirs[0], "energy": kinetic}
    observables.update({f"mu{i + 1}": ScalarField.coordinate(i, 3, f"mu{i + 1}") for i in range(3)})
    return SystemSpec(
        name="rigid_body",
        structure=structure,
        hamiltonian=HamiltonianBundle((kinetic,) + torques, ("dt", "dB1", "dB2")),
        driver=DriverSpec.time_and_brownian(2),
        params=p,
        initial_state=np.array([1.0, 0.5, 0.25]),
        equilibria=equilibria,
        observables=observables,
        state_labels=("mu1", "mu2", "mu3"),
    )


# Itô systems


@register(
    "langevin",
    category="ito",
    description="Ornstein-Uhlenbeck velocity: dq = v dt, dv = -lam v dt + b dB (not Hamiltonian)",
    params=(
        ParamSpec("lam", 1.0, "friction", minimum=0.0),
        ParamSpec("b", 0.5, "noise amplitude", minimum=0.0),
    ),
)
def _langevin(p: Dict[str, float]) -> SystemSpec:
    lam, b = p["lam"], p["b"]

    def coefficients(z: Array) -> Array:
        v = z[..., 1]
        zero = np.zeros_like(v)
        return np.stack(
            [np.stack([v, zero], axis=-1), np.stack([-lam * v, np.full_like(v, b)], axis=-1)],
            axis=-2,
        )

    return SystemSpec(
        name="langevin",
        dynamics=ItoDynamics(2, coefficients, label="langevin"),
        driver=DriverSpec.time_and_brownian(1),
        params=p,
        initial_state=np.array([0.0, 1.0]),
        equilibria=(np.zeros(2),),
        observables={"q": ScalarField.coordinate(0, 2, "q"), "v": ScalarField.coordinate(1, 2, "v"),
                     "energy": ScalarField.quadratic(np.diag([0.0, 1.0]), label="v^2/2")},
        state_labels=("q", "v"),
    )


def ou_forcing(times: Array, channels: Array, seed: int) -> Dict[str, Array]:
    """Stationary OU forcing ``dx = y dt, dy = -(x + y) dt + dB`` started from N(0, 1/2).

    Returns the increments of ``zdot = y`` and their realized covariation, both
    starting at 0.
    """
    dt = times[1] - times[0]
    x, y = np.random.default_rng([seed, FORCING_STREAM]).normal(0.0, np.sqrt(0.5), size=2)
    dB = np.diff(channels[:, 0])
    ys = np.empty(times.size)
    ys[0] = y
    for k, db in enumerate(dB):
        x, y = x + y * dt, y - (x + y) * dt + db
        ys[k + 1] = y
    zdot = ys - ys[0]
    return {"zdot": zdot, "zdot_qv": realized_covariation(zdot, zdot)}


@register(
    "inverted_pendulum",
    category="ito",
    description="Inverted pendulum with a vibrating suspension point driven by stationary OU "
                "forcing zdot; hamiltonian=1 (requires lam=0) uses h = (l^2 phidot^2/2 - g l phi^2/2, "
                "(eps^2 omega^2 phi l)^2/4, -(eps omega phi l)^2/2) against (t, [zdot,zdot], zdot)",
    params=(
        ParamSpec("g", 1.0, "gravity constant", minimum=0.0),
        ParamSpec("l", 1.0, "length", minimum=0.0, exclusive_minimum=True),
        ParamSpec("lam", 0.5, "friction", minimum=0.0),
        ParamSpec("eps", 0.3, "sqrt(amplitude / length)", minimum=0.0),
        ParamSpec("omega", 5.0, "forcing frequency", minimum=0.0),
        ParamSpec("hamiltonian", 0, "1 selects the frictionless Hamiltonian form", minimum=0,
                  maximum=1, integer=True),
    ),
)
def _inverted_pendulum(p: Dict[str, float]) -> SystemSpec:
    g, l, lam, eps, omega = p["g"], p["l"], p["lam"], p["eps"], p["omega"]
    gain = eps ** 2 * omega ** 2
    common = dict(
        name="inverted_pendulum",
        params=p,
        initial_state=np.array([0.1, 0.0]),
        equilibria=(np.zeros(2),),
        forcing=ou_forcing,
        observables={
            "phi": ScalarField.coordinate(0, 2, "phi"),
            "phidot": ScalarField.coordinate(1, 2, "phidot"),
            "radius2": ScalarField.quadratic(2.0 * np.eye(2), label="phi^2+phidot^2"),
        },
        state_labels=("phi", "phidot"),
    )

    if p["hamiltonian"]:
        if lam != 0.0:
            raise ConfigurationError("the Hamiltonian pendulum requires lam = 0")
        components = (
            ScalarField.quadratic(np.diag([-g * l, l ** 2]), label="h0"),
            ScalarField.quadratic(np.diag([(gain * l) ** 2 / 2.0, 0.0]), label="h1"),
            ScalarField.quadratic(np.diag([-((eps * omega * l) ** 2), 0.0]), label="h2"),
        )
        structure = PhaseStructure.from_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]]) / l ** 2,
                                               label="l^2 dphi^dphidot")
        driver = DriverSpec(
            (ComponentSpec.time(), ComponentSpec.forcing("zdot_qv", (0.0,)),
             ComponentSpec.forcing("zdot", (1.0,))),
            channels=1,
        )
        return SystemSpec(structure=structure, hamiltonian=HamiltonianBundle(components),
                          driver=driver, **common)

    def coefficients(z: Array) -> Array:
        phi, rate = z[..., 0], z[..., 1]
        return np.stack(
            [
                np.stack([rate, np.zeros_like(phi)], axis=-1),
                np.stack([g / l * phi - lam * rate, gain * phi], axis=-1),
            ],
            axis=-2,
        )

    driver = DriverSpec((ComponentSpec.time(), ComponentSpec.forcing("zdot", (1.0,))), channels=1)
    return SystemSpec(dynamics=ItoDynamics(2, coefficients, label="pendulum"), driver=driver, **common)


# Reference solutions


def damped_oscillator_constants(params: Mapping[str, float]) -> Tuple[float, float]:
    """Friction and stiffness of the mean motion: (nu^2 rho, rho (nu^4 rho / 4m + 1))."""
    m, rho, nu = params["m"], params["rho"], params["nu"]
    return nu ** 2 * rho, rho * (nu ** 4 * rho / (4.0 * m) + 1.0)


def moment_matrix(params: Mapping[str, float]) -> Array:
    """Matrix A of the mean equations ``d/dt (q_e, p_e) = A (q_e, p_e)``."""
    m, rho, nu = params["m"], params["rho"], params["nu"]
    c = nu ** 2 * rho / (2.0 * m)
    return np.array([[-c, 1.0 / m], [-rho, -c]])


class MomentSolution(NamedTuple):
    times: Array
    q: Array
    p: Array
    residual: float


def oscillator_moment_ode(params: Mapping[str, float], T: float, dt_ode: float,
                          z0: Sequence[float] = (1.0, 0.0)) -> MomentSolution:
    """RK4 solution of the mean equations of the damped oscillator.

    The residual is ``max |m q'' + lam q' + k q|`` along the RK4 states, with the
    derivatives taken from the mean equations themselves.
    """
    params = CATALOG["damped_oscillator"].resolve(params)
    if not T > 0 or not dt_ode > 0:
        raise ConfigurationError("T and dt_ode must be positive")
    A = moment_matrix(params)
    n_steps = int(round(T / dt_ode))
    states = np.empty((n_steps + 1, 2))
    states[0] = z0
    y = np.asarray(z0, dtype=float)
    for k in range(n_steps):
        k1 = A @ y
        k2 = A @ (y + 0.5 * dt_ode * k1)
        k3 = A @ (y + 0.5 * dt_ode * k2)
        k4 = A @ (y + dt_ode * k3)
        y = y + dt_ode / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[k + 1] = y

    lam, stiffness = damped_oscillator_constants(params)
    velocity = states @ A[0]
    acceleration = states @ (A @ A)[0]
    residual = np.max(np.abs(params["m"] * acceleration + lam * velocity + stiffness * states[:, 0]))
    return MomentSolution(np.arange(n_steps + 1) * dt_ode, states[:, 0], states[:, 1], float(residual))


def langevin_mean(params: Mapping[str, float], z0: Sequence[float], times: Array) -> Array:
    """Expected (q, v) of the Langevin system, shape (len(times), 2)."""
    params = CATALOG["langevin"].resolve(params)
    lam = params["lam"]
    q0, v0 = z0
    times = np.asarray(times, dtype=float)
    decay = np.exp(-lam * times)
    if lam > 0:
        q = q0 + v0 * (1.0 - decay) / lam
    else:
        q = q0 + v0 * times
    return np.column_stack([q, v0 * decay])
