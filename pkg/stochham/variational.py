"""Stochastic action on exact symplectic charts and its directional derivatives.

On a canonical chart ``z = (q, p)`` the default primitive is the Liouville form
``theta = p . dq``, so ``d theta = -omega`` with ``omega`` the matrix of
``PhaseStructure.symplectic_matrix()``. The action of a path is

    S_t = int theta(o dGamma) - sum_j int h_j(Gamma) o dX^j

computed with the midpoint sums of ``stochham.calculus``. Variations of a path
are either flows of a vector field ``Y(z)`` or chart-linear pathwise
perturbations ``Gamma + s Y_t``. For both the derivative of the discrete action
is

    int (Y^p dq - Y^q dp) - sum_j int Y[h_j] o dX^j + p.Y^q |_t - p.Y^q |_0

and since the first and last terms are bilinear the identity holds exactly for
the discrete midpoint sums; only the Hamiltonian term carries an O(s^2)
finite-difference error.
"""
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import (
    ConfigurationError,
    DimensionMismatchError,
    GridMismatchError,
    PreconditionError,
)
from schemas.report import DiagnosticsReport
from stochham.calculus import (
    IntegralRule,
    PathIntegralResult,
    path_states,
    scalar_strat_integral,
    strat_line_integral,
)
from stochham.diagnostics import strong_conservation_check
from stochham.montecarlo import Ensemble
from stochham.noise import NoisePath
from stochham.structures import HamiltonianBundle, PhaseStructure, ScalarField, fd_gradient, fd_jacobian

logger = logging.getLogger(__name__)

Array = np.ndarray
CovectorField = Callable[[Array], Array]
Flow = Callable[[float, Array], Array]

VANISHING_TOL = 1e-12
DEFAULT_FD_S = 1e-4


def liouville_form(dof: int) -> CovectorField:
    """``theta = p . dq`` on 2*dof coordinates: the covector (p, 0)."""

    def theta(z: Array) -> Array:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != 2 * dof:
            raise DimensionMismatchError("state", 2 * dof, z.shape[-1])
        out = np.zeros(z.shape)
        out[..., :dof] = z[..., dof:]
        return out

    return theta


def symplectic_flat(Y: Array) -> Array:
    """``omega(Y, .)`` on canonical charts: the covector ``(-Y^p, Y^q)``."""
    Y = np.asarray(Y, dtype=float)
    dof = Y.shape[-1] // 2
    return np.concatenate([-Y[..., dof:], Y[..., :dof]], axis=-1)


def check_exact_form(theta: CovectorField, s: PhaseStructure, probes: Sequence[Array],
                     fd_step: Optional[float] = None) -> float:
    """Largest entry of ``d theta + omega`` over probe points.

    ``(d theta)_ij = d_i theta_j - d_j theta_i`` is taken by central differences.
    """
    omega = s.symplectic_matrix()
    worst = 0.0
    for z in probes:
        z = s.point(z)
        jac = fd_jacobian(theta, z, fd_step)
        d_theta = jac.T - jac
        worst = max(worst, float(np.max(np.abs(d_theta + omega))))
    return worst


@dataclass(frozen=True)
class VariationField:
    """A variation direction, either a vector field ``Y(z)`` or a process ``Y_t``.

    ``process`` maps the path grid ``(times, states)`` to an (N+1, n) array.
    ``vanishing_points`` lists states where a field must vanish and
    ``vanishing_times`` the times where a process must vanish.
    """

    dim: int
    field: Optional[Callable[[Array], Array]] = None
    process: Optional[Callable[[Array, Array], Array]] = None
    vanishing_points: Tuple[Array, ...] = ()
    vanishing_times: Tuple[float, ...] = ()
    label: str = ""

    def __post_init__(self):
        if (self.field is None) == (self.process is None):
            raise ConfigurationError("a variation is either a vector field or a process, not both")
        object.__setattr__(self, "vanishing_points",
                           tuple(np.asarray(p, dtype=float) for p in self.vanishing_points))
        object.__setattr__(self, "vanishing_times", tuple(float(t) for t in self.vanishing_times))

    @property
    def is_process(self) -> bool:
        return self.process is not None

    def along(self, times: Array, states: Array) -> Array:
        """Values on a path grid, shape (N+1, n)."""
        if self.field is not None:
            values = np.asarray(self.field(states), dtype=float)
        else:
            values = np.asarray(self.process(times, states), dtype=float)
        if values.shape != states.shape:
            raise DimensionMismatchError("variation along path", states.shape, values.shape)
        return values

    def check_vanishing(self) -> float:
        """Largest norm of Y over its declared vanishing set."""
        worst = 0.0
        if self.field is not None:
            for z in self.vanishing_points:
                worst = max(worst, float(np.linalg.norm(self.field(z))))
        else:
            times = np.asarray(self.vanishing_times)
            if times.size:
                values = self.process(times, np.zeros((times.size, self.dim)))
                worst = float(np.max(np.linalg.norm(values, axis=-1)))
        return worst

    def derivative_of(self, f: ScalarField) -> ScalarField:
        """``Y[f] = grad f . Y`` as a field; defined for vector-field variations only."""
        if self.field is None:
            raise PreconditionError("Y[f] needs a vector-field variation")
        Y = self.field
        return ScalarField(
            value=lambda z: np.einsum("...i,...i->...", f.grad(z), Y(z)),
            gradient=lambda z: fd_gradient(
                lambda x: np.einsum("...i,...i->...", f.grad(x), Y(x)), z),
            label=f"Y[{f.label}]",
        )

    @classmethod
    def spatial_bump(cls, fixed_point: Sequence[float], center: Sequence[float], radius: float,
                     direction: Sequence[float]) -> "VariationField":
        """``|z - m0|^2 (R^2 - |z - c|^2)_+^2 e``: zero at m0 and outside the open ball K."""
        m0 = np.asarray(fixed_point, dtype=float)
        c = np.asarray(center, dtype=float)
        e = np.asarray(direction, dtype=float)
        if not m0.shape == c.shape == e.shape:
            raise DimensionMismatchError("bump data", m0.shape, (c.shape, e.shape))
        if radius <= 0:
            raise ConfigurationError(f"ball radius must be positive, got {radius}")

        def Y(z: Array) -> Array:
            z = np.asarray(z, dtype=float)
            near = np.sum((z - m0) ** 2, axis=-1)
            inside = np.clip(radius ** 2 - np.sum((z - c) ** 2, axis=-1), 0.0, None)
            return (near * inside ** 2)[..., None] * e

        boundary = [c + radius * sign * unit for unit in np.eye(c.size) for sign in (1.0, -1.0)]
        return cls(dim=c.size, field=Y, vanishing_points=(m0, *boundary), label="spatial bump")

    @classmethod
    def time_bump(cls, amplitude: Sequence[float], tau: float) -> "VariationField":
        """``sin^2(pi t / tau) a`` on [0, tau] and zero afterwards."""
        a = np.asarray(amplitude, dtype=float)
        if tau <= 0:
            raise ConfigurationError(f"bump duration must be positive, got {tau}")

        def Y(times: Array, states: Array) -> Array:
            t = np.asarray(times, dtype=float)
            profile = np.where(t <= tau, np.sin(np.pi * np.clip(t, 0.0, tau) / tau) ** 2, 0.0)
            return profile[:, None] * np.broadcast_to(a, (t.size, a.size))

        return cls(dim=a.size, process=Y, vanishing_times=(0.0, tau), label="time bump")

    @classmethod
    def rotation_generator(cls) -> "VariationField":
        """Simultaneous rotation of the (q1, q2) and (p1, p2) planes on a 4-dimensional chart."""

        def Y(z: Array) -> Array:
            z = np.asarray(z, dtype=float)
            q1, q2, p1, p2 = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
            return np.stack([-q2, q1, -p2, p1], axis=-1)

        return cls(dim=4, field=Y, label="rotation")


def euler_flow(Y: VariationField) -> Flow:
    """First-order flow ``z + s Y(z)``."""
    if Y.field is None:
        raise PreconditionError("euler_flow needs a vector-field variation")
    return lambda s, states: states + s * Y.field(states)


def translation_flow(direction: Sequence[float]) -> Flow:
    e = np.asarray(direction, dtype=float)
    return lambda s, states: states + s * e


def _driver_values(X: NoisePath, n_points: int) -> Array:
    if n_points > X.times.size:
        raise GridMismatchError("path is longer than its driver", X.times.size, n_points)
    return X.values[:n_points]


def _hamiltonian_integral(h: HamiltonianBundle, states: Array, values: Array) -> Array:
    total = np.zeros(states.shape[0])
    for j, component in enumerate(h):
        total = total + scalar_strat_integral(component(states), values[:, j]).partial_sums
    return total


def action(gamma, X: NoisePath, h: HamiltonianBundle,
           theta: Optional[CovectorField] = None) -> PathIntegralResult:
    """Partial sums of the stochastic action along a path."""
    states = path_states(gamma)
    n = states.shape[1]
    if h.r != X.r:
        raise DimensionMismatchError("driver components", h.r, X.r)
    if theta is None:
        if n % 2:
            raise PreconditionError("the Liouville form needs an even-dimensional chart")
        theta = liouville_form(n // 2)
    values = _driver_values(X, states.shape[0])
    kinetic = strat_line_integral(theta, states).partial_sums
    return PathIntegralResult(kinetic - _hamiltonian_integral(h, states, values),
                              IntegralRule.STRATONOVICH_MIDPOINT)


def _variation_formula(states: Array, values: Array, h: HamiltonianBundle,
                       Y: Array) -> PathIntegralResult:
    dof = states.shape[1] // 2
    covector = -symplectic_flat(Y)
    line = strat_line_integral(lambda _: covector, states).partial_sums
    hamiltonian = np.zeros(states.shape[0])
    for j, component in enumerate(h):
        directional = np.einsum("ki,ki->k", component.grad(states), Y)
        hamiltonian = hamiltonian + scalar_strat_integral(directional, values[:, j]).partial_sums
    boundary = np.einsum("ki,ki->k", states[:, dof:], Y[:, :dof])
    return PathIntegralResult(line - hamiltonian + boundary - boundary[0],
                              IntegralRule.STRATONOVICH_MIDPOINT)


def _grid(gamma, states: Array, X: NoisePath) -> Array:
    times = getattr(gamma, "times", None)
    if times is None:
        times = X.times[: states.shape[0]]
    return np.asarray(times, dtype=float)


def derivative_formula(gamma, X: NoisePath, h: HamiltonianBundle,
                       Y: VariationField) -> PathIntegralResult:
    """Directional derivative of the action along Y, summed on the path grid."""
    states = path_states(gamma)
    if states.shape[1] % 2:
        raise PreconditionError("action derivatives need an even-dimensional chart")
    values = _driver_values(X, states.shape[0])
    return _variation_formula(states, values, h, Y.along(_grid(gamma, states, X), states))


def derivative_fd(gamma, X: NoisePath, h: HamiltonianBundle, flow: Flow,
                  s_values: Sequence[float]) -> PathIntegralResult:
    """Central differences of the action along ``flow`` with Richardson extrapolation.

    The two smallest s give ``D(s1)`` and ``D(s2)``; the extrapolated series
    removes the s^2 term and ``error`` holds ``|extrapolated - D(s1)|``.
    """
    s_values = sorted({abs(float(v)) for v in s_values if v != 0})
    if len(s_values) < 2:
        raise ConfigurationError("finite-difference derivative needs at least two distinct s values")
    states = path_states(gamma)

    def central(s: float) -> Array:
        plus = action(flow(s, states), X, h).partial_sums
        minus = action(flow(-s, states), X, h).partial_sums
        return (plus - minus) / (2.0 * s)

    s1, s2 = s_values[:2]
    d1, d2 = central(s1), central(s2)
    extrapolated = (s2 ** 2 * d1 - s1 ** 2 * d2) / (s2 ** 2 - s1 ** 2)
    extrapolated[0] = 0.0
    return PathIntegralResult(extrapolated, IntegralRule.STRATONOVICH_MIDPOINT,
                              error=np.abs(extrapolated - d1))


class PathwiseDerivative(NamedTuple):
    formula: PathIntegralResult
    finite_difference: PathIntegralResult

    @property
    def discrepancy(self) -> float:
        return float(np.max(np.abs(self.formula.partial_sums - self.finite_difference.partial_sums)))


def pathwise_variation_derivative(gamma, X: NoisePath, h: HamiltonianBundle,
                                  Y_path: Union[VariationField, Array],
                                  s: float = DEFAULT_FD_S) -> PathwiseDerivative:
    """Derivative of the action along ``Gamma + s Y_t`` with its central-difference check."""
    states = path_states(gamma)
    if states.shape[1] % 2:
        raise PreconditionError("action derivatives need an even-dimensional chart")
    if isinstance(Y_path, VariationField):
        Y = Y_path.along(_grid(gamma, states, X), states)
    else:
        Y = np.asarray(Y_path, dtype=float)
    if Y.shape != states.shape:
        raise GridMismatchError("variation must live on the path grid", states.shape[0], Y.shape[0])
    values = _driver_values(X, states.shape[0])
    formula = _variation_formula(states, values, h, Y)

    fd = (action(states + s * Y, X, h).partial_sums - action(states - s * Y, X, h).partial_sums)
    fd = fd / (2.0 * s)
    fd[0] = 0.0
    result = PathwiseDerivative(formula, PathIntegralResult(fd, IntegralRule.STRATONOVICH_MIDPOINT))
    logger.debug("pathwise derivative %.3e (finite-difference discrepancy %.2e)",
                 formula.final, result.discrepancy)
    return result


def contraction_field(Y: VariationField, theta: Optional[CovectorField] = None) -> ScalarField:
    """``i_Y theta`` as a scalar field (``p . Y^q`` for the Liouville form)."""
    if Y.field is None:
        raise PreconditionError("i_Y theta needs a vector-field variation")
    if theta is None:
        if Y.dim % 2:
            raise PreconditionError("the Liouville form needs an even-dimensional chart")
        theta = liouville_form(Y.dim // 2)

    def value(z: Array) -> Array:
        return np.einsum("...i,...i->...", theta(z), Y.field(z))

    return ScalarField(value=value, gradient=lambda z: fd_gradient(value, z),
                       label=f"i_{Y.label or 'Y'}theta")


def noether_check(s: PhaseStructure, h: HamiltonianBundle, Y: VariationField, e: Ensemble,
                  probes: Sequence[Array], tol: float,
                  invariance_tol: float = 1e-8) -> DiagnosticsReport:
    """Strong conservation of ``i_Y theta`` once every ``Y[h_j]`` vanishes at the probes."""
    if not s.symplectic:
        raise PreconditionError("Noether check needs a canonical symplectic chart")
    probes = [s.point(z) for z in probes]
    if not probes:
        raise ConfigurationError("Noether check needs probe points")
    violations = {}
    for label, component in zip(h.basis_labels, h):
        derivative = Y.derivative_of(component)
        violations[label] = max(abs(float(derivative(z))) for z in probes)
    worst = max(violations.values())
    if worst > invariance_tol:
        raise PreconditionError(
            f"variation is not a symmetry of the Hamiltonian: max |Y[h_j]| = {worst:.3e} "
            f"at the probes ({violations})"
        )
    report = strong_conservation_check(contraction_field(Y), e, tol)
    return DiagnosticsReport.from_statistic(
        "noether", report.statistic, tol,
        {**report.details, "max_invariance_defect": worst},
    )
