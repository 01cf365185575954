"""Discrete stochastic integrals along sampled paths.

Stratonovich integrals use the midpoint (trapezoidal in the integrand) partition
sums ``sum 0.5 * (Z_k + Z_{k+1}) dX_k``; Itô integrals use left points. All
results are partial-sum series on the path grid starting at 0.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from core.exceptions import GridMismatchError, NonFiniteStateError
from stochham.noise import NoisePath
from stochham.structures import HamiltonianBundle, PhaseStructure

logger = logging.getLogger(__name__)

Array = np.ndarray
CovectorField = Callable[[Array], Array]


class IntegralRule(str, enum.Enum):
    STRATONOVICH_MIDPOINT = "stratonovich_midpoint"
    ITO_LEFTPOINT = "ito_leftpoint"


@dataclass(frozen=True)
class PathIntegralResult:
    partial_sums: Array
    rule: IntegralRule
    error: Optional[Array] = None

    def __post_init__(self):
        sums = np.asarray(self.partial_sums, dtype=float)
        if sums.size and sums[0] != 0.0:
            raise ValueError("partial sums must start at 0")
        object.__setattr__(self, "partial_sums", sums)

    @property
    def final(self) -> float:
        return float(self.partial_sums[-1])

    @property
    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.partial_sums)))

    def at(self, index: int) -> float:
        return float(self.partial_sums[index])

    def stopped(self, index: int) -> "PathIntegralResult":
        """The integral stopped at grid index ``index``: constant afterwards."""
        sums = self.partial_sums.copy()
        sums[index + 1:] = sums[index]
        error = None
        if self.error is not None:
            error = self.error.copy()
            error[index + 1:] = error[index]
        return PathIntegralResult(sums, self.rule, error)

    def __add__(self, other: "PathIntegralResult") -> "PathIntegralResult":
        if other.partial_sums.shape != self.partial_sums.shape:
            raise GridMismatchError("cannot add integrals on different grids",
                                    self.partial_sums.size, other.partial_sums.size)
        return PathIntegralResult(self.partial_sums + other.partial_sums, self.rule)

    def __neg__(self) -> "PathIntegralResult":
        return PathIntegralResult(-self.partial_sums, self.rule, self.error)

    def __sub__(self, other: "PathIntegralResult") -> "PathIntegralResult":
        return self + (-other)

    def scaled(self, factor: float) -> "PathIntegralResult":
        return PathIntegralResult(factor * self.partial_sums, self.rule)


def path_states(gamma) -> Array:
    """States of a Trajectory or a raw (N+1, n) array."""
    states = getattr(gamma, "states", gamma)
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if not np.all(np.isfinite(states)):
        raise NonFiniteStateError("path contains non-finite states")
    return states


def _checked(values: Array, what: str) -> Array:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteStateError(f"{what} evaluated to non-finite values along the path")
    return values


def _partial_sums(terms: Array) -> Array:
    out = np.zeros(terms.shape[0] + 1)
    out[1:] = np.cumsum(terms)
    return out


def _same_grid(a: Array, b: Array) -> None:
    if a.shape[0] != b.shape[0]:
        raise GridMismatchError("integrand and integrator must share a grid", a.shape[0], b.shape[0])


def strat_line_integral(alpha: CovectorField, gamma) -> PathIntegralResult:
    """Midpoint sums of the 1-form ``alpha`` along the path."""
    states = path_states(gamma)
    a = _checked(alpha(states), "covector field")
    terms = np.einsum("ki,ki->k", 0.5 * (a[:-1] + a[1:]), np.diff(states, axis=0))
    return PathIntegralResult(_partial_sums(terms), IntegralRule.STRATONOVICH_MIDPOINT)


def ito_line_integral(alpha: CovectorField, gamma) -> PathIntegralResult:
    """Left-point sums of the 1-form ``alpha`` along the path."""
    states = path_states(gamma)
    a = _checked(alpha(states), "covector field")
    terms = np.einsum("ki,ki->k", a[:-1], np.diff(states, axis=0))
    return PathIntegralResult(_partial_sums(terms), IntegralRule.ITO_LEFTPOINT)


def scalar_strat_integral(Z: Array, X: Array) -> PathIntegralResult:
    Z = _checked(Z, "integrand")
    X = _checked(X, "integrator")
    _same_grid(Z, X)
    terms = 0.5 * (Z[:-1] + Z[1:]) * np.diff(X)
    return PathIntegralResult(_partial_sums(terms), IntegralRule.STRATONOVICH_MIDPOINT)


def scalar_ito_integral(Z: Array, X: Array) -> PathIntegralResult:
    Z = _checked(Z, "integrand")
    X = _checked(X, "integrator")
    _same_grid(Z, X)
    terms = Z[:-1] * np.diff(X)
    return PathIntegralResult(_partial_sums(terms), IntegralRule.ITO_LEFTPOINT)


def hamilton_residual(s: PhaseStructure, h: HamiltonianBundle, gamma, X: NoisePath,
                      alpha: CovectorField) -> PathIntegralResult:
    """Residual of the integral form of the stochastic Hamilton equations.

    ``int <alpha, dGamma> + sum_j int <dh_j, B alpha>(Gamma) dX^j``, both Stratonovich.
    The series stays near zero exactly when the path solves the equations driven by X.
    """
    states = path_states(gamma)
    if states.shape[0] != X.times.size:
        raise GridMismatchError("path and driver grids differ", X.times.size, states.shape[0])
    if h.r != X.r:
        raise GridMismatchError("Hamiltonian and driver component counts differ", X.r, h.r)

    residual = strat_line_integral(alpha, states)
    sharp = np.einsum("kij,kj->ki", s.tensor_at(states), _checked(alpha(states), "covector field"))
    for j, component in enumerate(h):
        Z = np.einsum("ki,ki->k", component.grad(states), sharp)
        residual = residual + scalar_strat_integral(Z, X.values[:, j])

    logger.info("Hamilton residual: sup %.3e, final %.3e", residual.sup_abs, residual.final)
    return residual
