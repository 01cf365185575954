"""Numerical checks of the structural properties of stochastic Hamiltonian flows.

Every check returns a DiagnosticsReport. They are one-sided surrogates: a pass
means the statistic is within a tolerance tied to the grid, and refinement
sweeps (``fitted_order``) show how the statistic behaves as dt shrinks.
"""
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np

from core.exceptions import ConfigurationError, DimensionMismatchError, PreconditionError
from core.logger import get_diagnostics_logger
from schemas.report import DiagnosticsReport
from stochham.calculus import scalar_ito_integral, scalar_strat_integral
from stochham.integrators import Trajectory
from stochham.montecarlo import (
    Ensemble,
    StoppingTime,
    sup_exceedance_probability,
    stopped_values,
)
from stochham.noise import DriverSpec, NoisePath
from stochham.structures import (
    HamiltonianBundle,
    PhaseStructure,
    ScalarField,
    poisson_bracket,
    stratonovich_operator_matrix,
    vector_field_jacobian,
)

logger = get_diagnostics_logger()

Array = np.ndarray

DEFINITENESS_FLOOR = 1e-6
ANALYTIC_GRADIENT_TOL = 1e-8
FD_GRADIENT_TOL = 1e-5

__all__ = [
    "DiagnosticsReport",
    "strong_conservation_check",
    "weak_conservation_check",
    "involution_check",
    "involution_converse_check",
    "bracket_increment_check",
    "symplectic_defect",
    "dirichlet_certificate",
    "lyapunov_check",
    "stability_trend",
    "closed_form_error",
    "fitted_order",
]


def _log(report: DiagnosticsReport) -> DiagnosticsReport:
    logger.info("%s: statistic %.3e (tolerance %.3e) %s", report.name, report.statistic,
                report.tolerance, "passed" if report.passed else "FAILED")
    return report


def strong_conservation_check(f: ScalarField, e: Ensemble, tol: float) -> DiagnosticsReport:
    """Largest pathwise drift ``|f(Gamma_t) - f(Gamma_0)|`` over paths and recorded times."""
    values = e.values(f)[e.valid_mask]
    drift = np.abs(values - values[:, :1])
    per_path = drift.max(axis=1)
    worst_path = int(np.argmax(per_path))
    details = {
        "observable": f.label,
        "mean_path_drift": float(per_path.mean()),
        "worst_time": float(e.times[int(np.argmax(drift[worst_path]))]),
        "n_paths": int(values.shape[0]),
        "exploded": e.exploded_count,
    }
    return _log(DiagnosticsReport.from_statistic("strong_conservation", drift.max(), tol, details))


def _paired_shift(values: Array, initial: Array) -> tuple:
    diff = values - initial
    n = diff.size
    stderr = float(np.std(diff, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values) - np.mean(initial)), stderr


def weak_conservation_check(f: ScalarField, e: Ensemble, stopping_times: Sequence[StoppingTime],
                            tol: float = 0.0) -> DiagnosticsReport:
    """``|E f(Gamma_{tau ^ T}) - E f(Gamma_0)|`` against three standard errors for each tau."""
    if not stopping_times:
        raise ConfigurationError("weak conservation needs at least one stopping time")
    initial = f(e.initial_states[e.valid_mask])
    excess, rows = [], []
    for tau in stopping_times:
        shift, stderr = _paired_shift(stopped_values(f, e, tau), initial)
        excess.append(abs(shift) - 3.0 * stderr)
        rows.append({"stopping_time": tau.label or f"t={tau.horizon:g}", "shift": shift, "stderr": stderr})
    details = {"observable": f.label, "stopping_times": rows}
    return _log(DiagnosticsReport.from_statistic("weak_conservation", max(excess), tol, details))


def involution_check(s: PhaseStructure, f: ScalarField, h: HamiltonianBundle,
                     probes: Sequence[Array], tol: float = 1e-9) -> DiagnosticsReport:
    """Largest ``|{f, h_j}|`` over probe points and components."""
    probes = [s.point(z) for z in probes]
    if not probes:
        raise ConfigurationError("involution check needs probe points")
    per_component = [max(abs(float(poisson_bracket(s, f, c, z))) for z in probes) for c in h]
    details = {"observable": f.label, "per_component": dict(zip(h.basis_labels, per_component))}
    return _log(DiagnosticsReport.from_statistic("involution", max(per_component), tol, details))


def involution_converse_check(f: ScalarField, e: Ensemble, driver: DriverSpec,
                              t: float) -> DiagnosticsReport:
    """Whether ``Var f(Gamma_t)`` has grown significantly above zero.

    Meaningful only for drivers with uncorrelated components; other drivers are refused.
    """
    if not driver.is_uncorrelated():
        raise PreconditionError("variance growth test needs uncorrelated driver components")
    values = f(e.states[e.valid_mask, e.time_index(t)])
    n = values.size
    if n < 2:
        raise PreconditionError("variance growth test needs at least two paths")
    variance = float(np.var(values, ddof=1))
    stderr = variance * np.sqrt(2.0 / (n - 1))
    details = {"observable": f.label, "t": t, "variance": variance, "variance_stderr": stderr,
               "rule": "variance > 3 stderr"}
    return _log(DiagnosticsReport.from_statistic("involution_converse", 3.0 * stderr - variance, 0.0,
                                                 details, passed=variance > 3.0 * stderr))


def _double_bracket(s: PhaseStructure, f: ScalarField, hj: ScalarField, hi: ScalarField,
                    states: Array) -> Array:
    """``{{f, h_j}, h_i}`` along the states."""
    B = s.tensor_at(states)
    xj = np.einsum("kab,kb->ka", B, hj.grad(states))
    xi = np.einsum("kab,kb->ka", B, hi.grad(states))
    hessian_term = np.einsum("ka,kab,kb->k", xi, f.hess(states), xj)
    jacobian_term = np.einsum("ka,kab,kb->k", f.grad(states), vector_field_jacobian(s, hj, states), xi)
    return hessian_term + jacobian_term


def bracket_increment_check(s: PhaseStructure, h: HamiltonianBundle, traj: Trajectory, X: NoisePath,
                            f: ScalarField, tol: float = 1e-2) -> DiagnosticsReport:
    """Compare ``f(Gamma_t) - f(Gamma_0)`` with the bracket integrals along the path.

    The statistic is the Stratonovich defect; the Itô variant, with its second-order
    term ``0.5 sum_ij {{f,h_j},h_i} kappa_ij dt``, is reported in the details.
    """
    states = traj.states
    N = states.shape[0]
    values = X.values[:N]
    lhs = f(states) - f(states[0])

    brackets = [np.einsum("ka,ka->k", f.grad(states),
                          stratonovich_operator_matrix(s, h, states)[..., j]) for j in range(h.r)]
    strat = sum(scalar_strat_integral(b, values[:, j]).partial_sums for j, b in enumerate(brackets))
    ito = sum(scalar_ito_integral(b, values[:, j]).partial_sums for j, b in enumerate(brackets))
    for i in range(h.r):
        for j in range(h.r):
            rate = X.qv_rates[i, j]
            if rate == 0.0:
                continue
            second = _double_bracket(s, f, h[j], h[i], states[:-1])
            ito = ito + np.concatenate([[0.0], np.cumsum(0.5 * rate * X.dt * second)])

    strat_defect = float(np.max(np.abs(lhs - strat)))
    ito_defect = float(np.max(np.abs(lhs - ito)))
    details = {"observable": f.label, "ito_defect": ito_defect, "increment": float(lhs[-1]),
               "dt": X.dt}
    return _log(DiagnosticsReport.from_statistic("bracket_increment", strat_defect, tol, details))


def symplectic_defect(J_series: Array, Omega: Array, tol: float = 1e-2) -> DiagnosticsReport:
    """``sup_t |J_t^T Omega J_t - Omega|_F`` with the determinant drift in the details."""
    J = np.asarray(J_series, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    if J.ndim != 3 or J.shape[1:] != Omega.shape or Omega.shape[0] != Omega.shape[1]:
        raise DimensionMismatchError("tangent flow", ("N+1",) + Omega.shape, J.shape)
    pulled = np.einsum("kji,jl,klm->kim", J, Omega, J)
    defect = np.linalg.norm(pulled - Omega, axis=(1, 2))
    details = {
        "final_defect": float(defect[-1]),
        "max_det_deviation": float(np.max(np.abs(np.linalg.det(J) - 1.0))),
    }
    return _log(DiagnosticsReport.from_statistic("symplectic_defect", defect.max(), tol, details))


def dirichlet_certificate(f: ScalarField, z0: Array, fd_step: Optional[float] = None,
                          grad_tol: Optional[float] = None,
                          floor: float = DEFINITENESS_FLOOR) -> DiagnosticsReport:
    """Critical point with a one-signed Hessian: the sufficient condition for stability."""
    if fd_step is not None and fd_step <= 0:
        raise ConfigurationError(f"finite-difference stencil is singular for fd_step={fd_step}")
    z0 = np.asarray(z0, dtype=float)
    if grad_tol is None:
        grad_tol = ANALYTIC_GRADIENT_TOL if f.has_hessian else FD_GRADIENT_TOL
    gradient_norm = float(np.linalg.norm(f.grad(z0)))
    eigenvalues = np.linalg.eigvalsh(f.hess(z0, fd_step))
    degenerate = bool(np.any(np.abs(eigenvalues) < floor))
    if np.all(eigenvalues >= floor):
        definiteness = "positive"
    elif np.all(eigenvalues <= -floor):
        definiteness = "negative"
    else:
        definiteness = "degenerate" if degenerate else "indefinite"
    passed = gradient_norm <= grad_tol and definiteness in ("positive", "negative")
    details = {
        "gradient_norm": gradient_norm,
        "eigenvalues": eigenvalues,
        "signs": np.sign(np.where(np.abs(eigenvalues) < floor, 0.0, eigenvalues)),
        "definiteness": definiteness,
        "degenerate": degenerate,
        "floor": floor,
        "rule": "gradient within tolerance and Hessian one-signed",
    }
    return _log(DiagnosticsReport.from_statistic("dirichlet", gradient_norm, grad_tol, details, passed))


def lyapunov_check(V: ScalarField, e: Ensemble, stopping_times: Sequence[StoppingTime],
                   equilibrium: Array, tol: float = 0.0,
                   nonnegativity_tol: float = 1e-12) -> DiagnosticsReport:
    """``E V(Gamma_{tau ^ T}) <= E V(Gamma_0) + 3 stderr`` for every tau.

    V must vanish at the equilibrium and be non-negative on every recorded state.
    """
    v0 = float(V(np.asarray(equilibrium, dtype=float)))
    if abs(v0) > nonnegativity_tol:
        raise PreconditionError(f"V must vanish at the equilibrium, got V(z0)={v0:.3e}")
    lowest = float(np.min(e.values(V)[e.valid_mask]))
    if lowest < -nonnegativity_tol:
        raise PreconditionError(f"V must be non-negative on the tested neighborhood, found {lowest:.3e}")
    if not stopping_times:
        raise ConfigurationError("Lyapunov check needs at least one stopping time")

    initial = V(e.initial_states[e.valid_mask])
    excess, rows = [], []
    for tau in stopping_times:
        shift, stderr = _paired_shift(stopped_values(V, e, tau), initial)
        excess.append(shift - 3.0 * stderr)
        rows.append({"stopping_time": tau.label or f"t={tau.horizon:g}", "shift": shift, "stderr": stderr})
    details = {"observable": V.label, "stopping_times": rows}
    return _log(DiagnosticsReport.from_statistic("lyapunov", max(excess), tol, details))


def stability_trend(ensembles: Mapping[float, Ensemble], f: ScalarField, level: float,
                    horizon: float) -> DiagnosticsReport:
    """Exceedance probabilities for starts approaching an equilibrium.

    ``ensembles`` maps the initial distance to the ensemble started there. The
    statistic is the largest rise of p_hat as the distance shrinks, net of three
    combined standard errors; the trend is reported, never certified.
    """
    if len(ensembles) < 2:
        raise ConfigurationError("a stability trend needs at least two initial distances")
    distances = sorted(ensembles, reverse=True)
    estimates = [sup_exceedance_probability(ensembles[d], f, level, horizon) for d in distances]
    rises = [
        (near.mean - far.mean) - 3.0 * np.hypot(near.stderr, far.stderr)
        for far, near in zip(estimates, estimates[1:])
    ]
    details = {
        "distances": distances,
        "p_hat": [est.mean for est in estimates],
        "stderr": [est.stderr for est in estimates],
        "level": level,
        "horizon": horizon,
        "certified": False,
    }
    return _log(DiagnosticsReport.from_statistic("stability_trend", max(rises), 0.0, details))


def closed_form_error(traj: Trajectory, reference: Trajectory, tol: float) -> DiagnosticsReport:
    """Sup-over-grid and endpoint distance between a simulated path and its exact solution."""
    n = min(traj.states.shape[0], reference.states.shape[0])
    errors = np.linalg.norm(traj.states[:n] - reference.states[:n], axis=1)
    details = {"endpoint_error": float(errors[-1]), "points": n}
    return _log(DiagnosticsReport.from_statistic("closed_form", errors.max(), tol, details))


def fitted_order(dts: Sequence[float], errors: Sequence[float]) -> float:
    """Slope of log(error) against log(dt)."""
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dts.size < 2 or dts.size != errors.size:
        raise ConfigurationError("fitted order needs at least two (dt, error) pairs")
    if np.any(dts <= 0) or np.any(errors <= 0):
        raise ConfigurationError("fitted order needs positive steps and errors")
    slope, _ = np.polyfit(np.log(dts), np.log(errors), 1)
    return float(slope)


def refinement_report(name: str, dts: Sequence[float], statistics: Sequence[float],
                      min_order: float) -> DiagnosticsReport:
    """Pass when a statistic decays at least at ``min_order`` under refinement."""
    order = fitted_order(dts, statistics)
    details: Dict[str, Any] = {"dts": list(dts), "statistics": list(statistics),
                                       "rule": "fitted order >= min_order"}
    return _log(DiagnosticsReport.from_statistic(f"{name}_refinement", min_order - order, 0.0,
                                                 {**details, "fitted_order": order}))
