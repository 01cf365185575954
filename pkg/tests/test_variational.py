import numpy as np
import pytest

from core.exceptions import ConfigurationError, GridMismatchError, PreconditionError
from stochham.integrators import IntegratorConfig
from stochham.montecarlo import EnsembleSpec, run_ensemble
from stochham.noise import ComponentSpec, DriverSpec, sample_path
from stochham.structures import HamiltonianBundle, PhaseStructure, ScalarField
from stochham.systems import SystemSpec
from stochham.variational import (
    VariationField,
    action,
    check_exact_form,
    contraction_field,
    derivative_fd,
    derivative_formula,
    euler_flow,
    liouville_form,
    noether_check,
    pathwise_variation_derivative,
    symplectic_flat,
    translation_flow,
)


@pytest.fixture
def oscillator_path(oscillator):
    X = oscillator.sample_noise(1.0, 1e-3, seed=17)
    traj = oscillator.simulate(oscillator.initial_state, X, IntegratorConfig(dt=1e-3))
    return traj, X


@pytest.fixture
def classical_path(deterministic_oscillator, time_path, heun_config):
    traj = deterministic_oscillator.simulate(np.array([1.0, 0.0]), time_path, heun_config)
    return traj, time_path


@pytest.fixture
def rotation_system(rotation_invariant_bundle):
    return SystemSpec(
        name="isotropic_oscillator",
        structure=PhaseStructure.canonical(2),
        hamiltonian=rotation_invariant_bundle,
        driver=DriverSpec((ComponentSpec.affine(1.0, (0.5,)),), channels=1),
        params={},
        initial_state=np.array([1.0, 0.0, 0.0, 1.0]),
    )


@pytest.fixture
def probes_4d():
    rng = np.random.default_rng(99)
    return [rng.normal(size=4) for _ in range(4)]


def test_liouville_form(canonical, probe_points):
    theta = liouville_form(1)
    np.testing.assert_allclose(theta(np.array([1.0, 2.0])), [2.0, 0.0])
    assert check_exact_form(theta, canonical, probe_points) < 1e-8


def test_symplectic_flat():
    np.testing.assert_allclose(symplectic_flat(np.array([1.0, 2.0, 3.0, 4.0])), [-3.0, -4.0, 1.0, 2.0])


def test_action_of_a_constant_path(harmonic, time_path):
    states = np.tile([1.0, 2.0], (time_path.times.size, 1))
    S = action(states, time_path, HamiltonianBundle.single(harmonic))
    np.testing.assert_allclose(S.partial_sums, -2.5 * time_path.times, atol=1e-12)


def test_action_of_a_closed_polygon_is_minus_its_area():
    N = 64
    angles = 2.0 * np.pi * np.arange(N + 1) / N
    loop = np.column_stack([np.cos(angles), np.sin(angles)])
    X = sample_path(DriverSpec.time_only(), 1.0, 1.0 / N, seed=0)
    S = action(loop, X, HamiltonianBundle.single(ScalarField.constant(0.0, 2)))
    assert S.final == pytest.approx(-(N / 2) * np.sin(2.0 * np.pi / N), abs=1e-12)


def test_classical_action_of_the_oscillator(classical_path, deterministic_oscillator):
    traj, X = classical_path
    S = action(traj, X, deterministic_oscillator.hamiltonian)
    assert S.final == pytest.approx(-0.25 * np.sin(2.0), abs=1e-5)


def test_gauge_shift_changes_the_action_by_the_driver(oscillator, oscillator_path):
    traj, X = oscillator_path
    shifted = oscillator.hamiltonian.with_shift(0, 0.7)
    difference = action(traj, X, shifted).partial_sums - action(traj, X, oscillator.hamiltonian).partial_sums
    np.testing.assert_allclose(difference, -0.7 * X.values[:, 0], atol=1e-10)


def test_action_needs_a_long_enough_driver(harmonic):
    X = sample_path(DriverSpec.time_only(), 0.1, 0.01, seed=0)
    with pytest.raises(GridMismatchError):
        action(np.zeros((20, 2)), X, HamiltonianBundle.single(harmonic))


def test_zero_variation_has_zero_derivative(oscillator, oscillator_path):
    traj, X = oscillator_path
    Y = VariationField(dim=2, field=lambda z: np.zeros_like(z))
    D = derivative_formula(traj, X, oscillator.hamiltonian, Y)
    np.testing.assert_array_equal(D.partial_sums, 0.0)


def test_formula_matches_finite_differences_for_a_bump(oscillator, oscillator_path):
    traj, X = oscillator_path
    Y = VariationField.spatial_bump([0.0, 0.0], [1.0, 0.0], 1.0, [1.0, 1.0])
    assert Y.check_vanishing() < 1e-12
    formula = derivative_formula(traj, X, oscillator.hamiltonian, Y)
    fd = derivative_fd(traj, X, oscillator.hamiltonian, euler_flow(Y), [1e-4, 2e-4])
    np.testing.assert_allclose(formula.partial_sums, fd.partial_sums, atol=1e-8)
    assert np.max(fd.error) < 1e-6


def test_formula_matches_finite_differences_for_a_translation(oscillator, oscillator_path):
    traj, X = oscillator_path
    direction = [0.3, -0.2]
    Y = VariationField(dim=2, field=lambda z: np.broadcast_to(direction, z.shape).copy())
    formula = derivative_formula(traj, X, oscillator.hamiltonian, Y)
    fd = derivative_fd(traj, X, oscillator.hamiltonian, translation_flow(direction), [1e-3, 1e-4])
    np.testing.assert_allclose(formula.partial_sums, fd.partial_sums, atol=1e-8)


def test_finite_differences_need_two_step_sizes(oscillator, oscillator_path):
    traj, X = oscillator_path
    with pytest.raises(ConfigurationError):
        derivative_fd(traj, X, oscillator.hamiltonian, translation_flow([1.0, 0.0]), [1e-4, -1e-4])


def test_pathwise_variation_matches_finite_differences(oscillator, oscillator_path):
    traj, X = oscillator_path
    bump = VariationField.time_bump([1.0, 0.5], 0.5)
    assert bump.check_vanishing() < 1e-12
    result = pathwise_variation_derivative(traj, X, oscillator.hamiltonian, bump)
    assert result.discrepancy < 1e-8
    # the bump is over by t = 0.5, so the derivative is frozen afterwards
    half = int(round(0.5 / X.dt))
    assert result.formula.partial_sums[-1] == pytest.approx(result.formula.partial_sums[half], abs=1e-12)


def test_pathwise_variation_shape_mismatch(oscillator, oscillator_path):
    traj, X = oscillator_path
    with pytest.raises(GridMismatchError):
        pathwise_variation_derivative(traj, X, oscillator.hamiltonian, np.zeros((10, 2)))


def test_solutions_are_critical_points(deterministic_oscillator, classical_path):
    """Bump variations vanishing at both ends leave the action of a solution stationary."""
    traj, X = classical_path
    h = deterministic_oscillator.hamiltonian
    bump = VariationField.time_bump([1.0, 1.0], 1.0)
    at_solution = pathwise_variation_derivative(traj, X, h, bump).formula.final

    # second variation along b(t) (1, 1) is -2 int sin^4(pi t) dt = -3/4
    perturbed = traj.states + 0.05 * bump.along(traj.times, traj.states)
    off_solution = pathwise_variation_derivative(perturbed, X, h, bump).formula.final

    assert abs(at_solution) < 1e-4
    assert off_solution == pytest.approx(-0.0375, abs=1e-4)


def test_variation_field_validation():
    with pytest.raises(ConfigurationError):
        VariationField(dim=2)
    with pytest.raises(ConfigurationError):
        VariationField.time_bump([1.0, 0.0], 0.0)
    with pytest.raises(PreconditionError):
        euler_flow(VariationField.time_bump([1.0, 0.0], 1.0))


def test_contraction_of_the_rotation_is_angular_momentum():
    L = contraction_field(VariationField.rotation_generator())
    assert float(L(np.array([1.0, 0.0, 0.0, 1.0]))) == pytest.approx(1.0)
    assert float(L(np.array([0.0, 1.0, 1.0, 0.0]))) == pytest.approx(-1.0)


def test_noether_conservation_for_rotation_symmetry(rotation_system, probes_4d):
    ensemble = run_ensemble(rotation_system, EnsembleSpec(n_paths=5, master_seed=8, T=1.0, dt=1e-2))
    report = noether_check(rotation_system.structure, rotation_system.hamiltonian,
                           VariationField.rotation_generator(), ensemble, probes_4d, tol=1e-2)
    assert report.name == "noether"
    assert report.passed
    assert report.details["max_invariance_defect"] < 1e-8


def test_noether_refuses_a_broken_symmetry(rotation_system, probes_4d):
    ensemble = run_ensemble(rotation_system, EnsembleSpec(n_paths=2, master_seed=8, T=0.1, dt=1e-2))
    broken = HamiltonianBundle.single(ScalarField.coordinate(0, 4))
    with pytest.raises(PreconditionError):
        noether_check(rotation_system.structure, broken, VariationField.rotation_generator(), ensemble,
                      [np.array([0.0, 1.0, 0.0, 0.0])], tol=1e-2)


def test_noether_needs_a_symplectic_chart(rigid_body_structure, rotation_system, probes_4d):
    ensemble = run_ensemble(rotation_system, EnsembleSpec(n_paths=2, master_seed=8, T=0.1, dt=1e-2))
    with pytest.raises(PreconditionError):
        noether_check(rigid_body_structure, rotation_system.hamiltonian,
                      VariationField.rotation_generator(), ensemble, probes_4d, tol=1e-2)
