import numpy as np
import pytest

from core.exceptions import ConfigurationError, NoClosedFormError, UnknownSystemError
from stochham.integrators import IntegratorConfig
from stochham.montecarlo import EnsembleSpec, expectation, run_ensemble
from stochham.noise import realized_covariation
from stochham.systems import (
    CATALOG,
    build_system,
    closed_form_reference,
    damped_oscillator_constants,
    langevin_mean,
    list_catalog,
    moment_matrix,
    oscillator_moment_ode,
    ou_forcing,
)

EXPECTED_SYSTEMS = {
    "bismut_diffusion",
    "damped_oscillator",
    "integrable_torus",
    "circle_brownian",
    "parallelizable_bm",
    "rigid_body",
    "langevin",
    "inverted_pendulum",
}


def test_catalog_contents():
    assert set(CATALOG) == EXPECTED_SYSTEMS
    entries = list_catalog()
    assert len(entries) == 8
    oscillator = next(e for e in entries if e["name"] == "damped_oscillator")
    assert oscillator["category"] == "hamiltonian"
    assert oscillator["params"]["nu"]["default"] == 0.5


@pytest.mark.parametrize("name", sorted(EXPECTED_SYSTEMS))
def test_every_system_builds_with_defaults(name):
    system = build_system(name)
    assert system.initial_state.shape == (system.dim,)
    assert len(system.state_labels) == system.dim
    assert system.observables


def test_unknown_system():
    with pytest.raises(UnknownSystemError) as excinfo:
        build_system("double_pendulum")
    assert "known systems" in str(excinfo.value)
    assert isinstance(excinfo.value, KeyError)


def test_parameter_validation():
    with pytest.raises(ConfigurationError):
        build_system("damped_oscillator", {"mass": 2.0})
    with pytest.raises(ConfigurationError):
        build_system("damped_oscillator", {"m": 0.0})
    with pytest.raises(ConfigurationError):
        build_system("damped_oscillator", {"nu": "loud"})
    with pytest.raises(ConfigurationError):
        build_system("bismut_diffusion", {"r": 1.5})
    with pytest.raises(ConfigurationError):
        build_system("bismut_diffusion", {"r": 3})


def test_bismut_kick_count_bounds_are_published():
    bismut = next(e for e in list_catalog() if e["name"] == "bismut_diffusion")
    r = bismut["params"]["r"]
    assert (r["minimum"], r["maximum"], r["type"]) == (1, 2, "integer")
    assert "1" in r["description"] and "2" in r["description"]
    assert build_system("bismut_diffusion", {"r": 2}).driver.r == 2


def test_unknown_observable(circle):
    with pytest.raises(ConfigurationError):
        circle.observable("energy")


def test_damped_oscillator_constants():
    lam, k = damped_oscillator_constants({"m": 1.0, "rho": 1.0, "nu": 0.5})
    assert lam == pytest.approx(0.25)
    assert k == pytest.approx(1.015625)


def test_moment_matrix_reproduces_the_damped_equation():
    params = {"m": 1.0, "rho": 1.0, "nu": 0.5}
    A = moment_matrix(params)
    lam, k = damped_oscillator_constants(params)
    # q'' = (A^2)[0] . z and q' = A[0] . z must satisfy m q'' + lam q' + k q = 0 for every z
    combination = (A @ A)[0] + lam * A[0] + k * np.array([1.0, 0.0])
    np.testing.assert_allclose(combination, 0.0, atol=1e-12)


def test_moment_ode_residual():
    solution = oscillator_moment_ode({"nu": 0.5}, T=10.0, dt_ode=1e-3)
    assert solution.residual <= 1e-6
    assert solution.q[0] == 1.0
    assert abs(solution.q[-1]) < 1.0


def test_moment_ode_validation():
    with pytest.raises(ConfigurationError):
        oscillator_moment_ode({"nu": 0.5}, T=0.0, dt_ode=1e-3)


def test_rigid_body_has_no_closed_form():
    rigid = build_system("rigid_body")
    X = rigid.sample_noise(0.1, 0.01, seed=0)
    with pytest.raises(NoClosedFormError):
        closed_form_reference(rigid, X)


def test_oscillator_follows_its_closed_form(oscillator):
    X = oscillator.sample_noise(1.0, 1e-3, seed=12)
    traj = oscillator.simulate(oscillator.initial_state, X, IntegratorConfig(dt=1e-3))
    exact = closed_form_reference(oscillator, X)
    assert np.max(np.abs(traj.states - exact.states)) < 1e-2
    energy = oscillator.observable("energy")
    np.testing.assert_allclose(energy(exact.states), 0.5, atol=1e-12)


def test_torus_action_is_exactly_constant():
    torus = build_system("integrable_torus", {"a": 2.0, "sigma": 0.5})
    X = torus.sample_noise(1.0, 1e-2, seed=1)
    traj = torus.simulate(np.array([0.3, 0.8]), X, IntegratorConfig(dt=1e-2))
    np.testing.assert_array_equal(traj.states[:, 1], 0.8)
    exact = closed_form_reference(torus, X, np.array([0.3, 0.8]))
    np.testing.assert_allclose(traj.states, exact.states, atol=1e-12)


def test_torus_without_noise_drops_the_brownian_component():
    torus = build_system("integrable_torus", {"sigma": 0.0})
    assert torus.driver.r == 1
    assert torus.hamiltonian.r == 1


def test_parallelizable_bm_matches_its_closed_form():
    system = build_system("parallelizable_bm", {"R1": 2.0, "R2": 0.5})
    X = system.sample_noise(1.0, 1e-2, seed=3)
    z0 = np.array([0.1, 0.2, 0.3, 0.4])
    traj = system.simulate(z0, X, IntegratorConfig(dt=1e-2))
    exact = closed_form_reference(system, X, z0)
    np.testing.assert_allclose(traj.states, exact.states, atol=1e-10)


def test_rigid_body_casimir_drift_is_small():
    rigid = build_system("rigid_body")
    X = rigid.sample_noise(1.0, 1e-3, seed=4)
    traj = rigid.simulate(rigid.initial_state, X, IntegratorConfig(dt=1e-3))
    casimir = rigid.observable("casimir")(traj.states)
    assert np.max(np.abs(casimir - casimir[0])) < 1e-3


def test_langevin_mean():
    langevin = build_system("langevin")
    spec = EnsembleSpec(n_paths=4000, master_seed=5, T=1.0, dt=1e-2)
    ensemble = run_ensemble(langevin, spec)
    expected = langevin_mean(langevin.params, langevin.initial_state, np.array([1.0]))[0]
    for i, name in enumerate(("q", "v")):
        estimate = expectation(langevin.observable(name), ensemble, 1.0)
        # Euler-Maruyama bias at dt = 1e-2 stays below 5e-3
        assert abs(estimate.mean - expected[i]) <= 3.0 * estimate.stderr + 5e-3


def test_langevin_mean_without_friction():
    mean = langevin_mean({"lam": 0.0}, (1.0, 2.0), np.array([0.0, 1.5]))
    np.testing.assert_allclose(mean, [[1.0, 2.0], [4.0, 2.0]])


def test_hamiltonian_pendulum_requires_no_friction():
    with pytest.raises(ConfigurationError):
        build_system("inverted_pendulum", {"hamiltonian": 1})
    pendulum = build_system("inverted_pendulum", {"hamiltonian": 1, "lam": 0.0})
    assert pendulum.is_hamiltonian
    assert pendulum.driver.r == 3


def test_pendulum_forcing_path():
    pendulum = build_system("inverted_pendulum")
    X = pendulum.sample_noise(1.0, 1e-2, seed=6)
    assert X.values[0, 1] == 0.0
    assert X.labels == ("t", "zdot")
    traj = pendulum.simulate(pendulum.initial_state, X, IntegratorConfig(dt=1e-2))
    assert np.all(np.isfinite(traj.states))


def test_ou_forcing_columns():
    times = np.arange(101) * 0.01
    channels = np.zeros((101, 1))
    channels[1:, 0] = np.cumsum(np.random.default_rng(0).normal(scale=0.1, size=100))
    forced = ou_forcing(times, channels, seed=7)
    assert forced["zdot"][0] == 0.0
    assert forced["zdot_qv"][0] == 0.0
    assert np.all(np.diff(forced["zdot_qv"]) >= 0.0)
    np.testing.assert_allclose(forced["zdot_qv"], realized_covariation(forced["zdot"], forced["zdot"]))
    again = ou_forcing(times, channels, seed=7)
    np.testing.assert_array_equal(again["zdot"], forced["zdot"])
