import numpy as np
import pytest

from core.exceptions import ConfigurationError, DimensionMismatchError, GridMismatchError
from stochham.noise import (
    ComponentSpec,
    DriverSpec,
    NoisePath,
    grid_steps,
    qv_rate,
    realized_covariation,
    realized_covariation_matrix,
    sample_path,
)


def test_grid_steps():
    assert grid_steps(1.0, 0.1) == 10
    assert grid_steps(2.0, 2.0 ** -10) == 2048


def test_grid_steps_rejects_fractional_horizon():
    with pytest.raises(ConfigurationError):
        grid_steps(1.0, 0.3)


def test_grid_steps_rejects_non_positive_inputs():
    with pytest.raises(ConfigurationError):
        grid_steps(1.0, 0.0)
    with pytest.raises(ConfigurationError):
        grid_steps(-1.0, 0.1)


def test_grid_steps_overflow():
    with pytest.raises(ConfigurationError, match="step count overflow"):
        grid_steps(1.0, 1e-3, max_steps=100)


def test_same_seed_gives_identical_paths():
    spec = DriverSpec.time_and_brownian(2)
    a = sample_path(spec, 1.0, 0.01, seed=11)
    b = sample_path(spec, 1.0, 0.01, seed=11)
    c = sample_path(spec, 1.0, 0.01, seed=12)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_dyadic_grids_are_coupled():
    """Halving dt on a dyadic grid only inserts bridge midpoints."""
    spec = DriverSpec.time_and_brownian(1)
    coarse = sample_path(spec, 1.0, 1.0 / 8, seed=5)
    fine = sample_path(spec, 1.0, 1.0 / 16, seed=5)
    np.testing.assert_array_equal(fine.values[::2, 1], coarse.values[:, 1])


def test_time_component_is_the_grid():
    path = sample_path(DriverSpec.time_only(), 0.5, 0.1, seed=0)
    np.testing.assert_allclose(path.values[:, 0], [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    np.testing.assert_allclose(path.times, path.values[:, 0])
    assert path.n_steps == 5
    assert path.r == 1
    assert path.T == pytest.approx(0.5)


def test_qv_matrices():
    affine = DriverSpec((ComponentSpec.affine(1.0, (0.5,)),), channels=1)
    np.testing.assert_allclose(affine.qv_matrix(), [[0.25]])
    np.testing.assert_allclose(DriverSpec.time_and_brownian(2).qv_matrix(), np.diag([0.0, 1.0, 1.0]))
    assert DriverSpec.time_and_brownian(2).is_uncorrelated()


def test_correlated_driver_is_detected():
    spec = DriverSpec(
        (ComponentSpec.brownian(0), ComponentSpec.affine(0.0, (1.0,), label="copy")),
        channels=1,
    )
    assert not spec.is_uncorrelated()
    assert qv_rate(spec, 0, 1) == pytest.approx(1.0)


def test_qv_rate_index_out_of_range():
    with pytest.raises(ConfigurationError):
        qv_rate(DriverSpec.time_only(), 0, 1)


def test_driver_channel_out_of_range():
    with pytest.raises(ConfigurationError):
        DriverSpec((ComponentSpec.brownian(1),), channels=1)


def test_driver_loadings_dimension():
    with pytest.raises(DimensionMismatchError):
        DriverSpec((ComponentSpec.affine(0.0, (1.0, 2.0)),), channels=1)


def test_paths_must_start_at_zero():
    with pytest.raises(ConfigurationError):
        NoisePath.from_values(0.1, np.array([1.0, 2.0]), np.zeros((1, 1)))


def test_realized_quadratic_variation_matches_rate():
    spec = DriverSpec((ComponentSpec.time(), ComponentSpec.affine(0.3, (0.5, 1.0))), channels=2)
    path = sample_path(spec, 1.0, 1e-4, seed=3)
    realized = realized_covariation_matrix(path)
    expected = spec.qv_matrix() * path.T
    assert realized[1, 1] == pytest.approx(expected[1, 1], rel=0.05)
    assert realized[0, 0] == pytest.approx(1e-4, rel=1e-6)


def test_realized_covariation_partial_sums():
    a = np.array([0.0, 1.0, 3.0])
    b = np.array([0.0, 2.0, 1.0])
    np.testing.assert_allclose(realized_covariation(a, b), [0.0, 2.0, 0.0])
    with pytest.raises(GridMismatchError):
        realized_covariation(a, b[:2])


def test_csv_replay(tmp_path):
    spec = DriverSpec.time_and_brownian(1)
    path = sample_path(spec, 1.0, 0.125, seed=9)
    target = tmp_path / "driver.csv"
    path.to_csv(target)

    replayed = NoisePath.from_csv(target, qv_rates=spec.qv_matrix(), seed=9)
    np.testing.assert_array_equal(replayed.values, path.values)
    assert replayed.dt == pytest.approx(0.125)


def test_forcing_needs_a_sampler():
    spec = DriverSpec((ComponentSpec.forcing("xi", (1.0,)),), channels=1)
    with pytest.raises(ConfigurationError):
        sample_path(spec, 1.0, 0.1, seed=0)


def test_forcing_sampler_columns():
    spec = DriverSpec((ComponentSpec.time(), ComponentSpec.forcing("xi", (1.0,))), channels=1)

    def forcing(times, W, seed):
        return {"xi": 2.0 * W[:, 0]}

    path = sample_path(spec, 1.0, 0.25, seed=4, forcing=forcing)
    plain = sample_path(DriverSpec.time_and_brownian(1), 1.0, 0.25, seed=4)
    np.testing.assert_allclose(path.values[:, 1], 2.0 * plain.values[:, 1])
    assert path.labels == ("t", "xi")


def brownian_endpoints(T, dt, n_paths, channels=1):
    spec = DriverSpec.time_and_brownian(channels)
    return np.array([sample_path(spec, T, dt, seed=seed).values[-1, 1:] for seed in range(n_paths)])


def test_brownian_endpoints_have_mean_zero_and_variance_t():
    T = 2.0
    endpoints = brownian_endpoints(T, 0.25, 4000, channels=2)
    n = endpoints.shape[0]
    assert np.all(np.abs(endpoints.mean(axis=0)) <= 3.0 * np.sqrt(T / n))
    assert np.all(np.abs(endpoints.var(axis=0, ddof=1) - T) <= 3.0 * T * np.sqrt(2.0 / (n - 1)))


def test_monte_carlo_error_follows_the_clt_rate():
    endpoints = brownian_endpoints(1.0, 0.125, 4000)[:, 0]
    sizes = np.array([250, 1000, 4000])
    stderrs = [endpoints[:n].std(ddof=1) / np.sqrt(n) for n in sizes]
    slope, _ = np.polyfit(np.log(sizes), np.log(stderrs), 1)
    assert slope == pytest.approx(-0.5, abs=0.1)


@pytest.mark.slow
def test_brownian_endpoint_law_on_a_fine_grid():
    endpoints = brownian_endpoints(1.0, 1e-4, 10_000)[:, 0]
    assert abs(endpoints.mean()) <= 3.0 / np.sqrt(endpoints.size)
    assert endpoints.var(ddof=1) == pytest.approx(1.0, rel=0.05)
