import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st

from core.exceptions import ConfigurationError, DimensionMismatchError, NonFiniteStateError
from stochham.structures import (
    HamiltonianBundle,
    PhaseStructure,
    ScalarField,
    bracket_field,
    casimir_nullity,
    fd_jacobian,
    fd_step_for,
    hamiltonian_vector_field,
    jacobi_residual,
    poisson_bracket,
    stratonovich_operator_apply,
    stratonovich_operator_matrix,
    vector_field_jacobian,
)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)
vectors = st.lists(finite, min_size=2, max_size=2)
vectors3 = st.lists(finite, min_size=3, max_size=3)


def test_canonical_bracket_of_coordinates(canonical):
    """{q, p} = 1 with the (q, p) ordering."""
    q = ScalarField.coordinate(0, 2)
    p = ScalarField.coordinate(1, 2)
    z = np.array([0.3, -0.7])
    assert float(poisson_bracket(canonical, q, p, z)) == pytest.approx(1.0)
    assert float(poisson_bracket(canonical, p, q, z)) == pytest.approx(-1.0)


def test_hamiltonian_vector_field_of_harmonic_energy(canonical, harmonic):
    X = hamiltonian_vector_field(canonical, harmonic, np.array([1.0, 2.0]))
    np.testing.assert_allclose(X, [2.0, -1.0])


def test_vector_field_is_batched(canonical, harmonic):
    z = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 3.0]])
    X = hamiltonian_vector_field(canonical, harmonic, z)
    assert X.shape == (3, 2)
    np.testing.assert_allclose(X[2], [3.0, -2.0])


@hypothesis_settings(max_examples=50, deadline=None)
@given(a=vectors, b=vectors, z=vectors)
def test_bracket_antisymmetry(a, b, z):
    s = PhaseStructure.canonical(1)
    f = ScalarField.linear(a)
    g = ScalarField.linear(b)
    point = np.asarray(z)
    assert float(poisson_bracket(s, f, g, point)) == pytest.approx(
        -float(poisson_bracket(s, g, f, point)), abs=1e-9
    )


@hypothesis_settings(max_examples=30, deadline=None)
@given(a=vectors, b=vectors, c=vectors, z=vectors)
def test_bracket_leibniz_rule(a, b, c, z):
    s = PhaseStructure.canonical(1)
    f, g, h = ScalarField.linear(a), ScalarField.linear(b), ScalarField.linear(c)
    point = np.asarray(z)
    lhs = poisson_bracket(s, f * g, h, point)
    rhs = f(point) * poisson_bracket(s, g, h, point) + g(point) * poisson_bracket(s, f, h, point)
    assert float(lhs) == pytest.approx(float(rhs), rel=1e-9, abs=1e-7)


def test_rigid_body_bracket_sign(rigid_body_structure):
    """{mu1, mu2} = -mu3 for B(mu) v = mu x v."""
    mu1 = ScalarField.coordinate(0, 3)
    mu2 = ScalarField.coordinate(1, 3)
    mu = np.array([0.2, -0.4, 1.5])
    assert float(poisson_bracket(rigid_body_structure, mu1, mu2, mu)) == pytest.approx(-1.5)


def test_rigid_body_casimir_commutes_with_kinetic_energy(rigid_body_structure, probe_points_3d):
    kinetic = ScalarField.quadratic(np.diag([1.0, 0.5, 1.0 / 3.0]))
    torque = ScalarField.linear([0.1, 0.0, 0.0])
    h = HamiltonianBundle((kinetic, torque))
    assert casimir_nullity(rigid_body_structure, h, probe_points_3d) < 1e-12


def test_jacobi_identity_on_lie_poisson_structure(rigid_body_structure, probe_points_3d):
    f = ScalarField.quadratic(np.diag([1.0, 2.0, 3.0]))
    g = ScalarField.linear([0.5, -1.0, 2.0])
    h = ScalarField.quadratic(np.array([[1.0, 0.3, 0.0], [0.3, 0.5, 0.1], [0.0, 0.1, 2.0]]))
    for z in probe_points_3d:
        assert float(jacobi_residual(rigid_body_structure, f, g, h, z)) < 1e-6


def test_vector_field_jacobian_canonical_quadratic(canonical):
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = ScalarField.quadratic(A)
    jac = vector_field_jacobian(canonical, f, np.array([0.4, -1.2]))
    np.testing.assert_allclose(jac, canonical.symplectic_matrix() @ A)


def test_vector_field_jacobian_includes_tensor_derivative(rigid_body_structure):
    kinetic = ScalarField.quadratic(np.diag([1.0, 0.5, 0.25]))
    mu = np.array([0.7, -0.2, 0.9])
    analytic = vector_field_jacobian(rigid_body_structure, kinetic, mu)
    numeric = fd_jacobian(lambda z: hamiltonian_vector_field(rigid_body_structure, kinetic, z), mu)
    np.testing.assert_allclose(analytic, numeric, atol=1e-8)


def test_bracket_field_gradient_matches_finite_differences(canonical, probe_points):
    f = ScalarField.quadratic(np.array([[1.0, 0.2], [0.2, 3.0]]))
    g = ScalarField.coordinate(0, 2) * ScalarField.coordinate(1, 2)
    assert bracket_field(canonical, f, g).check_gradient(probe_points) < 1e-6


def test_stratonovich_operator_matrix_columns(canonical, harmonic):
    h = HamiltonianBundle((harmonic, ScalarField.coordinate(0, 2)))
    z = np.array([1.0, 2.0])
    H = stratonovich_operator_matrix(canonical, h, z)
    assert H.shape == (2, 2)
    np.testing.assert_allclose(H[:, 0], [2.0, -1.0])
    np.testing.assert_allclose(H[:, 1], [0.0, -1.0])
    np.testing.assert_allclose(stratonovich_operator_apply(canonical, h, z, [1.0, 1.0]), [2.0, -2.0])


@hypothesis_settings(max_examples=30, deadline=None)
@given(z=vectors3, dX=vectors3, dY=vectors3, a=finite, b=finite)
def test_stratonovich_operator_is_linear_in_the_increment(z, dX, dY, a, b):
    s = PhaseStructure.lie_poisson_so3()
    h = HamiltonianBundle((ScalarField.quadratic(np.diag([1.0, 0.5, 0.25])),
                           ScalarField.coordinate(0, 3), ScalarField.coordinate(2, 3)))
    point, u, v = np.asarray(z), np.asarray(dX), np.asarray(dY)
    apply = lambda w: stratonovich_operator_apply(s, h, point, w)
    np.testing.assert_allclose(apply(a * u + b * v), a * apply(u) + b * apply(v), rtol=1e-9, atol=1e-6)


def test_stratonovich_operator_rejects_wrong_increment(canonical, harmonic):
    with pytest.raises(DimensionMismatchError):
        stratonovich_operator_apply(canonical, HamiltonianBundle.single(harmonic), np.zeros(2), [1.0, 2.0])


def test_scalar_field_algebra_hessians(probe_points):
    q = ScalarField.coordinate(0, 2)
    p = ScalarField.coordinate(1, 2)
    f = (q * p).scaled(2.0) + 1.5
    np.testing.assert_allclose(f.hess(np.zeros(2)), [[0.0, 2.0], [2.0, 0.0]])
    assert f.check_hessian(probe_points) < 1e-8
    assert f.check_gradient(probe_points) < 1e-8
    assert float(f(np.array([1.0, 2.0]))) == pytest.approx(5.5)


def test_hessian_falls_back_to_finite_differences(probe_points):
    field = ScalarField(value=lambda z: np.sum(z ** 3, axis=-1), gradient=lambda z: 3.0 * z ** 2)
    z = np.array([1.0, -2.0])
    np.testing.assert_allclose(field.hess(z), np.diag([6.0, -12.0]), atol=1e-6)


def test_check_hessian_requires_hessian():
    field = ScalarField(value=lambda z: z[..., 0], gradient=lambda z: np.ones_like(z))
    with pytest.raises(ConfigurationError):
        field.check_hessian([np.zeros(2)])


def test_fd_step_must_be_positive():
    with pytest.raises(ConfigurationError):
        fd_step_for(np.zeros(2), 0.0)


def test_point_validation(canonical):
    with pytest.raises(DimensionMismatchError):
        canonical.point(np.zeros(3))
    with pytest.raises(NonFiniteStateError):
        canonical.point(np.array([np.nan, 0.0]))


def test_from_matrix_requires_antisymmetry():
    with pytest.raises(ConfigurationError):
        PhaseStructure.from_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_canonical_structure_needs_even_dimension():
    from stochham.structures import StructureKind

    with pytest.raises(ConfigurationError):
        PhaseStructure(dim=3, tensor_at=lambda z: np.zeros((3, 3)), kind=StructureKind.CANONICAL_SYMPLECTIC)


def test_bundle_labels_and_shift(harmonic):
    h = HamiltonianBundle((harmonic, ScalarField.coordinate(0, 2)))
    assert h.basis_labels == ("e1", "e2")
    shifted = h.with_shift(0, 2.0)
    z = np.array([1.0, 1.0])
    assert float(shifted[0](z)) == pytest.approx(float(h[0](z)) + 2.0)
    np.testing.assert_allclose(shifted.gradients(z), h.gradients(z))


def test_bundle_rejects_mismatched_labels(harmonic):
    with pytest.raises(DimensionMismatchError):
        HamiltonianBundle((harmonic,), ("a", "b"))
