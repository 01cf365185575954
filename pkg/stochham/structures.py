"""Phase spaces, scalar fields and vector-valued Hamiltonians.

Every callable in this module is vectorized over leading axes: a point set
``z`` of shape (..., n) maps to values of shape (...), gradients (..., n) and
matrices (..., n, n). A single point is the case ``z.shape == (n,)``. Ensembles
rely on this to integrate many paths with one numpy call per step.

Sign convention: ``{f, g} = grad(f)^T B grad(g)`` and ``X_f = B grad(f)``. On
canonical charts ``B = [[0, I], [-I, 0]]`` in (q, p) ordering, so
``X_h = (dh/dp, -dh/dq)``.
"""
import enum
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import get_settings
from core.exceptions import ConfigurationError, DimensionMismatchError, NonFiniteStateError

Array = np.ndarray
ValueFn = Callable[[Array], Array]
Number = Union[int, float]


def fd_step_for(z: Array, fd_step: Optional[float] = None) -> Array:
    """Central-difference step for every point of ``z``.

    Args:
        z: Points of shape (..., n)
        fd_step: Fixed absolute step; the default is FD_STEP * (1 + |z|)

    Returns:
        Array of shape (...) with one step per point
    """
    if fd_step is not None:
        if fd_step <= 0:
            raise ConfigurationError(f"fd_step must be positive, got {fd_step}")
        return np.full(z.shape[:-1], float(fd_step))
    return get_settings().FD_STEP * (1.0 + np.linalg.norm(z, axis=-1))


def fd_gradient(fn: ValueFn, z: Array, fd_step: Optional[float] = None) -> Array:
    """Central-difference gradient of a scalar function, shape (..., n)."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1]
    step = fd_step_for(z, fd_step)
    out = np.empty(z.shape)
    for i in range(n):
        dz = np.zeros(z.shape)
        dz[..., i] = step
        out[..., i] = (np.asarray(fn(z + dz)) - np.asarray(fn(z - dz))) / (2.0 * step)
    return out


def fd_jacobian(fn: ValueFn, z: Array, fd_step: Optional[float] = None) -> Array:
    """Central-difference Jacobian of a vector function, shape (..., m, n)."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1]
    step = fd_step_for(z, fd_step)
    columns = []
    for i in range(n):
        dz = np.zeros(z.shape)
        dz[..., i] = step
        diff = np.asarray(fn(z + dz)) - np.asarray(fn(z - dz))
        columns.append(diff / (2.0 * step[..., None]))
    return np.stack(columns, axis=-1)


def _apply(matrix: Array, vector: Array) -> Array:
    return np.einsum("...ij,...j->...i", matrix, vector)


@dataclass(frozen=True)
class ScalarField:
    """A real function on the chart with its gradient and optional Hessian."""

    value: ValueFn
    gradient: ValueFn
    hessian: Optional[ValueFn] = None
    label: str = ""

    def __call__(self, z: Array) -> Array:
        return np.asarray(self.value(np.asarray(z, dtype=float)), dtype=float)

    def grad(self, z: Array) -> Array:
        return np.asarray(self.gradient(np.asarray(z, dtype=float)), dtype=float)

    @property
    def has_hessian(self) -> bool:
        return self.hessian is not None

    def hess(self, z: Array, fd_step: Optional[float] = None) -> Array:
        """Hessian at ``z``; central differences of the gradient when none is supplied."""
        z = np.asarray(z, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(z), dtype=float)
        H = fd_jacobian(self.gradient, z, fd_step)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def check_gradient(self, probes: Sequence[Array], fd_step: Optional[float] = None) -> float:
        """Largest mismatch between the gradient and central differences of the value."""
        worst = 0.0
        for z in probes:
            z = np.asarray(z, dtype=float)
            worst = max(worst, float(np.max(np.abs(self.grad(z) - fd_gradient(self.value, z, fd_step)))))
        return worst

    def check_hessian(self, probes: Sequence[Array], fd_step: Optional[float] = None) -> float:
        """Largest mismatch between the Hessian and central differences of the gradient."""
        if self.hessian is None:
            raise ConfigurationError(f"field '{self.label}' has no Hessian to check")
        worst = 0.0
        for z in probes:
            z = np.asarray(z, dtype=float)
            diff = self.hess(z) - fd_jacobian(self.gradient, z, fd_step)
            worst = max(worst, float(np.max(np.abs(diff))))
        return worst

    # Algebra

    def __add__(self, other: Union["ScalarField", Number]) -> "ScalarField":
        if isinstance(other, (int, float)):
            return self.shifted(float(other))
        hessian = None
        if self.hessian is not None and other.hessian is not None:
            hessian = lambda z: self.hess(z) + other.hess(z)
        return ScalarField(
            value=lambda z: self(z) + other(z),
            gradient=lambda z: self.grad(z) + other.grad(z),
            hessian=hessian,
            label=f"({self.label} + {other.label})",
        )

    __radd__ = __add__

    def __neg__(self) -> "ScalarField":
        return self.scaled(-1.0)

    def __sub__(self, other: Union["ScalarField", Number]) -> "ScalarField":
        return self + (-other)

    def __mul__(self, other: Union["ScalarField", Number]) -> "ScalarField":
        if isinstance(other, (int, float)):
            return self.scaled(float(other))
        hessian = None
        if self.hessian is not None and other.hessian is not None:

            def hessian(z: Array) -> Array:
                f, g = self(z), other(z)
                df, dg = self.grad(z), other.grad(z)
                cross = df[..., :, None] * dg[..., None, :]
                return (
                    f[..., None, None] * other.hess(z)
                    + g[..., None, None] * self.hess(z)
                    + cross
                    + np.swapaxes(cross, -1, -2)
                )

        return ScalarField(
            value=lambda z: self(z) * other(z),
            gradient=lambda z: self(z)[..., None] * other.grad(z) + other(z)[..., None] * self.grad(z),
            hessian=hessian,
            label=f"({self.label} * {other.label})",
        )

    __rmul__ = __mul__

    def scaled(self, factor: float) -> "ScalarField":
        hessian = None if self.hessian is None else (lambda z: factor * self.hess(z))
        return ScalarField(
            value=lambda z: factor * self(z),
            gradient=lambda z: factor * self.grad(z),
            hessian=hessian,
            label=f"{factor:g}*{self.label}",
        )

    def shifted(self, constant: float) -> "ScalarField":
        return ScalarField(
            value=lambda z: self(z) + constant,
            gradient=self.gradient,
            hessian=self.hessian,
            label=f"({self.label} + {constant:g})",
        )

    # Constructors

    @classmethod
    def constant(cls, c: float, dim: int, label: Optional[str] = None) -> "ScalarField":
        return cls(
            value=lambda z: np.full(np.shape(z)[:-1], float(c)),
            gradient=lambda z: np.zeros(np.shape(z)),
            hessian=lambda z: np.zeros(np.shape(z)[:-1] + (dim, dim)),
            label=label or f"{c:g}",
        )

    @classmethod
    def coordinate(cls, index: int, dim: int, label: Optional[str] = None) -> "ScalarField":
        unit = np.zeros(dim)
        unit[index] = 1.0
        return cls.linear(unit, label=label or f"z{index + 1}")

    @classmethod
    def linear(cls, coefficients: Sequence[float], offset: float = 0.0,
               label: str = "linear") -> "ScalarField":
        a = np.asarray(coefficients, dtype=float)
        n = a.size
        return cls(
            value=lambda z: np.asarray(z, dtype=float) @ a + offset,
            gradient=lambda z: np.broadcast_to(a, np.shape(z)).copy(),
            hessian=lambda z: np.zeros(np.shape(z)[:-1] + (n, n)),
            label=label,
        )

    @classmethod
    def quadratic(cls, matrix: Array, label: str = "quadratic") -> "ScalarField":
        """The form ``0.5 * z^T A z`` for a symmetric matrix A."""
        A = np.asarray(matrix, dtype=float)
        A = 0.5 * (A + A.T)
        return cls(
            value=lambda z: 0.5 * np.einsum("...i,ij,...j->...", z, A, z),
            gradient=lambda z: np.asarray(z, dtype=float) @ A,
            hessian=lambda z: np.broadcast_to(A, np.shape(z)[:-1] + A.shape).copy(),
            label=label,
        )


class StructureKind(str, enum.Enum):
    CANONICAL_SYMPLECTIC = "canonical_symplectic"
    GENERAL_POISSON = "general_poisson"


def canonical_matrix(dof: int) -> Array:
    """The block matrix [[0, I], [-I, 0]] on 2*dof coordinates."""
    eye = np.eye(dof)
    zero = np.zeros((dof, dof))
    return np.block([[zero, eye], [-eye, zero]])


def _hat(mu: Array) -> Array:
    """Matrix of v -> mu x v, batched over leading axes."""
    m1, m2, m3 = mu[..., 0], mu[..., 1], mu[..., 2]
    zero = np.zeros_like(m1)
    return np.stack(
        [
            np.stack([zero, -m3, m2], axis=-1),
            np.stack([m3, zero, -m1], axis=-1),
            np.stack([-m2, m1, zero], axis=-1),
        ],
        axis=-2,
    )


@dataclass(frozen=True)
class PhaseStructure:
    """A Poisson tensor field B(z) on an n-dimensional chart.

    ``tensor_derivative`` optionally returns the array ``dB[..., k, i, j] = d_k B_ij``;
    constant tensors have it identically zero and set ``constant``.
    """

    dim: int
    tensor_at: ValueFn
    kind: StructureKind = StructureKind.GENERAL_POISSON
    casimirs: Tuple[ScalarField, ...] = ()
    tensor_derivative: Optional[ValueFn] = None
    constant: bool = False
    label: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"phase space dimension must be positive, got {self.dim}")
        if self.kind == StructureKind.CANONICAL_SYMPLECTIC and self.dim % 2:
            raise ConfigurationError("canonical symplectic charts need an even dimension")
        object.__setattr__(self, "casimirs", tuple(self.casimirs))

    def point(self, z: Array) -> Array:
        """Validate the trailing dimension and finiteness of ``z``."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 0 or z.shape[-1] != self.dim:
            raise DimensionMismatchError("state", self.dim, z.shape[-1] if z.ndim else 0)
        if not np.all(np.isfinite(z)):
            raise NonFiniteStateError("state contains non-finite entries")
        return z

    def tensor(self, z: Array) -> Array:
        z = self.point(z)
        return np.broadcast_to(np.asarray(self.tensor_at(z), dtype=float), z.shape + (self.dim,))

    @property
    def symplectic(self) -> bool:
        return self.kind == StructureKind.CANONICAL_SYMPLECTIC

    def symplectic_matrix(self) -> Array:
        if not self.symplectic:
            raise ConfigurationError(f"structure '{self.label}' is not canonical symplectic")
        return canonical_matrix(self.dim // 2)

    def check_antisymmetry(self, probes: Sequence[Array]) -> float:
        worst = 0.0
        for z in probes:
            B = self.tensor(z)
            worst = max(worst, float(np.max(np.abs(B + np.swapaxes(B, -1, -2)))))
        return worst

    @classmethod
    def canonical(cls, dof: int) -> "PhaseStructure":
        omega = canonical_matrix(dof)
        n = 2 * dof
        return cls(
            dim=n,
            tensor_at=lambda z: np.broadcast_to(omega, np.shape(z)[:-1] + (n, n)),
            kind=StructureKind.CANONICAL_SYMPLECTIC,
            tensor_derivative=lambda z: np.zeros(np.shape(z)[:-1] + (n, n, n)),
            constant=True,
            label=f"canonical R^{n}",
        )

    @classmethod
    def from_matrix(cls, matrix: Array, casimirs: Sequence[ScalarField] = (),
                    label: str = "constant") -> "PhaseStructure":
        B = np.asarray(matrix, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise DimensionMismatchError("Poisson tensor", "square matrix", B.shape)
        if not np.allclose(B, -B.T):
            raise ConfigurationError("Poisson tensor must be antisymmetric")
        n = B.shape[0]
        return cls(
            dim=n,
            tensor_at=lambda z: np.broadcast_to(B, np.shape(z)[:-1] + (n, n)),
            casimirs=tuple(casimirs),
            tensor_derivative=lambda z: np.zeros(np.shape(z)[:-1] + (n, n, n)),
            constant=True,
            label=label,
        )

    @classmethod
    def lie_poisson_so3(cls) -> "PhaseStructure":
        """Rigid-body structure ``B(mu) v = mu x v`` with Casimir ``|mu|^2``."""
        derivative = np.stack([_hat(e) for e in np.eye(3)])
        casimir = ScalarField.quadratic(2.0 * np.eye(3), label="|mu|^2")
        return cls(
            dim=3,
            tensor_at=_hat,
            casimirs=(casimir,),
            tensor_derivative=lambda z: np.broadcast_to(derivative, np.shape(z)[:-1] + (3, 3, 3)),
            label="so(3)*",
        )


@dataclass(frozen=True)
class HamiltonianBundle:
    """Vector-valued Hamiltonian given by r scalar components and their basis labels."""

    components: Tuple[ScalarField, ...]
    basis_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise ConfigurationError("a Hamiltonian needs at least one component")
        labels = tuple(self.basis_labels) or tuple(f"e{j + 1}" for j in range(len(components)))
        if len(labels) != len(components):
            raise DimensionMismatchError("basis labels", len(components), len(labels))
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "basis_labels", labels)

    @property
    def r(self) -> int:
        return len(self.components)

    def __len__(self) -> int:
        return self.r

    def __iter__(self) -> Iterator[ScalarField]:
        return iter(self.components)

    def __getitem__(self, j: int) -> ScalarField:
        return self.components[j]

    def values(self, z: Array) -> Array:
        return np.stack([c(z) for c in self.components], axis=-1)

    def gradients(self, z: Array) -> Array:
        """Stacked gradients, shape (..., n, r)."""
        return np.stack([c.grad(z) for c in self.components], axis=-1)

    def check_dim(self, dim: int) -> None:
        probe = np.zeros(dim)
        for j, c in enumerate(self.components):
            g = c.grad(probe)
            if g.shape != (dim,):
                raise DimensionMismatchError(f"gradient of component {j}", (dim,), g.shape)

    def with_shift(self, j: int, c: float) -> "HamiltonianBundle":
        components = list(self.components)
        components[j] = components[j] + c
        return HamiltonianBundle(tuple(components), self.basis_labels)

    @classmethod
    def single(cls, field: ScalarField, label: str = "e1") -> "HamiltonianBundle":
        return cls((field,), (label,))


def hamiltonian_vector_field(s: PhaseStructure, f: ScalarField, z: Array) -> Array:
    """Return ``X_f(z) = B(z) grad f(z)``."""
    z = s.point(z)
    return _apply(s.tensor_at(z), f.grad(z))


def poisson_bracket(s: PhaseStructure, f: ScalarField, g: ScalarField, z: Array) -> Array:
    """Return ``{f, g}(z) = grad f^T B grad g``."""
    z = s.point(z)
    return np.einsum("...i,...i->...", f.grad(z), _apply(s.tensor_at(z), g.grad(z)))


def bracket_field(s: PhaseStructure, f: ScalarField, g: ScalarField) -> ScalarField:
    """``{f, g}`` as a field; its gradient uses the Hessian of f and the Jacobian of X_g."""

    def gradient(z: Array) -> Array:
        xg = _apply(s.tensor_at(z), g.grad(z))
        return _apply(f.hess(z), xg) + np.einsum(
            "...ji,...j->...i", vector_field_jacobian(s, g, z), f.grad(z)
        )

    return ScalarField(
        value=lambda z: poisson_bracket(s, f, g, z),
        gradient=gradient,
        label=f"{{{f.label},{g.label}}}",
    )


def jacobi_residual(s: PhaseStructure, f: ScalarField, g: ScalarField, h: ScalarField,
                    z: Array, fd_step: Optional[float] = None) -> Array:
    """Cyclic Jacobi sum with outer brackets taken by central differences of the inner ones."""
    z = s.point(z)
    B = s.tensor_at(z)

    def outer(a: ScalarField, b: ScalarField, c: ScalarField) -> Array:
        inner_grad = fd_gradient(lambda x: poisson_bracket(s, a, b, x), z, fd_step)
        return np.einsum("...i,...i->...", inner_grad, _apply(B, c.grad(z)))

    return np.abs(outer(f, g, h) + outer(g, h, f) + outer(h, f, g))


def stratonovich_operator_matrix(s: PhaseStructure, h: HamiltonianBundle, z: Array) -> Array:
    """Columns are the Hamiltonian vector fields of the components, shape (..., n, r)."""
    return np.einsum("...ij,...jr->...ir", s.tensor_at(z), h.gradients(z))


def stratonovich_operator_apply(s: PhaseStructure, h: HamiltonianBundle, z: Array,
                                u: Array) -> Array:
    """Return ``sum_j u_j X_{h_j}(z)``."""
    z = s.point(z)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != h.r:
        raise DimensionMismatchError("driver increment", h.r, u.shape[-1])
    return _apply(stratonovich_operator_matrix(s, h, z), u)


def vector_field_jacobian(s: PhaseStructure, f: ScalarField, z: Array,
                          fd_step: Optional[float] = None) -> Array:
    """Jacobian of ``X_f``, shape (..., n, n).

    Uses ``B Hess(f) + dB . grad f`` when the tensor derivative is known (the Hessian
    itself may come from finite differences), otherwise differentiates X_f numerically.
    """
    z = np.asarray(z, dtype=float)
    if s.tensor_derivative is None:
        return fd_jacobian(lambda x: _apply(s.tensor_at(x), f.grad(x)), z, fd_step)
    jac = np.einsum("...ij,...jk->...ik", s.tensor_at(z), f.hess(z, fd_step))
    if not s.constant:
        jac = jac + np.einsum("...kij,...j->...ik", s.tensor_derivative(z), f.grad(z))
    return jac


def casimir_nullity(s: PhaseStructure, h: HamiltonianBundle, probes: Sequence[Array]) -> float:
    """Largest ``|{C, h_j}|`` over declared Casimirs, components and probe points."""
    worst = 0.0
    for z in probes:
        for C in s.casimirs:
            for component in h:
                worst = max(worst, float(np.max(np.abs(poisson_bracket(s, C, component, z)))))
    return worst
