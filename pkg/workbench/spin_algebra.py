"""
Spin Algebra - finite-dimensional linear algebra for spin-1/2 observables

Operators and states are plain read-only NumPy arrays in the fixed product
basis |++>, |+->, |-+>, |-->. |+> and |-> are the sigma_z eigenvectors with a
real, positive first nonzero component.
"""

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, Union
import logging
import math

import numpy as np

from workbench.errors import (
    DimensionMismatchError,
    NonHermitianError,
    NormalizationError,
    NumericGuardError,
)

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
IMAGINARY_TOL = 1e-10
UNIT_TOL = 1e-12
EIGENVALUE_FLOOR = -1e-10


def _frozen(values, dtype=complex) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


IDENTITY2 = _frozen(np.eye(2))
PAULI_X = _frozen([[0, 1], [1, 0]])
PAULI_Y = _frozen([[0, -1j], [1j, 0]])
PAULI_Z = _frozen([[1, 0], [0, -1]])

KET_PLUS = _frozen([1, 0])
KET_MINUS = _frozen([0, 1])


@dataclass(frozen=True)
class Direction:
    """Unit vector in 3-space: the setting of a spin meter."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        norm_sq = self.x * self.x + self.y * self.y + self.z * self.z
        if not math.isfinite(norm_sq) or abs(norm_sq - 1.0) > UNIT_TOL:
            raise NormalizationError(
                f"Direction ({self.x}, {self.y}, {self.z}) is not a unit vector (|n|^2 = {norm_sq})"
            )

    @classmethod
    def from_angles(cls, theta: float, phi: float = 0.0) -> "Direction":
        """Polar angle theta from +z, azimuth phi from +x."""
        return cls(
            math.sin(theta) * math.cos(phi),
            math.sin(theta) * math.sin(phi),
            math.cos(theta),
        )

    @classmethod
    def from_vector(cls, vector: Sequence[float], normalize: bool = False) -> "Direction":
        v = np.asarray(vector, dtype=float)
        if v.shape != (3,):
            raise DimensionMismatchError(f"Direction needs 3 components, got shape {v.shape}")
        if normalize:
            length = float(np.linalg.norm(v))
            if length == 0.0 or not math.isfinite(length):
                raise NormalizationError("Cannot normalize a zero or non-finite vector")
            v = v / length
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dot(self, other: "Direction") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def angle_to(self, other: "Direction") -> float:
        return math.acos(max(-1.0, min(1.0, self.dot(other))))

    def rotated(self, rotation: np.ndarray) -> "Direction":
        """Apply a 3x3 rotation matrix, renormalizing away rounding."""
        return Direction.from_vector(np.asarray(rotation) @ self.as_array(), normalize=True)


Vector = Union[np.ndarray, Sequence[complex]]


def _as_direction(n) -> Direction:
    if isinstance(n, Direction):
        return n
    return Direction.from_vector(n)


def is_hermitian(M: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    """True for a square matrix equal to its conjugate transpose within tol."""
    M = np.asarray(M)
    return M.ndim == 2 and M.shape[0] == M.shape[1] and bool(np.allclose(M, M.conj().T, rtol=0.0, atol=tol))


def require_hermitian(M: np.ndarray, name: str = "operator") -> np.ndarray:
    """
    Check that M is a square Hermitian matrix

    Args:
        M: Candidate operator
        name: Label used in the error message

    Returns:
        M as a complex array

    Raises:
        DimensionMismatchError: M is not square
        NonHermitianError: M differs from its conjugate transpose beyond HERMITIAN_TOL
    """
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"{name} must be a square matrix, got shape {M.shape}")
    if not is_hermitian(M):
        deviation = float(np.max(np.abs(M - M.conj().T)))
        raise NonHermitianError(f"{name} is not Hermitian (max |M - M^dagger| = {deviation:.3e})")
    return M


def _real_or_raise(value: complex, what: str) -> float:
    if abs(value.imag) > IMAGINARY_TOL:
        raise NumericGuardError(f"{what} has imaginary residue {value.imag:.3e}")
    return float(value.real)


def spin_along(n) -> np.ndarray:
    """sigma_n = nx sigma_x + ny sigma_y + nz sigma_z for a unit direction n."""
    d = _as_direction(n)
    return _frozen(d.x * PAULI_X + d.y * PAULI_Y + d.z * PAULI_Z)


def singlet() -> np.ndarray:
    """(|+-> - |-+>)/sqrt(2)."""
    s = 1.0 / math.sqrt(2.0)
    return _frozen([0.0, s, -s, 0.0])


def tensor(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kronecker product in the fixed basis order (first factor is particle 1)."""
    return _frozen(np.kron(np.asarray(A), np.asarray(B)))


def product_state(first: Vector, second: Vector) -> np.ndarray:
    """
    Two-particle product state in the fixed basis order

    Args:
        first: Particle-1 spinor, e.g. KET_PLUS
        second: Particle-2 spinor

    Returns:
        Read-only 4-vector first (x) second
    """
    return _frozen(np.kron(np.asarray(first, dtype=complex), np.asarray(second, dtype=complex)))


def norm(psi: Vector) -> float:
    """Euclidean norm |psi|."""
    return float(np.linalg.norm(np.asarray(psi, dtype=complex)))


def matrix_element(bra: Vector, M: np.ndarray, ket: Vector) -> complex:
    """
    Matrix element <bra|M|ket>, conjugating the bra

    Args:
        bra: Left state
        M: Operator of shape (bra.size, ket.size)
        ket: Right state

    Returns:
        Complex matrix element
    """
    bra = np.asarray(bra, dtype=complex)
    ket = np.asarray(ket, dtype=complex)
    M = np.asarray(M, dtype=complex)
    if M.shape != (bra.size, ket.size):
        raise DimensionMismatchError(
            f"Cannot form <bra|M|ket> with bra {bra.size}, M {M.shape}, ket {ket.size}"
        )
    return complex(np.vdot(bra, M @ ket))


def expectation(psi: Vector, M: np.ndarray) -> float:
    """
    Expectation value <psi|M|psi> / <psi|psi>

    Args:
        psi: Nonzero state vector
        M: Hermitian operator matching psi in dimension

    Returns:
        Real expectation value; NumericGuardError if the imaginary residue exceeds IMAGINARY_TOL
    """
    psi = np.asarray(psi, dtype=complex)
    M = require_hermitian(M)
    if psi.ndim != 1 or M.shape[0] != psi.size:
        raise DimensionMismatchError(f"State of size {psi.size} does not match operator {M.shape}")
    weight = np.vdot(psi, psi).real
    if weight <= 0.0:
        raise NormalizationError("Expectation of the zero vector is undefined")
    value = np.vdot(psi, M @ psi) / weight
    return _real_or_raise(complex(value), "expectation")


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate v so its first nonzero component is real and positive."""
    nonzero = np.flatnonzero(np.abs(v) > 1e-14)
    if nonzero.size == 0:
        return v
    lead = v[nonzero[0]]
    return v * (abs(lead) / lead)


def eigen(M: np.ndarray) -> List[Tuple[float, np.ndarray]]:
    """
    Eigen-decomposition of a Hermitian matrix

    Args:
        M: Hermitian operator

    Returns:
        List of (eigenvalue, eigenvector) with eigenvalues descending; vectors are
        orthonormal with their first nonzero component real and positive
    """
    M = require_hermitian(M)
    values, vectors = np.linalg.eigh(M)
    order = np.argsort(values)[::-1]
    pairs = []
    for idx in order:
        vec = _fix_phase(vectors[:, idx])
        pairs.append((float(values[idx]), _frozen(vec)))
    return pairs


def operator_function(M: np.ndarray, f: Callable[[float], float]) -> np.ndarray:
    """f(M) by spectral calculus: sum of f(lambda) |v><v|."""
    result = np.zeros_like(np.asarray(M, dtype=complex))
    for value, vec in eigen(M):
        result = result + f(value) * np.outer(vec, vec.conj())
    return _frozen(result)


def projector(phi: Vector) -> np.ndarray:
    """|phi><phi| for a normalized state."""
    phi = np.asarray(phi, dtype=complex)
    length = norm(phi)
    if abs(length - 1.0) > UNIT_TOL:
        raise NormalizationError(f"Projector needs a normalized state, |phi| = {length}")
    return _frozen(np.outer(phi, phi.conj()))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """
    Hermitian positive semidefinite matrix. The trace is recorded, not forced,
    so both normalized densities and the identity candidate (trace d) exist.
    """

    matrix: np.ndarray

    def __post_init__(self):
        M = require_hermitian(self.matrix, name="density matrix")
        lowest = float(np.min(np.linalg.eigvalsh(M)))
        if lowest < EIGENVALUE_FLOOR:
            raise NumericGuardError(f"Density matrix has negative eigenvalue {lowest:.3e}")
        object.__setattr__(self, "matrix", _frozen(M))

    @classmethod
    def pure(cls, psi: Vector) -> "DensityMatrix":
        return cls(projector(psi))

    @classmethod
    def identity(cls, dimension: int) -> "DensityMatrix":
        return cls(np.eye(dimension, dtype=complex))

    @classmethod
    def maximally_mixed(cls, dimension: int) -> "DensityMatrix":
        return cls(np.eye(dimension, dtype=complex) / dimension)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return _real_or_raise(complex(np.trace(self.matrix)), "trace")

    @property
    def is_normalized(self) -> bool:
        return abs(self.trace - 1.0) <= IMAGINARY_TOL


def _as_density(rho) -> DensityMatrix:
    return rho if isinstance(rho, DensityMatrix) else DensityMatrix(np.asarray(rho, dtype=complex))


def trace_expectation(rho, R: np.ndarray) -> float:
    """Tr(rho R)."""
    rho = _as_density(rho)
    R = np.asarray(R, dtype=complex)
    if R.shape != rho.matrix.shape:
        raise DimensionMismatchError(f"rho {rho.matrix.shape} and R {R.shape} differ in dimension")
    return _real_or_raise(complex(np.trace(rho.matrix @ R)), "Tr(rho R)")


def dispersion(state_or_rho, R: np.ndarray) -> float:
    """<R^2> - <R>^2 under the pure-state rule for vectors or the trace rule for densities."""
    R = require_hermitian(R)
    R2 = R @ R
    if isinstance(state_or_rho, DensityMatrix) or np.asarray(state_or_rho).ndim == 2:
        rho = _as_density(state_or_rho)
        mean = trace_expectation(rho, R)
        return trace_expectation(rho, R2) - mean * mean
    mean = expectation(state_or_rho, R)
    return expectation(state_or_rho, R2) - mean * mean
