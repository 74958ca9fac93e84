"""
Ensembles - dispersion-free trajectory ensembles in phase space and the
finite-dimensional trace arithmetic they are contrasted with.

A trajectory ensemble is a product of delta functions following each
system's Newtonian path. The deltas are realized as normalized Gaussians of
width eps, and distributional statements are recovered by extrapolating a
decreasing eps sequence to zero.
"""

from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp, trapezoid

from workbench.errors import DimensionMismatchError, NumericGuardError
from workbench.spin_algebra import DensityMatrix, projector, require_hermitian, trace_expectation

logger = logging.getLogger(__name__)

QUADRATURE_HALF_WIDTH = 8.0  # in units of eps
QUADRATURE_POINTS = 801
MOMENTUM_STEP = 1e-5
MAX_QUADRATURE_COORDINATES = 3

PathFn = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """
    N systems with positions x0(t) and momenta p0(t), each returned as an
    (N, dim) array by the path callables.
    """

    positions: PathFn
    momenta: PathFn
    n_particles: int
    dimension: int = 1
    hbar: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if self.n_particles < 1 or self.dimension < 1:
            raise ValueError("an ensemble needs at least one particle and one dimension")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_particles, self.dimension)

    def state_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(self.positions(t), dtype=float).reshape(self.shape)
        p = np.asarray(self.momenta(t), dtype=float).reshape(self.shape)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise NumericGuardError(f"Ensemble '{self.label}' path is not finite at t = {t}")
        return x, p

    @classmethod
    def free(cls, x0, p0, mass: float = 1.0, hbar: float = 1.0) -> "TrajectoryEnsemble":
        x0, p0 = _as_paths(x0, p0)
        return cls(
            positions=lambda t: x0 + p0 * t / mass,
            momenta=lambda t: p0,
            n_particles=x0.shape[0],
            dimension=x0.shape[1],
            hbar=hbar,
            label="free",
        )

    @classmethod
    def harmonic(cls, x0, p0, mass: float = 1.0, omega: float = 1.0, hbar: float = 1.0) -> "TrajectoryEnsemble":
        x0, p0 = _as_paths(x0, p0)
        mw = mass * omega
        return cls(
            positions=lambda t: x0 * math.cos(omega * t) + p0 / mw * math.sin(omega * t),
            momenta=lambda t: p0 * math.cos(omega * t) - mw * x0 * math.sin(omega * t),
            n_particles=x0.shape[0],
            dimension=x0.shape[1],
            hbar=hbar,
            label="harmonic",
        )

    @classmethod
    def newtonian(cls, x0, p0, force: Callable[[np.ndarray], np.ndarray], t_span: Tuple[float, float],
                  mass: float = 1.0, hbar: float = 1.0, rtol: float = 1e-10,
                  atol: float = 1e-12) -> "TrajectoryEnsemble":
        """Paths of m x'' = F(x), integrated once over t_span with a dense solution."""
        x0, p0 = _as_paths(x0, p0)
        shape = x0.shape
        size = x0.size

        def rhs(t, y):
            x, p = y[:size].reshape(shape), y[size:].reshape(shape)
            return np.concatenate([(p / mass).ravel(), np.asarray(force(x), dtype=float).ravel()])

        solution = solve_ivp(rhs, t_span, np.concatenate([x0.ravel(), p0.ravel()]),
                             method="DOP853", dense_output=True, rtol=rtol, atol=atol)
        if not solution.success:
            raise NumericGuardError(f"Newtonian integration failed: {solution.message}")
        dense = solution.sol

        def in_span(t: float) -> float:
            if not (t_span[0] <= t <= t_span[1]):
                raise ValueError(f"t = {t} lies outside the integrated window {t_span}")
            return t

        return cls(
            positions=lambda t: dense(in_span(t))[:size].reshape(shape),
            momenta=lambda t: dense(in_span(t))[size:].reshape(shape),
            n_particles=shape[0],
            dimension=shape[1],
            hbar=hbar,
            label="newtonian",
        )


@dataclass(frozen=True)
class SmearedDensity:
    """Gaussian regularization of the delta product at one time."""

    ensemble: TrajectoryEnsemble
    t: float
    eps: float
    centers: np.ndarray = field(repr=False)
    momenta: np.ndarray = field(repr=False)

    @classmethod
    def at(cls, ensemble: TrajectoryEnsemble, t: float, eps: float) -> "SmearedDensity":
        _check_eps(eps)
        x0, p0 = ensemble.state_at(t)
        return cls(ensemble, t, eps, x0, p0)

    def density(self, x: np.ndarray) -> np.ndarray:
        diff = x - self.centers
        return np.prod(_gaussian(diff, self.eps), axis=(-2, -1))


def _as_paths(x0, p0) -> Tuple[np.ndarray, np.ndarray]:
    """Initial data as (N, dim) arrays; scalars and 1-D inputs mean N particles in one dimension."""
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim < 2:
        x0 = x0.reshape(-1, 1)
    p0 = np.asarray(p0, dtype=float).reshape(x0.shape)
    return x0, p0


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def _gaussian(u: np.ndarray, eps: float) -> np.ndarray:
    return np.exp(-0.5 * (u / eps) ** 2) / (math.sqrt(2.0 * math.pi) * eps)


def _as_configuration(e: TrajectoryEnsemble, x) -> np.ndarray:
    """Shape x as (..., N, dim); bare scalars or 1-D arrays are allowed for one coordinate."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim >= 2 and arr.shape[-2:] == e.shape:
        return arr
    if e.n_particles * e.dimension == 1:
        return arr[..., None, None]
    if arr.shape[-1:] == (e.dimension,) and e.n_particles == 1:
        return arr[..., None, :]
    raise DimensionMismatchError(f"positions of shape {arr.shape} do not match ensemble shape {e.shape}")


def wigner_moyal(e: TrajectoryEnsemble, t: float, x, dx, eps: float) -> np.ndarray:
    """
    prod_i delta_eps(x_i - x_i0(t)) exp[(i/hbar) p_i0(t) . dx_i].

    x and dx broadcast against each other; the result drops the trailing
    (N, dim) axes and is a complex scalar for a single configuration.
    """
    _check_eps(eps)
    x = _as_configuration(e, x)
    dx = _as_configuration(e, dx)
    x0, p0 = e.state_at(t)
    amplitude = np.prod(_gaussian(x - x0, eps), axis=(-2, -1))
    phase = np.exp(1j / e.hbar * np.sum(p0 * dx, axis=(-2, -1)))
    return amplitude * phase


def coincidence_density(e: TrajectoryEnsemble, t: float, x, eps: float) -> np.ndarray:
    """The dx -> 0 evaluation prod_i delta_eps(x_i - x_i0(t))."""
    return SmearedDensity.at(e, t, eps).density(_as_configuration(e, x))


def _quadrature_axes(centers: np.ndarray, eps: float, points: int) -> List[np.ndarray]:
    offsets = np.linspace(-QUADRATURE_HALF_WIDTH * eps, QUADRATURE_HALF_WIDTH * eps, points)
    return [c + offsets for c in centers.ravel()]


def _integrate_on_grid(e: TrajectoryEnsemble, t: float, eps: float, integrand, points: int):
    x0, _ = e.state_at(t)
    coordinates = x0.size
    if coordinates > MAX_QUADRATURE_COORDINATES:
        raise ValueError(
            f"tensor-product quadrature supports at most {MAX_QUADRATURE_COORDINATES} coordinates, "
            f"ensemble has {coordinates}"
        )
    if coordinates == 3:
        points = min(points, 121)
    axes = _quadrature_axes(x0, eps, points)
    mesh = np.meshgrid(*axes, indexing="ij")
    configuration = np.stack(mesh, axis=-1).reshape(mesh[0].shape + e.shape)
    values = integrand(configuration)
    for axis in reversed(axes):
        values = trapezoid(values, axis, axis=-1)
    return values


def ensemble_trace(e: TrajectoryEnsemble, t: float, eps: float, points: int = QUADRATURE_POINTS) -> float:
    """Integral of the coincidence density over configuration space (limit, then integrate)."""
    density = SmearedDensity.at(e, t, eps)
    return float(_integrate_on_grid(e, t, eps, density.density, points))


def displacement_trace(e: TrajectoryEnsemble, t: float, eps: float,
                       displacements: Sequence[float] = (1e-3, 5e-4, 2.5e-4),
                       points: int = QUADRATURE_POINTS) -> complex:
    """
    Integrate rho(x, dx) at shrinking uniform displacements dx and extrapolate
    dx -> 0 (integrate, then take the limit).
    """
    steps = np.asarray(displacements, dtype=float)
    _require_decreasing(steps, "displacements")
    values = []
    for h in steps:
        dx = np.full(e.shape, h)
        values.append(_integrate_on_grid(e, t, eps, lambda x: wigner_moyal(e, t, x, dx, eps), points))
    values = np.asarray(values, dtype=complex)
    real = richardson_to_zero(steps, values.real)
    imag = richardson_to_zero(steps, values.imag, even=False)
    return complex(real, imag)


def momentum_readout(e: TrajectoryEnsemble, t: float, x, eps: float = 0.1,
                     step: float = MOMENTUM_STEP) -> np.ndarray:
    """
    hbar d(arg rho)/d(dx) at dx = 0 for each coordinate, by central difference.
    Returns an (..., N, dim) array of momenta.
    """
    x = _as_configuration(e, x)
    readout = np.zeros(np.broadcast_shapes(x.shape, e.shape))
    for i in range(e.n_particles):
        for k in range(e.dimension):
            dx = np.zeros(e.shape)
            dx[i, k] = step
            forward = wigner_moyal(e, t, x, dx, eps)
            backward = wigner_moyal(e, t, x, -dx, eps)
            # arg of the ratio avoids branch cuts between the two samples
            readout[..., i, k] = e.hbar * np.angle(forward / backward) / (2.0 * step)
    return readout


def _require_decreasing(values: np.ndarray, name: str) -> None:
    if values.size < 2 or np.any(values <= 0) or np.any(np.diff(values) >= 0):
        raise ValueError(f"{name} must be a strictly decreasing sequence of positive values, got {values.tolist()}")


def richardson_to_zero(h: np.ndarray, values: np.ndarray, even: bool = True) -> float:
    """
    Extrapolate values(h) to h = 0 through the interpolating polynomial in
    h^2 (even=True) or h.
    """
    h = np.asarray(h, dtype=float)
    variable = h**2 if even else h
    coefficients = np.polynomial.polynomial.polyfit(variable, np.asarray(values, dtype=float), deg=len(h) - 1)
    return float(coefficients[0])


class DispersionExtrapolation(NamedTuple):
    eps: np.ndarray
    dispersions: np.ndarray
    extrapolant: float

    def to_frame(self, observable: str) -> pd.DataFrame:
        frame = pd.DataFrame({"eps": self.eps, "dispersion": self.dispersions})
        frame = pd.concat([frame, pd.DataFrame({"eps": [0.0], "dispersion": [self.extrapolant]})],
                          ignore_index=True)
        frame.insert(0, "observable", observable)
        return frame


def classical_dispersion(e: TrajectoryEnsemble, t: float, f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                         eps_sequence: Sequence[float] = (0.1, 0.05, 0.025), particle: int = 0,
                         axis: int = 0, points: int = QUADRATURE_POINTS) -> DispersionExtrapolation:
    """
    <f^2> - <f>^2 of a phase-space observable f(x, p) of one coordinate under
    the smeared ensemble, extrapolated to eps -> 0.

    The momentum argument is read from the Wigner-Moyal phase at every
    quadrature node, so observables involving p see the ensemble's own
    momentum rather than a separately supplied value.

    Args:
        e: Trajectory ensemble
        t: Evaluation time
        f: Observable f(x, p) of the selected coordinate, vectorized
        eps_sequence: Strictly decreasing smearing widths
        particle: Index of the particle whose coordinate is varied
        axis: Coordinate axis of that particle
        points: Quadrature nodes per width

    Returns:
        DispersionExtrapolation with the per-eps dispersions and the eps -> 0 extrapolant
    """
    eps_values = np.asarray(eps_sequence, dtype=float)
    _require_decreasing(eps_values, "eps sequence")
    x0, _ = e.state_at(t)
    dispersions = []
    for eps in eps_values:
        offsets = np.linspace(-QUADRATURE_HALF_WIDTH * eps, QUADRATURE_HALF_WIDTH * eps, points)
        nodes = np.broadcast_to(x0, (points,) + e.shape).copy()
        nodes[:, particle, axis] = x0[particle, axis] + offsets
        weight = _gaussian(offsets, eps)
        weight = weight / trapezoid(weight, offsets)
        p = momentum_readout(e, t, nodes, eps=eps)[:, particle, axis]
        values = np.asarray(f(nodes[:, particle, axis], p), dtype=float) * np.ones(points)
        # shifted by the value on the trajectory; the variance is shift invariant
        shifted = values - values[points // 2]
        mean = trapezoid(weight * shifted, offsets)
        second = trapezoid(weight * shifted**2, offsets)
        dispersions.append(second - mean * mean)
    dispersions = np.asarray(dispersions)
    extrapolant = richardson_to_zero(eps_values, dispersions)
    logger.info(f"Dispersion extrapolation over eps={eps_values.tolist()}: {extrapolant:.3e}")
    return DispersionExtrapolation(eps_values, dispersions, extrapolant)


def von_neumann_gap(rho, R: np.ndarray) -> float:
    """Tr(rho R^2) - 2 Tr(rho R)^2 + Tr(rho R)^2 Tr(rho 1)."""
    rho = rho if isinstance(rho, DensityMatrix) else DensityMatrix(np.asarray(rho, dtype=complex))
    R = require_hermitian(R)
    if R.shape != rho.matrix.shape:
        raise DimensionMismatchError(f"rho {rho.matrix.shape} and R {R.shape} differ in dimension")
    mean = trace_expectation(rho, R)
    identity_mean = trace_expectation(rho, np.eye(rho.dimension))
    return trace_expectation(rho, R @ R) - 2.0 * mean * mean + mean * mean * identity_mean


def projector_consistency(rho, phi) -> Tuple[float, float]:
    """(<phi|rho|phi>, <phi|rho|phi>^2) evaluated through R = |phi><phi| and R^2."""
    R = projector(phi)
    lhs = trace_expectation(rho, R @ R)
    rhs = trace_expectation(rho, R) ** 2
    return lhs, rhs


def gap_table(dimensions: Sequence[int]) -> pd.DataFrame:
    """von Neumann gap for rho = I_d and the rank-1 projector onto the first basis vector."""
    rows = []
    for d in dimensions:
        if d < 1:
            raise ValueError(f"dimension must be positive, got {d}")
        basis = np.zeros(d, dtype=complex)
        basis[0] = 1.0
        rows.append({"d": int(d), "gap": von_neumann_gap(DensityMatrix.identity(d), projector(basis))})
    return pd.DataFrame(rows, columns=["d", "gap"])
