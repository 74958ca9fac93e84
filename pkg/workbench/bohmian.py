"""
Bohmian Dynamics - wave evolution, polar decomposition, quantum potential,
equation residuals, guidance trajectories and two-particle velocities.

Conventions:
- Psi = R exp(iS/hbar); particles move with dx/dt = +grad S / m, the sign
  under which the continuity equation conserves probability.
- The quantum Hamilton-Jacobi equation carries the kinetic term
  (grad S)^2 / 2m.
- Nodes with R < 1e-6 max(R) are masked from Q, phase gradients and
  residual statistics; masked values are NaN in every returned field.
- Boundaries are periodic (spectral propagation).
"""

from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import kstest

from workbench import random_streams
from workbench.errors import DimensionMismatchError, NormalizationError, NumericGuardError

logger = logging.getLogger(__name__)

NORM_TOL = 1e-9
R_FLOOR = 1e-6
STEP_PHASE_LIMIT = 0.1
BOUNDARY_DENSITY_LIMIT = 1e-12

EXIT_NONE = ""
EXIT_GRID = "exited"
EXIT_MASK = "masked"


def periodic_axis(start: float, stop: float, points: int) -> Tuple[float, float]:
    """(origin, spacing) of a periodic lattice covering [start, stop) with `points` nodes."""
    if points < 2 or not stop > start:
        raise ValueError(f"invalid lattice [{start}, {stop}) with {points} points")
    return start, (stop - start) / points


@dataclass(frozen=True, eq=False)
class WaveGrid:
    """A complex wave function on a uniform 1D or 2D lattice."""

    psi: np.ndarray
    origin: Tuple[float, ...]
    spacing: float
    mass: float = 1.0
    hbar: float = 1.0
    t: float = 0.0

    def __post_init__(self):
        psi = np.array(self.psi, dtype=complex)
        if psi.ndim not in (1, 2):
            raise DimensionMismatchError(f"WaveGrid supports 1 or 2 dimensions, got {psi.ndim}")
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if len(origin) != psi.ndim:
            raise DimensionMismatchError(f"origin has {len(origin)} entries for a {psi.ndim}D grid")
        if not self.spacing > 0 or not self.mass > 0 or not self.hbar > 0:
            raise ValueError("spacing, mass and hbar must be positive")
        if not np.all(np.isfinite(psi)):
            raise NumericGuardError("wave function contains non-finite values")
        norm = float(np.sum(np.abs(psi) ** 2) * self.spacing**psi.ndim)
        if abs(norm - 1.0) > NORM_TOL:
            raise NormalizationError(f"discrete norm {norm:.12f} differs from 1 by more than {NORM_TOL}")
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_values(cls, values: np.ndarray, origin, spacing: float, mass: float = 1.0,
                    hbar: float = 1.0, t: float = 0.0) -> "WaveGrid":
        """Normalize raw samples and wrap them."""
        values = np.asarray(values, dtype=complex)
        weight = math.sqrt(float(np.sum(np.abs(values) ** 2)) * spacing**values.ndim)
        if weight == 0.0:
            raise NormalizationError("cannot normalize a vanishing wave function")
        return cls(values / weight, origin, spacing, mass, hbar, t)

    @property
    def dimension(self) -> int:
        return self.psi.ndim

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.psi.shape

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @property
    def axes(self) -> List[np.ndarray]:
        return [o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.shape)]

    def mesh(self) -> List[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density()) * self.cell_volume)

    def with_psi(self, psi: np.ndarray, t: float) -> "WaveGrid":
        return replace(self, psi=psi, t=t)

    def sample(self, function) -> np.ndarray:
        """Evaluate function(*coordinates) on the lattice (e.g. a potential)."""
        return np.asarray(function(*self.mesh()), dtype=float) * np.ones(self.shape)


def centroid(w: WaveGrid) -> np.ndarray:
    """
    Mean position under |Psi|^2

    Args:
        w: Wave on its lattice

    Returns:
        Array with one coordinate per lattice dimension
    """
    P = w.density() * w.cell_volume
    return np.array([float(np.sum(P * coord)) for coord in w.mesh()])


def packet_width(w: WaveGrid) -> float:
    """sqrt(2) times the position standard deviation: sigma of Psi ~ exp(-x^2 / 2 sigma^2)."""
    if w.dimension != 1:
        raise DimensionMismatchError("packet_width is defined for 1D grids")
    x = w.axes[0]
    P = w.density() * w.cell_volume
    mean = float(np.sum(P * x))
    return math.sqrt(2.0 * float(np.sum(P * (x - mean) ** 2)))


def boundary_density(w: WaveGrid) -> float:
    """Largest |Psi|^2 on the outermost lattice nodes."""
    P = w.density()
    edges = [np.take(P, [0, -1], axis=k) for k in range(w.dimension)]
    return float(max(np.max(e) for e in edges))


class SplitStepPropagator:
    """
    Strang-split spectral propagator: half potential kick, full kinetic step in
    frequency space, half potential kick. Exponentials are cached per dt.
    """

    def __init__(self, potential: np.ndarray, shape: Tuple[int, ...], spacing: float,
                 dt: float, mass: float = 1.0, hbar: float = 1.0):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        potential = np.asarray(potential, dtype=float)
        if potential.shape != tuple(shape):
            raise DimensionMismatchError(f"potential shape {potential.shape} does not match grid {tuple(shape)}")
        self.dt = dt
        self.hbar = hbar
        self.mass = mass
        self.potential = potential

        step_phase = dt * float(np.max(np.abs(potential))) / hbar if potential.size else 0.0
        if step_phase > STEP_PHASE_LIMIT:
            logger.warning(
                f"Potential phase per step is {step_phase:.3f} rad (> {STEP_PHASE_LIMIT}); "
                f"consider a smaller dt than {dt}"
            )
        self.step_phase = step_phase

        k = np.meshgrid(*[2.0 * np.pi * np.fft.fftfreq(n, d=spacing) for n in shape], indexing="ij")
        k_squared = sum(ki**2 for ki in k)
        self._half_potential = np.exp(-0.5j * dt * potential / hbar)
        self._kinetic = np.exp(-0.5j * hbar * dt * k_squared / mass)

    @classmethod
    def for_grid(cls, w: WaveGrid, potential: np.ndarray, dt: float) -> "SplitStepPropagator":
        return cls(potential, w.shape, w.spacing, dt, mass=w.mass, hbar=w.hbar)

    def step(self, psi: np.ndarray) -> np.ndarray:
        kicked = psi * self._half_potential
        drifted = np.fft.ifftn(np.fft.fftn(kicked) * self._kinetic)
        return drifted * self._half_potential

    def run(self, w: WaveGrid, steps: int, save_every: int = 1) -> Iterator[WaveGrid]:
        """Yield the initial grid and every save_every-th step."""
        if steps < 0 or save_every < 1:
            raise ValueError("steps must be >= 0 and save_every >= 1")
        yield w
        psi = w.psi
        for j in range(1, steps + 1):
            psi = self.step(psi)
            if j % save_every == 0 or j == steps:
                yield _checked(w, psi, w.t + j * self.dt, j)


def _checked(w: WaveGrid, psi: np.ndarray, t: float, steps: int) -> WaveGrid:
    norm = float(np.sum(np.abs(psi) ** 2) * w.cell_volume)
    allowed = NORM_TOL * max(1.0, steps / 1000.0)
    if abs(norm - 1.0) > allowed:
        raise NumericGuardError(f"norm drifted to {norm:.12f} after {steps} steps")
    return replace(w, psi=psi / math.sqrt(norm) if abs(norm - 1.0) > NORM_TOL else psi, t=t)


def evolve(w: WaveGrid, V: np.ndarray, dt: float, steps: int) -> WaveGrid:
    """Advance w by `steps` split-step updates of size dt."""
    propagator = SplitStepPropagator.for_grid(w, V, dt)
    final = w
    for final in propagator.run(w, steps, save_every=max(steps, 1)):
        pass
    if boundary_density(final) > BOUNDARY_DENSITY_LIMIT:
        logger.warning(f"Boundary density {boundary_density(final):.2e} at t = {final.t}; periodic images may interfere")
    return final


# --- polar decomposition -----------------------------------------------------


def _unwrap_from(phase: np.ndarray, index: int) -> np.ndarray:
    """Unwrap a 1D phase sequence outward from `index`, keeping phase[index]."""
    right = np.unwrap(phase[index:])
    left = np.unwrap(phase[: index + 1][::-1])[::-1]
    return np.concatenate([left[:-1], right])


def _dilate(mask: np.ndarray) -> np.ndarray:
    grown = mask.copy()
    for axis in range(mask.ndim):
        grown |= np.roll(mask, 1, axis=axis) | np.roll(mask, -1, axis=axis)
    return grown


@dataclass(frozen=True, eq=False)
class PolarFields:
    """R, S and the low-amplitude mask of one wave snapshot."""

    R: np.ndarray
    S: np.ndarray
    mask: np.ndarray
    origin: Tuple[float, ...]
    spacing: float
    mass: float
    hbar: float
    t: float
    shape: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", self.R.shape)

    @property
    def axes(self) -> List[np.ndarray]:
        return [o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.shape)]

    @property
    def density(self) -> np.ndarray:
        return self.R**2

    def psi(self) -> np.ndarray:
        return self.R * np.exp(1j * self.S / self.hbar)

    def gradient_S(self) -> List[np.ndarray]:
        """
        Central differences of S per axis, each one-node step taken modulo
        2 pi hbar so the periodic seam is differenced correctly. NaN on and
        next to masked nodes.
        """
        blocked = _dilate(self.mask)
        period = 2.0 * math.pi * self.hbar
        gradients = []
        for axis in range(self.R.ndim):
            forward = np.roll(self.S, -1, axis=axis) - self.S
            forward = forward - period * np.round(forward / period)
            backward = np.roll(forward, 1, axis=axis)
            g = (forward + backward) / (2.0 * self.spacing)
            gradients.append(np.where(blocked, np.nan, g))
        return gradients

    def velocity(self) -> List[np.ndarray]:
        return [g / self.mass for g in self.gradient_S()]


def polar_decompose(w: WaveGrid, floor: float = R_FLOOR) -> PolarFields:
    """
    R = |Psi| and S = hbar arg(Psi), unwrapped from the node of largest R
    outward (along its row, then down every column in 2D).
    """
    R = np.abs(w.psi)
    phase = np.angle(w.psi)
    start = np.unravel_index(int(np.argmax(R)), R.shape)
    if w.dimension == 1:
        unwrapped = _unwrap_from(phase, start[0])
    else:
        row = _unwrap_from(phase[start[0], :], start[1])
        unwrapped = np.empty_like(phase)
        for j in range(phase.shape[1]):
            column = phase[:, j].copy()
            column[start[0]] = row[j]
            unwrapped[:, j] = _unwrap_from(column, start[0])
    mask = R < floor * float(np.max(R))
    return PolarFields(R=R, S=w.hbar * unwrapped, mask=mask, origin=w.origin, spacing=w.spacing,
                       mass=w.mass, hbar=w.hbar, t=w.t)


def _laplacian(field_: np.ndarray, spacing: float) -> np.ndarray:
    total = np.zeros_like(field_)
    for axis in range(field_.ndim):
        total += np.roll(field_, -1, axis=axis) - 2.0 * field_ + np.roll(field_, 1, axis=axis)
    return total / spacing**2


def quantum_potential(f: PolarFields) -> np.ndarray:
    """Q = -(hbar^2 / 2 m R) laplacian(R), NaN on masked nodes."""
    lap = _laplacian(f.R, f.spacing)
    ratio = np.divide(lap, f.R, out=np.zeros_like(lap), where=~f.mask)
    Q = -(f.hbar**2) / (2.0 * f.mass) * ratio
    return np.where(f.mask, np.nan, Q)


# --- residuals -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResidualField:
    """Residual on the lattice (NaN where masked) with its plain and |Psi|^2-weighted RMS."""

    values: np.ndarray
    rms: float
    weighted_rms: float


def _residual(values: np.ndarray, weights: np.ndarray) -> ResidualField:
    valid = np.isfinite(values)
    if not np.any(valid):
        raise NumericGuardError("residual has no unmasked nodes")
    r = values[valid]
    w = weights[valid]
    return ResidualField(
        values=values,
        rms=math.sqrt(float(np.mean(r**2))),
        weighted_rms=math.sqrt(float(np.sum(w * r**2) / np.sum(w))),
    )


def _time_step(f0: PolarFields, f1: PolarFields) -> float:
    if f0.shape != f1.shape or f0.spacing != f1.spacing:
        raise DimensionMismatchError("residuals need two snapshots on the same lattice")
    dt = f1.t - f0.t
    if not dt > 0:
        raise ValueError(f"second snapshot must be later than the first (dt = {dt})")
    return dt


def hj_residual(f0: PolarFields, f1: PolarFields, V: np.ndarray) -> ResidualField:
    """dS/dt + (grad S)^2 / 2m + V + Q, time-centred between two snapshots."""
    dt = _time_step(f0, f1)
    period = 2.0 * math.pi * f0.hbar
    dS = f1.S - f0.S
    dS = dS - period * np.round(dS / period)
    kinetic = [sum(g**2 for g in f.gradient_S()) / (2.0 * f.mass) for f in (f0, f1)]
    Q = 0.5 * (quantum_potential(f0) + quantum_potential(f1))
    values = dS / dt + 0.5 * (kinetic[0] + kinetic[1]) + np.asarray(V, dtype=float) + Q
    return _residual(values, 0.5 * (f0.density + f1.density))


def continuity_residual(f0: PolarFields, f1: PolarFields) -> ResidualField:
    """dP/dt + div(P grad S / m), time-centred between two snapshots."""
    dt = _time_step(f0, f1)
    divergence = np.zeros(f0.shape)
    for f in (f0, f1):
        for axis, v in enumerate(f.velocity()):
            flux = f.density * v
            divergence += 0.5 * (np.roll(flux, -1, axis=axis) - np.roll(flux, 1, axis=axis)) / (2.0 * f.spacing)
    values = (f1.density - f0.density) / dt + divergence
    return _residual(values, 0.5 * (f0.density + f1.density))


# --- trajectories ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Particle positions at saved times; NaN after a particle terminates."""

    times: np.ndarray
    positions: np.ndarray  # (saved times, particles, dimension)
    exit_flags: np.ndarray
    initial_law: str
    frames: List[WaveGrid] = field(repr=False)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def active(self) -> np.ndarray:
        return self.exit_flags == EXIT_NONE

    def crossings(self) -> int:
        """Order violations among surviving particles in 1D (0 for a non-crossing flow)."""
        if self.positions.shape[2] != 1:
            raise DimensionMismatchError("crossings are defined for 1D trajectories")
        alive = self.active
        x = self.positions[:, alive, 0]
        order = np.argsort(x[0], kind="stable")
        ordered = x[:, order]
        return int(np.sum(np.diff(ordered, axis=1) <= 0))

    def to_frame(self) -> pd.DataFrame:
        T, N, d = self.positions.shape
        data = {
            "t": np.repeat(self.times, N),
            "particle": np.tile(np.arange(N), T),
        }
        names = ["x", "y"][:d]
        for k, name in enumerate(names):
            data[name] = self.positions[:, :, k].ravel()
        return pd.DataFrame(data)


class _VelocityField:
    def __init__(self, w: WaveGrid):
        fields = polar_decompose(w)
        self.axes = fields.axes
        self.components = fields.velocity()
        if w.dimension == 2:
            self._interpolators = [
                RegularGridInterpolator(tuple(self.axes), c, method="linear", bounds_error=False,
                                        fill_value=None)
                for c in self.components
            ]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if len(self.axes) == 1:
            # edge values continue past the lattice so exits are judged on the stepped position
            return np.interp(x[:, 0], self.axes[0], self.components[0])[:, None]
        return np.column_stack([interp(x) for interp in self._interpolators])


def integrate_trajectories(w: WaveGrid, V: np.ndarray, dt: float, steps: int, initial_positions,
                           save_every: int = 1, initial_law: str = "explicit") -> TrajectorySet:
    """
    Transport particles with dx/dt = grad S / m by classical RK4, the wave
    advancing in two half steps per trajectory step so the midpoint field
    exists. Velocities are linear interpolations between nodes.

    Args:
        w: Initial wave
        V: Potential on the lattice
        dt: Trajectory step; the wave advances by dt / 2 twice per step
        steps: Number of trajectory steps
        initial_positions: (N,) or (N, dim) starting points
        save_every: Steps between saved frames
        initial_law: Recorded provenance of the starting points

    Returns:
        TrajectorySet with saved times, positions, frames and exit flags
    """
    x = np.array(initial_positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != w.dimension:
        raise DimensionMismatchError(f"positions have {x.shape[1]} coordinates for a {w.dimension}D grid")
    lower = np.array([a[0] for a in w.axes])
    upper = np.array([a[-1] for a in w.axes])
    if np.any(x < lower) or np.any(x > upper):
        raise ValueError("initial positions must lie inside the grid")

    propagator = SplitStepPropagator.for_grid(w, V, dt / 2.0)
    flags = np.full(x.shape[0], EXIT_NONE, dtype=object)
    times, saved, frames = [w.t], [x.copy()], [w]

    current = w
    v_now = _VelocityField(current)
    for j in range(1, steps + 1):
        half = _checked(w, propagator.step(current.psi), current.t + dt / 2.0, 2 * j - 1)
        nxt = _checked(w, propagator.step(half.psi), w.t + j * dt, 2 * j)
        v_half, v_next = _VelocityField(half), _VelocityField(nxt)

        alive = flags == EXIT_NONE
        xa = x[alive]
        k1 = v_now(xa)
        k2 = v_half(xa + 0.5 * dt * k1)
        k3 = v_half(xa + 0.5 * dt * k2)
        k4 = v_next(xa + dt * k3)
        moved = xa + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        stalled = ~np.all(np.isfinite(moved), axis=1)
        outside = ~stalled & (np.any(moved < lower, axis=1) | np.any(moved > upper, axis=1))
        idx = np.flatnonzero(alive)
        flags[idx[stalled]] = EXIT_MASK
        flags[idx[outside]] = EXIT_GRID
        keep = ~(stalled | outside)
        x[idx[keep]] = moved[keep]
        x[idx[~keep]] = np.nan
        if np.any(~keep):
            logger.info(f"Step {j}: {int(np.sum(outside))} particles left the grid, "
                        f"{int(np.sum(stalled))} reached masked nodes")

        current, v_now = nxt, v_next
        if j % save_every == 0 or j == steps:
            times.append(current.t)
            saved.append(x.copy())
            frames.append(current)

    return TrajectorySet(times=np.array(times), positions=np.stack(saved), exit_flags=flags,
                         initial_law=initial_law, frames=frames)


def sample_initial_positions(w: WaveGrid, n: int, seed: int) -> np.ndarray:
    """n positions distributed as |Psi|^2 (inverse CDF in 1D, cell sampling in 2D)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = random_streams.block_generator(seed, random_streams.STREAM_BOHM, 0)
    P = w.density()
    if w.dimension == 1:
        x = w.axes[0]
        cdf = cumulative_trapezoid(P, x, initial=0.0)
        cdf = cdf / cdf[-1]
        # strictly increasing abscissae for interpolation
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        return np.interp(rng.random(n), cdf[keep], x[keep])[:, None]
    flat = P.ravel() / P.sum()
    nodes = rng.choice(flat.size, size=n, p=flat)
    coords = np.column_stack([a[i] for a, i in zip(w.axes, np.unravel_index(nodes, P.shape))])
    jitter = (rng.random((n, w.dimension)) - 0.5) * w.spacing
    upper = np.array([a[-1] for a in w.axes])
    lower = np.array([a[0] for a in w.axes])
    return np.clip(coords + jitter, lower, upper)


def equivariance_ks(trajectories: TrajectorySet, frame_index: int = -1) -> Tuple[float, float]:
    """Kolmogorov-Smirnov statistic and p-value of positions against |Psi_t|^2 (1D)."""
    w = trajectories.frames[frame_index]
    if w.dimension != 1:
        raise DimensionMismatchError("equivariance_ks is defined for 1D runs")
    x = w.axes[0]
    cdf = cumulative_trapezoid(w.density(), x, initial=0.0)
    cdf = cdf / cdf[-1]
    samples = trajectories.positions[frame_index, :, 0]
    samples = samples[np.isfinite(samples)]
    result = kstest(samples, lambda s: np.interp(s, x, cdf))
    return float(result.statistic), float(result.pvalue)


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value sqrt(-ln(alpha/2) / 2n)."""
    return math.sqrt(-math.log(alpha / 2.0) / (2.0 * n))


def newton_residual(trajectories: TrajectorySet, V: np.ndarray) -> float:
    """
    RMS of m x'' + grad(V + Q) along the saved paths, x'' from central
    differences of consecutive saved positions.
    """
    times = trajectories.times
    if times.size < 3:
        raise ValueError("need at least three saved times")
    spacings = np.diff(times)
    if not np.allclose(spacings, spacings[0], rtol=1e-9, atol=0.0):
        raise ValueError("newton_residual needs uniformly spaced saved times")
    h = spacings[0]
    X = trajectories.positions
    residuals = []
    for k in range(1, times.size - 1):
        w = trajectories.frames[k]
        fields = polar_decompose(w)
        total = np.asarray(V, dtype=float) + quantum_potential(fields)
        acceleration = (X[k + 1] - 2.0 * X[k] + X[k - 1]) / h**2
        force = np.empty_like(acceleration)
        for axis in range(w.dimension):
            grad = (np.roll(total, -1, axis=axis) - np.roll(total, 1, axis=axis)) / (2.0 * w.spacing)
            if w.dimension == 1:
                force[:, axis] = np.interp(X[k][:, 0], fields.axes[0], grad, left=np.nan, right=np.nan)
            else:
                interp = RegularGridInterpolator(tuple(fields.axes), grad, bounds_error=False, fill_value=np.nan)
                force[:, axis] = interp(X[k])
        residuals.append(w.mass * acceleration + force)
    r = np.concatenate(residuals)
    r = r[np.all(np.isfinite(r), axis=1)]
    if r.size == 0:
        raise NumericGuardError("no trajectory points away from masked nodes")
    return math.sqrt(float(np.mean(np.sum(r**2, axis=1))))


# --- two-particle kinematics -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoParticleWave:
    """Components Psi_ij(X1, X2) on a product of two 1D periodic lattices."""

    components: np.ndarray  # (C, n1, n2)
    x1: np.ndarray
    x2: np.ndarray
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        comps = np.array(self.components, dtype=complex)
        if comps.ndim == 2:
            comps = comps[None]
        if comps.ndim != 3 or comps.shape[1:] != (self.x1.size, self.x2.size):
            raise DimensionMismatchError(f"components of shape {comps.shape} do not match the lattices")
        norm = float(np.sum(np.abs(comps) ** 2) * self.dx1 * self.dx2)
        if abs(norm - 1.0) > NORM_TOL:
            raise NormalizationError(f"two-particle norm {norm:.12f} differs from 1")
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)

    @property
    def dx1(self) -> float:
        return float(self.x1[1] - self.x1[0])

    @property
    def dx2(self) -> float:
        return float(self.x2[1] - self.x2[0])

    @classmethod
    def from_components(cls, components: Sequence[np.ndarray], x1: np.ndarray, x2: np.ndarray,
                        mass: float = 1.0, hbar: float = 1.0) -> "TwoParticleWave":
        comps = np.array([np.asarray(c, dtype=complex) for c in components])
        dx1, dx2 = float(x1[1] - x1[0]), float(x2[1] - x2[0])
        weight = math.sqrt(float(np.sum(np.abs(comps) ** 2)) * dx1 * dx2)
        if weight == 0.0:
            raise NormalizationError("cannot normalize a vanishing two-particle state")
        return cls(comps / weight, x1, x2, mass, hbar)

    @classmethod
    def product(cls, phi: np.ndarray, xi: np.ndarray, x1: np.ndarray, x2: np.ndarray,
                mass: float = 1.0, hbar: float = 1.0) -> "TwoParticleWave":
        return cls.from_components([np.outer(phi, xi)], x1, x2, mass, hbar)

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.components) ** 2, axis=0)


def _spectral_derivative(values: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    n = values.shape[axis]
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=spacing)
    shape = [1] * values.ndim
    shape[axis] = n
    return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)


def velocity_fields(tp: TwoParticleWave, floor: float = R_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """v1 and v2 on the lattice, NaN where rho < floor^2 max(rho)."""
    rho = tp.density()
    mask = rho < floor**2 * float(np.max(rho))
    result = []
    for axis, spacing in ((1, tp.dx1), (2, tp.dx2)):
        derivative = _spectral_derivative(tp.components, spacing, axis)
        current = np.sum(np.imag(np.conj(tp.components) * derivative), axis=0)
        v = tp.hbar / tp.mass * np.divide(current, rho, out=np.zeros_like(rho), where=~mask)
        result.append(np.where(mask, np.nan, v))
    return result[0], result[1]


def two_particle_velocities(tp: TwoParticleWave, X1, X2,
                            floor: float = R_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """
    Guidance velocities of both particles at joint configurations

    Args:
        tp: Two-particle wave on its (x1, x2) lattice
        X1: Particle-1 positions inside the x1 lattice
        X2: Particle-2 positions inside the x2 lattice (broadcast against X1)
        floor: Relative amplitude below which lattice nodes are masked

    Returns:
        Tuple of (v1, v2), bilinearly interpolated; NaN marks points touching masked nodes
    """
    X1 = np.atleast_1d(np.asarray(X1, dtype=float))
    X2 = np.atleast_1d(np.asarray(X2, dtype=float))
    inside = (
        (X1 >= tp.x1[0]) & (X1 <= tp.x1[-1]) & (X2 >= tp.x2[0]) & (X2 <= tp.x2[-1])
    )
    if not np.all(inside):
        raise ValueError("probe points must lie inside both lattices")
    v1_field, v2_field = velocity_fields(tp, floor)
    points = np.column_stack(np.broadcast_arrays(X1, X2))
    v1 = RegularGridInterpolator((tp.x1, tp.x2), v1_field)(points)
    v2 = RegularGridInterpolator((tp.x1, tp.x2), v2_field)(points)
    return v1, v2


@dataclass(frozen=True)
class FactorizationReport:
    verdict: str
    max_spread_v1: float
    max_spread_v2: float
    witness: Optional[Tuple[float, float, float]]
    probes: int
    skipped: int

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_spread_v1": self.max_spread_v1,
            "max_spread_v2": self.max_spread_v2,
            "witness": list(self.witness) if self.witness else None,
            "probes": self.probes,
            "skipped": self.skipped,
        }


LOCALITY_THRESHOLD = 1e-8


def _sample_joint(tp: TwoParticleWave, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    rho = tp.density()
    flat = rho.ravel() / rho.sum()
    i, j = np.unravel_index(rng.choice(flat.size, size=n, p=flat), rho.shape)
    return tp.x1[i], tp.x2[j]


def factorization_test(tp: TwoParticleWave, probes: int, seed: int,
                       threshold: float = LOCALITY_THRESHOLD, floor: float = R_FLOOR) -> FactorizationReport:
    """
    Compare v1(X1, X2) with v1(X1, X2') over probe pairs drawn from rho, and
    v2(X1, X2) with v2(X1', X2); "local" when the v1 spread stays below the
    threshold. Raises NumericGuardError when every pair touches a masked node.
    """
    if probes < 1:
        raise ValueError("probes must be at least 1")
    rng = random_streams.block_generator(seed, random_streams.STREAM_PROBES, 0)
    X1, X2 = _sample_joint(tp, rng, probes)
    X1b, X2b = _sample_joint(tp, rng, probes)

    v1_a, v2_a = two_particle_velocities(tp, X1, X2, floor)
    v1_b, _ = two_particle_velocities(tp, X1, X2b, floor)
    _, v2_b = two_particle_velocities(tp, X1b, X2, floor)

    spread1 = np.abs(v1_a - v1_b)
    spread2 = np.abs(v2_a - v2_b)
    valid1 = np.isfinite(spread1)
    valid2 = np.isfinite(spread2)
    skipped = int(np.sum(~valid1))
    if not np.any(valid1):
        raise NumericGuardError(f"all {probes} probe pairs touch masked nodes; no v1 spread to compare")
    max1 = float(np.max(spread1[valid1]))
    max2 = float(np.max(spread2[valid2])) if np.any(valid2) else 0.0

    witness = None
    verdict = "local"
    if max1 >= threshold:
        verdict = "nonlocal"
        k = int(np.nanargmax(np.where(valid1, spread1, -np.inf)))
        witness = (float(X1[k]), float(X2[k]), float(X2b[k]))
    logger.info(f"Factorization test over {probes} probes: {verdict} (v1 spread {max1:.3e}, v2 spread {max2:.3e})")
    return FactorizationReport(verdict, max1, max2, witness, probes, skipped)
