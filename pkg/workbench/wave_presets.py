"""
Analytic wave functions and the named Bohmian scenarios built from them.

The analytic states double as exact snapshots for residual studies: sampling
gaussian_packet at t and t + dt gives two decompositions whose residuals
measure only the spatial and temporal differencing error.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional
import logging
import math

import numpy as np
from scipy.special import eval_hermite

from workbench.bohmian import TwoParticleWave, WaveGrid, periodic_axis

logger = logging.getLogger(__name__)


def gaussian_packet(x, t: float = 0.0, sigma: float = 1.0, x0: float = 0.0, p0: float = 0.0,
                    mass: float = 1.0, hbar: float = 1.0) -> np.ndarray:
    """
    Free Gaussian (pi sigma^2)^(-1/4) exp(-(x-x0)^2 / 2 sigma^2 + i p0 (x-x0) / hbar)
    evolved to time t; its modulus has width parameter sigma sqrt(1 + tau^2),
    tau = hbar t / (m sigma^2).
    """
    x = np.asarray(x, dtype=float)
    spread = 1.0 + 1j * hbar * t / (mass * sigma**2)
    shifted = x - x0 - p0 * t / mass
    envelope = np.exp(-(shifted**2) / (2.0 * sigma**2 * spread))
    phase = np.exp(1j * (p0 * (x - x0) - p0**2 * t / (2.0 * mass)) / hbar)
    return (math.pi * sigma**2) ** -0.25 / np.sqrt(spread) * envelope * phase


def harmonic_eigenstate(x, n: int = 0, omega: float = 1.0, t: float = 0.0,
                        mass: float = 1.0, hbar: float = 1.0) -> np.ndarray:
    """n-th eigenstate of V = m omega^2 x^2 / 2 with its phase exp(-i E_n t / hbar)."""
    if n < 0:
        raise ValueError(f"quantum number must be non-negative, got {n}")
    x = np.asarray(x, dtype=float)
    alpha = mass * omega / hbar
    norm = (alpha / math.pi) ** 0.25 / math.sqrt(2.0**n * math.factorial(n))
    energy = hbar * omega * (n + 0.5)
    xi = math.sqrt(alpha) * x
    return norm * eval_hermite(n, xi) * np.exp(-0.5 * xi**2) * np.exp(-1j * energy * t / hbar)


def plane_wave(x, p0: float, length: float, t: float = 0.0, mass: float = 1.0,
               hbar: float = 1.0) -> np.ndarray:
    """exp(i (p0 x - E t) / hbar) / sqrt(length)."""
    x = np.asarray(x, dtype=float)
    energy = p0**2 / (2.0 * mass)
    return np.exp(1j * (p0 * x - energy * t) / hbar) / math.sqrt(length)


def harmonic_potential(x, omega: float = 1.0, mass: float = 1.0) -> np.ndarray:
    return 0.5 * mass * omega**2 * np.asarray(x, dtype=float) ** 2


@dataclass(frozen=True, eq=False)
class Scenario:
    """A prepared initial state, its potential and suggested stepping."""

    name: str
    description: str
    wave: Optional[WaveGrid] = None
    potential: Optional[np.ndarray] = None
    two_particle: Optional[TwoParticleWave] = None
    dt: float = 1e-2
    t_end: float = 1.0

    @property
    def is_two_particle(self) -> bool:
        return self.two_particle is not None


def _line(start: float, stop: float, points: int):
    origin, spacing = periodic_axis(start, stop, points)
    return origin, spacing, origin + spacing * np.arange(points)


def free_gaussian(points: int = 2048, sigma: float = 1.0, p0: float = 0.0,
                  mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    origin, dx, x = _line(-40.0, 40.0, points)
    w = WaveGrid.from_values(gaussian_packet(x, sigma=sigma, p0=p0, mass=mass, hbar=hbar), (origin,), dx, mass, hbar)
    return Scenario("free-gaussian", "spreading Gaussian packet, V = 0", w, np.zeros(points), dt=1e-2, t_end=1.0)


def harmonic_ground(points: int = 1024, omega: float = 1.0, mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    origin, dx, x = _line(-12.0, 12.0, points)
    w = WaveGrid.from_values(harmonic_eigenstate(x, 0, omega, mass=mass, hbar=hbar), (origin,), dx, mass, hbar)
    return Scenario("harmonic-ground", "oscillator ground state (stationary, real)", w,
                    harmonic_potential(x, omega, mass), dt=1e-3, t_end=1.0)


def harmonic_excited(points: int = 1024, omega: float = 1.0, mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    origin, dx, x = _line(-12.0, 12.0, points)
    w = WaveGrid.from_values(harmonic_eigenstate(x, 1, omega, mass=mass, hbar=hbar), (origin,), dx, mass, hbar)
    return Scenario("harmonic-excited", "first excited oscillator state (node at x = 0)", w,
                    harmonic_potential(x, omega, mass), dt=1e-3, t_end=1.0)


def plane_wave_state(points: int = 1024, p0: float = 1.0, mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    # sixteen periods of p0 = 1 fit the box exactly
    length = 16.0 * math.pi * hbar / abs(p0) if p0 else 16.0 * math.pi
    origin, dx, x = _line(-length / 2.0, length / 2.0, points)
    w = WaveGrid.from_values(plane_wave(x, p0, length, mass=mass, hbar=hbar), (origin,), dx, mass, hbar)
    return Scenario("plane-wave", "periodic plane wave", w, np.zeros(points), dt=1e-2, t_end=1.0)


def double_slit(points: int = 2048, separation: float = 4.0, sigma: float = 0.5,
                mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    """Transverse reduction: two equal Gaussians leaving the slits, free evolution."""
    origin, dx, x = _line(-40.0, 40.0, points)
    half = separation / 2.0
    values = gaussian_packet(x, sigma=sigma, x0=-half) + gaussian_packet(x, sigma=sigma, x0=half)
    w = WaveGrid.from_values(values, (origin,), dx, mass, hbar)
    return Scenario("double-slit", "two-slit transverse profile", w, np.zeros(points), dt=1e-2, t_end=2.0)


def free_gaussian_2d(points: int = 256, sigma: float = 1.0, mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    origin, dx, x = _line(-20.0, 20.0, points)
    X, Y = np.meshgrid(x, x, indexing="ij")
    values = gaussian_packet(X, sigma=sigma) * gaussian_packet(Y, sigma=sigma)
    w = WaveGrid.from_values(values, (origin, origin), dx, mass, hbar)
    return Scenario("free-gaussian-2d", "isotropic 2D Gaussian, V = 0", w, np.zeros((points, points)),
                    dt=1e-2, t_end=1.0)


def _pair_axes(points: int):
    _, _, x = _line(-10.0, 10.0, points)
    return x, x.copy()


def two_particle_product(points: int = 256, p0: float = 1.0, sigma: float = 1.0,
                         mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    x1, x2 = _pair_axes(points)
    phi = gaussian_packet(x1, sigma=sigma, p0=p0, mass=mass, hbar=hbar)
    xi = gaussian_packet(x2, sigma=sigma, mass=mass, hbar=hbar)
    tp = TwoParticleWave.product(phi, xi, x1, x2, mass, hbar)
    return Scenario("two-particle-product", "Phi(X1) Xi(X2) with momentum on particle 1", two_particle=tp)


def two_particle_entangled(points: int = 256, offset: float = 1.0, sigma: float = 1.0, k: float = 1.0,
                           components: int = 1, mass: float = 1.0, hbar: float = 1.0) -> Scenario:
    """
    Antisymmetric two-Gaussian pairing: particle 1 on the right moving right
    with particle 2 on the left, minus the mirrored term. components=2 keeps
    the two terms as separate labels instead of superposing them.
    """
    if components not in (1, 2):
        raise ValueError(f"components must be 1 or 2, got {components}")
    x1, x2 = _pair_axes(points)
    right1 = gaussian_packet(x1, sigma=sigma, x0=offset, p0=k * hbar)
    left1 = gaussian_packet(x1, sigma=sigma, x0=-offset, p0=-k * hbar)
    right2 = gaussian_packet(x2, sigma=sigma, x0=offset)
    left2 = gaussian_packet(x2, sigma=sigma, x0=-offset)
    first, second = np.outer(right1, left2), np.outer(left1, right2)
    parts = [first - second] if components == 1 else [first, second]
    tp = TwoParticleWave.from_components(parts, x1, x2, mass, hbar)
    return Scenario("two-particle-entangled", f"entangled two-Gaussian state ({components} component)",
                    two_particle=tp)


PRESETS: Dict[str, Callable[..., Scenario]] = {
    "free-gaussian": free_gaussian,
    "harmonic-ground": harmonic_ground,
    "harmonic-excited": harmonic_excited,
    "plane-wave": plane_wave_state,
    "double-slit": double_slit,
    "free-gaussian-2d": free_gaussian_2d,
    "two-particle-product": two_particle_product,
    "two-particle-entangled": two_particle_entangled,
}


def build_preset(name: str, **params) -> Scenario:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"Unknown preset '{name}'. Available: {', '.join(PRESETS)}")
    scenario = factory(**params)
    logger.info(f"Built preset '{name}': {scenario.description}")
    return scenario
