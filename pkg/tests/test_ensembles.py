import math

from hypothesis import given, settings, strategies as hyp_st
import numpy as np
import pytest
from scipy.integrate import trapezoid

from workbench.ensembles import (
    TrajectoryEnsemble,
    classical_dispersion,
    coincidence_density,
    displacement_trace,
    ensemble_trace,
    gap_table,
    momentum_readout,
    projector_consistency,
    richardson_to_zero,
    von_neumann_gap,
    wigner_moyal,
)
from workbench.errors import DimensionMismatchError, NumericGuardError
from workbench.spin_algebra import DensityMatrix, dispersion, eigen, projector
from tests.utilities import random_hermitian, random_state

EPS_SEQUENCE = (0.1, 0.05, 0.025)


@pytest.fixture
def single():
    return TrajectoryEnsemble.free(1.0, 0.7)


@pytest.fixture
def pair():
    return TrajectoryEnsemble.harmonic([-0.5, 0.8], [0.3, -1.1])


def test_paths(pair):
    x, p = pair.state_at(0.0)
    np.testing.assert_allclose(x[:, 0], [-0.5, 0.8])
    x, p = pair.state_at(math.pi)
    np.testing.assert_allclose(x[:, 0], [0.5, -0.8], atol=1e-12)
    np.testing.assert_allclose(p[:, 0], [-0.3, 1.1], atol=1e-12)


def test_newtonian_matches_harmonic():
    newton = TrajectoryEnsemble.newtonian([0.4, -1.0], [0.0, 0.5], lambda x: -x, (0.0, 2.0))
    exact = TrajectoryEnsemble.harmonic([0.4, -1.0], [0.0, 0.5])
    for t in (0.5, 1.7):
        np.testing.assert_allclose(newton.state_at(t)[0], exact.state_at(t)[0], atol=1e-8)
        np.testing.assert_allclose(newton.state_at(t)[1], exact.state_at(t)[1], atol=1e-8)
    with pytest.raises(ValueError):
        newton.state_at(3.0)


def test_non_finite_paths_are_guarded():
    e = TrajectoryEnsemble(positions=lambda t: np.array([np.nan]), momenta=lambda t: np.array([0.0]),
                           n_particles=1)
    with pytest.raises(NumericGuardError):
        e.state_at(0.0)


def test_wigner_moyal_examples(single):
    eps = 0.05
    peak = wigner_moyal(single, 0.0, 1.0, 0.0, eps)
    assert peak.real == pytest.approx(1.0 / (math.sqrt(2.0 * math.pi) * eps))
    assert peak.imag == pytest.approx(0.0, abs=1e-12)
    half_turn = math.pi / 0.7
    flipped = wigner_moyal(single, 0.0, 1.0, half_turn, eps)
    assert flipped.real == pytest.approx(-peak.real, rel=1e-12)
    x = np.linspace(0.8, 1.2, 9)
    for dx in (0.0, 0.3, -2.0):
        np.testing.assert_allclose(np.abs(wigner_moyal(single, 0.0, x, dx, eps)),
                                   coincidence_density(single, 0.0, x, eps), rtol=1e-12)


def test_wigner_moyal_shape_mismatch(pair):
    with pytest.raises(DimensionMismatchError):
        wigner_moyal(pair, 0.0, np.zeros(3), 0.0, 0.1)
    with pytest.raises(ValueError):
        wigner_moyal(pair, 0.0, np.zeros((2, 1)), np.zeros((2, 1)), 0.0)


def test_coincidence_density_peaks_on_trajectory(single):
    t = 0.4
    grid = np.linspace(0.0, 2.5, 2501)
    density = coincidence_density(single, t, grid, 0.05)
    assert abs(grid[np.argmax(density)] - (1.0 + 0.7 * t)) <= grid[1] - grid[0]
    assert np.all(density > 0)


@pytest.mark.parametrize("eps", EPS_SEQUENCE)
def test_trajectory_trace_is_one_not_dimension(pair, eps):
    assert ensemble_trace(pair, 0.3, eps) == pytest.approx(1.0, abs=1e-8)


def test_trace_over_three_coordinates():
    e = TrajectoryEnsemble.free([0.0, 1.0, -2.0], [1.0, 0.0, 0.5])
    assert ensemble_trace(e, 1.0, 0.05) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        ensemble_trace(TrajectoryEnsemble.free(np.zeros(4), np.zeros(4)), 0.0, 0.1)


def test_both_sides_of_trace_identification_agree(pair):
    limit_first = ensemble_trace(pair, 0.5, 0.05)
    integrate_first = displacement_trace(pair, 0.5, 0.05)
    assert abs(limit_first - integrate_first) < 1e-8


def test_momentum_readout(pair):
    t = 0.9
    x, p = pair.state_at(t)
    np.testing.assert_allclose(momentum_readout(pair, t, x), p, atol=1e-8)


def test_richardson_removes_quadratic_error():
    h = np.array([0.1, 0.05, 0.025])
    assert richardson_to_zero(h, 3.0 + 2.0 * h**2 - h**4) == pytest.approx(3.0, abs=1e-12)
    assert richardson_to_zero(h, 1.0 + h, even=False) == pytest.approx(1.0, abs=1e-12)


def test_dispersion_of_position(single):
    result = classical_dispersion(single, 0.0, lambda x, p: x, EPS_SEQUENCE)
    np.testing.assert_allclose(result.dispersions, np.array(EPS_SEQUENCE) ** 2, rtol=1e-6)
    assert abs(result.extrapolant) < 1e-6
    frame = result.to_frame("x")
    assert list(frame.columns) == ["observable", "eps", "dispersion"]
    assert frame["eps"].iloc[-1] == 0.0


def test_dispersion_of_momentum_and_constant(single):
    result = classical_dispersion(single, 0.2, lambda x, p: p, EPS_SEQUENCE)
    assert abs(result.extrapolant) < 1e-6
    constant = classical_dispersion(single, 0.2, lambda x, p: 4.2, EPS_SEQUENCE)
    assert np.all(constant.dispersions == 0.0)
    with pytest.raises(ValueError):
        classical_dispersion(single, 0.0, lambda x, p: x, (0.05, 0.1))


@settings(deadline=None, max_examples=10)
@given(seed=hyp_st.integers(min_value=0, max_value=2**32 - 1))
def test_trajectory_ensembles_are_dispersion_free(seed):
    rng = np.random.default_rng(seed)
    e = TrajectoryEnsemble.free(rng.uniform(-2, 2), rng.uniform(-2, 2))
    for f in (lambda x, p: x, lambda x, p: p, lambda x, p: x**2, lambda x, p: x * p):
        assert abs(classical_dispersion(e, 0.5, f, EPS_SEQUENCE).extrapolant) < 1e-6


@pytest.mark.parametrize("d", [2, 3, 4])
def test_von_neumann_gap_is_dimension_minus_one(d):
    basis = np.zeros(d)
    basis[0] = 1.0
    assert von_neumann_gap(DensityMatrix.identity(d), projector(basis)) == pytest.approx(d - 1, abs=1e-12)


def test_gap_table():
    frame = gap_table([2, 3, 4])
    assert frame["gap"].tolist() == pytest.approx([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        gap_table([0])


def test_gap_vanishes_on_eigenstate(rng):
    R = random_hermitian(rng, 3)
    _, v = eigen(R)[1]
    assert von_neumann_gap(DensityMatrix.pure(v), R) == pytest.approx(0.0, abs=1e-12)


def test_gap_reduces_to_dispersion_for_normalized_states(rng):
    for _ in range(20):
        R = random_hermitian(rng, 4)
        rho = DensityMatrix.pure(random_state(rng, 4))
        assert von_neumann_gap(rho, R) == pytest.approx(dispersion(rho, R), abs=1e-12)


def test_projector_consistency_examples(rng):
    phi = random_state(rng, 2)
    assert projector_consistency(DensityMatrix.pure(phi), phi) == pytest.approx((1.0, 1.0))
    assert projector_consistency(DensityMatrix.identity(2), phi) == pytest.approx((1.0, 1.0))
    assert projector_consistency(DensityMatrix.maximally_mixed(2), phi) == pytest.approx((0.5, 0.25))


def test_smeared_density_integrates_to_one(single):
    for eps in EPS_SEQUENCE:
        grid = np.linspace(1.0 - 8 * eps, 1.0 + 8 * eps, 801)
        assert trapezoid(coincidence_density(single, 0.0, grid, eps), grid) == pytest.approx(1.0, abs=1e-8)
