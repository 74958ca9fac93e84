import dataclasses
import logging
import math

import numpy as np
import pytest

from workbench.bohmian import (
    EXIT_GRID,
    TwoParticleWave,
    WaveGrid,
    SplitStepPropagator,
    centroid,
    continuity_residual,
    equivariance_ks,
    evolve,
    factorization_test,
    hj_residual,
    integrate_trajectories,
    ks_critical_value,
    newton_residual,
    packet_width,
    periodic_axis,
    polar_decompose,
    quantum_potential,
    sample_initial_positions,
    two_particle_velocities,
)
from workbench.errors import DimensionMismatchError, NormalizationError, NumericGuardError
from workbench.wave_presets import (
    double_slit,
    free_gaussian,
    free_gaussian_2d,
    gaussian_packet,
    harmonic_eigenstate,
    harmonic_excited,
    harmonic_ground,
    harmonic_potential,
    plane_wave,
    plane_wave_state,
    two_particle_entangled,
    two_particle_product,
)


def lattice(start, stop, points):
    origin, dx = periodic_axis(start, stop, points)
    return origin, dx, origin + dx * np.arange(points)


def gaussian_snapshots(dx, dt, t0=0.5):
    origin, dx, x = lattice(-20.0, 20.0, int(round(40.0 / dx)))
    return [
        polar_decompose(WaveGrid.from_values(gaussian_packet(x, t), (origin,), dx, t=t))
        for t in (t0, t0 + dt)
    ]


def harmonic_snapshots(points=2048, dt=1e-3):
    origin, dx, x = lattice(-12.0, 12.0, points)
    fields = [
        polar_decompose(WaveGrid.from_values(harmonic_eigenstate(x, 0, t=t), (origin,), dx, t=t))
        for t in (0.0, dt)
    ]
    return fields, harmonic_potential(x)


def plane_wave_snapshots(dt=1e-3):
    length = 16.0 * math.pi
    origin, dx, x = lattice(-length / 2.0, length / 2.0, 1024)
    return [
        polar_decompose(WaveGrid.from_values(plane_wave(x, 1.0, length, t=t), (origin,), dx, t=t))
        for t in (0.0, dt)
    ]


# --- wave grid and evolution ---------------------------------------------------------


def test_wave_grid_validation():
    origin, dx, x = lattice(-5.0, 5.0, 64)
    with pytest.raises(NormalizationError):
        WaveGrid(np.ones(64), (origin,), dx)
    with pytest.raises(DimensionMismatchError):
        WaveGrid(np.ones((2, 2, 2)), (0.0, 0.0, 0.0), 1.0)
    with pytest.raises(DimensionMismatchError):
        WaveGrid.from_values(np.ones(64), (origin, origin), dx)


def test_free_gaussian_spreads_to_root_two():
    scenario = free_gaussian()
    final = evolve(scenario.wave, scenario.potential, 0.01, 100)
    assert final.t == pytest.approx(1.0)
    assert packet_width(scenario.wave) == pytest.approx(1.0, abs=1e-6)
    assert packet_width(final) == pytest.approx(math.sqrt(2.0), abs=1e-4)
    assert final.norm() == pytest.approx(1.0, abs=1e-9)


def test_harmonic_ground_state_is_stationary():
    scenario = harmonic_ground()
    final = evolve(scenario.wave, scenario.potential, 1e-3, 10_000)
    np.testing.assert_allclose(np.abs(final.psi), np.abs(scenario.wave.psi), atol=1e-6)
    assert abs(final.norm() - 1.0) < 1e-8


def test_boosted_packet_centroid_moves_at_unit_speed():
    scenario = free_gaussian(p0=1.0)
    final = evolve(scenario.wave, scenario.potential, 0.01, 100)
    assert centroid(final)[0] == pytest.approx(1.0, abs=1e-5)


def test_norm_is_conserved_on_presets():
    for scenario in (free_gaussian(), double_slit(), harmonic_excited(), plane_wave_state()):
        final = evolve(scenario.wave, scenario.potential, scenario.dt, 1000)
        assert abs(final.norm() - 1.0) < 1e-9


def test_large_potential_step_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="workbench.bohmian"):
        propagator = SplitStepPropagator(np.full(32, 150.0), (32,), 0.1, dt=1e-3)
    assert propagator.step_phase == pytest.approx(0.15)
    assert "phase per step" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="workbench.bohmian"):
        SplitStepPropagator(np.full(32, 50.0), (32,), 0.1, dt=1e-3)
        SplitStepPropagator(np.full(32, 150.0), (32,), 0.1, dt=1e-3, hbar=2.0)
    assert caplog.text == ""
    with pytest.raises(ValueError):
        SplitStepPropagator(np.zeros(32), (32,), 0.1, dt=0.0)


# --- polar decomposition and quantum potential --------------------------------------


def test_real_positive_wave_has_zero_phase():
    fields = polar_decompose(free_gaussian().wave)
    assert np.all(fields.S == 0.0)


def test_phase_gradient_of_boosted_packet():
    scenario = free_gaussian(p0=0.8)
    fields = polar_decompose(scenario.wave)
    grad = fields.gradient_S()[0]
    off_mask = np.isfinite(grad)
    assert off_mask.sum() > 100
    np.testing.assert_allclose(grad[off_mask], 0.8, atol=1e-6)


def test_decomposition_reproduces_wave():
    w = evolve(double_slit().wave, np.zeros(2048), 0.01, 150)
    fields = polar_decompose(w)
    keep = ~fields.mask
    np.testing.assert_allclose(fields.psi()[keep], w.psi[keep], atol=1e-8)


def test_excited_state_node_is_masked_with_phase_jump():
    w = harmonic_excited().wave
    fields = polar_decompose(w)
    node = int(np.argmin(np.abs(w.axes[0])))
    assert w.axes[0][node] == 0.0
    assert fields.mask[node]
    assert np.isnan(quantum_potential(fields)[node])
    assert abs(fields.S[node - 12] - fields.S[node + 12]) == pytest.approx(math.pi, abs=1e-12)
    assert np.isnan(fields.gradient_S()[0][node])


def test_quantum_potential_of_unit_gaussian():
    origin, dx, x = lattice(-40.0, 40.0, 2048)
    w = WaveGrid.from_values(np.exp(-(x**2) / 4.0), (origin,), dx)
    Q = quantum_potential(polar_decompose(w))
    assert Q[1024] == pytest.approx(0.25, abs=1e-4)


def test_quantum_potential_of_plane_wave_vanishes():
    fields = polar_decompose(plane_wave_state().wave)
    assert np.max(np.abs(quantum_potential(fields))) < 1e-8


def test_quantum_potential_is_scale_invariant():
    fields = polar_decompose(evolve(free_gaussian().wave, np.zeros(2048), 0.01, 50))
    scaled = dataclasses.replace(fields, R=3.0 * fields.R)
    a, b = quantum_potential(fields), quantum_potential(scaled)
    keep = np.isfinite(a)
    np.testing.assert_allclose(b[keep], a[keep], atol=1e-10)


# --- residuals -----------------------------------------------------------------------


def test_harmonic_residuals():
    (f0, f1), V = harmonic_snapshots()
    assert hj_residual(f0, f1, V).weighted_rms < 1e-4
    assert continuity_residual(f0, f1).weighted_rms < 1e-4


def test_free_gaussian_residuals_converge():
    coarse = gaussian_snapshots(0.05, 1e-3)
    fine = gaussian_snapshots(0.025, 5e-4)
    hj_coarse = hj_residual(*coarse, np.zeros(coarse[0].shape))
    hj_fine = hj_residual(*fine, np.zeros(fine[0].shape))
    assert hj_coarse.weighted_rms < 1e-3
    assert hj_coarse.weighted_rms / hj_fine.weighted_rms >= 3.0
    assert hj_coarse.rms / hj_fine.rms >= 3.0
    ct_coarse = continuity_residual(*coarse)
    ct_fine = continuity_residual(*fine)
    assert ct_coarse.weighted_rms < 2e-3
    assert ct_coarse.weighted_rms / ct_fine.weighted_rms >= 3.0
    assert ct_coarse.rms / ct_fine.rms >= 3.0


def test_plane_wave_residuals_vanish():
    f0, f1 = plane_wave_snapshots()
    hj = hj_residual(f0, f1, np.zeros(f0.shape))
    continuity = continuity_residual(f0, f1)
    assert max(hj.rms, hj.weighted_rms) < 1e-8
    assert max(continuity.rms, continuity.weighted_rms) < 1e-8


def density_weighted_rms(values, weights):
    keep = np.isfinite(values)
    return math.sqrt(np.sum(weights[keep] * values[keep] ** 2) / np.sum(weights[keep]))


def test_residual_reports_plain_and_weighted_rms():
    (f0, f1), V = harmonic_snapshots()
    hj = hj_residual(f0, f1, V)
    keep = np.isfinite(hj.values)
    assert not np.all(keep)
    assert hj.rms == pytest.approx(math.sqrt(np.mean(hj.values[keep] ** 2)), rel=1e-12)
    weights = 0.5 * (f0.density + f1.density)
    assert hj.weighted_rms == pytest.approx(density_weighted_rms(hj.values, weights), rel=1e-12)
    # tails carry the finite-difference error that the weighting suppresses
    assert hj.rms > hj.weighted_rms


def test_residuals_pin_kinetic_factor_and_guidance_sign():
    f0, f1 = plane_wave_snapshots()
    hj = hj_residual(f0, f1, np.zeros(f0.shape))
    # (grad S)^2 / m instead of / 2m
    extra = 0.5 * sum(g[0] ** 2 / (2.0 * f.mass) for f, g in ((f0, f0.gradient_S()), (f1, f1.gradient_S())))
    assert density_weighted_rms(hj.values + extra, f0.density) > 0.4

    origin, dx, x = lattice(-20.0, 20.0, 800)
    dt = 1e-3
    b0, b1 = [
        polar_decompose(WaveGrid.from_values(gaussian_packet(x, t, p0=1.0), (origin,), dx, t=t))
        for t in (0.5, 0.5 + dt)
    ]
    assert continuity_residual(b0, b1).weighted_rms < 2e-3
    # transport along -grad S / m
    flux = 0.5 * sum(f.density * f.velocity()[0] for f in (b0, b1))
    reversed_sign = (b1.density - b0.density) / dt - (np.roll(flux, -1) - np.roll(flux, 1)) / (2.0 * dx)
    assert density_weighted_rms(reversed_sign, b0.density) > 0.1


def test_residual_needs_ordered_snapshots():
    f0, f1 = plane_wave_snapshots()
    with pytest.raises(ValueError):
        hj_residual(f1, f0, np.zeros(f0.shape))


# --- trajectories --------------------------------------------------------------------


def test_harmonic_ground_trajectories_are_static():
    scenario = harmonic_ground()
    start = np.linspace(-2.0, 2.0, 9)
    run = integrate_trajectories(scenario.wave, scenario.potential, 5e-4, 200, start)
    np.testing.assert_allclose(run.positions[-1, :, 0], start, atol=1e-8)
    assert run.active.all()


def test_free_gaussian_trajectory_follows_width():
    scenario = free_gaussian()
    run = integrate_trajectories(scenario.wave, scenario.potential, 0.01, 100, [1.0, -1.0, 0.5])
    assert run.times[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(run.positions[-1, :, 0], np.array([1.0, -1.0, 0.5]) * math.sqrt(2.0), atol=1e-3)


def test_double_slit_trajectories_do_not_cross():
    scenario = double_slit()
    start = np.linspace(-3.0, 3.0, 41)
    run = integrate_trajectories(scenario.wave, scenario.potential, 0.01, 200, start, save_every=5)
    assert run.active.all()
    assert run.crossings() == 0
    final = run.positions[-1, :, 0]
    assert abs(final[20]) < 1e-8
    assert np.all(final[:20] < 0) and np.all(final[21:] > 0)
    np.testing.assert_allclose(final, -final[::-1], atol=1e-6)
    # fringes: the paths bend, so the spread is not a uniform rescaling of the start
    ratios = final[start != 0] / start[start != 0]
    assert np.ptp(ratios) > 0.1


def test_particles_leaving_the_grid_are_flagged():
    scenario = plane_wave_state()
    upper = scenario.wave.axes[0][-1]
    run = integrate_trajectories(scenario.wave, scenario.potential, 0.01, 10, [0.0, upper - 0.05])
    assert run.exit_flags.tolist() == ["", EXIT_GRID]
    assert np.isnan(run.positions[-1, 1, 0])
    assert run.positions[-1, 0, 0] == pytest.approx(0.1, abs=1e-9)


def test_initial_positions_must_be_inside():
    scenario = free_gaussian()
    with pytest.raises(ValueError):
        integrate_trajectories(scenario.wave, scenario.potential, 0.01, 1, [100.0])


def test_sampling_is_seeded():
    w = free_gaussian().wave
    a = sample_initial_positions(w, 1000, seed=4)
    b = sample_initial_positions(w, 1000, seed=4)
    np.testing.assert_array_equal(a, b)
    assert abs(a.mean()) < 0.1
    assert a.std() == pytest.approx(1.0 / math.sqrt(2.0), abs=0.05)


@pytest.mark.parametrize("preset, dt, steps", [(free_gaussian, 0.01, 100), (harmonic_ground, 5e-3, 200)])
def test_equivariance(preset, dt, steps):
    scenario = preset()
    start = sample_initial_positions(scenario.wave, 10_000, seed=2024)
    run = integrate_trajectories(scenario.wave, scenario.potential, dt, steps, start, save_every=steps)
    assert run.times[-1] == pytest.approx(1.0)
    statistic, _ = equivariance_ks(run)
    assert statistic < ks_critical_value(int(run.active.sum()), alpha=0.01)


def test_newton_residual_shrinks_under_refinement():
    start = np.linspace(-2.0, 2.0, 9)
    coarse = free_gaussian(points=1024)
    fine = free_gaussian(points=2048)
    r_coarse = newton_residual(integrate_trajectories(coarse.wave, coarse.potential, 0.02, 50, start),
                               coarse.potential)
    r_fine = newton_residual(integrate_trajectories(fine.wave, fine.potential, 0.01, 100, start),
                             fine.potential)
    assert r_fine < r_coarse / 2.0
    assert r_fine < 1e-2


def test_two_dimensional_trajectory():
    scenario = free_gaussian_2d(points=128)
    run = integrate_trajectories(scenario.wave, scenario.potential, 0.01, 100, [[1.0, 0.0], [0.0, -0.5]])
    np.testing.assert_allclose(run.positions[-1], [[math.sqrt(2.0), 0.0], [0.0, -0.5 * math.sqrt(2.0)]],
                               atol=1e-3)
    frame = run.to_frame()
    assert list(frame.columns) == ["t", "particle", "x", "y"]


def test_two_dimensional_phase_gradient():
    origin, dx, x = lattice(-10.0, 10.0, 128)
    X, Y = np.meshgrid(x, x, indexing="ij")
    w = WaveGrid.from_values(np.exp(-(X**2 + Y**2) / 2.0 + 1j * (0.5 * X - 0.3 * Y)), (origin, origin), dx)
    gx, gy = polar_decompose(w).gradient_S()
    keep = np.isfinite(gx)
    np.testing.assert_allclose(gx[keep], 0.5, atol=1e-6)
    np.testing.assert_allclose(gy[keep], -0.3, atol=1e-6)


# --- two-particle kinematics ---------------------------------------------------------


def test_two_particle_norm_is_checked():
    _, _, x = lattice(-10.0, 10.0, 64)
    with pytest.raises(NormalizationError):
        TwoParticleWave(np.ones((64, 64)), x, x)


def test_real_product_state_is_at_rest():
    scenario = two_particle_product(p0=0.0)
    v1, v2 = two_particle_velocities(scenario.two_particle, [0.0, -1.0, 1.5], [0.5, 0.0, -2.0])
    np.testing.assert_allclose(v1, 0.0, atol=1e-10)
    np.testing.assert_allclose(v2, 0.0, atol=1e-10)


def test_product_state_velocity_ignores_partner():
    tp = two_particle_product(p0=1.0).two_particle
    for X1 in (-1.0, 0.0, 0.5):
        v1, v2 = two_particle_velocities(tp, np.full(3, X1), [-2.0, 0.0, 1.5])
        np.testing.assert_allclose(v1, 1.0, atol=1e-10)
        assert np.ptp(v1) < 1e-10
        np.testing.assert_allclose(v2, 0.0, atol=1e-10)


def test_entangled_state_velocity_depends_on_partner():
    tp = two_particle_entangled().two_particle
    v1, _ = two_particle_velocities(tp, [0.0, 0.0], [-1.0, 1.0])
    assert abs(v1[0] - v1[1]) > 0.1
    assert v1[0] == pytest.approx(-v1[1], abs=1e-6)


def test_factorization_dichotomy():
    local = factorization_test(two_particle_product().two_particle, probes=500, seed=3)
    assert local.verdict == "local"
    assert local.max_spread_v1 < 1e-9
    assert local.witness is None
    nonlocal_ = factorization_test(two_particle_entangled().two_particle, probes=500, seed=3)
    assert nonlocal_.verdict == "nonlocal"
    assert nonlocal_.max_spread_v1 >= 0.1
    assert nonlocal_.witness is not None
    two_labels = factorization_test(two_particle_entangled(components=2).two_particle, probes=500, seed=3)
    assert two_labels.verdict == "nonlocal"
    assert two_labels.max_spread_v1 >= 0.1
    assert two_labels.max_spread_v2 < 1e-9


def test_fully_masked_probes_are_a_numeric_failure():
    tp = two_particle_product().two_particle
    v1, v2 = two_particle_velocities(tp, [0.0], [0.0], floor=2.0)
    assert np.isnan(v1[0]) and np.isnan(v2[0])
    with pytest.raises(NumericGuardError):
        factorization_test(tp, probes=50, seed=3, floor=2.0)


def test_component_constant_in_partner_is_local():
    _, _, x = lattice(-10.0, 10.0, 128)
    phi = gaussian_packet(x, p0=0.7)
    tp = TwoParticleWave.from_components([np.outer(phi, np.ones(128))], x, x)
    report = factorization_test(tp, probes=200, seed=1)
    assert report.verdict == "local"
    assert report.as_dict()["witness"] is None
