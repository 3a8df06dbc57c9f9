import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from hiddenconf.errors import NumericalError
from hiddenconf.field import PhysicalParams, WaveField, build_grid, gaussian_packet, harmonic_state
from hiddenconf.schrodinger import (CouplingTerm, Potential, SplitStepPropagator, detector_profile,
                                    energy_expectation, evolve, free_potential, harmonic_potential,
                                    self_convergence_error, stationary_state, step, step_count)
from hiddenconf.scenarios import harmonic_scenario

P = PhysicalParams()
G1 = build_grid([[-20, 20]], [512])
GH = build_grid([[-12, 12]], [256])


def random_field(grid, seed):
    rng = np.random.default_rng(seed)
    psi = np.zeros(grid.shape, dtype=complex)
    for _ in range(3):
        c = [rng.uniform(lo / 4, hi / 4) for lo, hi in grid.extents]
        psi += (rng.normal() + 1j * rng.normal()) * gaussian_packet(grid, c, rng.uniform(0.8, 1.2),
                                                                    rng.uniform(-2, 2, grid.dims)).psi
    return WaveField(grid, psi).normalized()


@given(st.integers(0, 10**6), st.floats(1e-3, 0.05))
def test_unitarity_per_step(seed, dt):
    f = random_field(GH, seed)
    g = step(f, harmonic_potential(GH), None, P, dt)
    assert abs(g.norm() - f.norm()) <= 1e-12
    assert g.time == pytest.approx(f.time + dt)


def test_unitarity_with_coupling():
    g = build_grid([[-20, 20], [-16, 16]], [128, 64])
    f = random_field(g, 1)
    c = CouplingTerm(detector_profile(g.axes[0], 1.0), 1, 0.0, 1.0, 6.0)
    prop = SplitStepPropagator(g, None, PhysicalParams(masses=(1.0, 5.0)), 0.005, [c])
    for _ in range(50):
        nxt = prop.step(f)
        assert abs(nxt.norm() - f.norm()) <= 1e-12
        f = nxt


@given(st.integers(0, 10**6), st.complex_numbers(max_magnitude=3), st.complex_numbers(max_magnitude=3))
def test_linearity(seed, a, b):
    f1, f2 = random_field(GH, seed), random_field(GH, seed + 1)
    pot = harmonic_potential(GH)
    lhs = step(a * f1 + b * f2, pot, None, P, 0.01).psi
    rhs = a * step(f1, pot, None, P, 0.01).psi + b * step(f2, pot, None, P, 0.01).psi
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


@given(st.integers(0, 10**6))
def test_time_reversal(seed):
    f = random_field(GH, seed)
    pot = harmonic_potential(GH)
    back = step(step(f, pot, None, P, 0.02), pot, None, P, -0.02)
    assert np.max(np.abs(back.psi - f.psi)) <= 1e-9


def test_free_gaussian_spreading():
    # sigma(t)^2 = sigma0^2 + (hbar t / (2 m sigma0))^2 = 1.25 at t = 1
    f = evolve(gaussian_packet(G1, 0.0, 1.0), None, None, P, 1.0, 0.01)[-1]
    x = G1.axes[0]
    rho = np.abs(f.psi) ** 2 * G1.cell_volume
    assert np.sum(rho * x**2) == pytest.approx(1.25, abs=1e-4)


def test_ehrenfest_velocity():
    snaps = evolve(gaussian_packet(G1, -4.0, 1.0, 2.0), None, None, P, 2.0, 0.01, sample_times=[1.0])
    x = G1.axes[0]
    means = [np.sum(np.abs(s.psi) ** 2 * x) * G1.cell_volume for s in snaps]
    assert (means[1] - means[0]) / 1.0 == pytest.approx(2.0, abs=1e-4)


def test_ground_state_modulus_is_stationary():
    pot = harmonic_potential(GH)
    f = harmonic_state(GH)
    end = evolve(f, pot, None, P, 0.1, 1e-3)[-1]
    assert np.max(np.abs(np.abs(end.psi) - np.abs(f.psi))) <= 1e-8


def test_discrete_stationary_state_is_exact():
    pot = harmonic_potential(GH)
    s = stationary_state(harmonic_state(GH), pot, P, 0.01)
    end = evolve(s, pot, None, P, 1.0, 0.01)[-1]
    assert np.max(np.abs(np.abs(end.psi) - np.abs(s.psi))) <= 1e-10


def test_norm_drift_over_many_steps():
    f = random_field(GH, 3)
    end = evolve(f, harmonic_potential(GH), None, P, 100.0, 0.01)[-1]
    assert abs(end.norm() - 1.0) <= 1e-9


def test_energy_conservation():
    f = random_field(GH, 4)
    pot = harmonic_potential(GH)
    e0 = energy_expectation(f, pot, P)
    end = evolve(f, pot, None, P, 1.0, 1e-3)[-1]
    assert energy_expectation(end, pot, P) == pytest.approx(e0, abs=1e-6)


def test_energy_oracles():
    assert energy_expectation(harmonic_state(GH), harmonic_potential(GH), P) == pytest.approx(0.5, abs=1e-6)
    g = build_grid([[-100, 100]], [2048])
    k, s = 2.0, 12.0
    wave = gaussian_packet(g, 0.0, s, k)
    assert energy_expectation(wave, None, P) == pytest.approx((k**2 + 1 / (4 * s**2)) / 2, rel=1e-8)
    pot = harmonic_potential(GH)
    f = random_field(GH, 5)
    assert energy_expectation(f, pot.shifted(0.75), P) - energy_expectation(f, pot, P) == pytest.approx(0.75,
                                                                                                        abs=1e-12)


def test_evolve_snapshot_contract():
    f = gaussian_packet(G1, 0.0, 1.0)
    only = evolve(f, None, None, P, 0.5, 0.01)
    assert len(only) == 1 and only[0].time == pytest.approx(0.5)
    snaps = evolve(f, None, None, P, 0.5, 0.01, sample_times=[0.3, 0.1, 0.1])
    assert [s.time for s in snaps] == pytest.approx([0.1, 0.3, 0.5])
    assert all(abs(s.norm() - 1) <= 1e-9 for s in snaps)
    with pytest.raises(ValueError):
        evolve(f, None, None, P, 0.5, 0.01, sample_times=[0.105])
    with pytest.raises(ValueError):
        step_count(0.0, 1.0, 0.3)


def test_non_finite_output_aborts():
    bad = Potential.__new__(Potential)
    object.__setattr__(bad, "grid", GH)
    object.__setattr__(bad, "v", np.full(GH.shape, np.inf))
    object.__setattr__(bad, "label", "bad")
    with np.errstate(invalid="ignore"), pytest.raises(NumericalError):
        step(harmonic_state(GH), bad, None, P, 0.01)
    with pytest.raises(ValueError):
        Potential(GH, np.full(GH.shape, np.nan))


def test_coupling_schedule_and_profile():
    x = np.linspace(-5, 5, 101)
    f = detector_profile(x, 0.5)
    assert f[0] == pytest.approx(1.0) and f[-1] == pytest.approx(-1.0)
    assert np.all(np.diff(f) < 0) and np.all(np.abs(f) <= 1)
    c = CouplingTerm(f, 1, 0.25, 1.25, 6.0)
    assert c.g(0.2) == 0 and c.g(0.25) == 6.0 and c.g(1.25) == 0
    assert c.shift == 6.0
    assert c.mean_g(0.2, 0.3) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        CouplingTerm(f, 0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        CouplingTerm(2 * f, 1, 0.0, 1.0, 1.0)


def test_coupling_moves_pointer_by_shift():
    g = build_grid([[-20, 20], [-16, 16]], [128, 64])
    p = PhysicalParams(masses=(1.0, 5.0))
    c = CouplingTerm(detector_profile(g.axes[0], 1.0), 1, 0.25, 1.25, 6.0)
    for x0, sign in ((-8.0, 1), (8.0, -1)):
        f = gaussian_packet(g, (x0, 0.0), 1.0)
        end = evolve(f, None, c, p, 1.5, 0.005)[-1]
        rho = np.abs(end.psi) ** 2 * g.cell_volume
        z_mean = np.sum(rho * g.broadcast(g.axes[1], 1))
        # d<z>/dt = g <f(x)>_t with <p_z> = 0; f is flat where the packet sits, so x evolves freely
        gx = build_grid([g.extents[0]], [g.points[0]])
        xs = evolve(gaussian_packet(gx, x0, 1.0), None, None, PhysicalParams(), 1.25, 0.005,
                    sample_times=list(np.arange(50, 251) * 0.005))
        mean_f = [np.sum(np.abs(s.psi) ** 2 * c.profile) * gx.cell_volume for s in xs if s.time >= 0.25 - 1e-12]
        expected = 6.0 * trapezoid(mean_f, dx=0.005)
        assert abs(expected - sign * 6.0) < 1e-4
        assert z_mean == pytest.approx(expected, abs=1e-7)


def test_harmonic_scenario_step_is_converged():
    sc = harmonic_scenario()
    f = sc.initial_field()
    assert self_convergence_error(f, sc.potential_on(f.grid), None, sc.params(0.0), 2.0, sc.dt) <= 1e-4
