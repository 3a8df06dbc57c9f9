import numpy as np
import pytest
from hypothesis import given, strategies as st

from hiddenconf.errors import FieldError, GridError, NumericalError
from hiddenconf.field import (DensityField, PhysicalParams, WaveField, build_grid, density_of, gaussian_packet,
                              harmonic_state, polar_decompose, spectral_divergence, spectral_gradient)


def test_grid_axes_and_spacing():
    g = build_grid([[-10, 10], [0, 4]], [256, 16])
    assert g.spacing == (20 / 256, 0.25)
    assert g.shape == (256, 16)
    assert g.axes[0][0] == -10 and g.axes[0][-1] == pytest.approx(10 - 20 / 256)
    assert g.cell_volume == pytest.approx(20 / 256 * 0.25)


@pytest.mark.parametrize("extents, points", [
    ([[-1, 1]], [100]),            # not a power of two
    ([[-1, 1]], [4]),              # too coarse
    ([[1, 1]], [16]),              # empty extent
    ([[-1, 1]] * 4, [8] * 4),      # d = 4
    ([[-1, 1], [0, 1]], [16]),     # length mismatch
])
def test_grid_rejects_bad_specs(extents, points):
    with pytest.raises(GridError):
        build_grid(extents, points)


def test_grid_point_cap():
    with pytest.raises(GridError, match="cap"):
        build_grid([[0, 1]] * 3, [256, 256, 256], max_points=2**20)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_wrap_lands_inside_and_is_idempotent(xs):
    g = build_grid([[-5.0, 3.0]], [64])
    pos = np.array(xs)[:, None]
    wrapped, flagged = g.wrap(pos)
    assert np.all((wrapped >= -5.0) & (wrapped < 3.0))
    inside = (pos[:, 0] >= -5.0) & (pos[:, 0] < 3.0)
    assert np.array_equal(flagged, ~inside)
    assert np.array_equal(wrapped[inside], pos[inside])
    again, flagged2 = g.wrap(wrapped)
    assert np.array_equal(again, wrapped) and not flagged2.any()


def test_params_masses_broadcast():
    g = build_grid([[-1, 1]] * 2, [16, 16])
    assert np.array_equal(PhysicalParams(masses=(2.0,)).masses_for(g), [2.0, 2.0])
    with pytest.raises(ValueError):
        PhysicalParams(masses=(1.0, 2.0, 3.0)).masses_for(g)
    with pytest.raises(ValueError):
        PhysicalParams(hbar=0.0)


def test_gaussian_packet_normalized_and_guarded():
    g = build_grid([[-20, 20], [-10, 10]], [128, 64])
    f = gaussian_packet(g, (1.0, -2.0), (1.5, 1.0), (0.5, 0.0))
    assert f.norm() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(FieldError, match="tail"):
        gaussian_packet(g, 0.0, 8.0)
    with pytest.raises(FieldError, match="outside"):
        gaussian_packet(g, (30.0, 0.0), 1.0)


def test_fields_are_read_only():
    g = build_grid([[-10, 10]], [64])
    f = gaussian_packet(g, 0.0, 1.0)
    with pytest.raises(ValueError):
        f.psi[0] = 1.0
    with pytest.raises(FieldError):
        WaveField(g, np.zeros(32))
    with pytest.raises(FieldError):
        DensityField(g, -np.ones(64))


def test_harmonic_states_orthonormal():
    g = build_grid([[-12, 12]], [256])
    a, b = harmonic_state(g, 0), harmonic_state(g, 1)
    dx = g.cell_volume
    assert np.sum(np.abs(a.psi) ** 2) * dx == pytest.approx(1.0, abs=1e-12)
    assert abs(np.sum(np.conj(a.psi) * b.psi) * dx) < 1e-12


def test_density_rejects_non_finite():
    g = build_grid([[-1, 1]], [16])
    psi = np.ones(16, dtype=complex)
    psi[3] = np.nan
    with pytest.raises(NumericalError):
        density_of(WaveField(g, psi))


def test_polar_decompose_gaussian():
    g = build_grid([[-20, 20]], [512])
    f = gaussian_packet(g, 0.0, 1.0, 0.3)
    polar = polar_decompose(f, 1e-12)
    x = g.axes[0]
    m = polar.mask
    norm = (2 * np.pi) ** -0.25
    assert np.allclose(polar.R[m], np.log(norm) - x[m] ** 2 / 4, atol=1e-10)
    assert np.allclose(np.exp(1j * polar.S[m]), np.exp(0.3j * x[m]), atol=1e-10)
    assert np.all(np.isnan(polar.R[~m])) and (~m).any()


def test_spectral_gradient_and_divergence_exact_for_modes():
    g = build_grid([[0, 2 * np.pi], [0, 2 * np.pi]], [32, 16])
    x, y = g.mesh()
    f = np.sin(3 * x) * np.cos(2 * y)
    gx, gy = spectral_gradient(g, f)
    assert np.allclose(gx, 3 * np.cos(3 * x) * np.cos(2 * y), atol=1e-12)
    assert np.allclose(gy, -2 * np.sin(3 * x) * np.sin(2 * y), atol=1e-12)
    div = spectral_divergence(g, [np.sin(x), np.sin(y)])
    assert np.allclose(div, np.cos(x) + np.cos(y), atol=1e-12)


def test_real_field_has_real_gradient():
    g = build_grid([[-12, 12]], [256])
    (grad,) = spectral_gradient(g, harmonic_state(g).psi)
    assert np.all(grad.imag == 0.0)
