"""Grids, wave fields, densities and the polar decomposition.

All fields live on a periodic rectangular grid with ``n_k`` points per axis,
``x_j = lo + j * dx``. Arrays are indexed ``[i0, i1, ...]`` with axis 0 first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft

from .errors import FieldError, GridError, NumericalError

#: Default cap on the total number of grid points (64 MiB of complex128).
MAX_POINTS = 2**22

#: Absolute density above which a boundary sample counts as a violation.
BOUNDARY_DENSITY_LIMIT = 1e-8


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Rectangular periodic grid over ``[lo, hi)`` per axis."""

    extents: tuple[tuple[float, float], ...]
    points: tuple[int, ...]

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.extents, self.points))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.extents)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(lo + np.arange(n) * dx
                     for (lo, _), n, dx in zip(self.extents, self.points, self.spacing))

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(2 * np.pi * scipy.fft.fftfreq(n, d=dx)
                     for n, dx in zip(self.points, self.spacing))

    def broadcast(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Reshape a 1-D per-axis array so it broadcasts along ``axis``."""
        shape = [1] * self.dims
        shape[axis] = -1
        return np.reshape(values, shape)

    def contains(self, x: Sequence[float]) -> bool:
        return all(lo <= xi < hi for xi, (lo, hi) in zip(x, self.extents))

    def wrap(self, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map ``(..., d)`` positions into the periodic cell.

        Returns the wrapped positions and a boolean array marking rows that
        had to be moved.
        """
        lo = np.array([e[0] for e in self.extents])
        hi = np.array([e[1] for e in self.extents])
        outside = (positions < lo) | (positions >= hi)
        if not outside.any():
            return positions, np.zeros(positions.shape[:-1], dtype=bool)
        wrapped = np.where(outside, lo + np.mod(positions - lo, hi - lo), positions)
        # mod can round up to exactly hi
        wrapped = np.where(wrapped >= hi, lo, wrapped)
        return wrapped, np.any(outside, axis=-1)

    def to_index(self, positions: np.ndarray) -> np.ndarray:
        """Fractional grid indices of ``(..., d)`` positions."""
        lo = np.array([e[0] for e in self.extents])
        return (positions - lo) / np.array(self.spacing)

    def nearest_index(self, positions: np.ndarray) -> tuple[np.ndarray, ...]:
        idx = np.rint(self.to_index(np.atleast_2d(positions))).astype(np.int64)
        idx %= np.array(self.points)
        return tuple(idx[:, k] for k in range(self.dims))


def build_grid(extents: Sequence[Sequence[float]], points: Sequence[int],
               max_points: int = MAX_POINTS) -> Grid:
    """Validate and build a periodic grid.

    >>> build_grid([[-10, 10]], [256]).spacing
    (0.078125,)
    """
    if len(extents) != len(points):
        raise GridError(f"got {len(extents)} extents but {len(points)} point counts")
    d = len(points)
    if not 1 <= d <= 3:
        raise GridError(f"grid dimension must be 1..3, got {d}")
    ext = []
    for k, (pair, n) in enumerate(zip(extents, points)):
        if len(pair) != 2:
            raise GridError(f"axis {k}: extent must be a [lo, hi] pair")
        lo, hi = float(pair[0]), float(pair[1])
        if not lo < hi:
            raise GridError(f"axis {k}: need lo < hi, got [{lo}, {hi}]")
        if int(n) != n or not _is_power_of_two(int(n)) or n < 8:
            raise GridError(f"axis {k}: point count {n} is not a power of two >= 8")
        ext.append((lo, hi))
    pts = tuple(int(n) for n in points)
    total = int(np.prod(pts))
    if total > max_points:
        raise GridError(f"grid has {total} points, above the cap of {max_points}")
    return Grid(tuple(ext), pts)


@dataclass(frozen=True)
class PhysicalParams:
    """Action scale, per-axis masses and the diffusion parameter alpha."""

    hbar: float = 1.0
    masses: tuple[float, ...] = (1.0,)
    alpha: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if any(m <= 0 for m in self.masses):
            raise ValueError("masses must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @property
    def nu(self) -> tuple[float, ...]:
        """Per-axis diffusion constants ``alpha * hbar / m_k``."""
        return tuple(self.alpha * self.hbar / m for m in self.masses)

    def with_alpha(self, alpha: float) -> "PhysicalParams":
        return PhysicalParams(self.hbar, self.masses, alpha)

    def masses_for(self, grid: Grid) -> np.ndarray:
        if len(self.masses) == 1 and grid.dims > 1:
            return np.full(grid.dims, self.masses[0])
        if len(self.masses) != grid.dims:
            raise ValueError(f"{len(self.masses)} masses given for a {grid.dims}-D grid")
        return np.array(self.masses)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)  # own the buffer
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class WaveField:
    """Complex amplitude sampled on a grid at a given time. Immutable."""

    grid: Grid
    psi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=np.complex128)
        if psi.shape != self.grid.shape:
            raise FieldError(f"amplitude shape {psi.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "psi", _frozen(psi))

    def norm(self) -> float:
        """L2 norm ``sqrt(sum |psi|^2 * cell volume)``."""
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.cell_volume))

    def normalized(self) -> "WaveField":
        n = self.norm()
        if not np.isfinite(n) or n == 0:
            raise FieldError("cannot normalize a zero or non-finite field")
        return WaveField(self.grid, self.psi / n, self.time)

    def with_psi(self, psi: np.ndarray, time: float | None = None) -> "WaveField":
        return WaveField(self.grid, psi, self.time if time is None else time)

    def __add__(self, other: "WaveField") -> "WaveField":
        if other.grid != self.grid:
            raise FieldError("fields live on different grids")
        return WaveField(self.grid, self.psi + other.psi, self.time)

    def __mul__(self, c: complex) -> "WaveField":
        return WaveField(self.grid, self.psi * c, self.time)

    __rmul__ = __mul__

    def boundary_density(self) -> float:
        """Largest ``|psi|^2`` on the outermost grid slab of any axis."""
        rho = np.abs(self.psi) ** 2
        worst = 0.0
        for axis in range(self.grid.dims):
            first = np.take(rho, 0, axis=axis)
            last = np.take(rho, -1, axis=axis)
            worst = max(worst, float(first.max()), float(last.max()))
        return worst


@dataclass(frozen=True)
class DensityField:
    """Non-negative probability density on a grid. Immutable."""

    grid: Grid
    rho: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.shape != self.grid.shape:
            raise FieldError(f"density shape {rho.shape} does not match grid {self.grid.shape}")
        if np.any(rho < 0):
            raise FieldError("density must be non-negative")
        object.__setattr__(self, "rho", _frozen(rho))

    def integral(self) -> float:
        return float(np.sum(self.rho) * self.grid.cell_volume)

    def normalized(self) -> "DensityField":
        return DensityField(self.grid, self.rho / self.integral(), self.time)


def gaussian_profile(x: np.ndarray, center: float, sigma: float, k: float = 0.0) -> np.ndarray:
    """Unnormalized 1-D packet ``exp(-(x-c)^2 / (4 sigma^2) + i k x)``."""
    return np.exp(-((x - center) ** 2) / (4.0 * sigma**2) + 1j * k * x)


def _per_axis(value, d: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (d,)) if np.ndim(value) == 0 \
        else np.asarray(value, dtype=float)
    if arr.shape != (d,):
        raise FieldError(f"{name} needs {d} components, got {arr.shape}")
    return arr


def gaussian_packet(grid: Grid, center, sigma, k=0.0, time: float = 0.0,
                    tail_limit: float = BOUNDARY_DENSITY_LIMIT) -> WaveField:
    """Normalized Gaussian packet with position width ``sigma`` and wavevector ``k``.

    ``center``, ``sigma`` and ``k`` may be scalars (applied to every axis) or
    per-axis sequences. Raises :class:`FieldError` if the density at the grid
    boundary would exceed ``tail_limit``.
    """
    d = grid.dims
    c = _per_axis(center, d, "center")
    s = _per_axis(sigma, d, "sigma")
    kk = _per_axis(k, d, "k")
    if np.any(s <= 0):
        raise FieldError("sigma must be positive")
    if not grid.contains(c):
        raise FieldError(f"packet center {c.tolist()} lies outside the grid")
    psi = np.ones(grid.shape, dtype=np.complex128)
    for axis in range(d):
        psi = psi * grid.broadcast(gaussian_profile(grid.axes[axis], c[axis], s[axis], kk[axis]), axis)
    out = WaveField(grid, psi, time).normalized()
    edge = out.boundary_density()
    if edge >= tail_limit:
        raise FieldError(f"packet tail density {edge:.3g} at the boundary exceeds {tail_limit:g}")
    return out


def harmonic_state(grid: Grid, n: int = 0, omega: float = 1.0, hbar: float = 1.0,
                   mass: float = 1.0, center: float = 0.0, time: float = 0.0) -> WaveField:
    """Ground (``n=0``) or first excited (``n=1``) harmonic oscillator state in 1-D."""
    if grid.dims != 1:
        raise FieldError("harmonic_state is defined on 1-D grids")
    if n not in (0, 1):
        raise FieldError("only n = 0 and n = 1 are provided")
    xi = np.sqrt(mass * omega / hbar) * (grid.axes[0] - center)
    psi = np.exp(-0.5 * xi**2)
    if n == 1:
        psi = psi * np.sqrt(2.0) * xi
    return WaveField(grid, psi.astype(np.complex128), time).normalized()


def density_of(field: WaveField) -> DensityField:
    """Pointwise ``|psi|^2``."""
    if not np.all(np.isfinite(field.psi)):
        raise NumericalError("non-finite amplitude in wave field")
    return DensityField(field.grid, np.abs(field.psi) ** 2, field.time)


@dataclass(frozen=True)
class PolarFields:
    R: np.ndarray
    S: np.ndarray
    mask: np.ndarray = field(repr=False)


def polar_decompose(field: WaveField, threshold: float) -> PolarFields:
    """Split ``psi = exp(R + iS)`` where ``|psi|^2 >= threshold``.

    ``mask`` is True on points where the decomposition is defined; R and S are
    NaN elsewhere. S is the principal-value phase at each point, never
    unwrapped.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    rho = np.abs(field.psi) ** 2
    mask = rho >= threshold
    R = np.full(rho.shape, np.nan)
    S = np.full(rho.shape, np.nan)
    R[mask] = np.log(np.abs(field.psi[mask]))
    S[mask] = np.angle(field.psi[mask])
    return PolarFields(R, S, mask)


def _partial(grid: Grid, values: np.ndarray, axis: int) -> np.ndarray:
    if np.iscomplexobj(values):
        # real and imaginary parts separately, so a real field has an exactly real gradient
        return _partial(grid, values.real, axis) + 1j * _partial(grid, values.imag, axis)
    n = grid.points[axis]
    ik = 1j * grid.wavenumbers[axis][: n // 2 + 1]
    ik[n // 2] = 0.0  # odd derivative: drop the unpaired Nyquist mode
    shape = [1] * values.ndim
    shape[axis] = ik.size
    spec = scipy.fft.rfft(values, axis=axis) * ik.reshape(shape)
    return scipy.fft.irfft(spec, n=n, axis=axis)


def spectral_gradient(grid: Grid, values: np.ndarray) -> list[np.ndarray]:
    """Spectral partial derivatives of ``values`` along every axis."""
    return [_partial(grid, values, axis) for axis in range(grid.dims)]


def spectral_divergence(grid: Grid, components: Sequence[np.ndarray]) -> np.ndarray:
    """Spectral divergence of a real vector field given per axis."""
    return sum(_partial(grid, comp, axis) for axis, comp in enumerate(components))
