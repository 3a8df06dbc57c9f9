"""Split-operator spectral propagation of the wave field.

The Hamiltonian is ``-(hbar^2/2) sum_k d_k^2 / m_k + V(x)`` plus optional
pointer couplings ``g(t) f(x_src) p_tgt``. One step is the symmetric product

    V/2 -> couplings/2 -> kinetic -> couplings/2 (reversed) -> V/2

where V acts pointwise, each coupling is diagonal in the mixed basis (source
axis in position, target axis in momentum) and the kinetic factor is diagonal
in full momentum space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.fft

from .errors import FieldError, NumericalError
from .field import Grid, PhysicalParams, WaveField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Potential:
    grid: Grid
    v: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise FieldError(f"potential shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise FieldError("potential must be finite on the whole grid")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.v)

    def shifted(self, c: float) -> "Potential":
        return Potential(self.grid, self.v + c, f"{self.label}+{c:g}")


def free_potential(grid: Grid) -> Potential:
    return Potential(grid, np.zeros(grid.shape), "free")


def harmonic_potential(grid: Grid, omega=1.0, masses: Sequence[float] | float = 1.0,
                       center=0.0, axes: Sequence[int] | None = None) -> Potential:
    """``sum_k m_k omega_k^2 (x_k - c_k)^2 / 2`` over the selected axes."""
    axes = range(grid.dims) if axes is None else axes
    d = grid.dims
    om = np.broadcast_to(np.asarray(omega, float), (d,))
    ms = np.broadcast_to(np.asarray(masses, float), (d,))
    cs = np.broadcast_to(np.asarray(center, float), (d,))
    v = np.zeros(grid.shape)
    for k in axes:
        v = v + grid.broadcast(0.5 * ms[k] * om[k] ** 2 * (grid.axes[k] - cs[k]) ** 2, k)
    return Potential(grid, v, "harmonic")


def detector_profile(x: np.ndarray, width: float, boundary: float = 0.0) -> np.ndarray:
    """+1 on the detector-1 side (``x < boundary``), -1 on the other, tanh in between."""
    if width <= 0:
        raise ValueError("transition width must be positive")
    return -np.tanh((x - boundary) / width)


@dataclass(frozen=True)
class CouplingTerm:
    """Pointer coupling ``g(t) f(x_source) p_target``.

    ``g`` equals ``strength`` on ``[t_on, t_off)`` and zero elsewhere, so a
    pointer sitting where ``f = +1`` moves by ``+strength * (t_off - t_on)``.
    """

    profile: np.ndarray
    target_axis: int
    t_on: float
    t_off: float
    strength: float
    source_axis: int = 0

    def __post_init__(self):
        f = np.asarray(self.profile, dtype=np.float64).copy()
        if f.ndim != 1:
            raise ValueError("coupling profile must be one-dimensional")
        if np.any(np.abs(f) > 1.0 + 1e-12):
            raise ValueError("coupling profile values must lie in [-1, 1]")
        if self.strength < 0:
            raise ValueError("coupling strength must be non-negative")
        if not self.t_on < self.t_off:
            raise ValueError("coupling window needs t_on < t_off")
        if self.target_axis == self.source_axis:
            raise ValueError("coupling must act on a pointer axis distinct from its source")
        f.flags.writeable = False
        object.__setattr__(self, "profile", f)

    @property
    def shift(self) -> float:
        return self.strength * (self.t_off - self.t_on)

    def g(self, t: float) -> float:
        return self.strength if self.t_on <= t < self.t_off else 0.0

    def mean_g(self, t0: float, t1: float) -> float:
        """Average of g over ``[t0, t1]`` (exact for misaligned window edges)."""
        lo, hi = min(t0, t1), max(t0, t1)
        overlap = max(0.0, min(hi, self.t_off) - max(lo, self.t_on))
        return self.strength * overlap / (hi - lo)


class SplitStepPropagator:
    """Cached Strang-split stepper for a fixed grid, potential and dt."""

    def __init__(self, grid: Grid, potential: Potential | None, params: PhysicalParams,
                 dt: float, couplings: Sequence[CouplingTerm] = ()):
        if dt == 0 or not np.isfinite(dt):
            raise ValueError("dt must be finite and nonzero")
        if potential is not None and potential.grid != grid:
            raise FieldError("potential lives on a different grid")
        self.grid = grid
        self.params = params
        self.dt = float(dt)
        self.couplings = tuple(couplings)
        hbar = params.hbar
        masses = params.masses_for(grid)
        phase = np.zeros(grid.shape)
        for axis, k in enumerate(grid.wavenumbers):
            phase = phase + grid.broadcast(hbar * k**2 / (2.0 * masses[axis]), axis)
        self._kinetic = np.exp(-1j * self.dt * phase)
        if potential is None or potential.is_zero:
            self._half_v = None
        else:
            self._half_v = np.exp(-0.5j * self.dt * potential.v / hbar)
        for c in self.couplings:
            for ax in (c.source_axis, c.target_axis):
                if not 0 <= ax < grid.dims:
                    raise FieldError(f"coupling axis {ax} outside a {grid.dims}-D grid")
            if c.profile.shape != (grid.points[c.source_axis],):
                raise FieldError("coupling profile length does not match its source axis")
        self._coupling_cache: dict[tuple[int, float], np.ndarray] = {}

    def _coupling_phase(self, index: int, g: float) -> np.ndarray:
        key = (index, g)
        phase = self._coupling_cache.get(key)
        if phase is None:
            c = self.couplings[index]
            f = self.grid.broadcast(c.profile, c.source_axis)
            kz = self.grid.broadcast(self.grid.wavenumbers[c.target_axis], c.target_axis)
            # H_int / hbar = g f(x) k_z
            phase = np.exp(-0.5j * self.dt * g * f * kz)
            self._coupling_cache[key] = phase
        return phase

    def _apply_couplings(self, psi: np.ndarray, t: float, order) -> np.ndarray:
        for i in order:
            c = self.couplings[i]
            g = c.mean_g(t, t + self.dt)
            if g == 0.0:
                continue
            spec = scipy.fft.fft(psi, axis=c.target_axis)
            spec *= self._coupling_phase(i, g)
            psi = scipy.fft.ifft(spec, axis=c.target_axis)
        return psi

    def advance(self, psi: np.ndarray, t: float) -> np.ndarray:
        """One step on a raw amplitude array starting at time ``t``."""
        if self._half_v is not None:
            psi = psi * self._half_v
        n = len(self.couplings)
        psi = self._apply_couplings(psi, t, range(n))
        spec = scipy.fft.fftn(psi)
        spec *= self._kinetic
        psi = scipy.fft.ifftn(spec)
        psi = self._apply_couplings(psi, t, reversed(range(n)))
        if self._half_v is not None:
            psi = psi * self._half_v
        if not np.all(np.isfinite(psi)):
            raise NumericalError(f"non-finite amplitude after step at t={t:g}, dt={self.dt:g}")
        return psi

    def step(self, field: WaveField) -> WaveField:
        return WaveField(self.grid, self.advance(field.psi, field.time), field.time + self.dt)


def step(field: WaveField, potential: Potential | None, coupling: Sequence[CouplingTerm] | CouplingTerm | None,
         params: PhysicalParams, dt: float) -> WaveField:
    """Advance ``field`` by one Strang step of size ``dt``.

    A negative ``dt`` runs the (exactly inverse) backward step.
    """
    return SplitStepPropagator(field.grid, potential, params, dt, _couplings(coupling)).step(field)


def _couplings(coupling) -> tuple[CouplingTerm, ...]:
    if coupling is None:
        return ()
    if isinstance(coupling, CouplingTerm):
        return (coupling,)
    return tuple(coupling)


def step_count(t0: float, t_final: float, dt: float) -> int:
    """Number of steps of size ``dt`` spanning ``[t0, t_final]``; must be integral."""
    span = t_final - t0
    n = int(round(span / dt))
    if n < 1 or abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"interval {span:g} is not a whole number of steps of {dt:g}")
    return n


def iter_evolution(field: WaveField, potential: Potential | None, coupling, params: PhysicalParams,
                   dt: float, n_steps: int) -> Iterator[WaveField]:
    """Yield the initial field and every one of the following ``n_steps`` fields.

    Times are ``t0 + i * dt`` exactly, so no rounding drift accumulates.
    """
    prop = SplitStepPropagator(field.grid, potential, params, dt, _couplings(coupling))
    t0 = field.time
    psi = field.psi
    yield field
    for i in range(n_steps):
        psi = prop.advance(psi, t0 + i * dt)
        yield WaveField(field.grid, psi, t0 + (i + 1) * dt)


def evolve(field: WaveField, potential: Potential | None, coupling, params: PhysicalParams,
           t_final: float, dt: float, sample_times: Sequence[float] = ()) -> list[WaveField]:
    """Evolve to ``t_final``; return snapshots at ``sample_times`` plus the final state.

    Sample times must fall on step boundaries. The returned list is sorted by
    time and never contains duplicates.
    """
    if not t_final > field.time:
        raise ValueError("t_final must be later than the field time")
    n = step_count(field.time, t_final, dt)
    dt = (t_final - field.time) / n
    wanted = {}
    for ts in sample_times:
        if not field.time <= ts <= t_final:
            raise ValueError(f"sample time {ts:g} outside [{field.time:g}, {t_final:g}]")
        idx = int(round((ts - field.time) / dt))
        if abs(field.time + idx * dt - ts) > 1e-9 * max(1.0, abs(ts)):
            raise ValueError(f"sample time {ts:g} is not on a step boundary")
        wanted[idx] = ts
    wanted[n] = t_final
    out = []
    for i, snap in enumerate(iter_evolution(field, potential, coupling, params, dt, n)):
        if i in wanted:
            out.append(snap)
    return out


def kinetic_energy(field: WaveField, params: PhysicalParams) -> float:
    grid = field.grid
    masses = params.masses_for(grid)
    spec = np.abs(scipy.fft.fftn(field.psi)) ** 2
    t = np.zeros(grid.shape)
    for axis, k in enumerate(grid.wavenumbers):
        t = t + grid.broadcast(params.hbar**2 * k**2 / (2.0 * masses[axis]), axis)
    return float(np.sum(t * spec) / np.sum(spec))


def energy_expectation(field: WaveField, potential: Potential | None, params: PhysicalParams) -> float:
    """``<psi|H|psi> / <psi|psi>`` with a spectral kinetic term."""
    if not np.all(np.isfinite(field.psi)):
        raise NumericalError("non-finite amplitude in wave field")
    e = kinetic_energy(field, params)
    if potential is not None:
        rho = np.abs(field.psi) ** 2
        e += float(np.sum(potential.v * rho) / np.sum(rho))
    return e


def self_convergence_error(field: WaveField, potential: Potential | None, coupling,
                           params: PhysicalParams, t_final: float, dt: float) -> float:
    """Relative L2 difference between runs with ``dt`` and ``dt/2``."""
    coarse = evolve(field, potential, coupling, params, t_final, dt)[-1]
    fine = evolve(field, potential, coupling, params, t_final, dt / 2)[-1]
    return float(np.linalg.norm(coarse.psi - fine.psi) / np.linalg.norm(fine.psi))


def stationary_state(guess: WaveField, potential: Potential | None, params: PhysicalParams,
                     dt: float) -> WaveField:
    """Eigenvector of the 1-D one-step propagator closest to ``guess``.

    The analytic eigenstates of H are only stationary up to the O(dt^2)
    splitting error; this returns the state that the discrete dynamics keeps
    exactly stationary (modulo rounding).
    """
    grid = guess.grid
    if grid.dims != 1:
        raise FieldError("stationary_state is implemented for 1-D grids")
    prop = SplitStepPropagator(grid, potential, params, dt)
    n = grid.points[0]
    basis = np.eye(n, dtype=np.complex128)
    u = np.column_stack([prop.advance(basis[:, i], 0.0) for i in range(n)])
    _, vecs = np.linalg.eig(u)
    overlaps = np.abs(vecs.conj().T @ guess.psi)
    v = vecs[:, int(np.argmax(overlaps))]
    v = v * np.exp(-1j * np.angle(v[int(np.argmax(np.abs(v)))]))
    return WaveField(grid, v, guess.time).normalized()
