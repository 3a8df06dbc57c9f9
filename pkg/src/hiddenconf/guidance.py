"""Drift fields and the stochastic guidance step.

The forward drift is computed from the logarithmic derivative of the field,

    b = (hbar/m) * (alpha * Re(grad psi / psi) + Im(grad psi / psi)),

so the phase never has to be unwrapped. The backward drift and the current
follow as ``b* = b - alpha hbar (grad rho / rho) / m`` and
``j = (b + b*) rho / 2``. All three are set to zero where the density drops
below ``eps_node`` times its grid maximum.

Off-grid values of psi and grad psi come from periodic B-spline interpolation
of grid data; gradients are evaluated spectrally on the grid first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .field import Grid, PhysicalParams, WaveField, spectral_gradient

log = logging.getLogger(__name__)

#: Relative density below which drifts are regularized to zero.
EPS_NODE = 1e-12

#: Default B-spline order for interpolating psi and grad psi.
SPLINE_ORDER = 5

# spawn-key domains for random streams derived from one global seed
_MEMBER_DOMAIN = 1
_SAMPLING_DOMAIN = 2


@dataclass
class Configuration:
    """A single point in configuration space."""

    x: np.ndarray
    alive: bool = True

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=np.float64)).copy()


@dataclass(frozen=True)
class DriftSample:
    b: np.ndarray
    b_star: np.ndarray
    j: np.ndarray
    regularized: bool


class FieldSampler:
    """Interpolates psi and its spectral gradient at arbitrary points.

    Holds prefiltered spline coefficients for Re/Im of psi and of each
    gradient component. Samplers built from two snapshots can be blended
    linearly in time with :meth:`blend` (prefiltering is linear, so blending
    coefficients equals prefiltering the blended field).
    """

    def __init__(self, grid: Grid, psi: np.ndarray, coeffs: np.ndarray, order: int, time: float):
        self.grid = grid
        self.psi = psi
        self.coeffs = coeffs  # shape (2 * (1 + d), *grid.shape)
        self.order = order
        self.time = time
        self.max_density = float(np.max(np.abs(psi) ** 2))

    @classmethod
    def from_field(cls, field: WaveField, order: int = SPLINE_ORDER) -> "FieldSampler":
        grid = field.grid
        parts = [field.psi] + spectral_gradient(grid, field.psi)
        coeffs = np.empty((2 * len(parts),) + grid.shape)
        for i, part in enumerate(parts):
            for j, real in enumerate((part.real, part.imag)):
                coeffs[2 * i + j] = _prefilter(real, order)
        return cls(grid, field.psi, coeffs, order, field.time)

    @staticmethod
    def blend(a: "FieldSampler", b: "FieldSampler", w: float) -> "FieldSampler":
        """Linear interpolation in time: ``(1 - w) a + w b``."""
        if w == 0.0:
            return a
        if w == 1.0:
            return b
        return FieldSampler(a.grid, (1 - w) * a.psi + w * b.psi, (1 - w) * a.coeffs + w * b.coeffs,
                            a.order, (1 - w) * a.time + w * b.time)

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``psi`` with shape (N,) and ``grad psi`` with shape (N, d)."""
        pts = np.atleast_2d(points)
        coords = self.grid.to_index(pts).T
        vals = np.empty((self.coeffs.shape[0], pts.shape[0]))
        for i, c in enumerate(self.coeffs):
            vals[i] = ndimage.map_coordinates(c, coords, order=self.order, mode="grid-wrap",
                                              prefilter=False)
        cplx = vals[0::2] + 1j * vals[1::2]
        return cplx[0], cplx[1:].T


def _prefilter(values: np.ndarray, order: int) -> np.ndarray:
    if order <= 1:
        return np.array(values, dtype=np.float64)
    return ndimage.spline_filter(values, order=order, mode="grid-wrap", output=np.float64)


def drift_from_values(psi: np.ndarray, grad: np.ndarray, params: PhysicalParams, masses: np.ndarray,
                      floor_density: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized drift evaluation from sampled psi (N,) and grad psi (N, d).

    Returns ``b, b_star, j`` (each (N, d)) and the boolean ``regularized`` mask.
    """
    rho = np.abs(psi) ** 2
    regularized = ~(rho >= floor_density)
    safe = np.where(regularized, 1.0, psi)
    logderiv = grad / safe[:, None]
    scale = params.hbar / masses
    re, im = logderiv.real, logderiv.imag
    b = scale * (params.alpha * re + im)
    # grad rho / rho = 2 Re(grad psi / psi)
    b_star = b - params.alpha * scale * 2.0 * re
    j = 0.5 * (b + b_star) * rho[:, None]
    for arr in (b, b_star, j):
        arr[regularized] = 0.0
    return b, b_star, j, regularized


def drift_at(field: WaveField, x: Sequence[float], params: PhysicalParams, eps_node: float = EPS_NODE,
             order: int = SPLINE_ORDER) -> DriftSample:
    """Forward drift, backward drift and current at a single point."""
    if eps_node <= 0:
        raise ValueError("eps_node must be positive")
    grid = field.grid
    point = np.asarray(x, dtype=float).reshape(1, -1)
    if point.shape[1] != grid.dims:
        raise ValueError(f"point has {point.shape[1]} coordinates, grid has {grid.dims}")
    assert grid.contains(point[0]), "point outside grid extents"
    sampler = FieldSampler.from_field(field, order)
    psi, grad = sampler.evaluate(point)
    b, bs, j, reg = drift_from_values(psi, grad, params, params.masses_for(grid),
                                      eps_node * sampler.max_density)
    return DriftSample(b[0], bs[0], j[0], bool(reg[0]))


def drift_field(field: WaveField, params: PhysicalParams, eps_node: float = EPS_NODE):
    """Drifts and current on every grid point; arrays have shape (d, *grid.shape)."""
    grid = field.grid
    psi = field.psi.ravel()
    grad = np.stack([g.ravel() for g in spectral_gradient(grid, field.psi)], axis=1)
    floor = eps_node * float(np.max(np.abs(psi) ** 2))
    b, bs, j, reg = drift_from_values(psi, grad, params, params.masses_for(grid), floor)
    shape = (grid.dims,) + grid.shape
    return b.T.reshape(shape), bs.T.reshape(shape), j.T.reshape(shape), reg.reshape(grid.shape)


@dataclass(frozen=True)
class CurrentResidual:
    max_abs: float
    l2: float
    points: int


def current_consistency(field: WaveField, params: PhysicalParams, eps_node: float = EPS_NODE) -> CurrentResidual:
    """Compare the drift-built current with ``hbar Im(conj(psi) grad psi) / m``.

    The first path goes through ``b`` and ``b*``; the second is the
    phase-gradient form of the quantum current written without unwrapping.
    Both are evaluated on grid points above the nodal threshold.
    """
    grid = field.grid
    _, _, j_drift, reg = drift_field(field, params, eps_node)
    masses = params.masses_for(grid)
    grads = spectral_gradient(grid, field.psi)
    j_phase = np.stack([params.hbar * np.imag(np.conj(field.psi) * g) / masses[k]
                        for k, g in enumerate(grads)])
    keep = ~reg
    diff = (j_drift - j_phase)[:, keep]
    if diff.size == 0:
        return CurrentResidual(0.0, 0.0, 0)
    return CurrentResidual(float(np.max(np.abs(diff))),
                           float(np.sqrt(np.sum(diff**2) * grid.cell_volume)), int(keep.sum()))


class MemberStreams:
    """Independent counter-based (Philox) normal streams, one per member id.

    The stream of a member depends only on ``(seed, member_id)``, so results
    do not depend on ensemble size, member order or scheduling.
    """

    def __init__(self, seed: int, ids: Sequence[int]):
        self.seed = int(seed)
        self.ids = np.asarray(ids, dtype=np.int64)
        self._gens = [member_generator(seed, int(i)) for i in self.ids]

    def normals(self, n_draws: int, d: int) -> np.ndarray:
        """Next ``n_draws * d`` standard normals per member, shape (N, n_draws, d)."""
        return np.stack([g.standard_normal((n_draws, d)) for g in self._gens])

    def subset(self, index: np.ndarray) -> "MemberStreams":
        out = object.__new__(MemberStreams)
        out.seed = self.seed
        out.ids = self.ids[index]
        out._gens = [self._gens[i] for i in np.arange(len(self._gens))[index]]
        return out


def member_generator(seed: int, member_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_MEMBER_DOMAIN, int(member_id)))
    return np.random.Generator(np.random.Philox(ss))


def sampling_generator(seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_SAMPLING_DOMAIN,))
    return np.random.Generator(np.random.Philox(ss))


def coupling_velocity(couplings: Sequence, grid: Grid, positions: np.ndarray, t0: float,
                      t1: float) -> np.ndarray | None:
    """Convective velocity ``g f(x_src)`` of pointer couplings, averaged over ``[t0, t1]``.

    A term ``g f(x) p_z`` in the Hamiltonian adds ``g f rho`` to the
    z-component of the probability current, so the guided configuration
    must carry the same velocity to stay distributed as ``|psi|^2``.
    """
    out = None
    for c in couplings:
        g = c.mean_g(t0, t1)
        if g == 0.0:
            continue
        if out is None:
            out = np.zeros_like(positions)
        lo, hi = grid.extents[c.source_axis]
        f = np.interp(positions[:, c.source_axis], grid.axes[c.source_axis], c.profile, period=hi - lo)
        out[:, c.target_axis] += g * f
    return out


def advance_positions(positions: np.ndarray, sampler: FieldSampler, params: PhysicalParams,
                      dt: float, noise: np.ndarray | None, eps_node: float = EPS_NODE,
                      couplings: Sequence = (), t0: float | None = None):
    """One Euler-Maruyama step for many members against a fixed sampler.

    ``noise`` holds standard normals of shape (N, d) and is ignored when
    alpha is zero. Active ``couplings`` over ``[t0, t0 + dt]`` add their
    convective velocity. Returns ``(new_positions, regularized, wrapped)``.
    """
    grid = sampler.grid
    masses = params.masses_for(grid)
    psi, grad = sampler.evaluate(positions)
    b, _, _, reg = drift_from_values(psi, grad, params, masses, eps_node * sampler.max_density)
    if couplings:
        extra = coupling_velocity(couplings, grid, positions, t0, t0 + dt)
        if extra is not None:
            b = b + np.where(reg[:, None], 0.0, extra)
    new = positions + b * dt
    if params.alpha != 0.0:
        sd = np.sqrt(params.alpha * params.hbar / masses * dt)
        new = new + sd * noise
    new, wrapped = grid.wrap(new)
    return new, reg, wrapped


def guidance_step(x: Configuration, field_t: WaveField, field_next: WaveField, params: PhysicalParams,
                  dt: float, rng: np.random.Generator | None, eps_node: float = EPS_NODE,
                  order: int = SPLINE_ORDER) -> Configuration:
    """Advance one configuration by ``dt`` using the field blended to the midpoint time.

    At ``alpha == 0`` the update is deterministic and ``rng`` is not touched.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = FieldSampler.from_field(field_t, order)
    b = FieldSampler.from_field(field_next, order)
    mid = FieldSampler.blend(a, b, 0.5)
    d = field_t.grid.dims
    noise = None
    if params.alpha != 0.0:
        noise = rng.standard_normal((1, d))
    new, _, wrapped = advance_positions(x.x.reshape(1, -1), mid, params, dt, noise, eps_node)
    if wrapped[0]:
        log.warning("configuration wrapped across the periodic boundary")
    return Configuration(new[0], x.alive)


def bohm_trajectory_oracle(x0: float, t: float, sigma0: float, k: float = 0.0, center: float = 0.0,
                           hbar: float = 1.0, mass: float = 1.0) -> float:
    """Exact alpha = 0 trajectory in a freely spreading 1-D Gaussian packet.

    The packet ``exp(-(x-c)^2/(4 sigma0^2) + i k x)`` keeps a Gaussian shape
    with ``sigma(t)^2 = sigma0^2 + (hbar t / (2 m sigma0))^2`` and a centre
    moving at ``hbar k / m``; trajectories scale with the width about that centre.
    """
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    sigma_t = np.sqrt(sigma0**2 + (hbar * t / (2.0 * mass * sigma0)) ** 2)
    drift = hbar * k * t / mass
    return float(center + drift + (x0 - center) * sigma_t / sigma0)
