"""Ensembles of guided configurations and statistical checks on them."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import NumericalError, SamplingError
from .field import DensityField, Grid, PhysicalParams, WaveField, density_of, spectral_divergence
from .guidance import (EPS_NODE, SPLINE_ORDER, Configuration, FieldSampler, MemberStreams,
                       advance_positions, drift_field, sampling_generator)

log = logging.getLogger(__name__)

#: Acceptance rate below which rejection sampling gives up.
MIN_ACCEPTANCE = 1e-4


@dataclass(frozen=True)
class Ensemble:
    """Population of configurations sharing one global seed.

    ``ids`` are the per-member stream identifiers; ``positions`` has shape
    (N, d). ``provenance`` records how the population was built.
    """

    grid: Grid
    positions: np.ndarray
    ids: np.ndarray
    seed: int
    time: float
    provenance: dict = field(default_factory=dict)
    regularized_hits: np.ndarray | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, ndmin=2)
        ids = np.array(self.ids, dtype=np.int64)
        if pos.shape[0] < 1:
            raise ValueError("an ensemble needs at least one member")
        if pos.shape != (ids.size, self.grid.dims):
            raise ValueError(f"positions {pos.shape} do not match {ids.size} members in {self.grid.dims}-D")
        if np.unique(ids).size != ids.size:
            raise ValueError("member stream ids must be distinct")
        hits = np.zeros(ids.size, dtype=np.int64) if self.regularized_hits is None \
            else np.array(self.regularized_hits, dtype=np.int64)
        for a in (pos, ids, hits):
            a.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "regularized_hits", hits)

    def __len__(self) -> int:
        return self.ids.size

    @property
    def members(self) -> list[Configuration]:
        return [Configuration(x) for x in self.positions]

    def subset(self, index, provenance: dict) -> "Ensemble":
        """Sub-ensemble keeping member ids (and hence their random streams)."""
        return Ensemble(self.grid, self.positions[index], self.ids[index], self.seed, self.time,
                        provenance, self.regularized_hits[index])


def _multilinear_psi(grid: Grid, psi: np.ndarray, base: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of grid values from cell corners (periodic)."""
    d = grid.dims
    out = np.zeros(base.shape[0], dtype=np.complex128)
    n = np.array(grid.points)
    for corner in range(2**d):
        bits = np.array([(corner >> k) & 1 for k in range(d)])
        idx = (base + bits) % n
        w = np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
        out += w * psi[tuple(idx.T)]
    return out


def sample_from_density(field: WaveField, count: int, seed: int, provenance: dict | None = None,
                        batch: int | None = None) -> Ensemble:
    """Draw ``count`` i.i.d. configurations from ``|psi|^2``.

    The continuous density is ``|psi_lin|^2`` with ``psi_lin`` the multilinear
    interpolant of the grid amplitudes. Within a cell ``|psi_lin|`` never
    exceeds its largest corner modulus, so the per-cell maximum of corner
    densities is an exact rejection envelope.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    grid = field.grid
    d = grid.dims
    rng = sampling_generator(seed)
    rho = np.abs(field.psi) ** 2
    env = rho.copy()
    for corner in range(1, 2**d):
        shifted = rho
        for k in range(d):
            if (corner >> k) & 1:
                shifted = np.roll(shifted, -1, axis=k)
        env = np.maximum(env, shifted)
    env_flat = env.ravel()
    total = env_flat.sum()
    if not np.isfinite(total) or total <= 0:
        raise SamplingError("density has no mass to sample from")
    cdf = np.cumsum(env_flat / total)
    cdf[-1] = 1.0
    lo = np.array([e[0] for e in grid.extents])
    dx = np.array(grid.spacing)
    batch = batch or max(1024, 2 * count)
    accepted: list[np.ndarray] = []
    have = 0
    tried = 0
    while have < count:
        cells = np.searchsorted(cdf, rng.random(batch), side="right")
        base = np.stack(np.unravel_index(cells, grid.shape), axis=1)
        frac = rng.random((batch, d))
        dens = np.abs(_multilinear_psi(grid, field.psi, base, frac)) ** 2
        keep = rng.random(batch) * env_flat[cells] < dens
        tried += batch
        if keep.any():
            accepted.append(lo + (base[keep] + frac[keep]) * dx)
            have += int(keep.sum())
        if tried >= 10 * batch and have / tried < MIN_ACCEPTANCE:
            raise SamplingError(f"acceptance rate {have / tried:.2e} below {MIN_ACCEPTANCE:g}")
    pos, _ = grid.wrap(np.concatenate(accepted)[:count])
    prov = {"kind": "full-density", "time": field.time} if provenance is None else provenance
    return Ensemble(grid, pos, np.arange(count), seed, field.time, prov)


@dataclass
class EnsembleTrajectory:
    """Member positions recorded at selected times during co-evolution."""

    times: list[float]
    positions: list[np.ndarray]
    final: Ensemble
    fields: dict[float, WaveField] = field(default_factory=dict)
    wrap_events: int = 0

    def as_array(self) -> np.ndarray:
        return np.stack(self.positions)


def evolve_ensemble(ens: Ensemble, field_evolution: Iterable[WaveField], params: PhysicalParams,
                    substeps: int = 1, record_times: Sequence[float] | None = None,
                    keep_fields: bool = False, eps_node: float = EPS_NODE, order: int = SPLINE_ORDER,
                    streams: MemberStreams | None = None, chunk: int = 64,
                    couplings: Sequence = ()) -> EnsembleTrajectory:
    """Guide every member through a sequence of consecutive field snapshots.

    ``field_evolution`` yields the field at the ensemble time followed by the
    later snapshots; the step size is read off consecutive snapshot times.
    Each step is split into ``substeps`` Euler-Maruyama updates whose drift
    uses the field blended linearly to the substep midpoint. ``record_times``
    (default: every snapshot) selects when positions are stored; with
    ``keep_fields`` the matching snapshots are stored as well. Pass the
    pointer ``couplings`` used to generate the fields so their convective
    velocity enters the drift.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    grid = ens.grid
    d = grid.dims
    snaps = iter(field_evolution)
    try:
        current = next(snaps)
    except StopIteration:
        return EnsembleTrajectory([ens.time], [ens.positions.copy()], ens)
    if abs(current.time - ens.time) > 1e-9 * max(1.0, abs(ens.time)):
        raise ValueError(f"first snapshot at t={current.time:g} but ensemble at t={ens.time:g}")
    if streams is None and params.alpha != 0.0:
        streams = MemberStreams(ens.seed, ens.ids)
    wanted = None if record_times is None else sorted(record_times)

    def want(t: float) -> bool:
        return wanted is None or any(abs(t - w) <= 1e-9 * max(1.0, abs(w)) for w in wanted)

    pos = ens.positions.copy()
    hits = ens.regularized_hits.copy()
    times: list[float] = []
    record: list[np.ndarray] = []
    kept: dict[float, WaveField] = {}
    if want(current.time):
        times.append(current.time)
        record.append(pos.copy())
        if keep_fields:
            kept[current.time] = current
    sampler_a = FieldSampler.from_field(current, order)
    noise_buf = np.empty((len(ens), 0, d))
    wraps = 0
    for nxt in snaps:
        dt = nxt.time - sampler_a.time
        if dt <= 0:
            raise ValueError("field snapshots must advance in time")
        sampler_b = FieldSampler.from_field(nxt, order)
        h = dt / substeps
        for s in range(substeps):
            mid = FieldSampler.blend(sampler_a, sampler_b, (s + 0.5) / substeps)
            noise = None
            if params.alpha != 0.0:
                if noise_buf.shape[1] == 0:
                    noise_buf = streams.normals(chunk, d)
                noise, noise_buf = noise_buf[:, 0, :], noise_buf[:, 1:, :]
            pos, reg, wrapped = advance_positions(pos, mid, params, h, noise, eps_node,
                                                  couplings, sampler_a.time + s * h)
            hits += reg
            n_wrapped = int(wrapped.sum())
            if n_wrapped:
                wraps += n_wrapped
                log.warning("%d members wrapped across the periodic boundary near t=%g", n_wrapped, nxt.time)
        if not np.all(np.isfinite(pos)):
            raise NumericalError(f"non-finite member position at t={nxt.time:g}")
        sampler_a = sampler_b
        if want(nxt.time):
            times.append(nxt.time)
            record.append(pos.copy())
            if keep_fields:
                kept[nxt.time] = nxt
    final = Ensemble(grid, pos, ens.ids, ens.seed, sampler_a.time, ens.provenance, hits)
    return EnsembleTrajectory(times, record, final, kept, wraps)


@dataclass(frozen=True)
class EquivarianceReport:
    time: float
    l1_distance: float
    ks_statistic: tuple[float, ...]
    member_count: int
    bin_spec: tuple[int, ...]
    floor: float | None = None

    @property
    def passed(self) -> bool | None:
        """Whether L1 is within twice the calibrated floor (None without a floor)."""
        return None if self.floor is None else self.l1_distance <= 2.0 * self.floor

    def to_dict(self) -> dict:
        return {"time": self.time, "l1": self.l1_distance, "ks": list(self.ks_statistic),
                "n": self.member_count, "bins": list(self.bin_spec), "floor": self.floor,
                "passed": self.passed}


def _target_density(target: WaveField | DensityField) -> DensityField:
    dens = density_of(target) if isinstance(target, WaveField) else target
    return dens.normalized()


def _bin_layout(grid: Grid, bins) -> tuple[int, ...]:
    b = (bins,) * grid.dims if np.ndim(bins) == 0 else tuple(bins)
    if len(b) != grid.dims:
        raise ValueError(f"need {grid.dims} bin counts, got {len(b)}")
    for k, (nb, n) in enumerate(zip(b, grid.points)):
        if nb < 1 or nb > n:
            raise ValueError(f"axis {k}: {nb} bins exceed the grid resolution of {n} points")
        if n % nb:
            raise ValueError(f"axis {k}: {nb} bins do not tile {n} grid points")
    return tuple(int(x) for x in b)


def bin_probabilities(target: WaveField | DensityField, bins) -> np.ndarray:
    """Target probability mass per histogram bin (grid-cell quadrature)."""
    dens = _target_density(target)
    grid = dens.grid
    layout = _bin_layout(grid, bins)
    shape = []
    for nb, n in zip(layout, grid.points):
        shape += [nb, n // nb]
    p = dens.rho.reshape(shape).sum(axis=tuple(range(1, 2 * grid.dims, 2)))
    return p / p.sum()


def histogram_counts(ens: Ensemble, bins) -> np.ndarray:
    grid = ens.grid
    layout = _bin_layout(grid, bins)
    idx = grid.nearest_index(ens.positions)
    bin_idx = tuple(i // (n // nb) for i, n, nb in zip(idx, grid.points, layout))
    counts = np.zeros(layout)
    np.add.at(counts, bin_idx, 1.0)
    return counts


def marginal_cdf(target: WaveField | DensityField, axis: int):
    """Exact marginal CDF along ``axis`` for a piecewise-constant cell density."""
    dens = _target_density(target)
    grid = dens.grid
    other = tuple(k for k in range(grid.dims) if k != axis)
    p = dens.rho.sum(axis=other) if other else dens.rho
    p = p / p.sum()
    lo, hi = grid.extents[axis]
    dx = grid.spacing[axis]
    edges = lo - 0.5 * dx + dx * np.arange(grid.points[axis] + 1)
    cum = np.concatenate([[0.0], np.cumsum(p)])

    def cdf(x):
        x = np.asarray(x, dtype=float)
        # the last half cell [hi - dx/2, hi) belongs to cell 0
        shifted = np.where(x >= hi - 0.5 * dx, x - (hi - lo), x)
        return np.interp(shifted, edges, cum)

    return cdf


def sampling_floor(probabilities: np.ndarray, n: int, seed: int = 0, reps: int = 200,
                   quantile: float = 0.99) -> float:
    """L1 distance that exact sampling of ``n`` members stays below with the given probability.

    Calibrated by drawing ``reps`` multinomial histograms straight from the
    target bin probabilities.
    """
    p = np.asarray(probabilities, dtype=float).ravel()
    p = p / p.sum()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(3,))))
    draws = rng.multinomial(n, p, size=reps) / n
    l1 = np.abs(draws - p).sum(axis=1)
    return float(np.quantile(l1, quantile))


def floor_coefficient(floor: float, n: int, total_bins: int) -> float:
    """The constant c in ``floor = c * sqrt(bins / N)``."""
    return floor / np.sqrt(total_bins / n)


def equivariance_check(ens: Ensemble, target: WaveField | DensityField, bins=64,
                       calibrate: bool = True, calibration_seed: int = 0) -> EquivarianceReport:
    """Compare the empirical distribution of ``ens`` with a target density.

    Returns the histogram L1 distance, per-axis Kolmogorov-Smirnov statistics
    against the exact marginal CDFs and, with ``calibrate``, the sampling floor
    for this member count and binning.
    """
    dens = _target_density(target)
    if abs(dens.time - ens.time) > 1e-9 * max(1.0, abs(ens.time)):
        raise ValueError(f"ensemble at t={ens.time:g} but target density at t={dens.time:g}")
    layout = _bin_layout(dens.grid, bins)
    p = bin_probabilities(dens, layout)
    counts = histogram_counts(ens, layout)
    n = len(ens)
    l1 = float(np.abs(counts / n - p).sum())
    ks = tuple(float(stats.kstest(ens.positions[:, k], marginal_cdf(dens, k)).statistic)
               for k in range(dens.grid.dims))
    floor = sampling_floor(p, n, calibration_seed) if calibrate else None
    return EquivarianceReport(ens.time, l1, ks, n, layout, floor)


@dataclass(frozen=True)
class ContinuityReport:
    time: float
    dt: float
    max_abs: float
    l2: float


def continuity_residual(snapshots: Sequence[WaveField], params: PhysicalParams,
                        eps_node: float = EPS_NODE) -> ContinuityReport:
    """Residual of ``d rho/dt + div j`` at the middle of three equally spaced snapshots.

    The time derivative is the centred difference of ``|psi|^2``; the current
    is the drift-built ``(b + b*) rho / 2`` and its divergence is spectral.
    """
    if len(snapshots) != 3:
        raise ValueError("need exactly three consecutive snapshots")
    before, mid, after = snapshots
    dt = mid.time - before.time
    if dt <= 0 or abs((after.time - mid.time) - dt) > 1e-6 * dt:
        raise ValueError("snapshots must be equally spaced in time")
    grid = mid.grid
    drho = (np.abs(after.psi) ** 2 - np.abs(before.psi) ** 2) / (2.0 * dt)
    _, _, j, _ = drift_field(mid, params, eps_node)
    res = drho + spectral_divergence(grid, list(j))
    return ContinuityReport(mid.time, dt, float(np.max(np.abs(res))),
                            float(np.sqrt(np.sum(res**2) * grid.cell_volume)))


def continuity_convergence(field: WaveField, potential, coupling, params: PhysicalParams,
                           t_mid: float, dt: float, eps_node: float = EPS_NODE) -> tuple[float, ContinuityReport, ContinuityReport]:
    """Residual ratio when the step (and snapshot spacing) is halved.

    Second-order consistency gives a ratio near 4.
    """
    from .schrodinger import evolve

    reports = []
    for h in (dt, dt / 2):
        t0 = t_mid - h
        start = field
        if t0 > field.time + 1e-12:
            start = evolve(field, potential, coupling, params, t0, h)[-1]
        triple = evolve(start, potential, coupling, params, t_mid + h, h, sample_times=[t0, t_mid])
        reports.append(continuity_residual(triple, params, eps_node))
    return reports[0].l2 / reports[1].l2, reports[0], reports[1]

