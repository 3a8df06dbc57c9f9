"""Coarse position measurement with one or two pointer coordinates.

The particle coordinate ``x`` is axis 0; the first pointer ``z`` is axis 1 and
an optional second pointer ``z'`` is axis 2. The initial state is

    Psi(x, z[, z']) = (c1 psi1(x) + c2 psi2(x)) beta(z) [beta'(z')]

and each pointer is pushed by ``+shift`` where the particle sits on the
detector-1 side (``x < 0``) and by ``-shift`` on the detector-2 side.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .ensemble import (Ensemble, EquivarianceReport, EnsembleTrajectory, equivariance_check,
                       evolve_ensemble, sample_from_density)
from .errors import BoundaryViolation, BranchError, ScenarioError
from .field import (BOUNDARY_DENSITY_LIMIT, DensityField, Grid, PhysicalParams, WaveField,
                    build_grid, gaussian_profile)
from .guidance import EPS_NODE, SPLINE_ORDER
from .schrodinger import CouplingTerm, detector_profile, iter_evolution, step_count

log = logging.getLogger(__name__)

#: Relative density threshold defining branch supports.
EPS_BRANCH = 1e-8

#: Undecided fraction above which a run is flagged as misconfigured.
MAX_UNDECIDED = 0.01


@dataclass(frozen=True)
class PacketSpec:
    center: float
    sigma: float = 1.0
    k: float = 0.0


@dataclass(frozen=True)
class PointerSpec:
    sigma: float = 1.0
    mass: float = 5.0
    center: float = 0.0

    def width_at(self, t: float, hbar: float = 1.0) -> float:
        """Free-spreading position width after time ``t``."""
        return float(np.sqrt(self.sigma**2 + (hbar * t / (2.0 * self.mass * self.sigma)) ** 2))


@dataclass(frozen=True)
class CouplingSpec:
    t_on: float
    t_off: float
    shift: float
    width: float = 1.0
    boundary: float = 0.0

    @property
    def strength(self) -> float:
        return self.shift / (self.t_off - self.t_on)


@dataclass(frozen=True)
class MeasurementScenario:
    c1: complex = 0.6
    c2: complex = 0.8
    packet1: PacketSpec = PacketSpec(-8.0)
    packet2: PacketSpec = PacketSpec(8.0)
    particle_mass: float = 1.0
    pointer: PointerSpec = PointerSpec()
    coupling: CouplingSpec = CouplingSpec(0.25, 1.25, 6.0)
    second_pointer: PointerSpec | None = None
    second_coupling: CouplingSpec | None = None
    extents: tuple[tuple[float, float], ...] = ((-20.0, 20.0), (-16.0, 16.0))
    points: tuple[int, ...] = (256, 64)
    dt: float = 0.005
    t_final: float = 2.5
    record_times: tuple[float, ...] = (1.5, 2.0, 2.5)
    monitor_every: int = 10
    eps_branch: float = EPS_BRANCH
    hbar: float = 1.0

    @property
    def z1(self) -> float:
        return self.coupling.shift

    @property
    def z2(self) -> float:
        return -self.coupling.shift

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def t_sep(self) -> float:
        """Time after which pointer branches are complete (end of the last window)."""
        last = self.second_coupling or self.coupling
        return last.t_off

    def masses(self) -> tuple[float, ...]:
        m = [self.particle_mass, self.pointer.mass]
        if self.second_pointer is not None:
            m.append(self.second_pointer.mass)
        return tuple(m)

    def params(self, alpha: float) -> PhysicalParams:
        return PhysicalParams(self.hbar, self.masses(), alpha)

    def grid(self) -> Grid:
        return build_grid(self.extents, self.points)

    def to_dict(self) -> dict:
        def fix(v):
            if isinstance(v, complex):
                return [v.real, v.imag]
            if isinstance(v, dict):
                return {k: fix(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [fix(x) for x in v]
            return v
        return fix(asdict(self))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> None:
        c1, c2 = complex(self.c1), complex(self.c2)
        if abs(abs(c1) ** 2 + abs(c2) ** 2 - 1.0) > 1e-12:
            raise ScenarioError(f"|c1|^2 + |c2|^2 = {abs(c1)**2 + abs(c2)**2!r}, must be 1")
        if self.dims not in (2, 3):
            raise ScenarioError("measurement grids are 2-D (x, z) or 3-D (x, z, z')")
        if (self.dims == 3) != (self.second_pointer is not None and self.second_coupling is not None):
            raise ScenarioError("a 3-D grid requires a second pointer and its coupling, and vice versa")
        grid = self.grid()
        x = grid.axes[0]
        r1 = np.abs(gaussian_profile(x, self.packet1.center, self.packet1.sigma)) ** 2
        r2 = np.abs(gaussian_profile(x, self.packet2.center, self.packet2.sigma)) ** 2
        if np.any((r1 >= 1e-10 * r1.max()) & (r2 >= 1e-10 * r2.max())):
            raise ScenarioError("packet supports overlap at the 1e-10 density level")
        for pointer, coupling in self._pointers():
            if not 0.0 <= coupling.t_on < coupling.t_off <= self.t_final:
                raise ScenarioError("coupling window must lie inside [0, t_final]")
            width = pointer.width_at(self.t_final, self.hbar)
            if 2.0 * coupling.shift < 8.0 * width:
                raise ScenarioError(f"pointer separation {2 * coupling.shift:g} is below 8 widths ({8 * width:g})")
        if self.second_coupling is not None and self.second_coupling.t_on < self.coupling.t_off:
            raise ScenarioError("second coupling window must start after the first ends")
        try:
            step_count(0.0, self.t_final, self.dt)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
        for t in self.record_times:
            if not self.t_sep <= t <= self.t_final:
                raise ScenarioError(f"record time {t:g} is not after branch separation")

    def _pointers(self):
        yield self.pointer, self.coupling
        if self.second_pointer is not None:
            yield self.second_pointer, self.second_coupling


def default_scenario(**changes) -> MeasurementScenario:
    return _replace(MeasurementScenario(), **changes)


def repeated_scenario(**changes) -> MeasurementScenario:
    """Three-axis scenario: a second pointer is coupled after the first."""
    base = MeasurementScenario(
        second_pointer=PointerSpec(),
        second_coupling=CouplingSpec(1.5, 2.5, 6.0),
        extents=((-20.0, 20.0), (-14.0, 14.0), (-14.0, 14.0)),
        points=(128, 32, 32),
        dt=0.005,
        t_final=3.0,
        record_times=(2.5, 3.0),
    )
    return _replace(base, **changes)


def _replace(s: MeasurementScenario, **changes) -> MeasurementScenario:
    from dataclasses import replace
    return replace(s, **changes)


def initial_field(s: MeasurementScenario) -> WaveField:
    grid = s.grid()
    x = grid.axes[0]
    dx = grid.spacing[0]

    def unit(profile):
        return profile / np.sqrt(np.sum(np.abs(profile) ** 2) * dx)

    psi1 = unit(gaussian_profile(x, s.packet1.center, s.packet1.sigma, s.packet1.k))
    psi2 = unit(gaussian_profile(x, s.packet2.center, s.packet2.sigma, s.packet2.k))
    psi = grid.broadcast(complex(s.c1) * psi1 + complex(s.c2) * psi2, 0)
    for axis, (pointer, _) in enumerate(s._pointers(), start=1):
        z = grid.axes[axis]
        beta = gaussian_profile(z, pointer.center, pointer.sigma)
        beta = beta / np.sqrt(np.sum(np.abs(beta) ** 2) * grid.spacing[axis])
        psi = psi * grid.broadcast(beta, axis)
    out = WaveField(grid, psi, 0.0).normalized()
    edge = out.boundary_density()
    if edge >= BOUNDARY_DENSITY_LIMIT:
        raise ScenarioError(f"initial density {edge:.3g} at the grid boundary")
    return out


def couplings(s: MeasurementScenario, grid: Grid) -> list[CouplingTerm]:
    out = []
    for axis, (_, c) in enumerate(s._pointers(), start=1):
        f = detector_profile(grid.axes[0], c.width, c.boundary)
        out.append(CouplingTerm(f, axis, c.t_on, c.t_off, c.strength))
    return out


def readout(z: np.ndarray, z1: float) -> np.ndarray:
    """Outcome 1 above ``z1/2``, outcome 2 below ``-z1/2``, 0 (undecided) between."""
    z = np.asarray(z)
    out = np.zeros(z.shape, dtype=np.int64)
    out[z > 0.5 * z1] = 1
    out[z < -0.5 * z1] = 2
    return out


def initial_support(s: MeasurementScenario, x: np.ndarray) -> np.ndarray:
    """1 where ``|c1 psi1(x)|^2`` dominates, else 2."""
    x = np.asarray(x)
    g1 = abs(complex(s.c1)) ** 2 * _unit_density(x, s.packet1)
    g2 = abs(complex(s.c2)) ** 2 * _unit_density(x, s.packet2)
    return np.where(g1 >= g2, 1, 2)


def _unit_density(x: np.ndarray, p: PacketSpec) -> np.ndarray:
    return np.exp(-((x - p.center) ** 2) / (2 * p.sigma**2)) / (np.sqrt(2 * np.pi) * p.sigma)


def _monitored(evolution: Iterator[WaveField], limit: float = BOUNDARY_DENSITY_LIMIT) -> Iterator[WaveField]:
    for snap in evolution:
        edge = snap.boundary_density()
        if edge >= limit:
            raise BoundaryViolation(f"density {edge:.3g} reached the grid boundary at t={snap.time:g}")
        yield snap


@dataclass(frozen=True)
class BranchDecomposition:
    """Connected super-threshold regions of a density, one per branch.

    ``labels`` holds 0 on the sub-threshold set and ``i + 1`` on branch ``i``.
    ``overlap`` is the probability mass not attributed to any branch.
    """

    field: WaveField
    labels: np.ndarray
    weights: tuple[float, ...]
    overlap: float
    threshold: float

    @property
    def count(self) -> int:
        return len(self.weights)

    def branch_field(self, i: int) -> WaveField:
        return self.field.with_psi(np.where(self.labels == i + 1, self.field.psi, 0.0))

    @property
    def fields(self) -> list[WaveField]:
        return [self.branch_field(i) for i in range(self.count)]

    def branch_of(self, positions: np.ndarray) -> np.ndarray:
        """Branch label (1-based, 0 for sub-threshold) at the nearest grid point."""
        return self.labels[self.field.grid.nearest_index(positions)]


def _merge_periodic(labels: np.ndarray, n_labels: int) -> np.ndarray:
    parent = list(range(n_labels + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for axis in range(labels.ndim):
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        both = (first > 0) & (last > 0)
        for a, b in zip(first[both], last[both]):
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n_labels + 1)])
    return roots[labels]


def branch_decompose(field: WaveField, eps_branch: float = EPS_BRANCH, expected: int | None = None,
                     order_axis: int | None = None) -> BranchDecomposition:
    """Label face-connected regions where the density exceeds ``eps_branch * max``.

    Components touching across the periodic boundary are merged. With
    ``order_axis`` the branches are sorted by decreasing density-weighted
    centroid along that axis; otherwise by decreasing weight.
    """
    grid = field.grid
    rho = np.abs(field.psi) ** 2
    total = float(np.sum(rho))
    rho_n = rho / (total * grid.cell_volume)
    threshold = eps_branch * float(rho.max())
    raw, n = ndimage.label(rho >= threshold)
    raw = _merge_periodic(raw, n)
    roots = [r for r in np.unique(raw) if r != 0]
    weights = [float(np.sum(rho_n[raw == r]) * grid.cell_volume) for r in roots]
    if order_axis is not None:
        coord = grid.mesh()[order_axis]
        keys = [-float(np.sum(coord[raw == r] * rho[raw == r]) / np.sum(rho[raw == r])) for r in roots]
    else:
        keys = [-w for w in weights]
    order = np.argsort(keys, kind="stable")
    labels = np.zeros(grid.shape, dtype=np.int64)
    for new, idx in enumerate(order, start=1):
        labels[raw == roots[idx]] = new
    weights = tuple(weights[i] for i in order)
    if expected is not None and len(weights) != expected:
        raise BranchError(f"found {len(weights)} branch components, expected {expected}")
    labels.flags.writeable = False
    return BranchDecomposition(field, labels, weights, max(0.0, 1.0 - sum(weights)), threshold)


@dataclass
class MeasurementRecord:
    scenario: MeasurementScenario
    alpha: float
    n: int
    seed: int
    ids: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    outcome1: np.ndarray
    outcome2: np.ndarray | None
    support: np.ndarray
    monitor_times: list[float]
    monitor_positions: np.ndarray
    fields: dict[float, WaveField]
    branch_weights: tuple[float, ...]
    wrap_events: int = 0
    summary: dict = field(default_factory=dict)
    regularized_hits: np.ndarray | None = None

    def check_integrity(self) -> None:
        """Every decided outcome must agree with the stored pointer reading."""
        z1 = self.scenario.z1
        pairs = [(self.outcome1, self.final[:, 1])]
        if self.outcome2 is not None:
            pairs.append((self.outcome2, self.final[:, 2]))
        for outcome, z in pairs:
            if not np.array_equal(readout(z, z1), outcome):
                raise AssertionError("stored outcome disagrees with the stored pointer position")

    def to_json(self) -> dict:
        self.check_integrity()
        rows = []
        for i in range(self.n):
            rows.append({
                "id": int(self.ids[i]),
                "x": float(self.initial[i, 0]),
                "x_final": float(self.final[i, 0]),
                "z_final": float(self.final[i, 1]),
                "z2_final": float(self.final[i, 2]) if self.final.shape[1] > 2 else None,
                "o1": int(self.outcome1[i]),
                "o2": int(self.outcome2[i]) if self.outcome2 is not None else None,
            })
        return {"scenario_hash": self.scenario.digest(), "alpha": self.alpha, "n": self.n,
                "seed": self.seed, "members": rows, "summary": self.summary}


def run_measurement(scenario: MeasurementScenario, alpha: float, n: int, seed: int,
                    substeps: int = 1, order: int = SPLINE_ORDER, eps_node: float = EPS_NODE) -> MeasurementRecord:
    """Evolve field and an ``n``-member ensemble through the coupling window(s)."""
    scenario.validate()
    params = scenario.params(alpha)
    psi0 = initial_field(scenario)
    grid = psi0.grid
    ens = sample_from_density(psi0, n, seed)
    steps = step_count(0.0, scenario.t_final, scenario.dt)
    monitor = [i * scenario.dt for i in range(0, steps + 1, scenario.monitor_every)]
    monitor = sorted(set(monitor) | set(scenario.record_times) | {scenario.t_final, scenario.t_sep})
    terms = couplings(scenario, grid)
    evolution = _monitored(iter_evolution(psi0, None, terms, params, scenario.dt, steps))
    traj: EnsembleTrajectory = evolve_ensemble(ens, evolution, params, substeps=substeps,
                                               record_times=monitor, keep_fields=True,
                                               eps_node=eps_node, order=order, couplings=terms)
    final = traj.final.positions
    o1 = readout(final[:, 1], scenario.z1)
    o2 = readout(final[:, 2], scenario.second_coupling.shift) if scenario.dims == 3 else None
    support = initial_support(scenario, ens.positions[:, 0])
    final_field = traj.fields[traj.times[-1]]
    expected = sum(1 for c in (scenario.c1, scenario.c2) if c != 0)
    decomposition = branch_decompose(final_field, scenario.eps_branch, expected, order_axis=1)
    record = MeasurementRecord(scenario, alpha, n, seed, ens.ids, ens.positions, final, o1, o2, support,
                               traj.times, traj.as_array(), traj.fields, decomposition.weights,
                               traj.wrap_events, regularized_hits=traj.final.regularized_hits)
    record.summary = summarize(record)
    record.check_integrity()
    if record.summary["undecided_fraction"] > MAX_UNDECIDED:
        record.summary["misconfigured"] = True
        log.warning("undecided fraction %.3g exceeds %g: scenario misconfigured",
                    record.summary["undecided_fraction"], MAX_UNDECIDED)
    return record


def summarize(r: MeasurementRecord) -> dict:
    decided = r.outcome1 > 0
    n_dec = int(decided.sum())
    n1 = int((r.outcome1 == 1).sum())
    born1 = r.branch_weights[0] if complex(r.scenario.c1) != 0 else 0.0
    agree = float(np.mean(r.outcome1[decided] == r.support[decided])) if n_dec else float("nan")
    out = {
        "decided": n_dec,
        "undecided_fraction": 1.0 - n_dec / r.n,
        "frequency1": n1 / n_dec if n_dec else float("nan"),
        "born_weight1": float(born1),
        "binomial_band": 3.0 * float(np.sqrt(born1 * (1 - born1) / max(n_dec, 1))),
        "support_agreement": agree,
        "wrap_events": r.wrap_events,
        "misconfigured": False,
    }
    if r.outcome2 is not None:
        both = decided & (r.outcome2 > 0)
        out["repeat_agreement"] = float(np.mean(r.outcome1[both] == r.outcome2[both])) if both.any() else float("nan")
    return out


@dataclass(frozen=True)
class CrossingReport:
    separated: bool
    fraction: float | None
    crossings: int
    members: int
    unassigned_hits: int
    times: tuple[float, ...]
    gap_mass: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def crossing_monitor(times: Sequence[float], positions: np.ndarray,
                     decompositions: Sequence[BranchDecomposition], t_sep: float,
                     expected: int = 2) -> CrossingReport:
    """Count members whose branch label changes after ``t_sep``.

    ``positions`` has shape (T, N, d) and ``decompositions`` one entry per time.
    Sub-threshold visits (label 0) are counted separately and do not break a
    member's label sequence. If any decomposition after ``t_sep`` does not show
    ``expected`` components the branches are reported as not separated.
    """
    keep = [i for i, t in enumerate(times) if t >= t_sep - 1e-12]
    n = positions.shape[1]
    if not keep:
        return CrossingReport(False, None, 0, n, 0, ())
    if any(decompositions[i].count != expected for i in keep):
        return CrossingReport(False, None, 0, n, 0, tuple(times[i] for i in keep))
    labels = np.stack([decompositions[i].branch_of(positions[i]) for i in keep])
    unassigned = int((labels == 0).sum())
    crossed = 0
    for m in range(n):
        seq = labels[:, m]
        seq = seq[seq > 0]
        if seq.size and np.any(seq != seq[0]):
            crossed += 1
    return CrossingReport(True, crossed / n, crossed, n, unassigned, tuple(times[i] for i in keep))


def monitor_crossings(record: MeasurementRecord, expected: int | None = None) -> CrossingReport:
    s = record.scenario
    expected = expected or sum(1 for c in (s.c1, s.c2) if c != 0)
    decomps = [branch_decompose(record.fields[t], s.eps_branch, order_axis=1) for t in record.monitor_times]
    report = crossing_monitor(record.monitor_times, record.monitor_positions, decomps, s.t_sep, expected)
    final = record.fields[record.monitor_times[-1]]
    z = final.grid.axes[1]
    rho = np.abs(final.psi) ** 2
    band = np.abs(z) <= 0.5 * s.z1
    gap = float(np.sum(rho * final.grid.broadcast(band, 1)) * final.grid.cell_volume)
    return CrossingReport(report.separated, report.fraction, report.crossings, report.members,
                          report.unassigned_hits, report.times, gap)


@dataclass(frozen=True)
class SubensembleReport:
    times: tuple[float, ...]
    members: int
    vs_branch: tuple[EquivarianceReport, ...]
    vs_full: tuple[EquivarianceReport, ...]
    expected_margin: float

    @property
    def branch_passed(self) -> bool:
        return all(r.passed for r in self.vs_branch)

    @property
    def full_failed_by_margin(self) -> bool:
        """Whether L1 against the full density equals the analytic margin within twice the floor."""
        return all(abs(r.l1_distance - self.expected_margin) <= 2.0 * r.floor for r in self.vs_full)

    def to_dict(self) -> dict:
        return {"times": list(self.times), "members": self.members, "expected_margin": self.expected_margin,
                "vs_branch": [r.to_dict() for r in self.vs_branch],
                "vs_full": [r.to_dict() for r in self.vs_full]}


def subensemble_analysis(record: MeasurementRecord, bins=(32, 16), times: Sequence[float] | None = None,
                         outcome: int = 1, calibration_seed: int = 0) -> SubensembleReport:
    """Compare the outcome-``outcome`` sub-ensemble with its branch density and with the full density.

    Members were guided by the full wave field throughout; only the
    comparison target changes.
    """
    s = record.scenario
    times = tuple(s.record_times if times is None else times)
    chosen = np.flatnonzero(record.outcome1 == outcome)
    if chosen.size == 0:
        raise ValueError(f"no member reported outcome {outcome}")
    vs_branch, vs_full = [], []
    grid = record.fields[times[0]].grid
    for t in times:
        i = _time_index(record.monitor_times, t)
        psi_t = record.fields[record.monitor_times[i]]
        dec = branch_decompose(psi_t, s.eps_branch, order_axis=1)
        branch = dec.branch_field(outcome - 1)
        sub = Ensemble(grid, record.monitor_positions[i][chosen], record.ids[chosen], record.seed, psi_t.time,
                       {"kind": "conditioned", "outcome": outcome, "time": psi_t.time})
        target = DensityField(grid, np.abs(branch.psi) ** 2, psi_t.time)
        vs_branch.append(equivariance_check(sub, target, bins, calibration_seed=calibration_seed))
        vs_full.append(equivariance_check(sub, psi_t, bins, calibration_seed=calibration_seed))
    other = s.c2 if outcome == 1 else s.c1
    return SubensembleReport(times, int(chosen.size), tuple(vs_branch), tuple(vs_full),
                             2.0 * abs(complex(other)) ** 2)


def _time_index(times: Sequence[float], t: float) -> int:
    for i, u in enumerate(times):
        if abs(u - t) <= 1e-9 * max(1.0, abs(t)):
            return i
    raise KeyError(f"no recorded snapshot at t={t:g}")


@dataclass(frozen=True)
class RepeatedReport:
    agreement: float
    decided_both: int
    table: dict
    record: MeasurementRecord = field(repr=False)

    def to_dict(self) -> dict:
        return {"agreement": self.agreement, "decided_both": self.decided_both, "table": self.table}


def repeated_measurement(scenario: MeasurementScenario, alpha: float, n: int, seed: int,
                         **kwargs) -> RepeatedReport:
    """Run the two-pointer scenario and tabulate (first, second) outcomes."""
    if scenario.second_pointer is None:
        raise ScenarioError("repeated measurement needs a second pointer")
    rec = run_measurement(scenario, alpha, n, seed, **kwargs)
    o1, o2 = rec.outcome1, rec.outcome2
    both = (o1 > 0) & (o2 > 0)
    table = {f"{a},{b}": int(np.sum((o1 == a) & (o2 == b))) for a in (1, 2, 0) for b in (1, 2, 0)}
    agreement = float(np.mean(o1[both] == o2[both])) if both.any() else float("nan")
    return RepeatedReport(agreement, int(both.sum()), table, rec)
