"""Single- and multi-packet scenarios used for equivariance runs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .ensemble import Ensemble, EquivarianceReport, equivariance_check, evolve_ensemble, sample_from_density
from .errors import ScenarioError
from .field import Grid, PhysicalParams, WaveField, build_grid, gaussian_packet
from .schrodinger import Potential, free_potential, harmonic_potential, iter_evolution, step_count


@dataclass(frozen=True)
class Packet:
    """One Gaussian term ``amplitude * exp(-(x-c)^2/(4 s^2) + i k x)`` per axis."""

    center: tuple[float, ...]
    sigma: tuple[float, ...] = (1.0,)
    k: tuple[float, ...] = (0.0,)
    amplitude: complex = 1.0


@dataclass(frozen=True)
class PacketScenario:
    kind: str = "free_packet"
    extents: tuple[tuple[float, float], ...] = ((-20.0, 20.0),)
    points: tuple[int, ...] = (512,)
    packets: tuple[Packet, ...] = (Packet((0.0,), (1.0,), (1.0,)),)
    potential: str = "free"
    omega: float = 1.0
    hbar: float = 1.0
    masses: tuple[float, ...] = (1.0,)
    dt: float = 0.01
    t_final: float = 2.0
    snapshot_times: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
    bins: tuple[int, ...] = (64,)

    def grid(self) -> Grid:
        return build_grid(self.extents, self.points)

    def params(self, alpha: float) -> PhysicalParams:
        return PhysicalParams(self.hbar, self.masses, alpha)

    def potential_on(self, grid: Grid) -> Potential:
        if self.potential == "free":
            return free_potential(grid)
        if self.potential == "harmonic":
            return harmonic_potential(grid, self.omega, self.params(0.0).masses_for(grid))
        raise ScenarioError(f"unknown potential {self.potential!r}")

    def initial_field(self) -> WaveField:
        grid = self.grid()
        psi = np.zeros(grid.shape, dtype=complex)
        for p in self.packets:
            c, s, k = (v[0] if len(v) == 1 else v for v in (p.center, p.sigma, p.k))
            psi += complex(p.amplitude) * gaussian_packet(grid, c, s, k).psi
        f = WaveField(grid, psi, 0.0)
        if f.norm() == 0.0:
            raise ScenarioError("initial field vanishes")
        return f.normalized()

    def validate(self) -> None:
        if self.kind not in ("free_packet", "harmonic", "custom"):
            raise ScenarioError(f"unknown packet scenario kind {self.kind!r}")
        if not self.packets:
            raise ScenarioError("at least one packet is required")
        try:
            step_count(0.0, self.t_final, self.dt)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
        for t in self.snapshot_times:
            if not 0.0 <= t <= self.t_final + 1e-12:
                raise ScenarioError(f"snapshot time {t:g} outside [0, t_final]")
            if abs(round(t / self.dt) * self.dt - t) > 1e-9:
                raise ScenarioError(f"snapshot time {t:g} is not a multiple of dt")
        self.potential_on(self.grid())

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
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def free_scenario(**changes) -> PacketScenario:
    """Moving free Gaussian, sigma 1 and k 1, on [-20, 20)."""
    return replace(PacketScenario(), **changes)


def harmonic_scenario(**changes) -> PacketScenario:
    """Displaced, squeezed Gaussian in V = x^2/2: it oscillates and breathes."""
    base = PacketScenario(kind="harmonic", extents=((-12.0, 12.0),), points=(256,),
                          packets=(Packet((2.0,), (1.0,), (0.0,)),), potential="harmonic")
    return replace(base, **changes)


@dataclass
class EquivarianceRun:
    scenario: PacketScenario
    alpha: float
    n: int
    seed: int
    reports: list[EquivarianceReport]
    fields: dict[float, WaveField] = field(repr=False, default_factory=dict)
    times: list[float] = field(default_factory=list)
    positions: np.ndarray | None = field(repr=False, default=None)
    regularized_hits: np.ndarray | None = field(repr=False, default=None)
    wrap_events: int = 0

    @property
    def worst_ratio(self) -> float:
        return max(r.l1_distance / r.floor for r in self.reports)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.kind, "scenario_hash": self.scenario.digest(),
                "alpha": self.alpha, "n": self.n, "seed": self.seed,
                "times": [r.time for r in self.reports],
                "l1": [r.l1_distance for r in self.reports],
                "floor": [r.floor for r in self.reports],
                "metrics": [r.to_dict() for r in self.reports],
                "wrap_events": self.wrap_events, "passed": self.passed}


def run_equivariance(scenario: PacketScenario, alpha: float, n: int, seed: int,
                     substeps: int = 1, calibration_seed: int = 0) -> EquivarianceRun:
    """Sample from the initial density, co-evolve and compare at every snapshot time."""
    scenario.validate()
    psi0 = scenario.initial_field()
    grid = psi0.grid
    params = scenario.params(alpha)
    ens = sample_from_density(psi0, n, seed)
    steps = step_count(0.0, scenario.t_final, scenario.dt)
    times = [round(t / scenario.dt) * scenario.dt for t in scenario.snapshot_times]
    evolution = iter_evolution(psi0, scenario.potential_on(grid), None, params, scenario.dt, steps)
    traj = evolve_ensemble(ens, evolution, params, substeps=substeps, record_times=times, keep_fields=True)
    reports = []
    for t, pos in zip(traj.times, traj.positions):
        snap = Ensemble(grid, pos, ens.ids, seed, t, ens.provenance)
        reports.append(equivariance_check(snap, traj.fields[t], scenario.bins, calibration_seed=calibration_seed))
    return EquivarianceRun(scenario, alpha, n, seed, reports, traj.fields, traj.times,
                           traj.as_array(), traj.final.regularized_hits, traj.wrap_events)


def equivariance_scenarios() -> dict[str, PacketScenario]:
    return {"free": free_scenario(), "harmonic": harmonic_scenario()}


ACCEPTANCE_ALPHAS: Sequence[float] = (0.0, 0.25, 0.5, 1.0, 2.0)
