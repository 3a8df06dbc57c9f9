"""Acceptance suites: named groups of checks with measured values and thresholds.

Each suite returns a list of :class:`Check`. Expensive measurement runs are
cached per process so suites that share a run (born, correspondence,
crossing, subensemble) only pay for it once.
"""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ensemble import Ensemble, continuity_convergence, evolve_ensemble
from .field import PhysicalParams, WaveField, build_grid, gaussian_packet, harmonic_state
from .guidance import FieldSampler, bohm_trajectory_oracle, current_consistency, drift_at, drift_from_values
from .measurement import (MeasurementRecord, RepeatedReport, couplings, default_scenario, initial_field,
                          monitor_crossings, repeated_measurement, repeated_scenario, run_measurement,
                          subensemble_analysis)
from .scenarios import (ACCEPTANCE_ALPHAS, Packet, equivariance_scenarios, free_scenario, harmonic_scenario,
                        run_equivariance)
from .schrodinger import SplitStepPropagator, harmonic_potential, iter_evolution, step_count

MEASUREMENT_N = 10_000
MEASUREMENT_SEED = 7
REPEATED_N = 2000
REPEATED_SEED = 11
EQUIVARIANCE_N = 10_000
EQUIVARIANCE_SEED = 1


@dataclass
class Check:
    criterion: int
    label: str
    value: float
    threshold: str
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} [{self.criterion}] {self.label}: {self.value:.6g} (need {self.threshold})"

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "label": self.label, "value": self.value,
                "threshold": self.threshold, "passed": self.passed, "details": self.details}


@functools.lru_cache(maxsize=None)
def measurement_run(alpha: float, n: int = MEASUREMENT_N, seed: int = MEASUREMENT_SEED) -> MeasurementRecord:
    return run_measurement(default_scenario(), alpha, n, seed)


@functools.lru_cache(maxsize=None)
def repeated_run(alpha: float, n: int = REPEATED_N, seed: int = REPEATED_SEED) -> tuple[RepeatedReport, float]:
    t0 = time.perf_counter()
    report = repeated_measurement(repeated_scenario(), alpha, n, seed)
    return report, time.perf_counter() - t0


def equivariance_suite(alphas=ACCEPTANCE_ALPHAS, n: int = EQUIVARIANCE_N) -> list[Check]:
    out = []
    for name, scenario in equivariance_scenarios().items():
        for alpha in alphas:
            t0 = time.perf_counter()
            run = run_equivariance(scenario, alpha, n, EQUIVARIANCE_SEED)
            elapsed = time.perf_counter() - t0
            worst = max(run.reports, key=lambda r: r.l1_distance / r.floor)
            out.append(Check(1, f"equivariance {name} alpha={alpha:g} worst L1/(2 floor) over {len(run.reports)} times",
                             worst.l1_distance / (2.0 * worst.floor), "<= 1", run.passed,
                             {"scenario": name, "alpha": alpha, "l1": worst.l1_distance, "floor": worst.floor,
                              "time": worst.time, "seconds": elapsed, "runtime_ok": elapsed < 120.0}))
    return out


def born_suite() -> list[Check]:
    out = []
    for alpha in (0.0, 1.0):
        s = measurement_run(alpha).summary
        band = 3.0 * np.sqrt(0.36 * 0.64 / MEASUREMENT_N)
        dev = abs(s["frequency1"] - 0.36)
        out.append(Check(2, f"born alpha={alpha:g} |freq1 - 0.36| (freq1={s['frequency1']:.4f})", dev,
                         f"<= {band:.4g}", dev <= band, dict(s)))
    return out


def correspondence_suite() -> list[Check]:
    out = []
    for alpha, need in ((0.0, 1.0), (1.0, 0.99)):
        s = measurement_run(alpha).summary
        rate = s["support_agreement"]
        out.append(Check(3, f"correspondence alpha={alpha:g} outcome/support agreement", rate,
                         f">= {need:g}", rate >= need, {"decided": s["decided"]}))
    return out


def crossing_suite() -> list[Check]:
    out = []
    for alpha, limit in ((0.0, 0.0), (1.0, 1e-3)):
        rec = measurement_run(alpha)
        rep = monitor_crossings(rec)
        frac = rep.fraction if rep.separated else float("nan")
        sc = rec.scenario
        widths = 2.0 * sc.coupling.shift / sc.pointer.width_at(sc.t_final, sc.hbar)
        ok = rep.separated and frac <= limit and widths >= 8.0
        out.append(Check(4, f"no-crossing alpha={alpha:g} branch-label change fraction", frac,
                         f"<= {limit:g} (gap {widths:.2f} >= 8 widths)", ok, rep.to_dict()))
    return out


def subensemble_suite() -> list[Check]:
    out = []
    for alpha in (0.0, 1.0):
        rep = subensemble_analysis(measurement_run(alpha))
        worst = max(rep.vs_branch, key=lambda r: r.l1_distance / r.floor)
        out.append(Check(5, f"sub-ensemble alpha={alpha:g} vs branch density, worst L1/(2 floor)",
                         worst.l1_distance / (2.0 * worst.floor), "<= 1", rep.branch_passed, rep.to_dict()))
        dev = max(abs(r.l1_distance - rep.expected_margin) - 2.0 * r.floor for r in rep.vs_full)
        out.append(Check(5, f"sub-ensemble alpha={alpha:g} vs full density, max(|L1 - {rep.expected_margin:g}| - 2 floor)",
                         dev, "<= 0", rep.full_failed_by_margin,
                         {"l1": [r.l1_distance for r in rep.vs_full], "floor": [r.floor for r in rep.vs_full]}))
    return out


def repeated_suite() -> list[Check]:
    out = []
    for alpha, need in ((0.0, 1.0), (1.0, 0.999)):
        rep, seconds = repeated_run(alpha)
        ok = rep.agreement >= need and seconds < 600.0
        out.append(Check(6, f"repeated alpha={alpha:g} first/second outcome agreement", rep.agreement,
                         f">= {need:g} in < 600 s", ok, dict(rep.to_dict(), seconds=seconds)))
    return out


def oracle_suite() -> list[Check]:
    out = []
    # plane-wave limit: broad packet, k = 2, evaluated off-grid at the centre
    g = build_grid([[-64.0, 64.0]], [1024])
    c = 0.0625
    wave = gaussian_packet(g, c, 10.0, 2.0)
    dev_b = dev_bs = 0.0
    for alpha in (0.0, 0.5, 1.0, 2.0):
        s = drift_at(wave, [c], PhysicalParams(alpha=alpha))
        dev_b = max(dev_b, abs(s.b[0] - 2.0))
        dev_bs = max(dev_bs, abs(s.b_star[0] - s.b[0]))
    out.append(Check(7, "plane-wave drift |b - hbar k/m|", dev_b, "<= 1e-3", dev_b <= 1e-3))
    out.append(Check(7, "plane-wave drift |b* - b|", dev_bs, "<= 1e-3", dev_bs <= 1e-3))

    # Gaussian: b = hbar/m (alpha * -(x-c)/(2 s^2) + k); b - b* = alpha hbar/m * -(x-c)/s^2
    g = build_grid([[-20.0, 20.0]], [512])
    gauss = gaussian_packet(g, 0.0, 1.0, 1.0)
    xs = np.random.default_rng(0).uniform(-3.0, 3.0, (200, 1))
    sampler = FieldSampler.from_field(gauss)
    psi, grad = sampler.evaluate(xs)
    dev_b = dev_11 = 0.0
    for alpha in (0.0, 0.5, 1.0, 2.0):
        p = PhysicalParams(alpha=alpha)
        b, bs, _, reg = drift_from_values(psi, grad, p, p.masses_for(g), 1e-12 * sampler.max_density)
        assert not reg.any()
        dev_b = max(dev_b, float(np.max(np.abs(b[:, 0] - (alpha * -xs[:, 0] / 2.0 + 1.0)))))
        dev_11 = max(dev_11, float(np.max(np.abs((b - bs)[:, 0] - alpha * -xs[:, 0]))))
    out.append(Check(7, "Gaussian drift max |b - closed form|", dev_b, "<= 1e-3", dev_b <= 1e-3))
    out.append(Check(7, "backward-drift identity max |b - b* - alpha hbar grad(rho)/(m rho)|", dev_11,
                     "<= 1e-8", dev_11 <= 1e-8))

    # harmonic ground state, hbar = m = omega = 1: b = -alpha x
    hg = build_grid([[-12.0, 12.0]], [256])
    ground = harmonic_state(hg)
    b1 = drift_at(ground, [1.0], PhysicalParams(alpha=1.0)).b[0]
    b0 = drift_at(ground, [1.0], PhysicalParams(alpha=0.0)).b[0]
    out.append(Check(7, "harmonic ground state |b(x=1, alpha=1) + 1|", abs(b1 + 1.0), "<= 1e-4",
                     abs(b1 + 1.0) <= 1e-4))
    out.append(Check(7, "harmonic ground state |b(x=1, alpha=0)|", abs(b0), "== 0", b0 == 0.0))

    # two current formulas on a Gaussian and on a random smooth superposition
    rng = np.random.default_rng(5)
    psi = np.zeros(g.shape, dtype=complex)
    for _ in range(4):
        amp = rng.normal() + 1j * rng.normal()
        psi += amp * gaussian_packet(g, rng.uniform(-5, 5), rng.uniform(0.7, 2.0), rng.uniform(-2, 2)).psi
    smooth = WaveField(g, psi, 0.0).normalized()
    worst = max(current_consistency(f, PhysicalParams(alpha=1.0)).max_abs for f in (gauss, smooth))
    out.append(Check(7, "current from drifts vs hbar Im(conj(psi) grad psi)/m, max abs", worst, "<= 1e-10",
                     worst <= 1e-10))

    dev = trajectory_oracle_deviation()
    out.append(Check(7, "alpha=0 trajectories vs spreading-Gaussian oracle, max |x - x_oracle| on [0, 2]", dev,
                     "<= 1e-3", dev <= 1e-3))
    return out


def trajectory_oracle_deviation(substeps: int = 2) -> float:
    """Largest deviation of numerical alpha = 0 paths from the closed form over t in [0, 2]."""
    sc = free_scenario(packets=(Packet((0.0,), (1.0,), (0.0,)),))
    psi0 = sc.initial_field()
    p = sc.params(0.0)
    x0 = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0])[:, None]
    ens = Ensemble(psi0.grid, x0, np.arange(len(x0)), 0, 0.0, {"kind": "oracle"})
    steps = step_count(0.0, 2.0, sc.dt)
    traj = evolve_ensemble(ens, iter_evolution(psi0, None, None, p, sc.dt, steps), p, substeps=substeps)
    worst = 0.0
    for t, pos in zip(traj.times, traj.positions):
        exact = np.array([bohm_trajectory_oracle(x, t, 1.0) for x in x0[:, 0]])
        worst = max(worst, float(np.max(np.abs(pos[:, 0] - exact))))
    return worst


def unitarity_deviation(steps: int = 500) -> float:
    """Largest one-step norm change over the measurement and harmonic propagators."""
    worst = 0.0
    s = default_scenario()
    psi = initial_field(s)
    prop = SplitStepPropagator(psi.grid, None, s.params(0.0), s.dt, couplings(s, psi.grid))
    cases = [(prop, psi)]
    hg = build_grid([[-12.0, 12.0]], [256])
    packet = gaussian_packet(hg, 2.0, 1.0, 0.5)
    cases.append((SplitStepPropagator(hg, harmonic_potential(hg), PhysicalParams(), 0.01), packet))
    for prop, f in cases:
        before = f.norm()
        for _ in range(steps):
            f = prop.step(f)
            after = f.norm()
            worst = max(worst, abs(after - before))
            before = after
    return worst


def continuity_ratios() -> dict[str, float]:
    out = {}
    for name, sc in (("free", free_scenario()), ("harmonic", harmonic_scenario())):
        f0 = sc.initial_field()
        out[name] = continuity_convergence(f0, sc.potential_on(f0.grid), None, sc.params(1.0), 1.0, 0.02)[0]
    # random smooth superposition in the harmonic well
    rng = np.random.default_rng(3)
    sc = harmonic_scenario()
    packets = tuple(Packet((float(rng.uniform(-3, 3)),), (float(rng.uniform(0.6, 1.5)),),
                           (float(rng.uniform(-1.5, 1.5)),), complex(rng.normal(), rng.normal()))
                    for _ in range(3))
    sc = harmonic_scenario(kind="custom", packets=packets)
    f0 = sc.initial_field()
    out["random"] = continuity_convergence(f0, sc.potential_on(f0.grid), None, sc.params(1.0), 1.0, 0.02)[0]
    return out


def reproducibility_check(n: int = 500, seed: int = 7) -> bool:
    """Two identical measurement runs must agree bit for bit."""
    a = run_measurement(default_scenario(), 1.0, n, seed)
    b = run_measurement(default_scenario(), 1.0, n, seed)
    return (np.array_equal(a.final, b.final) and np.array_equal(a.monitor_positions, b.monitor_positions)
            and np.array_equal(a.outcome1, b.outcome1) and a.summary == b.summary
            and all(np.array_equal(a.fields[t].psi, b.fields[t].psi) for t in a.fields))


def hygiene_suite() -> list[Check]:
    out = []
    dev = unitarity_deviation()
    out.append(Check(8, "max one-step norm change", dev, "<= 1e-12", dev <= 1e-12))
    for name, ratio in continuity_ratios().items():
        out.append(Check(8, f"continuity residual ratio under dt halving ({name})", ratio, "in [3.5, 4.5]",
                         3.5 <= ratio <= 4.5))
    same = reproducibility_check()
    out.append(Check(8, "bitwise reproducibility, double run", float(same), "== 1", same))
    return out


SUITES: dict[str, Callable[[], list[Check]]] = {
    "equivariance": equivariance_suite,
    "born": born_suite,
    "correspondence": correspondence_suite,
    "crossing": crossing_suite,
    "subensemble": subensemble_suite,
    "repeated": repeated_suite,
    "oracles": oracle_suite,
    "hygiene": hygiene_suite,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for fn in SUITES.values() for c in fn()]
    try:
        fn = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(list(SUITES) + ['all'])}") from None
    return fn()
