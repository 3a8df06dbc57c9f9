from dataclasses import replace

import numpy as np
import pytest

from hiddenconf.errors import BoundaryViolation, BranchError, ScenarioError
from hiddenconf.field import WaveField, build_grid, gaussian_packet
from hiddenconf.guidance import drift_field
from hiddenconf.measurement import (CouplingSpec, PacketSpec, PointerSpec, branch_decompose, couplings,
                                    crossing_monitor, default_scenario, initial_field, initial_support, readout,
                                    repeated_measurement, repeated_scenario, run_measurement, summarize)
from hiddenconf.schrodinger import evolve


@pytest.fixture(scope="module")
def small_record():
    return run_measurement(default_scenario(), 1.0, 400, seed=3)


def test_default_geometry():
    s = default_scenario()
    s.validate()
    assert 2 * s.coupling.shift >= 8 * s.pointer.width_at(s.t_final)
    assert s.z1 == 6.0 and s.z2 == -6.0 and s.t_sep == 1.25
    repeated_scenario().validate()


@pytest.mark.parametrize("changes, match", [
    ({"c1": 0.5}, "must be 1"),
    ({"packet1": PacketSpec(-2.0), "packet2": PacketSpec(2.0)}, "overlap"),
    ({"coupling": CouplingSpec(0.25, 3.0, 6.0)}, "inside"),
    ({"coupling": CouplingSpec(0.25, 1.25, 3.0)}, "widths"),
    ({"record_times": (1.0,)}, "separation"),
    ({"points": (256, 64, 16)}, "3-D"),
    ({"second_pointer": PointerSpec(), "second_coupling": CouplingSpec(1.0, 2.0, 6.0),
      "extents": ((-20, 20), (-16, 16), (-16, 16)), "points": (64, 32, 32)}, "after the first"),
])
def test_scenario_validation(changes, match):
    with pytest.raises(ScenarioError, match=match):
        replace(default_scenario(), **changes).validate()


def test_digest_tracks_parameters():
    assert default_scenario().digest() == default_scenario().digest()
    assert default_scenario().digest() != default_scenario(c1=0.8, c2=0.6).digest()


def test_initial_state_has_two_x_branches():
    f = initial_field(default_scenario())
    assert f.norm() == pytest.approx(1.0, abs=1e-12)
    dec = branch_decompose(f, expected=2)
    assert dec.weights[0] == pytest.approx(0.64, abs=1e-8)
    assert dec.weights[1] == pytest.approx(0.36, abs=1e-8)
    assert dec.overlap < 1e-6


def test_readout_bands():
    z = np.array([-6.0, -3.01, -3.0, 0.0, 2.99, 3.01, 6.0])
    assert readout(z, 6.0).tolist() == [2, 2, 0, 0, 0, 1, 1]


def test_initial_support_predicate():
    s = default_scenario()
    assert initial_support(s, np.array([-8.0, -1.0, 1.0, 8.0])).tolist() == [1, 1, 2, 2]


def test_periodic_components_merge():
    g = build_grid([[-10, 10]], [128])
    psi = gaussian_packet(g, -9.5, 0.3, tail_limit=1.0).psi + gaussian_packet(g, 0.0, 0.3).psi
    dec = branch_decompose(WaveField(g, psi).normalized(), 1e-6)
    assert dec.count == 2
    with pytest.raises(BranchError):
        branch_decompose(WaveField(g, psi).normalized(), 1e-6, expected=3)


def test_branch_order_by_axis():
    g = build_grid([[-10, 10], [-10, 10]], [64, 64])
    psi = 0.6 * gaussian_packet(g, (-5, 4), 0.7).psi + 0.8 * gaussian_packet(g, (5, -4), 0.7).psi
    dec = branch_decompose(WaveField(g, psi).normalized(), order_axis=1)
    assert dec.weights == pytest.approx((0.36, 0.64), abs=1e-8)
    assert dec.branch_of(np.array([[-5.0, 4.0], [5.0, -4.0], [0.0, 0.0]])).tolist() == [1, 2, 0]
    assert sum(b.norm() ** 2 for b in dec.fields) == pytest.approx(1.0, abs=1e-6)


def test_crossing_counts_label_changes_only():
    g = build_grid([[-10, 10]], [64])
    psi = gaussian_packet(g, -5, 0.7).psi + gaussian_packet(g, 5, 0.7).psi
    dec = branch_decompose(WaveField(g, psi).normalized(), 1e-6)
    # member 0 stays, member 1 visits the gap (label 0) and comes back, member 2 crosses
    path = np.array([[[-5.0], [-5.0], [-5.0]],
                     [[-5.0], [0.0], [5.0]],
                     [[-5.0], [-5.0], [5.0]]])
    rep = crossing_monitor([1.0, 2.0, 3.0], path, [dec] * 3, t_sep=1.0)
    assert rep.separated and rep.crossings == 1 and rep.unassigned_hits == 1
    assert rep.fraction == pytest.approx(1 / 3)
    rep2 = crossing_monitor([1.0, 2.0, 3.0], path[:, [0, 1]], [dec] * 3, t_sep=1.0)
    assert rep2.crossings == 0
    # before t_sep nothing counts
    assert crossing_monitor([1.0, 2.0, 3.0], path, [dec] * 3, t_sep=3.0).crossings == 0
    merged = branch_decompose(WaveField(g, psi).normalized(), 1e-40)
    assert not crossing_monitor([1.0], path[:1], [merged], t_sep=0.0).separated


def test_drift_of_full_field_matches_branch_drift():
    s = default_scenario()
    grid = s.grid()
    p = s.params(1.0)
    f1, f2 = (evolve(initial_field(replace(s, c1=a, c2=b)), None, couplings(s, grid), p, 1.5, s.dt)[-1]
              for a, b in ((1.0, 0.0), (0.0, 1.0)))
    full = f1 * 0.6 + f2 * 0.8
    dec = branch_decompose(full, s.eps_branch, expected=2)
    d1 = dec.labels == dec.branch_of(np.array([[-8.0, 6.0]]))[0]
    b_full = drift_field(full, p)[0]
    b_one = drift_field(f1, p)[0]
    diff = np.max(np.abs(b_full - b_one), axis=0)
    ratio = np.abs(f2.psi) / np.maximum(np.abs(f1.psi), 1e-300)
    # where the other branch is numerically absent the drifts agree
    core = d1 & (ratio <= 1e-10)
    assert np.sum(np.abs(full.psi[core]) ** 2) * grid.cell_volume >= 0.1
    assert np.max(diff[core]) <= 1e-8
    # towards the edge of D1 the residual is set by the branch-2 tail
    edge = d1 & (ratio <= 1e-4)
    assert np.all(diff[edge] <= 1e-8 + 100 * ratio[edge])


def test_boundary_violation_stops_run():
    s = default_scenario(extents=((-20.0, 20.0), (-8.0, 8.0)), points=(256, 32))
    with pytest.raises(BoundaryViolation):
        run_measurement(s, 0.0, 20, seed=0)


def test_record_integrity_and_summary(small_record):
    r = small_record
    r.check_integrity()
    assert r.summary["support_agreement"] >= 0.99
    assert not r.summary["misconfigured"]
    assert len(r.to_json()["members"]) == 400
    assert r.regularized_hits.shape == (400,)
    tampered = replace(r, outcome1=np.where(r.outcome1 == 1, 2, r.outcome1))
    with pytest.raises(AssertionError):
        tampered.check_integrity()


def test_summary_reports_undecided(small_record):
    final = small_record.final.copy()
    final[:40, 1] = 0.0
    r = replace(small_record, final=final, outcome1=readout(final[:, 1], 6.0))
    assert summarize(r)["undecided_fraction"] >= 0.1


def test_repeated_needs_second_pointer():
    with pytest.raises(ScenarioError):
        repeated_measurement(default_scenario(), 0.0, 10, seed=0)
