import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapc import topology
from mapc.topology import InfeasibleConfiguration, NodePosition, ScenarioBounds, ScenarioKind, pairwise_distance


def test_pairwise_distance_examples():
    assert pairwise_distance(NodePosition(0, 0), NodePosition(3, 4)) == 5.0
    p = NodePosition(2.5, -1.0)
    assert pairwise_distance(p, p) == 0.0
    assert pairwise_distance(NodePosition(0, 0), NodePosition(1, 1)) == pytest.approx(math.sqrt(2), abs=1e-12)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_pairwise_distance_symmetric_nonnegative(ax, ay, bx, by):
    a, b = NodePosition(ax, ay), NodePosition(bx, by)
    d = pairwise_distance(a, b)
    assert d >= 0
    assert d == pairwise_distance(b, a)


def test_node_position_rejects_nan():
    with pytest.raises(ValueError):
        NodePosition(float("nan"), 0.0)


def test_tdma_scenario_respects_distance_bounds():
    sc = topology.generate_scenario("co-tdma", 2, 7)
    (d,) = sc.ap_distances()
    assert 3.0 <= d <= 10.0
    assert all(1.0 <= s <= 3.0 + 1e-9 for s in sc.sta_distances())
    assert sc.scenario_kind is ScenarioKind.CO_TDMA


def test_sr_scenario_respects_distance_bounds():
    sc = topology.generate_scenario("co-sr", 2, 7)
    (d,) = sc.ap_distances()
    assert 30.0 <= d <= 40.0


@pytest.mark.parametrize("kind", ["co-tdma", "co-sr"])
def test_three_ap_layouts_pairwise_in_range(kind):
    b = ScenarioBounds()
    lo, hi = b.ap_distance(ScenarioKind(kind))
    for seed in range(3):
        sc = topology.generate_scenario(kind, 3, seed)
        assert all(lo <= d <= hi for d in sc.ap_distances())
        assert topology.classify_ok(sc.scenario_kind, sc.large, sc.tx_power_dbm, sc.channel, b)


def test_single_bss_is_infeasible():
    with pytest.raises(InfeasibleConfiguration):
        topology.generate_scenario("random", 1, 3)


def test_impossible_bounds_raise_after_attempt_cap():
    b = ScenarioBounds(arena_m=5.0, sr_ap_distance=(30.0, 40.0), max_attempts=50)
    with pytest.raises(InfeasibleConfiguration):
        topology.generate_scenario("co-sr", 2, 0, bounds=b)


def test_generation_is_seed_deterministic():
    a = topology.generate_scenario("co-sr", 3, 11)
    b = topology.generate_scenario("co-sr", 3, 11)
    c = topology.generate_scenario("co-sr", 3, 12)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != c.to_dict()


def test_scenario_kind_aliases():
    assert ScenarioKind.parse("CoSrFavored") is ScenarioKind.CO_SR
    assert ScenarioKind.parse("co_tdma") is ScenarioKind.CO_TDMA
    with pytest.raises(ValueError):
        ScenarioKind.parse("mesh")


def test_scenario_roundtrip(tmp_path):
    sc = topology.generate_scenario("co-tdma", 3, 2)
    p = tmp_path / "sc.json"
    sc.save(p)
    back = topology.TopologyScenario.load(p)
    assert back.to_dict() == sc.to_dict()
    np.testing.assert_array_equal(back.large.gain_db, sc.large.gain_db)


def test_families_separate_by_expected_sinr():
    # concurrency breaks both links in the TDMA family and is safe in the SR family
    from mapc import channel

    for seed in range(5):
        t = topology.generate_scenario("co-tdma", 2, seed)
        s = topology.generate_scenario("co-sr", 2, seed)
        thr = t.channel.capture_threshold_db
        vt = channel.expected_sinr_db((0, 1), t.large, t.tx_power_dbm, t.channel.noise_floor_dbm)
        vs = channel.expected_sinr_db((0, 1), s.large, s.tx_power_dbm, s.channel.noise_floor_dbm)
        assert max(vt.values()) < thr
        assert min(vs.values()) > thr


def test_coexistence_scenario_keeps_agentic_pair():
    base = topology.generate_scenario("co-tdma", 2, 4)
    mixed = topology.generate_coexistence_scenario(4, n_legacy=2)
    assert mixed.bss_count == 4
    assert mixed.ap_positions[:2] == base.ap_positions


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_random_kind_minimum_separation(seed):
    sc = topology.generate_scenario("random", 3, seed)
    assert min(sc.ap_distances()) >= ScenarioBounds().random_min_separation
