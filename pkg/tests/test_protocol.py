import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mapc import protocol, topology
from mapc.agent import Agent
from mapc.agent.backends import HeuristicBackend, ScriptedBackend
from mapc.protocol import ScoreWeights, TxopConfig, score_round
from mapc.types import (
    MESSAGE_BODY_CAP,
    AgentDecision,
    MessageKind,
    Role,
    SlotResult,
    SlotState,
    TransmissionSchedule,
)

S, C, I = SlotState.SUCCESS, SlotState.COLLISION, SlotState.IDLE


def scripted(scenario, plans):
    return {ap: Agent(ap, ScriptedBackend(p if isinstance(p, list) else [p]), slots=5) for ap, p in plans.items()}


def one_round(scenario, plans, negotiation=True, seed=0):
    agents = scripted(scenario, plans)
    group = tuple(sorted(agents))
    return protocol.run_negotiation_round(0, group, agents, scenario, np.random.default_rng(seed), negotiation=negotiation)


# ---------------------------------------------------------------- scoring


def test_score_complementary_pair():
    per, total = score_round([[S, S, I, I, I], [I, I, S, S, S]])
    assert per == [2.0, 3.0]
    assert total == 5.0


def test_score_full_reuse():
    assert score_round([[S] * 5, [S] * 5])[1] == 10.0


def test_score_all_idle_charges_each_member():
    per, total = score_round([[I] * 5, [I] * 5])
    assert per == [-2.5, -2.5]
    assert total == -5.0


def test_score_accepts_mapping_and_codes():
    per, total = score_round({4: ["Success", "CollisionLoss"], 7: ["Idle", "Idle"]})
    assert per == [0.0, 0.0]
    assert total == 0.0


def test_score_shape_mismatch():
    with pytest.raises(ValueError):
        score_round([[S, S], [S]])
    with pytest.raises(ValueError):
        score_round([])


def test_custom_weights():
    per, _ = score_round([[S, C, I]], ScoreWeights(2.0, 3.0, 1.0))
    assert per == [2.0 - 3.0 - 1.0]


@given(st.lists(st.lists(st.sampled_from([S, C, I]), min_size=5, max_size=5), min_size=1, max_size=4))
def test_score_total_is_sum_of_parts(rows):
    per, total = score_round(rows)
    assert total == pytest.approx(sum(per))
    # every AP pays the same idle charge
    adj = [p - sum(st is S for st in r) + sum(st is C for st in r) for p, r in zip(per, rows)]
    assert len(set(adj)) == 1


# ---------------------------------------------------------------- groups


def test_form_group_close_pair(tdma2):
    assert protocol.form_group(0, tdma2) == (0, 1)
    assert protocol.form_group(1, tdma2) == (1, 0)
    rx = tdma2.ap_rx_dbm()
    assert rx[0, 1] >= -82.0 and rx[1, 0] >= -82.0


def test_form_group_excludes_out_of_reach():
    sc = topology.make_scenario([[0, 0], [5, 0], [3000, 0]], [[1, 0], [6, 0], [3001, 0]])
    assert protocol.form_group(0, sc) == (0, 1)
    assert protocol.form_group(2, sc) == (2,)


def test_form_group_single_bss():
    sc = topology.make_scenario([[0, 0]], [[1, 0]])
    assert protocol.form_group(0, sc) == (0,)
    with pytest.raises(ValueError):
        protocol.form_group(1, sc)


# ---------------------------------------------------------------- rounds


def test_complementary_schedules_no_collisions(tdma2):
    out = one_round(tdma2, {0: "11000", 1: "00111"})
    states = [st for ap in out.aps for st in out.states(ap)]
    assert states.count(C) == 0
    assert states.count(S) == 5
    assert out.group_score == 5.0


def test_full_overlap_collides_at_close_range(tdma2):
    # the claim rests on the large-scale gains, so run it on the mean channel
    both = {ap: TransmissionSchedule.from_bitstring(ap, "11111") for ap in (0, 1)}
    out = protocol.execute_schedules(both, tdma2, np.ones((5, 2, 2)))
    assert all(r.state is C for ap in (0, 1) for r in out[ap])
    assert all(r.sinr_db < tdma2.channel.capture_threshold_db for ap in (0, 1) for r in out[ap])


def test_full_overlap_mostly_collides_under_fading():
    n_coll = n_tx = 0
    for seed in range(10):
        sc = topology.generate_scenario("co-tdma", 2, seed)
        out = one_round(sc, {0: "11111", 1: "11111"}, seed=seed)
        n_coll += sum(st is C for ap in out.aps for st in out.states(ap))
        n_tx += 10
    assert n_coll / n_tx >= 0.8


def test_full_overlap_succeeds_far_apart(sr2):
    out = one_round(sr2, {0: "11111", 1: "11111"})
    assert all(st is S for ap in out.aps for st in out.states(ap))
    assert out.group_score == 10.0


def test_sinr_matches_straight_line_recomputation(sr2):
    out = one_round(sr2, {0: "11111", 1: "10101"}, seed=5)
    G = sr2.large.gain_db
    P = sr2.tx_power_dbm
    h = np.asarray(out.fading)
    noise = 10 ** (-94.0 / 10)
    for ap in out.aps:
        for s, res in enumerate(out.per_ap[ap]):
            if out.schedules[ap].bits[s] == 0:
                assert res.sinr_db is None
                continue
            sig = 10 ** ((P[ap] + G[ap, ap]) / 10) * h[s, ap, ap]
            intf = sum(10 ** ((P[j] + G[j, ap]) / 10) * h[s, j, ap] for j in out.aps if j != ap and out.schedules[j].bits[s])
            assert res.sinr_db == pytest.approx(10 * np.log10(sig / (intf + noise)), abs=1e-9)


class Probe:
    """Records the context it was given and returns a fixed schedule."""

    def __init__(self, ap, bits, log, message="", fail=False):
        self.ap, self.bits, self.log, self.message, self.fail = ap, bits, log, message, fail
        self.observed = []

    def decide(self, ctx):
        self.log.append(("decide", self.ap, ctx))
        if self.fail:
            raise RuntimeError("boom")
        return AgentDecision(TransmissionSchedule.from_bitstring(self.ap, self.bits), self.message, "")

    def feedback(self, outcome):
        self.log.append(("feedback", self.ap, outcome.round_index))
        return f"fb{self.ap}"

    def observe(self, outcome, role, inbox):
        self.observed.append((role, list(inbox)))


def test_round_order_is_causal(tdma2):
    log = []
    agents = {0: Probe(0, "11000", log, "plan"), 1: Probe(1, "00111", log)}
    out = protocol.run_negotiation_round(3, (1, 0), agents, tdma2, np.random.default_rng(0))
    assert [e[0] for e in out.events] == ["decide", "proposal", "decide", "feedback"]
    assert out.events[0][1] == 1  # sharing AP is the first group member
    sharing_ctx = log[0][2]
    shared_ctx = log[1][2]
    assert sharing_ctx.role is Role.SHARING and sharing_ctx.incoming is None
    assert shared_ctx.role is Role.SHARED
    assert shared_ctx.incoming.kind is MessageKind.PROPOSAL
    assert shared_ctx.incoming.declared_schedule.bitstring == "00111"
    assert shared_ctx.incoming.body == ""
    # feedback reaches the sharing AP; the shared AP sees the proposal
    assert [m.body for m in agents[1].observed[0][1]] == ["fb0"]
    assert agents[0].observed[0][1][0].kind is MessageKind.PROPOSAL


def test_sharing_role_cannot_have_incoming():
    from mapc.types import AgentContext, CoordinationMessage

    msg = CoordinationMessage(0, 0, MessageKind.PROPOSAL, "x")
    with pytest.raises(ValueError):
        AgentContext(Role.SHARING, 0, (0, 1), 5, msg)


def test_failing_agent_takes_rank_partition(tdma2):
    log = []
    agents = {0: Probe(0, "11111", log), 1: Probe(1, "11111", log, fail=True)}
    out = protocol.run_negotiation_round(0, (0, 1), agents, tdma2, np.random.default_rng(0))
    assert out.schedules[1].bitstring == "01010"
    assert out.fallbacks and out.fallbacks[0][0] == 1
    assert "boom" in out.fallbacks[0][1]


def test_wrong_length_schedule_falls_back(tdma2):
    log = []
    agents = {0: Probe(0, "111", log), 1: Probe(1, "00000", log)}
    out = protocol.run_negotiation_round(0, (0, 1), agents, tdma2, np.random.default_rng(0))
    assert out.schedules[0].bitstring == "10101"
    assert out.fallbacks[0][0] == 0


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_fallback_partition_is_disjoint_and_covering(n):
    rows = [protocol.fallback_schedule(r, n, 5).bits for r in range(n)]
    assert all(sum(col) == 1 for col in zip(*rows))


def test_long_messages_are_capped(tdma2):
    log = []
    agents = {0: Probe(0, "11000", log, "x" * 5000), 1: Probe(1, "00111", log)}
    out = protocol.run_negotiation_round(0, (0, 1), agents, tdma2, np.random.default_rng(0))
    assert len(out.messages[0].body) == MESSAGE_BODY_CAP


def test_no_negotiation_suppresses_messages(tdma2):
    log = []
    agents = {0: Probe(0, "11000", log, "secret plan"), 1: Probe(1, "00111", log)}
    out = protocol.run_negotiation_round(0, (0, 1), agents, tdma2, np.random.default_rng(0), negotiation=False)
    shared_ctx = log[1][2]
    assert shared_ctx.incoming.body == "" and shared_ctx.incoming.declared_schedule is None
    assert all(m.body == "" for m in out.messages)
    assert agents[0].observed[0][1] == [] and agents[1].observed[0][1] == []


def test_parallel_shared_agents_same_result():
    sc = topology.generate_scenario("co-sr", 3, 1)
    a = one_round(sc, {0: "10101", 1: "11111", 2: "01010"})
    agents = scripted(sc, {0: "10101", 1: "11111", 2: "01010"})
    b = protocol.run_negotiation_round(0, (0, 1, 2), agents, sc, np.random.default_rng(0), parallel=True)
    assert protocol.outcome_to_record(a) == protocol.outcome_to_record(b)


def test_execute_leaves_outsiders_silent(sr2):
    fade = np.ones((5, 2, 2))
    out = protocol.execute_schedules({0: TransmissionSchedule.from_bitstring(0, "10000")}, sr2, fade)
    assert set(out) == {0}
    assert out[0][0].state is S and out[0][1].state is I


def test_slot_result_invariant():
    with pytest.raises(ValueError):
        SlotResult(I, 3.0)
    with pytest.raises(ValueError):
        SlotResult(S, None)


# ---------------------------------------------------------------- TXOPs


def heuristic_agents(scenario, seed=0):
    return {ap: Agent(ap, HeuristicBackend(), slots=5, seed=seed) for ap in range(scenario.bss_count)}


def test_zero_rounds_give_empty_list(sr2):
    res = protocol.run_txop(sr2, heuristic_agents(sr2), TxopConfig(rounds=0))
    assert res.outcomes == []


def test_heuristic_reaches_full_reuse_far_apart(sr2):
    res = protocol.run_txop(sr2, heuristic_agents(sr2), TxopConfig(18), seed=0)
    last = res.outcomes[-1]
    assert all(last.schedules[ap].bitstring == "11111" for ap in last.aps)


def test_heuristic_mostly_disjoint_at_close_range():
    for seed in range(3):
        sc = topology.generate_scenario("co-tdma", 2, seed)
        res = protocol.run_txop(sc, heuristic_agents(sc, seed), TxopConfig(18), seed=seed)
        last = res.outcomes[-1]
        overlapped = sum(1 for s in range(5) if sum(last.schedules[ap].bits[s] for ap in last.aps) > 1)
        assert overlapped <= 2


def test_round_record_roundtrip(tdma2):
    out = one_round(tdma2, {0: "11000", 1: "01111"})
    back = protocol.outcome_from_record(protocol.outcome_to_record(out))
    assert protocol.outcome_to_record(back) == protocol.outcome_to_record(out)


def test_txop_config_validation():
    with pytest.raises(ValueError):
        TxopConfig(rounds=-1)
    with pytest.raises(ValueError):
        TxopConfig(slots_per_round=0)

