"""TXOP lifecycle: contention, polling, negotiation rounds, execution, scoring.

A round runs in a fixed order. The sharing agent decides first and emits a
Proposal. Shared agents then decide against that Proposal, possibly in
parallel. All schedules execute slot by slot against the channel, every
member observes the outcome, and shared agents send Feedback. Control
traffic costs no airtime; only the L data slots count.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import channel, mac
from .rng import substream
from .types import (
    MESSAGE_BODY_CAP,
    AgentContext,
    AgentDecision,
    CoordinationMessage,
    MessageKind,
    Role,
    RoundOutcome,
    SlotResult,
    SlotState,
    TransmissionSchedule,
)

log = logging.getLogger(__name__)

POLL_THRESHOLD_DBM = -82.0


@dataclass(frozen=True)
class TxopConfig:
    rounds: int = 18
    slots_per_round: int = 5
    slot_duration_us: float = 80.0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.slots_per_round < 1:
            raise ValueError("slots_per_round must be >= 1")
        if not self.slot_duration_us > 0:
            raise ValueError("slot_duration_us must be positive")

    @property
    def round_data_time_us(self) -> float:
        return self.slots_per_round * self.slot_duration_us


@dataclass(frozen=True)
class ScoreWeights:
    success: float = 1.0
    collision: float = 1.0
    idle: float = 0.5


class AgentLike(Protocol):
    ap: int

    def decide(self, ctx: AgentContext) -> AgentDecision: ...

    def feedback(self, outcome: RoundOutcome) -> str: ...

    def observe(self, outcome: RoundOutcome, role: Role, inbox: Sequence[CoordinationMessage]) -> None: ...


# --------------------------------------------------------------------------
# group formation


def form_group(sharing_ap: int, scenario, candidates=None, poll_threshold_dbm: float = POLL_THRESHOLD_DBM, tx_power_dbm=None) -> tuple[int, ...]:
    """Sharing AP first, then every candidate that hears its poll, by index.

    Poll reach uses the large-scale AP-to-AP gain only. ``candidates``
    defaults to every AP in the scenario (all agentic).
    """
    k = scenario.bss_count
    if not 0 <= sharing_ap < k:
        raise ValueError(f"sharing AP {sharing_ap} not in scenario")
    if candidates is None:
        candidates = range(k)
    rx = scenario.ap_rx_dbm(scenario.tx_power_dbm if tx_power_dbm is None else tx_power_dbm)
    members = [j for j in sorted(set(candidates)) if j != sharing_ap and rx[sharing_ap, j] >= poll_threshold_dbm]
    return (sharing_ap, *members)


# --------------------------------------------------------------------------
# scoring


def _as_state_rows(rows) -> list[list[SlotState]]:
    if isinstance(rows, RoundOutcome):
        return [list(rows.states(ap)) for ap in rows.aps]
    if isinstance(rows, Mapping):
        rows = list(rows.values())
    out = []
    for row in rows:
        out.append([r.state if isinstance(r, SlotResult) else SlotState(r) for r in row])
    return out


def score_round(rows, weights: ScoreWeights = ScoreWeights()) -> tuple[list[float], float]:
    """Per-AP scores in row order and their sum.

    ``rows`` is a RoundOutcome, a mapping AP -> slot states, or a sequence of
    slot-state rows. A slot where no member transmitted charges the idle
    penalty once to every member.
    """
    states = _as_state_rows(rows)
    if not states:
        raise ValueError("empty outcome")
    n_slots = len(states[0])
    if any(len(r) != n_slots for r in states):
        raise ValueError("shape mismatch: rows differ in slot count")
    group_idle = sum(1 for s in range(n_slots) if all(r[s] is SlotState.IDLE for r in states))
    per_ap = []
    for row in states:
        v = 0.0
        for st in row:
            if st is SlotState.SUCCESS:
                v += weights.success
            elif st is SlotState.COLLISION:
                v -= weights.collision
        v -= weights.idle * group_idle
        per_ap.append(v)
    total = 0.0
    for v in per_ap:
        total += v
    return per_ap, total


# --------------------------------------------------------------------------
# rounds


def fallback_schedule(rank: int, group_size: int, n_slots: int, owner: int = -1) -> TransmissionSchedule:
    """Safe default: group rank i takes slots congruent to i mod group size."""
    if not 0 <= rank < group_size:
        raise ValueError("rank out of range")
    return TransmissionSchedule(owner, tuple(int(s % group_size == rank) for s in range(n_slots)))


def _cap(body: str, sender: int) -> str:
    if len(body) > MESSAGE_BODY_CAP:
        log.warning("message from AP%d truncated from %d to %d characters", sender, len(body), MESSAGE_BODY_CAP)
        return body[:MESSAGE_BODY_CAP]
    return body


def _safe_decide(agent, ctx: AgentContext, rank: int) -> tuple[AgentDecision, str | None]:
    try:
        dec = agent.decide(ctx)
        if len(dec.schedule) != ctx.slots:
            raise ValueError(f"schedule has {len(dec.schedule)} slots, expected {ctx.slots}")
    except Exception as exc:  # any agent failure takes the safe default
        reason = f"{type(exc).__name__}: {exc}"
        log.warning("AP%d decision failed in round %d (%s); using fallback", agent.ap, ctx.round, reason)
        sched = fallback_schedule(rank, len(ctx.group), ctx.slots, agent.ap)
        return AgentDecision(sched, "", "", fallback=True, fallback_reason=reason), reason
    if dec.schedule.owner != agent.ap:
        dec = AgentDecision(TransmissionSchedule(agent.ap, dec.schedule.bits), dec.message, dec.reflection, dec.fallback, dec.fallback_reason)
    return dec, (dec.fallback_reason or "fallback") if dec.fallback else None


def execute_schedules(schedules: Mapping[int, TransmissionSchedule], scenario, fading: np.ndarray, tx_power_dbm=None) -> dict[int, tuple[SlotResult, ...]]:
    """Run the schedules slot by slot; APs outside ``schedules`` stay silent."""
    k = scenario.bss_count
    n_slots = fading.shape[0]
    tx = np.zeros((n_slots, k), dtype=bool)
    for ap, sched in schedules.items():
        tx[:, ap] = np.asarray(sched.bits, dtype=bool)
    power = scenario.tx_power_dbm if tx_power_dbm is None else tx_power_dbm
    sinr = channel.slot_sinr_db(tx, scenario.large, fading, power, scenario.channel.noise_floor_dbm)
    thr = scenario.channel.capture_threshold_db
    out = {}
    for ap in schedules:
        row = []
        for s in range(n_slots):
            if not tx[s, ap]:
                row.append(SlotResult(SlotState.IDLE))
            else:
                v = float(sinr[s, ap])
                row.append(SlotResult(SlotState.SUCCESS if v >= thr else SlotState.COLLISION, v))
        out[ap] = tuple(row)
    return out


def run_negotiation_round(
    round_index: int,
    group: Sequence[int],
    agents: Mapping[int, AgentLike],
    scenario,
    rng: np.random.Generator,
    config: TxopConfig = TxopConfig(),
    negotiation: bool = True,
    weights: ScoreWeights = ScoreWeights(),
    parallel: bool = False,
) -> RoundOutcome:
    group = tuple(group)
    L = config.slots_per_round
    events: list[tuple] = []
    fallbacks: list[tuple[int, str]] = []
    sharing = group[0]

    # (1) sharing agent decides and proposes
    ctx = AgentContext(Role.SHARING, round_index, group, L, None, negotiation)
    events.append(("decide", sharing, round_index))
    dec_s, fb = _safe_decide(agents[sharing], ctx, 0)
    if fb:
        fallbacks.append((sharing, fb))
    proposal = CoordinationMessage(
        sharing,
        round_index,
        MessageKind.PROPOSAL,
        _cap(dec_s.message, sharing) if negotiation else "",
        dec_s.schedule if negotiation else None,
    )
    events.append(("proposal", sharing, round_index))
    decisions = {sharing: dec_s}

    # (2) shared agents decide independently against the same proposal
    shared = group[1:]

    def _shared(ap):
        c = AgentContext(Role.SHARED, round_index, group, L, proposal, negotiation)
        return _safe_decide(agents[ap], c, group.index(ap))

    for ap in shared:
        events.append(("decide", ap, round_index))
    if parallel and len(shared) > 1:
        with ThreadPoolExecutor(max_workers=len(shared)) as pool:
            results = list(pool.map(_shared, shared))
    else:
        results = [_shared(ap) for ap in shared]
    for ap, (dec, fb) in zip(shared, results):
        decisions[ap] = dec
        if fb:
            fallbacks.append((ap, fb))

    # (3) execute
    schedules = {ap: decisions[ap].schedule for ap in group}
    fading = channel.sample_slot_fading(rng, scenario.bss_count, L, scenario.channel.nakagami_m)
    per_ap = execute_schedules(schedules, scenario, fading)
    outcome = RoundOutcome(round_index, group, schedules, per_ap, fallbacks=fallbacks, fading=fading.tolist(), events=events)
    per, total = score_round(outcome, weights)
    outcome.scores = dict(zip(group, per))
    outcome.group_score = total

    # (4)-(5) feedback from shared agents, then every agent observes
    messages = [proposal]
    for ap in shared:
        body = ""
        if negotiation:
            try:
                body = _cap(agents[ap].feedback(outcome), ap)
            except Exception as exc:
                log.warning("AP%d feedback failed: %s", ap, exc)
        messages.append(CoordinationMessage(ap, round_index, MessageKind.FEEDBACK, body))
        events.append(("feedback", ap, round_index))
    outcome.messages = messages
    feedback = messages[1:] if negotiation else []
    for ap in group:
        if ap == sharing:
            agents[ap].observe(outcome, Role.SHARING, feedback)
        else:
            agents[ap].observe(outcome, Role.SHARED, [proposal] if negotiation else [])
    return outcome


@dataclass
class TxopResult:
    contention: mac.ContentionResult
    group: tuple[int, ...]
    outcomes: list[RoundOutcome]


def run_txop(
    scenario,
    agents: Mapping[int, AgentLike],
    config: TxopConfig = TxopConfig(),
    seed: int = 0,
    txop_index: int = 0,
    negotiation: bool = True,
    mac_params: mac.MacParams | None = None,
    round_offset: int = 0,
    weights: ScoreWeights = ScoreWeights(),
    parallel: bool = False,
) -> TxopResult:
    """Contend, poll, then run ``config.rounds`` rounds on one channel hold."""
    mac_params = mac_params or mac.MacParams()
    contenders = sorted(agents)
    res = mac.contend(contenders, substream(seed, "contend", txop_index), mac_params)
    group = form_group(res.winner, scenario, candidates=contenders)
    outcomes = []
    for r in range(config.rounds):
        idx = round_offset + r
        rng = substream(seed, "fading", txop_index, idx)
        outcomes.append(run_negotiation_round(idx, group, agents, scenario, rng, config, negotiation, weights, parallel))
    return TxopResult(res, group, outcomes)


# --------------------------------------------------------------------------
# round log records


def outcome_to_record(outcome: RoundOutcome) -> dict:
    return {
        "type": "round",
        "round": outcome.round_index,
        "group": list(outcome.aps),
        "schedules": {str(ap): outcome.schedules[ap].bitstring for ap in outcome.aps},
        "results": {str(ap): outcome.state_string(ap) for ap in outcome.aps},
        "sinr": {str(ap): [r.sinr_db for r in outcome.per_ap[ap]] for ap in outcome.aps},
        "scores": {str(ap): outcome.scores[ap] for ap in outcome.aps},
        "group_score": outcome.group_score,
        "messages": [m.to_dict() for m in outcome.messages],
        "fallbacks": [[ap, reason] for ap, reason in outcome.fallbacks],
        "fading": outcome.fading,
    }


def outcome_from_record(rec: dict) -> RoundOutcome:
    aps = tuple(int(a) for a in rec["group"])
    schedules = {ap: TransmissionSchedule.from_bitstring(ap, rec["schedules"][str(ap)]) for ap in aps}
    per_ap = {}
    for ap in aps:
        states = rec["results"][str(ap)]
        sinrs = rec["sinr"][str(ap)]
        per_ap[ap] = tuple(SlotResult(SlotState.from_code(c), v) for c, v in zip(states, sinrs))
    return RoundOutcome(
        round_index=int(rec["round"]),
        aps=aps,
        schedules=schedules,
        per_ap=per_ap,
        scores={ap: float(rec["scores"][str(ap)]) for ap in aps},
        group_score=float(rec["group_score"]),
        messages=[CoordinationMessage.from_dict(m) for m in rec.get("messages", [])],
        fallbacks=[(int(a), r) for a, r in rec.get("fallbacks", [])],
        fading=rec.get("fading"),
    )
