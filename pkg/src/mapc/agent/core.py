"""Per-AP agent: evaluate, retrieve, reflect, act, then observe and remember."""
from __future__ import annotations

import logging
from dataclasses import dataclass

from ..llm_gateway import OfflineEmbedder
from ..protocol import score_round
from ..rng import substream
from ..types import AgentContext, AgentDecision, CoordinationMessage, Role, RoundOutcome, SlotState
from .memory import Exemplar, KnowledgeBase, RoundRecord, ShortTermMemory, load_seed_exemplars
from .prompt import NO_OUTCOME, render_outcome_table, render_situation

log = logging.getLogger(__name__)

LEVEL_TAGS = ("ConservativeTDMA", "HybridProbe", "FullSR")
TAG_LEVELS = {t: i for i, t in enumerate(LEVEL_TAGS)}


@dataclass(frozen=True)
class Evaluation:
    round: int | None
    score: float
    own_score: float
    text: str


@dataclass(frozen=True)
class Reflection:
    tag: str
    text: str
    level: int | None = None
    cooldown: bool = False


NEUTRAL = Evaluation(None, 0.0, 0.0, "no history: this is the first round")


def evaluate_outcome(outcome: RoundOutcome | None, ap: int) -> Evaluation:
    if outcome is None:
        return NEUTRAL
    per, total = score_round(outcome)
    own = per[outcome.aps.index(ap)]
    states = outcome.states(ap)
    n_s = sum(s is SlotState.SUCCESS for s in states)
    n_c = sum(s is SlotState.COLLISION for s in states)
    L = len(states)
    idle = sum(1 for s in range(L) if all(outcome.states(a)[s] is SlotState.IDLE for a in outcome.aps))
    coll = "zero collisions" if n_c == 0 else f"{n_c} collisions on slots " + ",".join(str(i + 1) for i, s in enumerate(states) if s is SlotState.COLLISION)
    text = (
        f"round {outcome.round_index}: group score {total:g}, own score {own:g}; "
        f"{n_s} successes, {coll}, {idle} group-idle slots; own slots {outcome.state_string(ap)}"
    )
    return Evaluation(outcome.round_index, total, own, text)


class Agent:
    def __init__(
        self,
        ap: int,
        backend,
        slots: int = 5,
        stm_capacity: int = 5,
        kb: KnowledgeBase | None = None,
        embedder=None,
        retrieve_k: int = 3,
        reflection: bool = True,
        seed: int = 0,
    ):
        self.ap = ap
        self.backend = backend
        self.slots = slots
        self.stm = ShortTermMemory(stm_capacity)
        self.kb = kb
        self.embedder = embedder or OfflineEmbedder()
        self.retrieve_k = retrieve_k
        self.reflection_enabled = reflection
        self.rng = substream(seed, "agent", ap)
        self.last_outcome: RoundOutcome | None = None
        self.last_record: RoundRecord | None = None
        self.last_plan = None
        self.last_message = ""
        self.last_tag = None
        self.ltm_log: list = []
        self._outcomes: dict[int, dict] = {}
        self._pending = None

    # pipeline ------------------------------------------------------------

    @property
    def memoryless(self) -> bool:
        return self.stm.capacity == 0

    def history(self) -> list[RoundRecord]:
        """Records the strategy rules may look at."""
        if self.memoryless:
            return [self.last_record] if self.last_record is not None else []
        return self.stm.window

    def evaluate(self) -> Evaluation:
        return evaluate_outcome(self.last_outcome, self.ap)

    def retrieve(self, situation: str):
        if self.kb is None or len(self.kb) == 0:
            return []
        return self.kb.retrieve(self.embedder.embed(situation), self.retrieve_k)

    def reflect(self, evaluation: Evaluation, retrieved=()) -> Reflection:
        if not self.reflection_enabled:
            return Reflection("Hold", "")
        return self.backend.reflect(self, evaluation, retrieved)

    def decide(self, ctx: AgentContext) -> AgentDecision:
        evaluation = self.evaluate()
        rank = ctx.group.index(self.ap)
        situation = render_situation(len(ctx.group), rank, self.stm.window)
        retrieved = self.retrieve(situation)
        refl = self.reflect(evaluation, retrieved)
        self.last_tag = refl.tag
        dec = self.backend.act(self, ctx, evaluation, refl, retrieved)
        self._pending = (situation, dec, refl)
        self.last_plan = dec.schedule
        self.last_message = dec.message
        return dec

    def feedback(self, outcome: RoundOutcome) -> str:
        states = outcome.state_string(self.ap)
        coll = [str(i + 1) for i, c in enumerate(states) if c == "C"]
        tag = f"; tag {self.last_tag}" if self.last_tag else ""
        return f"AP{self.ap} outcome {states}; collisions on slots {' '.join(coll) if coll else 'none'}{tag}"

    def observe(self, outcome: RoundOutcome, role: Role, inbox=()) -> None:
        """Store what this agent can see of a finished round.

        The sharing AP sees every row once feedback arrives. A shared AP sees
        its own row plus the schedule the sharing AP declared.
        """
        if role is Role.SHARING and (inbox or len(outcome.aps) == 1):
            visible = list(outcome.aps)
        else:
            visible = [self.ap]
        schedules = {ap: outcome.schedules[ap].bitstring for ap in visible}
        results = {ap: outcome.state_string(ap) for ap in visible}
        if role is Role.SHARED:
            for m in inbox:
                if m.declared_schedule is not None:
                    schedules[m.sender] = m.declared_schedule.bitstring
        L = outcome.slots
        overlap_slots = tuple(
            s
            for s in range(L)
            if sum(int(b[s]) for b in schedules.values()) >= 2 and any(results[ap][s] == "C" for ap in results)
        )
        any_collision = any("C" in r for r in results.values())
        situation, dec, refl = self._pending if self._pending else ("", None, Reflection("Hold", ""))
        rec = RoundRecord(
            round=outcome.round_index,
            role=role.value,
            group=outcome.aps,
            schedules=schedules,
            results=results,
            score=outcome.scores.get(self.ap, 0.0),
            group_score=outcome.group_score,
            messages=tuple(m.body for m in outcome.messages if m.sender in visible or m in inbox),
            level=refl.level if refl.level is not None else (self.last_record.level if self.last_record else 0),
            cooldown=refl.cooldown,
            overlap_collision=bool(overlap_slots),
            overlap_collision_slots=overlap_slots,
            any_collision=any_collision,
        )
        self.stm.push(rec)
        self.last_record = rec
        self.last_outcome = outcome
        self._outcomes[outcome.round_index] = {ap: outcome.per_ap[ap] for ap in visible}
        if self.kb is not None and dec is not None and situation:
            cand = Exemplar(situation, dec.schedule.bitstring, dec.message, float(outcome.group_score), refl.text or refl.tag, self.embedder.embed(situation).values)
            self.ltm_log.append(self.kb.update(cand))
        self._pending = None

    # tool ----------------------------------------------------------------

    def get_transmission_outcome(self, round_index: int) -> str:
        rows = self._outcomes.get(round_index)
        if rows is None:
            return NO_OUTCOME
        return render_outcome_table(round_index, rows)


def make_knowledge_base(embedder, capacity: int = 10, threshold: float = 0.85, seed_exemplars: bool = True) -> KnowledgeBase:
    """Fresh store, optionally holding the curated seed exemplars.

    Seeds are placed directly rather than through the update rule: two of
    them describe neighbouring situations on purpose and would otherwise
    collapse into one cluster.
    """
    seeds = load_seed_exemplars(embedder)[:capacity] if seed_exemplars else []
    return KnowledgeBase(capacity=capacity, threshold=threshold, exemplars=seeds)


def incoming_body(ctx: AgentContext) -> tuple[str | None, str | None]:
    msg: CoordinationMessage | None = ctx.incoming
    if msg is None:
        return None, None
    declared = msg.declared_schedule.bitstring if msg.declared_schedule is not None else None
    return msg.body, declared
