"""Decision backends: heuristic, genie, scripted and llm.

Every backend exposes ``reflect(agent, evaluation, retrieved)`` and
``act(agent, ctx, evaluation, reflection, retrieved)``.
"""
from __future__ import annotations

import re

import numpy as np

from .. import channel, kernels
from ..llm_gateway import ChatRequest, GatewayError
from ..protocol import fallback_schedule
from ..types import AgentContext, AgentDecision, Role, TransmissionSchedule
from .core import LEVEL_TAGS, TAG_LEVELS, Agent, Evaluation, Reflection, incoming_body
from .prompt import ParseFailure, PromptContext, build_prompt, extract_tag, parse_decision

_SUGGEST = re.compile(r"AP(\d+)\s*=\s*([01]+)")


def parse_suggestions(body: str | None, slots: int) -> dict[int, str]:
    """``AP<i>=<bits>`` pairs from a proposal body; wrong lengths are ignored."""
    out = {}
    for ap, bits in _SUGGEST.findall(body or ""):
        if len(bits) == slots:
            out.setdefault(int(ap), bits)
    return out


def format_plan(plan: dict[int, str]) -> str:
    return " ".join(f"AP{ap}={bits}" for ap, bits in plan.items())


def partition_bits(rank: int, n: int, slots: int) -> str:
    return fallback_schedule(rank, n, slots).bitstring


# --------------------------------------------------------------------------
# heuristic


def heuristic_reflection(records, memoryless: bool = False) -> Reflection:
    """Strategy rule table over the agent's visible history.

    * no history: ConservativeTDMA
    * last round collided on an overlapped slot: ConservativeTDMA for one
      round (cooldown), so overlap is never proposed right after a collision
    * collisions on overlapped slots in two of the last three rounds:
      ConservativeTDMA
    * right after a cooldown: resume one level below the level that collided
    * two clean rounds at the current level (one when memoryless): escalate
    """
    if not records:
        return Reflection("ConservativeTDMA", "no history; start with disjoint slots", 0)
    last = records[-1]
    recent = records[-3:]
    n_coll = sum(r.overlap_collision for r in recent)
    if last.overlap_collision:
        slots = ",".join(str(s + 1) for s in last.overlap_collision_slots)
        return Reflection("ConservativeTDMA", f"overlapped slot(s) {slots} collided last round; step back to disjoint slots", 0, cooldown=True)
    if n_coll >= 2:
        return Reflection("ConservativeTDMA", f"collisions in {n_coll} of the last 3 rounds; stay with disjoint slots", 0)
    if len(records) >= 2 and last.cooldown and records[-2].overlap_collision:
        lvl = max(records[-2].level - 1, 0)
        return Reflection(LEVEL_TAGS[lvl], f"cooldown finished; resume one level below {LEVEL_TAGS[records[-2].level]}", lvl)
    need = 1 if memoryless else 2
    streak = 0
    for r in reversed(records):
        if r.level != last.level or r.any_collision:
            break
        streak += 1
    if streak >= need and last.level < 2:
        lvl = last.level + 1
        return Reflection(LEVEL_TAGS[lvl], f"{streak} clean round(s) at {LEVEL_TAGS[last.level]}; try more reuse", lvl)
    return Reflection(LEVEL_TAGS[last.level], f"keep {LEVEL_TAGS[last.level]}", last.level)


class HeuristicBackend:
    """Rule-based stand-in for the language model."""

    name = "heuristic"

    def reflect(self, agent: Agent, evaluation: Evaluation, retrieved=()) -> Reflection:
        return heuristic_reflection(agent.history(), agent.memoryless)

    def _probe_slot(self, agent: Agent, own: str) -> int | None:
        coll = [0] * len(own)
        for rec in agent.history():
            for s in rec.overlap_collision_slots:
                coll[s] += 1
        free = [s for s, b in enumerate(own) if b == "0"]
        if not free:
            return None
        return min(free, key=lambda s: (coll[s], s))

    def plan(self, agent: Agent, ctx: AgentContext, level: int) -> dict[int, str]:
        n, L = len(ctx.group), ctx.slots
        if level >= 2:
            return {ap: "1" * L for ap in ctx.group}
        plan = {ap: partition_bits(r, n, L) for r, ap in enumerate(ctx.group)}
        if level == 1:
            own = plan[agent.ap]
            s = self._probe_slot(agent, own)
            if s is not None:
                plan[agent.ap] = own[:s] + "1" + own[s + 1 :]
        return plan

    def selfish(self, agent: Agent, L: int) -> str:
        """Myopic rule with no peer information: keep transmitting, back off
        at random only where the last round collided."""
        rec = agent.last_record
        if rec is None:
            return "1" * L
        own = rec.results.get(agent.ap, "I" * L)
        return "".join("1" if own[s] != "C" or agent.rng.random() < 0.5 else "0" for s in range(L))

    def act(self, agent: Agent, ctx: AgentContext, evaluation, refl: Reflection, retrieved=()) -> AgentDecision:
        L = ctx.slots
        if not ctx.negotiation:
            return AgentDecision(TransmissionSchedule.from_bitstring(agent.ap, self.selfish(agent, L)), "", refl.text)
        if ctx.role is Role.SHARING:
            if refl.tag == "Hold":
                if agent.last_plan is not None:
                    return AgentDecision(agent.last_plan, agent.last_message, refl.text)
                plan = self.plan(agent, ctx, 0)
                tag = "Hold"
            else:
                plan = self.plan(agent, ctx, TAG_LEVELS[refl.tag])
                tag = refl.tag
            msg = f"{tag}: {format_plan(plan)}. {refl.text}".strip()
            return AgentDecision(TransmissionSchedule.from_bitstring(agent.ap, plan[agent.ap]), msg, refl.text)
        return self._shared(agent, ctx, refl)

    def _shared(self, agent: Agent, ctx: AgentContext, refl: Reflection) -> AgentDecision:
        L = ctx.slots
        rank = ctx.group.index(agent.ap)
        if refl.tag == "Hold" and agent.last_plan is not None:
            return AgentDecision(agent.last_plan, "", refl.text)
        body, declared = incoming_body(ctx)
        sugg = parse_suggestions(body, L).get(agent.ap)
        if sugg is not None:
            bits = list(sugg)
            collided = set()
            for rec in agent.history():
                own = rec.results.get(agent.ap, "")
                collided |= {s for s in rec.overlap_collision_slots if s < len(own) and own[s] == "C"}
            dropped = []
            for s in range(L):
                if bits[s] == "1" and declared is not None and declared[s] == "1" and s in collided:
                    bits[s] = "0"
                    dropped.append(s + 1)
            note = f"accepted proposal{'; dropped slot(s) ' + ','.join(map(str, dropped)) + ' after recent collisions' if dropped else ''}"
            return AgentDecision(TransmissionSchedule.from_bitstring(agent.ap, "".join(bits)), note, refl.text)
        if declared is not None:
            comp = "".join("0" if c == "1" else "1" for c in declared)
            return AgentDecision(TransmissionSchedule.from_bitstring(agent.ap, comp), "took the slots the sharing AP left free", refl.text)
        return AgentDecision(TransmissionSchedule.from_bitstring(agent.ap, partition_bits(rank, len(ctx.group), L)), "no proposal; rank partition", refl.text)


# --------------------------------------------------------------------------
# genie


def feasibility_table(scenario, group, tx_power_dbm=None) -> np.ndarray:
    """``feasible[mask]``: every transmitter in ``mask`` (bit r = group rank r)
    clears the capture threshold under unit-mean fading."""
    n = len(group)
    power = scenario.tx_power_dbm if tx_power_dbm is None else tx_power_dbm
    thr = scenario.channel.capture_threshold_db
    out = np.zeros(1 << n, dtype=np.bool_)
    out[0] = True
    for mask in range(1, 1 << n):
        active = [group[r] for r in range(n) if mask >> r & 1]
        sinr = channel.expected_sinr_db(active, scenario.large, power, scenario.channel.noise_floor_dbm)
        out[mask] = all(v >= thr for v in sinr.values())
    return out


def genie_plan(feasible: np.ndarray, n: int, L: int, exhaustive_limit: int = 15) -> np.ndarray:
    """Schedule matrix ``[rank, slot]`` maximizing transmitting slots, then
    the per-AP minimum. Exhaustive when n*L is small, greedy per slot otherwise."""
    if n * L <= exhaustive_limit:
        code = kernels.genie_search(np.ascontiguousarray(feasible), n, L)
        return kernels.decode_genie(code, n, L)
    sched = np.zeros((n, L), dtype=np.int8)
    masks = sorted(range(1 << n), key=lambda m: -bin(m).count("1"))
    for s in range(L):
        best, best_key = 0, None
        for m in masks:
            if not feasible[m]:
                continue
            counts = sched.sum(axis=1) + np.array([(m >> r) & 1 for r in range(n)])
            key = (bin(m).count("1"), int(counts.min()), -m)
            if best_key is None or key > best_key:
                best, best_key = m, key
        for r in range(n):
            sched[r, s] = (best >> r) & 1
    return sched


class GenieBackend:
    """Oracle with the logged large-scale gains; an upper bound, not an agent."""

    name = "genie"

    def __init__(self, scenario, exhaustive_limit: int = 15):
        self.scenario = scenario
        self.exhaustive_limit = exhaustive_limit
        self._cache: dict[tuple, np.ndarray] = {}

    def plan(self, group, slots: int) -> np.ndarray:
        key = (tuple(group), slots)
        if key not in self._cache:
            feas = feasibility_table(self.scenario, key[0])
            self._cache[key] = genie_plan(feas, len(key[0]), slots, self.exhaustive_limit)
        return self._cache[key]

    def reflect(self, agent, evaluation, retrieved=()) -> Reflection:
        return Reflection("Hold", "oracle plan", None)

    def act(self, agent, ctx: AgentContext, evaluation, refl, retrieved=()) -> AgentDecision:
        sched = self.plan(ctx.group, ctx.slots)
        rank = ctx.group.index(agent.ap)
        bits = "".join(str(int(b)) for b in sched[rank])
        msg = ""
        if ctx.role is Role.SHARING:
            msg = "genie: " + format_plan({ap: "".join(str(int(b)) for b in sched[r]) for r, ap in enumerate(ctx.group)})
        return AgentDecision(TransmissionSchedule.from_bitstring(agent.ap, bits), msg, refl.text)


# --------------------------------------------------------------------------
# scripted


class ScriptedBackend:
    """Replays a queue of decisions; bitstrings are accepted as shorthand."""

    name = "scripted"

    def __init__(self, decisions, repeat_last: bool = True):
        self._items = list(decisions)
        self.repeat_last = repeat_last
        self._i = 0

    def reflect(self, agent, evaluation, retrieved=()) -> Reflection:
        return Reflection("Hold", "scripted")

    def act(self, agent, ctx, evaluation, refl, retrieved=()) -> AgentDecision:
        if self._i >= len(self._items):
            if not (self.repeat_last and self._items):
                raise IndexError("scripted decisions exhausted")
            item = self._items[-1]
        else:
            item = self._items[self._i]
            self._i += 1
        if isinstance(item, AgentDecision):
            return AgentDecision(TransmissionSchedule(agent.ap, item.schedule.bits), item.message, item.reflection)
        return AgentDecision(TransmissionSchedule.from_bitstring(agent.ap, str(item), ctx.slots), "", "")


# --------------------------------------------------------------------------
# llm


class LlmBackend:
    """Prompted language model with parse retries and a safe fallback."""

    name = "llm"

    def __init__(self, client, model: str = "gpt-4o", temperature: float = 0.2, retries: int = 2, max_tokens: int = 600, prompt_budget: int = 6000):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        self.client = client
        self.model = model
        self.temperature = temperature
        self.retries = retries
        self.max_tokens = max_tokens
        self.prompt_budget = prompt_budget

    def reflect(self, agent, evaluation, retrieved=()) -> Reflection:
        # reflection happens inside the model call; the tag is read back in act
        return Reflection("Hold", "")

    def _context(self, agent: Agent, ctx: AgentContext, evaluation, retrieved) -> PromptContext:
        body, declared = incoming_body(ctx)
        tool = agent.get_transmission_outcome(evaluation.round) if evaluation.round is not None else ""
        return PromptContext(
            ap=agent.ap,
            role=ctx.role,
            round=ctx.round,
            group=ctx.group,
            slots=ctx.slots,
            incoming=body if ctx.role is Role.SHARED else None,
            declared=declared,
            evaluation=evaluation.text,
            stm=agent.stm.window,
            exemplars=list(retrieved),
            tool_output=tool,
            reflection=agent.reflection_enabled,
        )

    def _fallback(self, agent, ctx, reason: str) -> AgentDecision:
        rank = ctx.group.index(agent.ap)
        sched = fallback_schedule(rank, len(ctx.group), ctx.slots, agent.ap)
        msg = f"falling back to rank partition ({reason})"
        return AgentDecision(sched, msg if ctx.role is Role.SHARING else "", "", fallback=True, fallback_reason=reason)

    def act(self, agent, ctx: AgentContext, evaluation, refl, retrieved=()) -> AgentDecision:
        pctx = self._context(agent, ctx, evaluation, retrieved)
        reason = ""
        for _attempt in range(self.retries + 1):
            system, user = build_prompt(pctx, self.prompt_budget)
            req = ChatRequest(self.model, (("system", system), ("user", user)), self.temperature, self.max_tokens)
            try:
                raw = self.client.chat(req, agent=agent.ap, round_index=ctx.round)
            except GatewayError as exc:
                return self._fallback(agent, ctx, f"transport error: {exc}")
            try:
                dec = parse_decision(raw, ctx.slots, agent.ap)
            except ParseFailure as exc:
                reason = exc.reason
                pctx.retry_feedback = f"{exc.reason}. Answer again with one valid DECISION block."
                continue
            agent.last_tag = extract_tag(dec.reflection) if agent.reflection_enabled else "Hold"
            if not agent.reflection_enabled:
                dec = AgentDecision(dec.schedule, dec.message, "")
            return dec
        return self._fallback(agent, ctx, f"parse failure after {self.retries + 1} attempts: {reason}")


def make_backend(policy: str, scenario=None, client=None, **kw):
    if policy == "heuristic":
        return HeuristicBackend()
    if policy == "genie":
        if scenario is None:
            raise ValueError("genie backend needs the scenario")
        return GenieBackend(scenario)
    if policy == "llm":
        if client is None:
            raise ValueError("llm backend needs a chat client")
        return LlmBackend(client, **kw)
    if policy == "scripted":
        return ScriptedBackend(kw.get("decisions", ()))
    raise ValueError(f"unknown policy {policy!r}")


__all__ = [
    "HeuristicBackend",
    "GenieBackend",
    "ScriptedBackend",
    "LlmBackend",
    "heuristic_reflection",
    "feasibility_table",
    "genie_plan",
    "parse_suggestions",
    "make_backend",
]
