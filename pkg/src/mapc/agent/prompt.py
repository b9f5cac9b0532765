"""Prompt assembly, decision-block grammar and outcome-tool rendering.

Decision block grammar (the model must emit exactly this, fenced)::

    ```
    DECISION
    schedule: 11010
    message: <single line>
    reflection: <single line>
    END
    ```
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from ..types import AgentDecision, Role, ScheduleError, SlotState, TransmissionSchedule

PROMPT_BUDGET = 6000

STRATEGY_TAGS = ("ConservativeTDMA", "HybridProbe", "FullSR", "Hold")

STATIC_CORE = """\
## Identity
You are the coordination agent of one Wi-Fi access point (AP) inside a multi-AP group.
The group shares one transmission opportunity split into {slots} equal data slots per round.

## Rules
- Your schedule is a bitstring of {slots} characters; character 1 is slot 1. 1 = transmit, 0 = stay silent.
- Two members transmitting in the same slot interfere. The slot succeeds for you only if your SINR clears the capture threshold.
- The sharing AP decides first and sends a proposal. Shared APs read it and choose their own schedule.
- You cannot see other APs' channels. Learn from outcomes and from peer messages.

## Scoring
Each round every member is scored: +1 per successful slot, -1 per collided slot,
and -0.5 for every slot in which no group member transmitted. The group score is the sum over members.
Maximize the group score over all rounds.

## Reasoning
First evaluate the last outcome. Then reflect on why it happened and pick one strategy tag:
ConservativeTDMA (disjoint slots), HybridProbe (share one extra slot), FullSR (everyone transmits everywhere), Hold (repeat last plan).
State the tag inside your reflection.

## Output format
End your answer with exactly one fenced block:
```
DECISION
schedule: <{slots} characters of 0/1>
message: <one line for your peers; the sharing AP writes proposed schedules as AP<i>=<bits>>
reflection: <one line including the strategy tag>
END
```

## Examples
Round after a collision on a shared slot, sharing AP of two:
```
DECISION
schedule: 11100
message: Back off to disjoint slots. AP0=11100 AP1=00011
reflection: slot 3 collided when both transmitted, tag ConservativeTDMA
END
```
Round after two clean disjoint rounds, sharing AP of two:
```
DECISION
schedule: 11111
message: Channel looks clean, try full reuse. AP0=11111 AP1=11111
reflection: no collisions and strong SINR margins, tag FullSR
END
```
"""


class ParseFailure(ValueError):
    """Raised when model output holds no valid decision block."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


_BLOCK = re.compile(r"^[ \t]*DECISION[ \t]*\r?\n(.*?)^[ \t]*END[ \t]*$", re.MULTILINE | re.DOTALL)
_FIELD = re.compile(r"^[ \t]*(schedule|message|reflection)[ \t]*:[ \t]?(.*?)[ \t]*$", re.MULTILINE)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def render_decision(dec: AgentDecision) -> str:
    return (
        "```\nDECISION\n"
        f"schedule: {dec.schedule.bitstring}\n"
        f"message: {_one_line(dec.message)}\n"
        f"reflection: {_one_line(dec.reflection)}\n"
        "END\n```"
    )


def parse_decision(raw: str, slots: int, owner: int = -1) -> AgentDecision:
    """Extract the last decision block from model output."""
    blocks = _BLOCK.findall(raw or "")
    if not blocks:
        raise ParseFailure("missing block: no DECISION ... END block found")
    body = blocks[-1]
    fields = {}
    for name, value in _FIELD.findall(body):
        fields.setdefault(name, value)
    missing = [f for f in ("schedule", "message", "reflection") if f not in fields]
    if missing:
        raise ParseFailure(f"missing field(s): {', '.join(missing)}")
    bits = fields["schedule"].strip()
    if any(c not in "01" for c in bits):
        raise ParseFailure(f"bad alphabet: schedule {bits!r} must contain only 0 and 1")
    if len(bits) != slots:
        raise ParseFailure(f"bad length: schedule {bits!r} has {len(bits)} characters, expected {slots}")
    try:
        sched = TransmissionSchedule.from_bitstring(owner, bits, slots)
    except ScheduleError as exc:  # pragma: no cover - guarded above
        raise ParseFailure(str(exc)) from exc
    return AgentDecision(sched, fields["message"], fields["reflection"])


def extract_tag(text: str) -> str:
    """First strategy tag named in ``text``; Hold when none is present."""
    best = None
    for tag in STRATEGY_TAGS:
        m = re.search(rf"\b{tag}\b", text or "", re.IGNORECASE)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), tag)
    return best[1] if best else "Hold"


# --------------------------------------------------------------------------
# outcome tool

STATE_WORDS = {SlotState.SUCCESS: "SUCCESS", SlotState.COLLISION: "COLLISION", SlotState.IDLE: "IDLE"}
NO_OUTCOME = "no outcome available"


def render_outcome_table(round_index: int, rows: dict) -> str:
    """Fixed-grammar table; ``rows`` maps AP -> sequence of SlotResult."""
    lines = [f"transmission outcome, round {round_index}", "ap | slot | state | sinr_db"]
    for ap in sorted(rows):
        for s, res in enumerate(rows[ap]):
            sinr = "-" if res.sinr_db is None else f"{res.sinr_db:.2f}"
            lines.append(f"AP{ap} | slot{s + 1} | {STATE_WORDS[res.state]} | {sinr}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# situations and prompts


def render_situation(group_size: int, self_rank: int, records: Sequence) -> str:
    """Canonical situation text used for embeddings and few-shot blocks.

    Peers are named by group rank relative to the agent, so the same pattern
    reads the same in any group. Only the last three records count.
    """
    lines = [f"group size {group_size}; self rank {self_rank}"]
    recent = list(records)[-3:]
    if not recent:
        lines.append("no history")
    for age, rec in enumerate(reversed(recent), start=1):
        parts = [f"{age} rounds ago"]
        for rank, ap in enumerate(rec.group):
            who = "self" if rank == self_rank else f"peer{rank}"
            sched = rec.schedules.get(ap)
            res = rec.results.get(ap)
            if sched is None:
                continue
            txt = f"{who} schedule {sched}"
            if res is not None:
                coll = [str(i + 1) for i, c in enumerate(res) if c == "C"]
                txt += f" outcome {res} collisions {' '.join(coll) if coll else 'none'}"
            parts.append(txt)
        parts.append(f"group score {rec.group_score:g}")
        lines.append("; ".join(parts))
    return "\n".join(lines)


def render_stm_entry(rec) -> str:
    rows = []
    for ap in rec.group:
        if ap in rec.schedules:
            res = rec.results.get(ap, "?" * len(rec.schedules[ap]))
            rows.append(f"AP{ap} {rec.schedules[ap]} -> {res}")
    msgs = " | ".join(m for m in rec.messages if m)
    line = f"round {rec.round} ({rec.role}): " + ", ".join(rows) + f"; score {rec.score:g}, group {rec.group_score:g}"
    if msgs:
        line += f"; messages: {msgs}"
    return line


@dataclass
class PromptContext:
    ap: int
    role: Role
    round: int
    group: tuple[int, ...]
    slots: int
    incoming: str | None = None
    declared: str | None = None
    evaluation: str = ""
    stm: list = field(default_factory=list)
    exemplars: list = field(default_factory=list)  # (Exemplar, similarity) in rank order
    tool_output: str = ""
    retry_feedback: str = ""
    reflection: bool = True


def _dynamic(ctx: PromptContext, stm: list, exemplars: list) -> str:
    out = ["## Situation", f"You are AP{ctx.ap}, role {ctx.role.value}, round {ctx.round}.", f"Group (rank order): {', '.join(f'AP{a}' for a in ctx.group)}."]
    if ctx.role is Role.SHARED:
        if ctx.incoming is not None:
            out.append(f"Proposal from sharing AP: {ctx.incoming or '(empty)'}")
        if ctx.declared is not None:
            out.append(f"Sharing AP declared schedule: {ctx.declared}")
    out += ["", "## Evaluation", ctx.evaluation or "no history"]
    if stm:
        out += ["", "## Recent rounds"] + [render_stm_entry(r) for r in stm]
    if ctx.tool_output:
        out += ["", "## Tool get_transmission_outcome", ctx.tool_output]
    for i, (ex, sim) in enumerate(exemplars, start=1):
        out += [
            "",
            f"## Retrieved example {i} (similarity {sim:.3f}, score {ex.score:g})",
            ex.situation,
            "```",
            "DECISION",
            f"schedule: {ex.schedule}",
            f"message: {_one_line(ex.message)}",
            f"reflection: {_one_line(ex.reflection)}",
            "END",
            "```",
        ]
    if ctx.retry_feedback:
        out += ["", "## Previous answer rejected", ctx.retry_feedback]
    out += ["", "Now evaluate, reflect and answer with the DECISION block."]
    return "\n".join(out)


def static_core(slots: int, reflection: bool = True) -> str:
    text = STATIC_CORE.format(slots=slots)
    if not reflection:
        head, rest = text.split("## Reasoning\n", 1)
        text = head + "## Reasoning\nDecide directly from the evaluation. Leave the reflection field empty.\n\n" + rest.split("\n\n", 1)[1]
    return text


def build_prompt(ctx: PromptContext, budget: int = PROMPT_BUDGET) -> tuple[str, str]:
    """Return (system, user) texts within ``budget`` characters combined.

    Over budget, the oldest history entries go first, then the lowest-ranked
    retrieved examples.
    """
    system = static_core(ctx.slots, ctx.reflection)
    stm = list(ctx.stm)
    exemplars = list(ctx.exemplars)
    user = _dynamic(ctx, stm, exemplars)
    while len(system) + len(user) > budget and (stm or exemplars):
        if stm:
            stm.pop(0)
        else:
            exemplars.pop()
        user = _dynamic(ctx, stm, exemplars)
    return system, user


def count_fewshot_blocks(prompt_user: str) -> int:
    return len(re.findall(r"^## Retrieved example \d+", prompt_user, re.MULTILINE))
