"""Domain types shared by the protocol engine and the agents."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class TransmissionSchedule:
    """Binary slot occupancy of one AP in one round; bitstring slot 1 is leftmost."""

    owner: int
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ScheduleError(f"schedule entries must be 0/1, got {self.bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bitstring(cls, owner: int, s: str, length: int | None = None) -> "TransmissionSchedule":
        s = s.strip()
        if any(c not in "01" for c in s):
            raise ScheduleError(f"bad alphabet in schedule {s!r}")
        if length is not None and len(s) != length:
            raise ScheduleError(f"bad length: schedule {s!r} has {len(s)} slots, expected {length}")
        return cls(owner, tuple(int(c) for c in s))

    @classmethod
    def zeros(cls, owner: int, length: int) -> "TransmissionSchedule":
        return cls(owner, (0,) * length)

    @property
    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def slots(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if b]


class SlotState(str, enum.Enum):
    IDLE = "Idle"
    SUCCESS = "Success"
    COLLISION = "CollisionLoss"

    @property
    def code(self) -> str:
        return {"Idle": "I", "Success": "S", "CollisionLoss": "C"}[self.value]

    @classmethod
    def from_code(cls, c: str) -> "SlotState":
        return {"I": cls.IDLE, "S": cls.SUCCESS, "C": cls.COLLISION}[c]


@dataclass(frozen=True)
class SlotResult:
    state: SlotState
    sinr_db: float | None = None

    def __post_init__(self):
        if (self.state is SlotState.IDLE) != (self.sinr_db is None):
            raise ValueError("sinr_db must be absent exactly for idle slots")


class MessageKind(str, enum.Enum):
    POLL = "Poll"
    ACK = "Ack"
    PROPOSAL = "Proposal"
    FEEDBACK = "Feedback"


MESSAGE_BODY_CAP = 1200


@dataclass(frozen=True)
class CoordinationMessage:
    sender: int
    round: int
    kind: MessageKind
    body: str
    declared_schedule: TransmissionSchedule | None = None

    def to_dict(self) -> dict:
        return {
            "sender": self.sender,
            "round": self.round,
            "kind": self.kind.value,
            "body": self.body,
            "declared": None if self.declared_schedule is None else self.declared_schedule.bitstring,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoordinationMessage":
        declared = d.get("declared")
        return cls(
            sender=int(d["sender"]),
            round=int(d["round"]),
            kind=MessageKind(d["kind"]),
            body=d.get("body", ""),
            declared_schedule=None if declared is None else TransmissionSchedule.from_bitstring(int(d["sender"]), declared),
        )


class Role(str, enum.Enum):
    SHARING = "Sharing"
    SHARED = "Shared"


@dataclass(frozen=True)
class AgentContext:
    role: Role
    round: int
    group: tuple[int, ...]
    slots: int
    incoming: CoordinationMessage | None = None
    negotiation: bool = True

    def __post_init__(self):
        if self.role is Role.SHARING and self.incoming is not None:
            raise ValueError("the sharing AP decides before any proposal exists")

    @property
    def rank_of(self) -> dict[int, int]:
        return {ap: i for i, ap in enumerate(self.group)}


@dataclass(frozen=True)
class AgentDecision:
    schedule: TransmissionSchedule
    message: str = ""
    reflection: str = ""
    fallback: bool = False
    fallback_reason: str = ""


@dataclass
class RoundOutcome:
    """Everything that happened in one negotiation round.

    ``aps`` lists the group in rank order (sharing AP first); ``per_ap`` maps
    each member to its L slot results.
    """

    round_index: int
    aps: tuple[int, ...]
    schedules: dict[int, TransmissionSchedule]
    per_ap: dict[int, tuple[SlotResult, ...]]
    scores: dict[int, float] = field(default_factory=dict)
    group_score: float = 0.0
    messages: list[CoordinationMessage] = field(default_factory=list)
    fallbacks: list[tuple[int, str]] = field(default_factory=list)
    fading: list | None = None
    events: list[tuple] = field(default_factory=list)

    @property
    def slots(self) -> int:
        return len(next(iter(self.per_ap.values())))

    def states(self, ap: int) -> tuple[SlotState, ...]:
        return tuple(r.state for r in self.per_ap[ap])

    def state_string(self, ap: int) -> str:
        return "".join(s.code for s in self.states(ap))

    def transmitters(self, slot: int) -> list[int]:
        return [ap for ap in self.aps if self.schedules[ap].bits[slot]]
