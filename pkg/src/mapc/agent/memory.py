"""Short-term sliding window and long-term exemplar store."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


KB_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RoundRecord:
    """What one agent knows about one past round.

    ``schedules`` and ``results`` hold only the rows visible to the agent;
    ``level`` and ``cooldown`` are the agent's own strategy bookkeeping.
    """

    round: int
    role: str
    group: tuple[int, ...]
    schedules: dict
    results: dict
    score: float
    group_score: float
    messages: tuple[str, ...] = ()
    level: int = 0
    cooldown: bool = False
    overlap_collision: bool = False
    overlap_collision_slots: tuple[int, ...] = ()
    any_collision: bool = False


class ShortTermMemory:
    def __init__(self, capacity: int = 5):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._window: deque = deque(maxlen=capacity)

    def push(self, record) -> "ShortTermMemory":
        if self.capacity:
            self._window.append(record)
        return self

    @property
    def window(self) -> list:
        return list(self._window)

    def __len__(self):
        return len(self._window)

    def clear(self):
        self._window.clear()


def stm_push(stm: ShortTermMemory, record) -> ShortTermMemory:
    return stm.push(record)


@dataclass
class Exemplar:
    situation: str
    schedule: str
    message: str
    score: float
    reflection: str
    embedding: np.ndarray
    seq: int = -1

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=float)
        if not math.isfinite(self.score):
            raise ValueError("exemplar score must be finite")
        n = float(np.linalg.norm(self.embedding))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"exemplar embedding must be unit norm, got {n}")

    def to_dict(self) -> dict:
        return {
            "situation": self.situation,
            "schedule": self.schedule,
            "message": self.message,
            "score": self.score,
            "reflection": self.reflection,
            "embedding": [float(x) for x in self.embedding],
        }


@dataclass(frozen=True)
class UpdateDecision:
    branch: str  # inserted-new | inserted-evict | inserted-cluster | replaced-cluster | discarded
    inserted: bool
    removed_seq: int | None = None
    cluster: tuple[int, ...] = ()


@dataclass
class KnowledgeBase:
    capacity: int = 10
    threshold: float = 0.85
    exemplars: list[Exemplar] = field(default_factory=list)
    _next_seq: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        for ex in self.exemplars:
            self._stamp(ex)

    def _stamp(self, ex: Exemplar) -> Exemplar:
        ex.seq = self._next_seq
        self._next_seq += 1
        return ex

    def __len__(self):
        return len(self.exemplars)

    def similarities(self, query) -> np.ndarray:
        """Cosine of ``query`` against every stored embedding (all unit norm)."""
        if not self.exemplars:
            return np.zeros(0)
        q = query.values if hasattr(query, "values") else np.asarray(query, dtype=float)
        E = np.stack([ex.embedding for ex in self.exemplars])
        if E.shape[1] != q.shape[0]:
            raise ValueError(f"dimension mismatch: {E.shape[1]} vs {q.shape[0]}")
        return np.clip(E @ (q / np.linalg.norm(q)), -1.0, 1.0)

    def retrieve(self, query, k: int = 3) -> list[tuple[Exemplar, float]]:
        """Top-k by cosine; ties go to the higher score, then the older entry."""
        if k < 1:
            raise ValueError("k must be >= 1")
        sims = self.similarities(query)
        scored = [(ex, float(s)) for ex, s in zip(self.exemplars, sims)]
        scored.sort(key=lambda p: (-p[1], -p[0].score, p[0].seq))
        return scored[:k]

    def update(self, cand: Exemplar) -> UpdateDecision:
        sims = self.similarities(cand.embedding)
        cluster = [i for i, s in enumerate(sims) if s >= self.threshold]
        cseq = tuple(self.exemplars[i].seq for i in cluster)
        full = len(self.exemplars) >= self.capacity
        if not cluster:
            if not full:
                self.exemplars.append(self._stamp(cand))
                return UpdateDecision("inserted-new", True)
            j = min(range(len(self.exemplars)), key=lambda i: (self.exemplars[i].score, self.exemplars[i].seq))
            old = self.exemplars[j].seq
            self.exemplars[j] = self._stamp(cand)
            return UpdateDecision("inserted-evict", True, old)
        j = min(cluster, key=lambda i: (self.exemplars[i].score, self.exemplars[i].seq))
        if not cand.score > self.exemplars[j].score:
            return UpdateDecision("discarded", False, None, cseq)
        if not full:
            self.exemplars.append(self._stamp(cand))
            return UpdateDecision("inserted-cluster", True, None, cseq)
        old = self.exemplars[j].seq
        self.exemplars[j] = self._stamp(cand)
        return UpdateDecision("replaced-cluster", True, old, cseq)

    # persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": KB_FORMAT_VERSION,
            "capacity": self.capacity,
            "threshold": self.threshold,
            "exemplars": [ex.to_dict() for ex in self.exemplars],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeBase":
        if d.get("version") != KB_FORMAT_VERSION:
            raise ValueError(f"unsupported knowledge base version {d.get('version')!r}")
        exs = [Exemplar(**e) for e in d["exemplars"]]
        return cls(capacity=int(d["capacity"]), threshold=float(d["threshold"]), exemplars=exs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        return cls.from_dict(json.loads(Path(path).read_text()))


def ltm_retrieve(kb: KnowledgeBase, query, k: int = 3):
    return kb.retrieve(query, k)


def ltm_update(kb: KnowledgeBase, candidate: Exemplar) -> UpdateDecision:
    return kb.update(candidate)


def load_seed_exemplars(embedder, path=None) -> list[Exemplar]:
    """Hand-written starting exemplars, embedded with ``embedder``."""
    if path is None:
        path = Path(__file__).with_name("data") / "seed_exemplars.json"
    raw = json.loads(Path(path).read_text())
    out = []
    for e in raw["exemplars"]:
        vec = embedder.embed(e["situation"]).values
        out.append(Exemplar(e["situation"], e["schedule"], e["message"], float(e["score"]), e["reflection"], vec))
    return out
