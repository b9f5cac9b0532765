"""OBSS deployments.

Scenario families are drawn by rejection sampling. Geometry alone does not
separate them once 5 dB shadowing is applied, so each candidate layout is
also checked against its own large-scale realization:

* Co-TDMA-favored: for every ordered AP pair, the victim's expected SINR
  with that single interferer is at least ``tdma_margin_db`` below the
  capture threshold (concurrency destroys both links).
* Co-SR-favored: with every AP transmitting, every link's expected SINR is
  at least ``sr_margin_db`` above the threshold (survives Nakagami fades).

Both families also require every AP to hear every other AP's poll.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import channel
from .channel import ChannelParams, LargeScaleRealization
from .rng import substream


class InfeasibleConfiguration(ValueError):
    """Placement constraints could not be met."""


class ScenarioKind(str, enum.Enum):
    CO_TDMA = "co-tdma"
    CO_SR = "co-sr"
    RANDOM = "random"

    @classmethod
    def parse(cls, value) -> "ScenarioKind":
        if isinstance(value, cls):
            return value
        aliases = {"cotdmafavored": "co-tdma", "cosrfavored": "co-sr", "tdma": "co-tdma", "sr": "co-sr"}
        v = str(value).strip().lower().replace("_", "-")
        v = aliases.get(v.replace("-", "").replace("_", ""), v)
        return cls(v)


@dataclass(frozen=True)
class NodePosition:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("coordinates must be finite")


def pairwise_distance(a: NodePosition, b: NodePosition) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class ScenarioBounds:
    arena_m: float = 50.0
    tdma_ap_distance: tuple[float, float] = (3.0, 10.0)
    sr_ap_distance: tuple[float, float] = (30.0, 40.0)
    random_min_separation: float = 1.0
    sta_distance: tuple[float, float] = (1.0, 3.0)
    tdma_margin_db: float = 3.0
    sr_margin_db: float = 25.0
    poll_threshold_dbm: float = -82.0
    max_attempts: int = 10_000

    def ap_distance(self, kind: ScenarioKind) -> tuple[float, float]:
        if kind is ScenarioKind.CO_TDMA:
            return self.tdma_ap_distance
        if kind is ScenarioKind.CO_SR:
            return self.sr_ap_distance
        return (self.random_min_separation, math.inf)


@dataclass
class TopologyScenario:
    bss_count: int
    ap_positions: tuple[NodePosition, ...]
    sta_positions: tuple[NodePosition, ...]
    tx_power_dbm: tuple[float, ...]
    scenario_kind: ScenarioKind
    seed: int
    large: LargeScaleRealization
    channel: ChannelParams = field(default_factory=ChannelParams)

    def __post_init__(self):
        k = self.bss_count
        if k < 1 or len(self.ap_positions) != k or len(self.sta_positions) != k or len(self.tx_power_dbm) != k:
            raise ValueError("inconsistent scenario sizes")
        if self.large.n != k:
            raise ValueError("large-scale realization does not match bss_count")

    @property
    def ap_xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.ap_positions])

    @property
    def sta_xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.sta_positions])

    def ap_distances(self) -> list[float]:
        return [pairwise_distance(a, b) for a, b in itertools.combinations(self.ap_positions, 2)]

    def sta_distances(self) -> list[float]:
        return [pairwise_distance(a, s) for a, s in zip(self.ap_positions, self.sta_positions)]

    def received_mw(self) -> np.ndarray:
        return channel.received_mw(self.large, self.tx_power_dbm)

    def ap_rx_dbm(self, tx_power_dbm=None) -> np.ndarray:
        """``[tx, rx]`` received power between APs, -inf on the diagonal."""
        p = np.asarray(self.tx_power_dbm if tx_power_dbm is None else tx_power_dbm, dtype=float)
        p = np.broadcast_to(p, (self.bss_count,))
        out = p[:, None] + self.large.ap_gain_db
        np.fill_diagonal(out, -np.inf)
        return out

    # --- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "bss_count": self.bss_count,
            "ap_positions": [[p.x, p.y] for p in self.ap_positions],
            "sta_positions": [[p.x, p.y] for p in self.sta_positions],
            "tx_power_dbm": list(self.tx_power_dbm),
            "scenario_kind": self.scenario_kind.value,
            "seed": self.seed,
            "gain_db": self.large.gain_db.tolist(),
            "ap_gain_db": self.large.ap_gain_db.tolist(),
            "channel": {
                "carrier_freq_ghz": self.channel.carrier_freq_ghz,
                "breakpoint_m": self.channel.breakpoint_m,
                "shadowing_sigma_db": self.channel.shadowing_sigma_db,
                "nakagami_m": self.channel.nakagami_m,
                "noise_floor_dbm": self.channel.noise_floor_dbm,
                "capture_threshold_db": self.channel.capture_threshold_db,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TopologyScenario":
        return cls(
            bss_count=int(d["bss_count"]),
            ap_positions=tuple(NodePosition(*p) for p in d["ap_positions"]),
            sta_positions=tuple(NodePosition(*p) for p in d["sta_positions"]),
            tx_power_dbm=tuple(float(p) for p in d["tx_power_dbm"]),
            scenario_kind=ScenarioKind.parse(d["scenario_kind"]),
            seed=int(d["seed"]),
            large=LargeScaleRealization(np.array(d["gain_db"]), np.array(d["ap_gain_db"])),
            channel=ChannelParams(**d.get("channel", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TopologyScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# placement


def _in_arena(p, arena: float) -> bool:
    return 0.0 <= p[0] <= arena and 0.0 <= p[1] <= arena


def _place_aps(rng: np.random.Generator, k: int, kind: ScenarioKind, b: ScenarioBounds):
    lo, hi = b.ap_distance(kind)
    aps = [rng.uniform(0.0, b.arena_m, 2)]
    for _ in range(1, k):
        if kind is ScenarioKind.RANDOM:
            cand = rng.uniform(0.0, b.arena_m, 2)
        else:
            anchor = aps[int(rng.integers(len(aps)))]
            r = rng.uniform(lo, hi)
            th = rng.uniform(0.0, 2 * math.pi)
            cand = anchor + r * np.array([math.cos(th), math.sin(th)])
        if not _in_arena(cand, b.arena_m):
            return None
        for p in aps:
            d = float(np.linalg.norm(cand - p))
            if d < lo or d > hi:
                return None
        aps.append(cand)
    return np.array(aps)


def _place_stas(rng: np.random.Generator, aps: np.ndarray, b: ScenarioBounds):
    lo, hi = b.sta_distance
    stas = []
    for ap in aps:
        r = rng.uniform(lo, hi)
        th = rng.uniform(0.0, 2 * math.pi)
        s = ap + r * np.array([math.cos(th), math.sin(th)])
        if not _in_arena(s, b.arena_m):
            return None
        stas.append(s)
    return np.array(stas)


def _expected_sinr_lin(rx_mw: np.ndarray, active, k: int, noise_mw: float) -> float:
    interf = sum(rx_mw[j, k] for j in active if j != k)
    return rx_mw[k, k] / (interf + noise_mw)


def classify_ok(kind: ScenarioKind, large: LargeScaleRealization, tx_power_dbm, params: ChannelParams, b: ScenarioBounds) -> bool:
    """Whether a realization qualifies for ``kind`` (always true for RANDOM)."""
    if kind is ScenarioKind.RANDOM:
        return True
    k = large.n
    p = np.broadcast_to(np.asarray(tx_power_dbm, dtype=float), (k,))
    ap_rx = p[:, None] + large.ap_gain_db
    for i, j in itertools.permutations(range(k), 2):
        if ap_rx[i, j] < b.poll_threshold_dbm:
            return False
    rx = channel.received_mw(large, p)
    noise = float(channel.dbm_to_mw(params.noise_floor_dbm))
    thr = params.capture_threshold_db
    if kind is ScenarioKind.CO_TDMA:
        limit = 10 ** ((thr - b.tdma_margin_db) / 10)
        return all(_expected_sinr_lin(rx, (i, j), j, noise) <= limit for i, j in itertools.permutations(range(k), 2))
    limit = 10 ** ((thr + b.sr_margin_db) / 10)
    everyone = tuple(range(k))
    return all(_expected_sinr_lin(rx, everyone, j, noise) >= limit for j in everyone)


def make_scenario(
    ap_positions,
    sta_positions,
    seed: int = 0,
    tx_power_dbm=20.0,
    params: ChannelParams | None = None,
    kind: ScenarioKind = ScenarioKind.RANDOM,
) -> TopologyScenario:
    """Scenario from explicit coordinates; shadowing is drawn from ``seed``."""
    params = params or ChannelParams()
    aps = np.asarray(ap_positions, dtype=float)
    stas = np.asarray(sta_positions, dtype=float)
    k = len(aps)
    large = channel.sample_large_scale(aps, stas, params, substream(seed, "shadowing", "manual", k))
    powers = tuple(float(x) for x in np.broadcast_to(np.asarray(tx_power_dbm, dtype=float), (k,)))
    return TopologyScenario(
        bss_count=k,
        ap_positions=tuple(NodePosition(float(x), float(y)) for x, y in aps),
        sta_positions=tuple(NodePosition(float(x), float(y)) for x, y in stas),
        tx_power_dbm=powers,
        scenario_kind=kind,
        seed=int(seed),
        large=large,
        channel=params,
    )


def generate_scenario(
    kind,
    k: int,
    seed: int,
    bounds: ScenarioBounds | None = None,
    params: ChannelParams | None = None,
    tx_power_dbm: float = 20.0,
) -> TopologyScenario:
    kind = ScenarioKind.parse(kind)
    bounds = bounds or ScenarioBounds()
    params = params or ChannelParams()
    if k < 2:
        raise InfeasibleConfiguration(f"need at least 2 BSSs, got K={k}")
    rng = substream(seed, "topology", kind.value, k)
    for _ in range(bounds.max_attempts):
        aps = _place_aps(rng, k, kind, bounds)
        if aps is None:
            continue
        stas = _place_stas(rng, aps, bounds)
        if stas is None:
            continue
        large = channel.sample_large_scale(aps, stas, params, rng)
        if not classify_ok(kind, large, tx_power_dbm, params, bounds):
            continue
        return TopologyScenario(
            bss_count=k,
            ap_positions=tuple(NodePosition(float(x), float(y)) for x, y in aps),
            sta_positions=tuple(NodePosition(float(x), float(y)) for x, y in stas),
            tx_power_dbm=(float(tx_power_dbm),) * k,
            scenario_kind=kind,
            seed=int(seed),
            large=large,
            channel=params,
        )
    raise InfeasibleConfiguration(
        f"no {kind.value} layout with K={k} after {bounds.max_attempts} attempts (seed={seed})"
    )


def generate_coexistence_scenario(seed: int, n_legacy: int = 2, params: ChannelParams | None = None,
                                  legacy_distance=(5.0, 15.0)) -> TopologyScenario:
    """Two Co-TDMA-favored agentic APs (indices 0, 1) plus ``n_legacy`` legacy APs.

    Legacy APs sit 5-15 m from the agentic pair's midpoint so that everyone
    shares one contention domain. Shadowing for the added links comes from a
    separate stream, so the agentic pair's realization is unchanged.
    """
    params = params or ChannelParams()
    base = generate_scenario(ScenarioKind.CO_TDMA, 2, seed, params=params)
    b = ScenarioBounds()
    rng = substream(seed, "coexistence", n_legacy)
    mid = base.ap_xy.mean(axis=0)
    for _ in range(b.max_attempts):
        aps = list(base.ap_xy)
        ok = True
        for _ in range(n_legacy):
            r = rng.uniform(*legacy_distance)
            th = rng.uniform(0.0, 2 * math.pi)
            cand = mid + r * np.array([math.cos(th), math.sin(th)])
            if not _in_arena(cand, b.arena_m) or min(np.linalg.norm(cand - p) for p in aps) < 3.0:
                ok = False
                break
            aps.append(cand)
        if not ok:
            continue
        aps = np.array(aps)
        extra = _place_stas(rng, aps[2:], b)
        if extra is None:
            continue
        stas = np.vstack([base.sta_xy, extra])
        k = len(aps)
        large = channel.sample_large_scale(aps, stas, params, rng)
        gain = large.gain_db.copy()
        gain[:2, :2] = base.large.gain_db
        ap_gain = large.ap_gain_db.copy()
        ap_gain[:2, :2] = base.large.ap_gain_db
        return TopologyScenario(
            bss_count=k,
            ap_positions=tuple(NodePosition(float(x), float(y)) for x, y in aps),
            sta_positions=tuple(NodePosition(float(x), float(y)) for x, y in stas),
            tx_power_dbm=(20.0,) * k,
            scenario_kind=ScenarioKind.CO_TDMA,
            seed=int(seed),
            large=LargeScaleRealization(gain, ap_gain),
            channel=params,
        )
    raise InfeasibleConfiguration("could not place legacy APs")
