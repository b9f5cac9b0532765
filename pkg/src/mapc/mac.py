"""Channel contention, legacy CSMA/CA traffic and the OBSS/PD baseline."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import channel, kernels
from .rng import substream
from .topology import TopologyScenario


class MacDomainError(ValueError):
    pass


class ContentionDiverged(RuntimeError):
    """Contention hit the redraw cap without a unique winner."""


def _is_pow2_minus1(v: int) -> bool:
    return v >= 1 and ((v + 1) & v) == 0


@dataclass(frozen=True)
class MacParams:
    slot_time_us: int = 9
    difs_us: int = 34
    cw_min: int = 15
    cw_max: int = 1023
    cca_threshold_dbm: float = -82.0
    obss_pd_threshold_dbm: float = -82.0
    txop_duration_us: int = 400
    packet_time_us: int = 400
    max_redraws: int = 64

    def __post_init__(self):
        if self.cw_min > self.cw_max:
            raise MacDomainError("cw_min must not exceed cw_max")
        if not (_is_pow2_minus1(self.cw_min) and _is_pow2_minus1(self.cw_max)):
            raise MacDomainError("contention windows must be of the form 2^n - 1")
        if self.cca_threshold_dbm > 0 or self.obss_pd_threshold_dbm > 0:
            raise MacDomainError("thresholds must be <= 0 dBm")


@dataclass(frozen=True)
class ContentionResult:
    winner: int | None
    backoff_slots_elapsed: int
    collided: bool
    tie_rounds: int = 0

    def __post_init__(self):
        if (self.winner is None) != self.collided:
            raise ValueError("winner must be set iff the attempt did not collide")


def contend_once(draws: dict[int, int]) -> ContentionResult:
    """Resolve one set of backoff draws."""
    low = min(draws.values())
    at_min = [ap for ap, v in draws.items() if v == low]
    if len(at_min) == 1:
        return ContentionResult(at_min[0], low, False)
    return ContentionResult(None, low, True)


def contend(aps, rng, params: MacParams | None = None) -> ContentionResult:
    """Elect the TXOP holder by binary exponential backoff.

    Every contender draws uniformly on [0, CW]. Tied minima collide: the
    colliders double CW and redraw while the others keep their residual
    counters. Repeats until one AP is alone at the minimum. ``rng`` only
    needs an ``integers(low, high)`` method.
    """
    params = params or MacParams()
    aps = sorted(set(int(a) for a in aps))
    if not aps:
        raise MacDomainError("contention needs at least one AP")
    cw = {a: params.cw_min for a in aps}
    counters = {a: int(rng.integers(0, cw[a] + 1)) for a in aps}
    elapsed = 0
    for tie_round in range(params.max_redraws):
        res = contend_once(counters)
        elapsed += res.backoff_slots_elapsed
        if not res.collided:
            return ContentionResult(res.winner, elapsed, False, tie_round)
        low = res.backoff_slots_elapsed
        for a in aps:
            if counters[a] == low:
                cw[a] = min(2 * cw[a] + 1, params.cw_max)
                counters[a] = int(rng.integers(0, cw[a] + 1))
            else:
                counters[a] -= low
    raise ContentionDiverged(f"no unique winner after {params.max_redraws} redraw rounds")


# ---------------------------------------------------------------------------
# CSMA/CA timeline


@dataclass
class AirtimeLedger:
    horizon_us: int
    success_us: np.ndarray
    fail_us: np.ndarray
    n_tx: np.ndarray
    grant_time_us: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    grant_ap: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    grant_members: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    grant_ok: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def normalized(self, aps=None) -> np.ndarray:
        v = self.success_us / self.horizon_us
        return v if aps is None else v[list(aps)]

    def success_rate(self, ap: int) -> float:
        total = self.success_us[ap] + self.fail_us[ap]
        return float(self.success_us[ap] / total) if total else float("nan")

    def same_as(self, other: "AirtimeLedger") -> bool:
        return (
            self.horizon_us == other.horizon_us
            and np.array_equal(self.success_us, other.success_us)
            and np.array_equal(self.fail_us, other.fail_us)
            and np.array_equal(self.n_tx, other.n_tx)
            and np.array_equal(self.grant_time_us, other.grant_time_us)
        )


def _random_arrays(seed: int, k: int, n_pkts: int, m: float):
    u = np.empty((k, n_pkts + 2))
    fade = np.empty((k, n_pkts + 1, k))
    for ap in range(k):
        rng = substream(seed, "csma", ap)
        u[ap] = rng.random(n_pkts + 2)
        fade[ap] = channel.sample_nakagami_power(rng, m, (n_pkts + 1, k))
    return u, fade


def simulate_csma(
    scenario: TopologyScenario,
    seed: int,
    horizon_us: int = 1_000_000,
    params: MacParams | None = None,
    tx_power_dbm=None,
    sense_threshold_dbm=None,
    agentic=(),
    group_mask=None,
    active=None,
) -> AirtimeLedger:
    """Run the saturated CSMA/CA timeline for every AP in ``active``.

    APs outside ``active`` never transmit. ``sense_threshold_dbm`` (scalar or
    per AP) defaults to the CCA threshold. Random draws are keyed by
    ``(seed, ap)``, so paired runs share per-AP randomness.
    """
    params = params or MacParams()
    k = scenario.bss_count
    active = set(range(k)) if active is None else set(int(a) for a in active)
    power = np.broadcast_to(
        np.asarray(scenario.tx_power_dbm if tx_power_dbm is None else tx_power_dbm, dtype=float), (k,)
    ).copy()
    thr = params.cca_threshold_dbm if sense_threshold_dbm is None else sense_threshold_dbm
    thr = np.broadcast_to(np.asarray(thr, dtype=float), (k,))
    ap_rx = scenario.ap_rx_dbm(power)  # [tx, rx]
    sense = (ap_rx.T >= thr[:, None])  # sense[i, j]: i hears j
    np.fill_diagonal(sense, False)
    rx_mw = channel.received_mw(scenario.large, power)
    noise_mw = float(channel.dbm_to_mw(scenario.channel.noise_floor_dbm))
    thr_lin = float(10 ** (scenario.channel.capture_threshold_db / 10))
    agentic_mask = np.zeros(k, dtype=np.bool_)
    agentic_mask[list(agentic)] = True
    group = np.zeros((k, k), dtype=np.bool_) if group_mask is None else np.asarray(group_mask, dtype=np.bool_)
    tx_dur = np.where(agentic_mask, params.txop_duration_us, params.packet_time_us).astype(np.int64)
    n_pkts = int(horizon_us // (int(tx_dur.min()) + params.difs_us)) + 2
    u, fade = _random_arrays(seed, k, n_pkts, scenario.channel.nakagami_m)
    silent_idx = [i for i in range(k) if i not in active]
    if silent_idx:
        # isolate silent APs: they neither transmit nor are heard
        keep = sorted(active)
        sub = {
            "tx_dur": tx_dur[keep],
            "sense": sense[np.ix_(keep, keep)],
            "rx_mw": rx_mw[np.ix_(keep, keep)],
            "agentic": agentic_mask[keep],
            "group": group[np.ix_(keep, keep)],
            "u": u[keep],
            "fade": fade[keep][:, :, keep],
        }
    else:
        keep = list(range(k))
        sub = {"tx_dur": tx_dur, "sense": sense, "rx_mw": rx_mw, "agentic": agentic_mask, "group": group, "u": u, "fade": fade}
    succ, fail, ntx, gt, ga, gm, gok = kernels.csma_run(
        np.int64(horizon_us),
        np.ascontiguousarray(sub["tx_dur"]),
        np.int64(params.difs_us),
        np.int64(params.slot_time_us),
        np.int64(params.cw_min),
        np.int64(params.cw_max),
        np.ascontiguousarray(sub["sense"]),
        np.ascontiguousarray(sub["rx_mw"]),
        noise_mw,
        thr_lin,
        np.ascontiguousarray(sub["agentic"]),
        np.ascontiguousarray(sub["group"]),
        np.ascontiguousarray(sub["u"]),
        np.ascontiguousarray(sub["fade"]),
    )
    full = lambda v: _scatter(v, keep, k)  # noqa: E731
    members = np.zeros((len(gt), k), dtype=bool)
    if len(gt):
        members[:, keep] = gm
    return AirtimeLedger(
        horizon_us=int(horizon_us),
        success_us=full(succ),
        fail_us=full(fail),
        n_tx=full(ntx),
        grant_time_us=np.asarray(gt),
        grant_ap=np.asarray([keep[a] for a in ga], dtype=np.int64),
        grant_members=members,
        grant_ok=np.asarray(gok),
    )


def _scatter(v, keep, k):
    out = np.zeros(k, dtype=np.asarray(v).dtype)
    out[keep] = v
    return out


def run_legacy_traffic(
    scenario: TopologyScenario,
    legacy_aps,
    agentic_aps=(),
    seed: int = 0,
    horizon_us: int = 1_000_000,
    params: MacParams | None = None,
) -> AirtimeLedger:
    """Legacy APs contend with (optional) agentic APs under plain CSMA/CA.

    An agentic win opens a TXOP of ``txop_duration_us`` for the winner and
    every agentic AP within poll reach; the grants are returned on the
    ledger for the caller to fill with negotiation rounds.
    """
    params = params or MacParams()
    legacy_aps = [int(a) for a in legacy_aps]
    agentic_aps = [int(a) for a in agentic_aps]
    if set(legacy_aps) & set(agentic_aps):
        raise MacDomainError("an AP cannot be both legacy and agentic")
    k = scenario.bss_count
    group = np.zeros((k, k), dtype=bool)
    ap_rx = scenario.ap_rx_dbm()
    for i in agentic_aps:
        for j in agentic_aps:
            if i != j and ap_rx[i, j] >= params.cca_threshold_dbm:
                group[i, j] = True
    return simulate_csma(
        scenario,
        seed,
        horizon_us=horizon_us,
        params=params,
        agentic=agentic_aps,
        group_mask=group,
        active=legacy_aps + agentic_aps,
    )


# ---------------------------------------------------------------------------
# OBSS/PD spatial reuse


OBSS_PD_MIN_DBM = -82.0
OBSS_PD_MAX_DBM = -62.0
OBSS_PD_REF_POWER_DBM = 20.0


@dataclass(frozen=True)
class ObssPdGrid:
    thresholds_dbm: tuple[float, ...] = (-82.0, -78.0, -74.0, -70.0, -66.0, -62.0)
    tx_powers_dbm: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)

    def points(self):
        return list(itertools.product(self.thresholds_dbm, self.tx_powers_dbm))

    def __len__(self):
        return len(self.thresholds_dbm) * len(self.tx_powers_dbm)


def obss_pd_allowed_power(obss_pd_dbm: float, ref_power_dbm: float = OBSS_PD_REF_POWER_DBM) -> float:
    """Transmit power cap tied to the OBSS/PD level (linear rule)."""
    return ref_power_dbm - (obss_pd_dbm - OBSS_PD_MIN_DBM)


def run_obss_pd_baseline(
    scenario: TopologyScenario,
    obss_pd_dbm: float,
    tx_power_dbm: float,
    seed: int = 0,
    horizon_us: int = 1_000_000,
    params: MacParams | None = None,
) -> float:
    """Normalized throughput of all APs running OBSS/PD spatial reuse.

    Every AP ignores OBSS frames received below ``obss_pd_dbm`` and transmits
    at ``min(tx_power_dbm, allowed(obss_pd_dbm))``. At -82 dBm and 20 dBm this
    is plain CSMA/CA.
    """
    if not (OBSS_PD_MIN_DBM <= obss_pd_dbm <= OBSS_PD_MAX_DBM):
        raise MacDomainError(f"OBSS/PD level {obss_pd_dbm} dBm outside [{OBSS_PD_MIN_DBM}, {OBSS_PD_MAX_DBM}]")
    power = min(float(tx_power_dbm), obss_pd_allowed_power(obss_pd_dbm))
    ledger = simulate_csma(
        scenario,
        seed,
        horizon_us=horizon_us,
        params=params,
        tx_power_dbm=power,
        sense_threshold_dbm=max(obss_pd_dbm, (params or MacParams()).cca_threshold_dbm),
    )
    return float(ledger.normalized().sum())


def run_csma_baseline(scenario: TopologyScenario, seed: int = 0, horizon_us: int = 1_000_000,
                      params: MacParams | None = None) -> float:
    """Legacy CSMA/CA: CCA at -82 dBm, 20 dBm transmit power."""
    return run_obss_pd_baseline(scenario, OBSS_PD_MIN_DBM, OBSS_PD_REF_POWER_DBM, seed, horizon_us, params)


@dataclass(frozen=True)
class SweepResult:
    best_threshold_dbm: float
    best_tx_power_dbm: float
    best_throughput: float
    rows: tuple[tuple[float, float, float], ...]


def sweep_obss_pd(scenario, grid: ObssPdGrid | None = None, seed: int = 0, horizon_us: int = 1_000_000,
                  params: MacParams | None = None, evaluate=None) -> SweepResult:
    """Exhaustive sweep; ties go to lower power, then lower threshold.

    ``evaluate(threshold, power)`` replaces the simulation when given.
    """
    grid = ObssPdGrid() if grid is None else grid
    points = grid.points()
    if not points:
        raise MacDomainError("empty OBSS/PD grid")
    if evaluate is None:
        def evaluate(th, pw):
            return run_obss_pd_baseline(scenario, th, pw, seed, horizon_us, params)
    rows = tuple((float(th), float(pw), float(evaluate(th, pw))) for th, pw in points)
    best = min(rows, key=lambda r: (-r[2], r[1], r[0]))
    return SweepResult(best[0], best[1], best[2], rows)
