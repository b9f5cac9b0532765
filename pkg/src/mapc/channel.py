"""Propagation, SINR and packet success.

Large-scale gain is the TGax residential path loss (single floor, no walls)
plus log-normal shadowing, drawn once per run. Small-scale fading is
Nakagami-m with unit mean power, redrawn every slot (one slot = one packet).
All interference sums happen in the linear domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class ChannelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    carrier_freq_ghz: float = 5.0
    breakpoint_m: float = 5.0
    shadowing_sigma_db: float = 5.0
    nakagami_m: float = 1.5
    noise_floor_dbm: float = -94.0
    capture_threshold_db: float = 10.0

    def __post_init__(self):
        if not self.nakagami_m > 0.5:
            raise ChannelDomainError(f"nakagami_m must exceed 0.5, got {self.nakagami_m}")
        if self.shadowing_sigma_db < 0:
            raise ChannelDomainError("shadowing_sigma_db must be >= 0")
        if np.isnan(self.capture_threshold_db) or self.capture_threshold_db == np.inf:
            raise ChannelDomainError("capture_threshold_db must be finite or -inf")
        if self.carrier_freq_ghz <= 0 or self.breakpoint_m <= 0:
            raise ChannelDomainError("carrier frequency and breakpoint must be positive")


@dataclass(frozen=True)
class LargeScaleRealization:
    """Frozen per-run gains.

    ``gain_db[i, j]`` is path loss plus shadowing from AP ``i`` to the STA of
    AP ``j`` (negative dB). ``ap_gain_db[i, j]`` is the AP-to-AP gain used for
    carrier sensing and polling; it is symmetric with a zero diagonal.
    """

    gain_db: np.ndarray
    ap_gain_db: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gain_db, dtype=float)
        a = np.asarray(self.ap_gain_db, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or a.shape != g.shape:
            raise ChannelDomainError("gain matrices must be square and of equal shape")
        if not np.all(np.isfinite(g)) or np.any(g >= 0):
            raise ChannelDomainError("AP-STA gains must be finite and negative")
        object.__setattr__(self, "gain_db", g)
        object.__setattr__(self, "ap_gain_db", a)

    @property
    def n(self) -> int:
        return self.gain_db.shape[0]


def dbm_to_mw(dbm):
    return np.power(10.0, np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(np.asarray(mw, dtype=float))


def path_loss_db(distance, params: ChannelParams | None = None):
    """Residential path loss in dB; accepts scalars or arrays."""
    params = params or ChannelParams()
    d = np.asarray(distance, dtype=float)
    if np.any(~(d > 0)):
        raise ChannelDomainError("distance must be > 0")
    dbp = params.breakpoint_m
    pl = (
        40.05
        + 20.0 * np.log10(params.carrier_freq_ghz / 2.4)
        + 20.0 * np.log10(np.minimum(d, dbp))
        + np.where(d > dbp, 35.0 * np.log10(np.maximum(d, dbp) / dbp), 0.0)
    )
    return float(pl) if pl.ndim == 0 else pl


def sample_shadowing(rng: np.random.Generator, sigma_db: float, size=None):
    if sigma_db < 0:
        raise ChannelDomainError("sigma must be >= 0")
    if sigma_db == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, sigma_db, size)


def sample_nakagami_power(rng: np.random.Generator, m: float, size=None):
    """Power gain |h|^2 ~ Gamma(m, 1/m): unit mean, variance 1/m."""
    if not m > 0.5:
        raise ChannelDomainError(f"nakagami m must exceed 0.5, got {m}")
    return rng.gamma(m, 1.0 / m, size)


def sample_slot_fading(rng: np.random.Generator, n_aps: int, n_slots: int, m: float) -> np.ndarray:
    """Fading array ``[slot, tx_ap, rx_sta]``, independent per slot and link."""
    return sample_nakagami_power(rng, m, (n_slots, n_aps, n_aps))


def sample_large_scale(ap_xy, sta_xy, params: ChannelParams, rng: np.random.Generator) -> LargeScaleRealization:
    ap_xy = np.asarray(ap_xy, dtype=float)
    sta_xy = np.asarray(sta_xy, dtype=float)
    k = len(ap_xy)
    d = np.linalg.norm(ap_xy[:, None, :] - sta_xy[None, :, :], axis=-1)
    gain = -path_loss_db(d, params) + sample_shadowing(rng, params.shadowing_sigma_db, (k, k))
    ap_gain = np.zeros((k, k))
    iu = np.triu_indices(k, 1)
    if len(iu[0]):
        dap = np.linalg.norm(ap_xy[iu[0]] - ap_xy[iu[1]], axis=-1)
        vals = -path_loss_db(dap, params) + sample_shadowing(rng, params.shadowing_sigma_db, len(dap))
        ap_gain[iu] = vals
        ap_gain[(iu[1], iu[0])] = vals
    return LargeScaleRealization(np.atleast_2d(gain), ap_gain)


def received_mw(large: LargeScaleRealization, tx_power_dbm) -> np.ndarray:
    """Mean received power ``[tx_ap, rx_sta]`` in mW (no fading)."""
    p = np.broadcast_to(np.asarray(tx_power_dbm, dtype=float), (large.n,))
    return dbm_to_mw(p[:, None] + large.gain_db)


def compute_sinr(active_set, k: int, large: LargeScaleRealization, fading, tx_power_dbm, noise_floor_dbm: float) -> float:
    """SINR in dB at the STA of AP ``k`` given the set of transmitting APs.

    ``fading`` is a ``[tx, rx]`` power-gain matrix for one slot; pass ``None``
    for the unit-mean (expected) channel.
    """
    active = set(int(a) for a in active_set)
    if k not in active:
        raise ChannelDomainError(f"AP {k} is not in the active set")
    rx = received_mw(large, tx_power_dbm)
    h = np.ones_like(rx) if fading is None else np.asarray(fading, dtype=float)
    signal = rx[k, k] * h[k, k]
    interference = sum(rx[j, k] * h[j, k] for j in active if j != k)
    return float(mw_to_dbm(signal / (interference + dbm_to_mw(noise_floor_dbm))))


def slot_sinr_db(tx_mask, large: LargeScaleRealization, fading, tx_power_dbm, noise_floor_dbm: float) -> np.ndarray:
    """Batch SINR in dB, shape ``[slot, ap]``; NaN where the AP is silent."""
    tx = np.ascontiguousarray(tx_mask, dtype=np.bool_)
    rx = received_mw(large, tx_power_dbm)
    lin = kernels.slot_sinr(tx, rx, np.ascontiguousarray(fading, dtype=float), float(dbm_to_mw(noise_floor_dbm)))
    with np.errstate(invalid="ignore"):
        return np.where(tx, 10.0 * np.log10(np.where(tx, lin, 1.0)), np.nan)


def slot_success(sinr_db: float, params: ChannelParams) -> bool:
    return bool(sinr_db >= params.capture_threshold_db)


def expected_sinr_db(active_set, large: LargeScaleRealization, tx_power_dbm, noise_floor_dbm: float) -> dict[int, float]:
    """Unit-mean-fading SINR for every member of ``active_set``."""
    return {k: compute_sinr(active_set, k, large, None, tx_power_dbm, noise_floor_dbm) for k in active_set}
