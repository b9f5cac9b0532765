"""Hot inner loops.

Each kernel has a numba-compiled loop and a fallback. ``slot_sinr`` and
``genie_search`` fall back to vectorized numpy; the CSMA/CA event loop has no
vectorized form, so its fallback is the same loop run by the interpreter.
The public names at the bottom dispatch on ``MAPC_NO_NUMBA``.
"""
from __future__ import annotations

import numpy as np

from ._accel import NUMBA_ENABLED, jit

# --------------------------------------------------------------------------
# per-slot SINR


def _slot_sinr_loop(tx, rx_mw, fade, noise_mw):
    n_slots, k = tx.shape
    out = np.full((n_slots, k), np.nan)
    for s in range(n_slots):
        for r in range(k):
            if not tx[s, r]:
                continue
            sig = rx_mw[r, r] * fade[s, r, r]
            interf = 0.0
            for j in range(k):
                if j != r and tx[s, j]:
                    interf += rx_mw[j, r] * fade[s, j, r]
            out[s, r] = sig / (interf + noise_mw)
    return out


def _slot_sinr_numpy(tx, rx_mw, fade, noise_mw):
    k = tx.shape[1]
    eye = np.eye(k, dtype=bool)
    p = rx_mw[None, :, :] * fade  # [slot, tx, rx]
    sig = np.diagonal(p, axis1=1, axis2=2)
    active = tx[:, :, None] & ~eye[None, :, :]
    interf = np.where(active, p, 0.0).sum(axis=1)
    return np.where(tx, sig / (interf + noise_mw), np.nan)


# --------------------------------------------------------------------------
# genie: exhaustive search over all group schedules


def _genie_loop(feasible, n, n_slots):
    best_code = 0
    best_total = -1
    best_min = -1
    per = np.zeros(n, dtype=np.int64)
    for code in range(1 << (n * n_slots)):
        ok = True
        total = 0
        for r in range(n):
            per[r] = 0
        for s in range(n_slots):
            mask = 0
            for r in range(n):
                if (code >> (r * n_slots + s)) & 1:
                    mask |= 1 << r
                    per[r] += 1
                    total += 1
            if not feasible[mask]:
                ok = False
                break
        if not ok:
            continue
        mn = per.min()
        if total > best_total or (total == best_total and mn > best_min):
            best_total = total
            best_min = mn
            best_code = code
    return best_code


def _genie_numpy(feasible, n, n_slots):
    codes = np.arange(1 << (n * n_slots), dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n * n_slots, dtype=np.int64)) & 1
    bits = bits.reshape(len(codes), n, n_slots)
    masks = (bits << np.arange(n, dtype=np.int64)[None, :, None]).sum(axis=1)
    ok = feasible[masks].all(axis=1)
    per = bits.sum(axis=2)
    total = np.where(ok, per.sum(axis=1), -1)
    mn = np.where(ok, per.min(axis=1), -1)
    # first code reaching the lexicographic max of (total, min per AP)
    key = total * (n_slots + 2) + mn
    return int(np.argmax(key))


def decode_genie(code: int, n: int, n_slots: int) -> np.ndarray:
    """Schedule matrix ``[rank, slot]`` for a search code."""
    bits = (int(code) >> np.arange(n * n_slots)) & 1
    return bits.reshape(n, n_slots).astype(np.int8)


# --------------------------------------------------------------------------
# CSMA/CA event loop

INT_INF = np.iinfo(np.int64).max // 4


def _csma_loop(
    horizon,
    tx_dur,
    difs,
    slot,
    cw_min,
    cw_max,
    sense,
    rx_mw,
    noise_mw,
    thr_lin,
    agentic,
    group,
    u_backoff,
    fade,
):
    """Saturated DCF with preamble-level carrier sensing.

    ``sense[i, j]`` means AP i defers to AP j's transmission. Legacy packets
    succeed iff SINR over the packet clears ``thr_lin``, counting every AP
    that transmitted at any point during it. An agentic AP that wins holds a
    TXOP for ``tx_dur`` and drags its idle group members into it; the TXOP is
    recorded as a grant and its content is simulated by the caller.
    Random numbers are pre-drawn per AP so the loop is deterministic.
    """
    k = tx_dur.shape[0]
    cw = np.full(k, cw_min, dtype=np.int64)
    backoff = np.zeros(k, dtype=np.int64)
    nb = np.zeros(k, dtype=np.int64)
    idle_start = np.zeros(k, dtype=np.int64)
    tx_end = np.full(k, -1, dtype=np.int64)
    role = np.zeros(k, dtype=np.int64)  # 0 contending, 1 own tx, 2 TXOP member
    ovl = np.zeros((k, k), dtype=np.bool_)
    fidx = np.zeros(k, dtype=np.int64)
    nfade = np.zeros(k, dtype=np.int64)
    cur_grant = np.full(k, -1, dtype=np.int64)
    succ = np.zeros(k, dtype=np.int64)
    fail = np.zeros(k, dtype=np.int64)
    ntx = np.zeros(k, dtype=np.int64)
    max_grants = fade.shape[1] * k
    grant_t = np.zeros(max_grants, dtype=np.int64)
    grant_ap = np.zeros(max_grants, dtype=np.int64)
    grant_members = np.zeros((max_grants, k), dtype=np.bool_)
    grant_ok = np.zeros(max_grants, dtype=np.bool_)
    n_grants = 0
    starter = np.zeros(k, dtype=np.bool_)

    for i in range(k):
        backoff[i] = np.int64(u_backoff[i, 0] * (cw_min + 1))
        nb[i] = 1

    while True:
        nxt = INT_INF
        for i in range(k):
            if tx_end[i] >= 0:
                c = tx_end[i]
            elif idle_start[i] >= 0:
                c = idle_start[i] + difs + backoff[i] * slot
            else:
                continue
            if c < nxt:
                nxt = c
        if nxt >= horizon:
            break
        t = nxt

        # transmissions ending now
        for i in range(k):
            if tx_end[i] != t:
                continue
            if role[i] == 1:
                if agentic[i]:
                    ok = grant_ok[cur_grant[i]]
                else:
                    f = fidx[i]
                    sig = rx_mw[i, i] * fade[i, f, i]
                    interf = 0.0
                    for j in range(k):
                        if j != i and ovl[i, j]:
                            interf += rx_mw[j, i] * fade[i, f, j]
                    ok = sig >= thr_lin * (interf + noise_mw)
                    if ok:
                        succ[i] += tx_dur[i]
                    else:
                        fail[i] += tx_dur[i]
                if ok:
                    cw[i] = cw_min
                else:
                    cw[i] = min(2 * cw[i] + 1, cw_max)
                backoff[i] = np.int64(u_backoff[i, nb[i]] * (cw[i] + 1))
                nb[i] += 1
            tx_end[i] = -1
            role[i] = 0
            idle_start[i] = -1

        # transmissions starting now
        n_start = 0
        for i in range(k):
            starter[i] = False
            if tx_end[i] < 0 and idle_start[i] >= 0 and idle_start[i] + difs + backoff[i] * slot == t:
                starter[i] = True
                n_start += 1
        for i in range(k):
            if not starter[i]:
                continue
            tx_end[i] = t + tx_dur[i]
            role[i] = 1
            idle_start[i] = -1
            ntx[i] += 1
            if agentic[i]:
                g = n_grants
                n_grants += 1
                grant_t[g] = t
                grant_ap[g] = i
                grant_ok[g] = n_start == 1
                grant_members[g, i] = True
                cur_grant[i] = g
                for j in range(k):
                    if j == i or not group[i, j] or starter[j] or tx_end[j] >= 0:
                        continue
                    if idle_start[j] >= 0:
                        el = t - (idle_start[j] + difs)
                        if el > 0:
                            backoff[j] -= el // slot
                    idle_start[j] = -1
                    tx_end[j] = t + tx_dur[i]
                    role[j] = 2
                    grant_members[g, j] = True
            else:
                fidx[i] = nfade[i]
                nfade[i] += 1
                for j in range(k):
                    ovl[i, j] = False

        # overlap bookkeeping for legacy packets in flight
        for i in range(k):
            if role[i] == 1 and not agentic[i]:
                for j in range(k):
                    if j != i and tx_end[j] >= 0:
                        ovl[i, j] = True

        # carrier sensing
        for i in range(k):
            if tx_end[i] >= 0:
                continue
            busy = False
            for j in range(k):
                if j != i and tx_end[j] >= 0 and sense[i, j]:
                    busy = True
                    break
            if busy and idle_start[i] >= 0:
                el = t - (idle_start[i] + difs)
                if el > 0:
                    backoff[i] -= el // slot
                idle_start[i] = -1
            elif not busy and idle_start[i] < 0:
                idle_start[i] = t

    return (
        succ,
        fail,
        ntx,
        grant_t[:n_grants].copy(),
        grant_ap[:n_grants].copy(),
        grant_members[:n_grants].copy(),
        grant_ok[:n_grants].copy(),
    )


# --------------------------------------------------------------------------
# compiled variants and dispatch

slot_sinr_jit = jit(_slot_sinr_loop)
genie_search_jit = jit(_genie_loop)
csma_jit = jit(_csma_loop)

if NUMBA_ENABLED:
    slot_sinr = slot_sinr_jit
    genie_search = genie_search_jit
    csma_run = csma_jit
else:
    slot_sinr = _slot_sinr_numpy
    genie_search = _genie_numpy
    csma_run = _csma_loop

FALLBACKS = {
    "slot_sinr": _slot_sinr_numpy,
    "genie_search": _genie_numpy,
    "csma_run": _csma_loop,
}
COMPILED = {
    "slot_sinr": slot_sinr_jit,
    "genie_search": genie_search_jit,
    "csma_run": csma_jit,
}
