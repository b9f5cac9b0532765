"""Time each hot kernel compiled with numba against its fallback.

    python3 benchmarks/bench_kernels.py --repeat 5

Compilation happens once before timing. Results are also checked for
agreement so a speedup never hides a wrong answer.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mapc import channel, kernels, mac, topology
from mapc.agent.backends import feasibility_table


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(horizon_us: int):
    sc = topology.generate_scenario("co-sr", 3, 0)
    rng = np.random.default_rng(0)
    n_slots = 2000
    tx = rng.random((n_slots, 3)) < 0.6
    rx = channel.received_mw(sc.large, 20.0)
    fade = channel.sample_slot_fading(rng, 3, n_slots, 1.5)
    noise = float(channel.dbm_to_mw(-94.0))
    yield "slot_sinr", (tx, rx, fade, noise)

    feas = feasibility_table(sc, (0, 1, 2))
    yield "genie_search", (feas, 3, 5)

    # reuse the argument preparation of the MAC module by capturing its call
    captured = {}
    real = kernels.csma_run

    def grab(*args):
        captured["args"] = args
        return real(*args)

    mac.kernels.csma_run = grab
    try:
        mac.simulate_csma(sc, 0, horizon_us=horizon_us)
    finally:
        mac.kernels.csma_run = real
    yield "csma_run", captured["args"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--horizon-us", type=int, default=1_000_000)
    args = ap.parse_args(argv)

    print(f"{'kernel':14s} {'numba s':>10s} {'fallback s':>11s} {'speedup':>8s}  agree")
    for name, call_args in cases(args.horizon_us):
        fast, slow = kernels.COMPILED[name], kernels.FALLBACKS[name]
        a = fast(*call_args)
        b = slow(*call_args)
        if isinstance(a, tuple):
            agree = all(np.array_equal(x, y) for x, y in zip(a, b))
        else:
            agree = bool(np.allclose(a, b, equal_nan=True, rtol=1e-12))
        tf = _best_of(lambda: fast(*call_args), args.repeat)
        ts = _best_of(lambda: slow(*call_args), args.repeat)
        print(f"{name:14s} {tf:10.5f} {ts:11.5f} {ts / tf:8.1f}  {agree}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
