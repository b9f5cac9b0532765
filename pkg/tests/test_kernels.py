"""Compiled kernels against their fallbacks, and the env switch end to end."""
import itertools
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapc import channel, kernels, mac, topology
from mapc._accel import NUMBA_AVAILABLE

needs_numba = pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("seed", range(4))
def test_slot_sinr_equivalence(seed):
    rng = np.random.default_rng(seed)
    k, n = 2 + seed % 2, 300
    sc = topology.generate_scenario("co-sr", k, seed)
    tx = rng.random((n, k)) < 0.5
    rx = channel.received_mw(sc.large, 20.0)
    fade = channel.sample_slot_fading(rng, k, n, 1.5)
    a = kernels.COMPILED["slot_sinr"](tx, rx, fade, 1e-9)
    b = kernels.FALLBACKS["slot_sinr"](tx, rx, fade, 1e-9)
    np.testing.assert_allclose(a, b, rtol=1e-12, equal_nan=True)
    assert np.array_equal(np.isnan(a), ~tx)


def brute_genie(feasible, n, n_slots):
    """Enumerate schedule matrices directly; first best in code order wins."""
    best, best_key = None, None
    for code, bits in enumerate(itertools.product((0, 1), repeat=n * n_slots)):
        m = np.array(bits[::-1]).reshape(n, n_slots)
        masks = [sum(int(m[r, s]) << r for r in range(n)) for s in range(n_slots)]
        if not all(feasible[x] for x in masks):
            continue
        key = (int(m.sum()), int(m.sum(axis=1).min()))
        if best_key is None or key > best_key:
            best, best_key = code, key
    return best


@needs_numba
@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3), st.lists(st.booleans(), min_size=7, max_size=7))
def test_genie_equivalence(n, flags):
    feasible = np.array([True] + flags[: (1 << n) - 1], dtype=np.bool_)
    n_slots = 5 if n == 2 else 3
    a = kernels.COMPILED["genie_search"](feasible, n, n_slots)
    b = kernels.FALLBACKS["genie_search"](feasible, n, n_slots)
    assert a == b == brute_genie(feasible, n, n_slots)


def test_decode_genie():
    assert kernels.decode_genie(0b1100000111, 2, 5).tolist() == [[1, 1, 1, 0, 0], [0, 0, 0, 1, 1]]


@needs_numba
@pytest.mark.parametrize("kind,k", [("co-sr", 2), ("co-tdma", 2), ("co-sr", 3)])
def test_csma_equivalence(kind, k, monkeypatch):
    sc = topology.generate_scenario(kind, k, 5)
    results = {}
    for name, table in (("fast", kernels.COMPILED), ("slow", kernels.FALLBACKS)):
        monkeypatch.setattr(mac.kernels, "csma_run", table["csma_run"])
        results[name] = mac.simulate_csma(sc, 5, horizon_us=100_000)
    assert results["fast"].same_as(results["slow"])


_PROBE = """
import json
from mapc import _accel, mac, runner, topology
cfg = runner.RunConfig(scenario="co-tdma", k=2, rounds=6, seeds=[3], out=r"{out}", workers=1).validate()
res = runner.run_experiment(cfg)
rows = [json.loads(x) for x in res.log_paths[0].read_text().splitlines()]
led = mac.simulate_csma(topology.generate_scenario("co-sr", 2, 3), 3, horizon_us=100_000)
print(json.dumps({{
    "numba": _accel.NUMBA_ENABLED,
    "results": [r["results"] for r in rows if r["type"] == "round"],
    "scores": [r["group_score"] for r in rows if r["type"] == "round"],
    "csma": led.success_us.tolist(),
}}))
"""


def _probe(tmp_path, no_numba):
    env = dict(os.environ)
    env.pop("MAPC_NO_NUMBA", None)
    if no_numba:
        env["MAPC_NO_NUMBA"] = "1"
    out = tmp_path / ("slow" if no_numba else "fast")
    proc = subprocess.run(
        [sys.executable, "-c", _PROBE.format(out=out)], env=env, capture_output=True, text=True, check=True, timeout=120
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


@needs_numba
def test_env_switch_gives_same_outcomes(tmp_path):
    fast = _probe(tmp_path, False)
    slow = _probe(tmp_path, True)
    assert fast["numba"] and not slow["numba"]
    # compare slot states and scores; SINR floats may differ in the last ulp
    assert fast["results"] == slow["results"]
    assert fast["scores"] == slow["scores"]
    assert fast["csma"] == slow["csma"]
