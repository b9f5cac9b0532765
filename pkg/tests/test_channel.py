import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mapc import channel
from mapc.channel import ChannelDomainError, ChannelParams, LargeScaleRealization

P24 = ChannelParams(carrier_freq_ghz=2.4)


def test_path_loss_hand_values():
    assert channel.path_loss_db(1.0, P24) == pytest.approx(40.05, abs=1e-12)
    assert channel.path_loss_db(5.0, P24) == pytest.approx(40.05 + 20 * math.log10(5), abs=1e-12)
    assert channel.path_loss_db(5.0, P24) == pytest.approx(54.03, abs=0.01)
    assert channel.path_loss_db(50.0, P24) == pytest.approx(40.05 + 20 * math.log10(5) + 35.0, abs=1e-12)


def test_path_loss_frequency_offset():
    d = np.array([1.0, 4.0, 20.0])
    diff = channel.path_loss_db(d, ChannelParams()) - channel.path_loss_db(d, P24)
    np.testing.assert_allclose(diff, 20 * math.log10(5.0 / 2.4), atol=1e-12)


def test_path_loss_rejects_nonpositive():
    with pytest.raises(ChannelDomainError):
        channel.path_loss_db(0.0)
    with pytest.raises(ChannelDomainError):
        channel.path_loss_db(np.array([1.0, -2.0]))


@given(st.floats(0.01, 200.0), st.floats(0.01, 200.0))
def test_path_loss_monotone(a, b):
    lo, hi = sorted((a, b))
    assert channel.path_loss_db(lo) <= channel.path_loss_db(hi)


def test_path_loss_continuous_at_breakpoint():
    eps = 1e-12
    assert abs(channel.path_loss_db(5.0 + eps) - channel.path_loss_db(5.0)) < 1e-9
    assert abs(channel.path_loss_db(5.0 - eps) - channel.path_loss_db(5.0)) < 1e-9


def test_shadowing_statistics():
    rng = np.random.default_rng(1)
    assert channel.sample_shadowing(rng, 0.0) == 0.0
    assert not np.any(channel.sample_shadowing(rng, 0.0, 100))
    x = channel.sample_shadowing(rng, 5.0, 1_000_000)
    assert 4.97 <= x.std() <= 5.03
    assert -0.02 <= x.mean() <= 0.02


def test_nakagami_statistics():
    x = channel.sample_nakagami_power(np.random.default_rng(2), 1.5, 1_000_000)
    assert 0.997 <= x.mean() <= 1.003
    assert abs(x.var() - 2 / 3) <= 0.02 * 2 / 3
    big = channel.sample_nakagami_power(np.random.default_rng(3), 1e4, 10_000)
    assert big.std() < 0.02


def test_nakagami_domain():
    with pytest.raises(ChannelDomainError):
        channel.sample_nakagami_power(np.random.default_rng(0), 0.5)
    with pytest.raises(ChannelDomainError):
        ChannelParams(nakagami_m=0.3)


def test_single_link_snr_is_budget_arithmetic():
    large = LargeScaleRealization(np.array([[-74.0]]), np.zeros((1, 1)))
    assert channel.compute_sinr({0}, 0, large, None, 20.0, -94.0) == pytest.approx(40.0, abs=1e-9)


def test_symmetric_pair_tends_to_zero_db():
    large = LargeScaleRealization(np.full((2, 2), -60.0), np.zeros((2, 2)))
    assert channel.compute_sinr({0, 1}, 0, large, None, 20.0, -300.0) == pytest.approx(0.0, abs=1e-9)


def test_compute_sinr_requires_membership():
    large = LargeScaleRealization(np.full((2, 2), -60.0), np.zeros((2, 2)))
    with pytest.raises(ChannelDomainError):
        channel.compute_sinr({1}, 0, large, None, 20.0, -94.0)


def test_slot_success_boundaries():
    p = ChannelParams()
    assert channel.slot_success(10.0, p)
    assert not channel.slot_success(9.99, p)
    always = ChannelParams(capture_threshold_db=-math.inf)
    assert channel.slot_success(-500.0, always)


def test_capture_threshold_must_not_be_nan():
    with pytest.raises(ChannelDomainError):
        ChannelParams(capture_threshold_db=float("nan"))


def test_large_scale_rejects_positive_gain():
    with pytest.raises(ChannelDomainError):
        LargeScaleRealization(np.array([[1.0]]), np.zeros((1, 1)))


def test_slot_sinr_matches_scalar_formula(sr2):
    rng = np.random.default_rng(9)
    fade = channel.sample_slot_fading(rng, 2, 6, 1.5)
    tx = np.array([[1, 1], [1, 0], [0, 1], [0, 0], [1, 1], [0, 1]], dtype=bool)
    batch = channel.slot_sinr_db(tx, sr2.large, fade, sr2.tx_power_dbm, -94.0)
    for s in range(len(tx)):
        active = {a for a in range(2) if tx[s, a]}
        for a in range(2):
            if a in active:
                ref = channel.compute_sinr(active, a, sr2.large, fade[s], sr2.tx_power_dbm, -94.0)
                assert batch[s, a] == pytest.approx(ref, abs=1e-9)
            else:
                assert np.isnan(batch[s, a])


def test_large_scale_ap_gain_symmetric():
    rng = np.random.default_rng(4)
    aps = rng.uniform(0, 50, (4, 2))
    stas = aps + 1.5
    large = channel.sample_large_scale(aps, stas, ChannelParams(), rng)
    np.testing.assert_array_equal(large.ap_gain_db, large.ap_gain_db.T)
    assert np.all(np.diag(large.ap_gain_db) == 0)
