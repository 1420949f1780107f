import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gonora.config import ReceptionSpec, ScenarioConfig, TrafficProfile, replace
from gonora.reception import (
    PrpSnapshot,
    combine_rrh,
    decode_fixed,
    outcome_abstraction,
    per_ru_sinr,
    sic_decode,
)

MI = ReceptionSpec(model="mi", sic_rounds=8)


def snapshot(received, selection, segment_bits, noise=1e-13, omega=None):
    """Snapshot with unit tx power so gains equal received powers."""
    received = np.atleast_2d(np.asarray(received, dtype=float))
    selection = np.atleast_2d(np.asarray(selection, dtype=bool))
    n = received.shape[0]
    omega = selection.shape[1] if omega is None else omega
    return PrpSnapshot(
        device_ids=np.arange(n, dtype=np.int64),
        selection=selection,
        gains=received,
        tx_power_w=np.ones(n),
        omega=omega,
        noise_w=noise,
        segment_bits=np.asarray(segment_bits, dtype=float),
    )


# -- per-RU SINR -------------------------------------------------------------


def test_single_device_sinr_is_snr():
    snap = snapshot(received=[[2e-10]], selection=[[True]], segment_bits=[1.0], noise=1e-12)
    sinr = per_ru_sinr(snap, ru=0, rrh=0)
    assert sinr == {0: pytest.approx(2e-10 / 1e-12)}


def test_equal_power_pair_sits_at_zero_db():
    snap = snapshot(
        received=[[1e-9], [1e-9]],
        selection=[[True], [True]],
        segment_bits=[1.0, 1.0],
        noise=1e-15,
    )
    sinr = per_ru_sinr(snap, 0, 0)
    assert sinr[0] == pytest.approx(1.0, rel=1e-4)
    assert sinr[1] == pytest.approx(1.0, rel=1e-4)


def test_hundred_to_one_power_split():
    snap = snapshot(
        received=[[1e-8], [1e-10]],
        selection=[[True], [True]],
        segment_bits=[1.0, 1.0],
        noise=1e-16,
    )
    sinr = per_ru_sinr(snap, 0, 0)
    assert sinr[0] == pytest.approx(100.0, rel=1e-3)
    assert sinr[1] == pytest.approx(0.01, rel=1e-3)


def test_cancelled_devices_leave_the_ru():
    snap = snapshot(
        received=[[1e-8], [1e-10]],
        selection=[[True], [True]],
        segment_bits=[1.0, 1.0],
        noise=1e-16,
    )
    sinr = per_ru_sinr(snap, 0, 0, cancelled=[0])
    assert 0 not in sinr
    assert sinr[1] == pytest.approx(1e-10 / 1e-16)


def test_off_ru_devices_do_not_appear():
    snap = snapshot(
        received=[[1e-9, 1e-9], [1e-9, 1e-9]],
        selection=[[True, False], [False, True]],
        segment_bits=[1.0, 1.0],
    )
    assert set(per_ru_sinr(snap, 0, 0)) == {0}
    assert set(per_ru_sinr(snap, 1, 0)) == {1}


# -- combining ---------------------------------------------------------------


def test_combine_rrh_values():
    assert combine_rrh([5.0]) == 5.0
    assert combine_rrh([2.5] * 4) == pytest.approx(10.0)
    assert combine_rrh([3.0, 1.0]) == 4.0
    with pytest.raises(ValueError):
        combine_rrh([])


# -- SIC decode --------------------------------------------------------------


def test_empty_snapshot_decodes_nothing():
    snap = PrpSnapshot.empty(omega=8, n_rrh=2, noise_w=1e-13)
    out = sic_decode(snap, MI)
    assert out.decoded.size == 0 and out.rounds == 0


def test_isolated_device_decodes_first_round():
    snap = snapshot(received=[[1e-9]], selection=[[True]], segment_bits=[4.0], noise=1e-12)
    out = sic_decode(snap, MI)
    assert out.decoded.tolist() == [True]
    assert out.rounds == 1
    assert out.mutual_information[0] == pytest.approx(math.log2(1 + 1000.0))


def test_two_device_sic_walkthrough():
    """Shared RU, 20 dB separation, 1-bit segments: strong first, weak second.

    noise N, weak 10N, strong 1000N.  Round 1: strong SINR = 1000/11,
    weak = 10/1001 (MI 0.014 < 1).  Round 2 after cancellation: weak SINR 10.
    """
    n = 1e-13
    snap = snapshot(
        received=[[1000 * n], [10 * n]],
        selection=[[True], [True]],
        segment_bits=[1.0, 1.0],
        noise=n,
    )
    out = sic_decode(snap, MI)
    assert out.decoded.tolist() == [True, True]
    assert out.rounds == 2
    assert out.mutual_information[0] == pytest.approx(math.log2(1 + 1000 / 11), rel=1e-9)
    assert out.mutual_information[1] == pytest.approx(math.log2(11.0), rel=1e-9)


def test_round_cap_stops_the_loop():
    n = 1e-13
    snap = snapshot(
        received=[[1000 * n], [10 * n]],
        selection=[[True], [True]],
        segment_bits=[1.0, 1.0],
        noise=n,
    )
    out = sic_decode(snap, replace(MI, sic_rounds=1))
    assert out.decoded.tolist() == [True, False]
    assert out.rounds == 1


def test_mutual_deadlock_decodes_nobody():
    snap = snapshot(
        received=[[1e-10], [1e-10]],
        selection=[[True], [True]],
        segment_bits=[8.0, 8.0],
        noise=1e-12,
    )
    out = sic_decode(snap, MI)
    assert out.decoded.tolist() == [False, False]
    assert out.rounds == 0


def test_orthogonal_limit_everyone_decodes():
    received = np.full((4, 1), 1e-9)
    selection = np.eye(4, dtype=bool)
    snap = snapshot(received, selection, segment_bits=[2.0] * 4, noise=1e-12)
    out = sic_decode(snap, MI)
    assert out.decoded.all()


def test_threshold_model_uses_best_ru():
    spec = ReceptionSpec(model="threshold", threshold_db=3.0)
    # one RU at exactly 0 dB, one at 6 dB: passes only through the second
    snap = snapshot(
        received=[[1e-12]],
        selection=[[True, True]],
        segment_bits=[100.0],
        noise=1e-12,
        omega=2,
    )
    # craft per-RU difference via a second device interfering on RU 0 only
    snap2 = snapshot(
        received=[[4e-12], [3e-12]],
        selection=[[True, True], [True, False]],
        segment_bits=[100.0, 100.0],
        noise=1e-12,
        omega=2,
    )
    assert sic_decode(snap, spec).decoded.tolist() == [False]  # 0 dB < 3 dB
    assert sic_decode(snap2, spec).decoded.tolist()[0]  # RU 1 gives 6 dB


def test_fixed_model_rejected_by_sic():
    with pytest.raises(ValueError):
        sic_decode(PrpSnapshot.empty(4, 1, 1e-13), ReceptionSpec(model="fixed", fixed_p_e=(0.5,)))


def test_decode_fixed_stage_mapping():
    spec = ReceptionSpec(model="fixed", fixed_p_e=(0.0, 1.0))
    rng = np.random.default_rng(0)
    stages = np.array([0, 1, 0, 1])
    out = decode_fixed(stages, spec, rng)
    assert out.tolist() == [True, False, True, False]


# -- reference re-implementation ---------------------------------------------


def reference_sic(snap: PrpSnapshot, spec: ReceptionSpec):
    """Scalar SIC built from per_ru_sinr + combine_rrh, loops over everything."""
    cancelled: list[int] = []
    decoded = np.zeros(snap.n_devices, dtype=bool)
    for _ in range(spec.sic_rounds):
        new = []
        for i in range(snap.n_devices):
            if decoded[i]:
                continue
            mi = 0.0
            for ru in range(snap.omega):
                if not snap.selection[i, ru]:
                    continue
                per_rrh = [
                    per_ru_sinr(snap, ru, r, cancelled)[int(snap.device_ids[i])]
                    for r in range(snap.n_rrh)
                ]
                mi += math.log2(1.0 + combine_rrh(per_rrh))
            if mi + 1e-12 >= snap.segment_bits[i]:
                new.append(i)
        if not new:
            break
        for i in new:
            decoded[i] = True
            cancelled.append(int(snap.device_ids[i]))
    return decoded


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_vectorized_decode_matches_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    n, omega, n_rrh = rng.integers(1, 7), int(rng.integers(2, 6)), int(rng.integers(1, 4))
    received = rng.exponential(1e-10, size=(n, n_rrh))
    selection = rng.random((n, omega)) < 0.5
    selection[selection.sum(axis=1) == 0, 0] = True
    snap = snapshot(received, selection, segment_bits=rng.uniform(0.5, 6.0, size=n))
    out = sic_decode(snap, MI)
    np.testing.assert_array_equal(out.decoded, reference_sic(snap, MI))


def test_decoded_devices_replay_their_round():
    """SIC soundness: each decode must clear the bar in its own round's state."""
    rng = np.random.default_rng(99)
    for _ in range(40):
        n, omega, n_rrh = int(rng.integers(2, 8)), 4, 2
        received = rng.exponential(1e-10, size=(n, n_rrh))
        selection = rng.random((n, omega)) < 0.4
        selection[selection.sum(axis=1) == 0, 0] = True
        snap = snapshot(received, selection, segment_bits=rng.uniform(0.5, 5.0, size=n))
        out = sic_decode(snap, MI)
        cancelled: list[int] = []
        remaining = set(np.flatnonzero(out.decoded))
        for _round in range(out.rounds):
            wave = []
            for i in sorted(remaining):
                mi = 0.0
                for ru in range(omega):
                    if snap.selection[i, ru]:
                        sinrs = [
                            per_ru_sinr(snap, ru, r, cancelled)[i] for r in range(n_rrh)
                        ]
                        mi += math.log2(1.0 + combine_rrh(sinrs))
                if mi + 1e-12 >= snap.segment_bits[i]:
                    wave.append(i)
            assert wave, "decoded set contains a device no round can justify"
            for i in wave:
                cancelled.append(i)
                remaining.discard(i)
        assert not remaining


# -- monotonicity properties -------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_extra_interferer_never_helps(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    received = rng.exponential(1e-10, size=(n, 1))
    selection = np.ones((n, 1), dtype=bool)
    base = snapshot(received[:-1], selection[:-1], segment_bits=np.ones(n - 1))
    full = snapshot(received, selection, segment_bits=np.ones(n))
    before = per_ru_sinr(base, 0, 0)
    after = per_ru_sinr(full, 0, 0)
    for i in range(n - 1):
        assert after[i] <= before[i] + 1e-18


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_extra_rrh_never_shrinks_decoded_set(seed):
    rng = np.random.default_rng(seed)
    n, omega, n_rrh = int(rng.integers(1, 6)), 4, int(rng.integers(1, 3))
    received = rng.exponential(1e-10, size=(n, n_rrh + 1))
    selection = rng.random((n, omega)) < 0.5
    selection[selection.sum(axis=1) == 0, 0] = True
    seg = rng.uniform(0.5, 4.0, size=n)
    small = snapshot(received[:, :n_rrh], selection, seg)
    big = snapshot(received, selection, seg)
    decoded_small = sic_decode(small, MI).decoded
    decoded_big = sic_decode(big, MI).decoded
    assert (decoded_big | ~decoded_small).all()


# -- outcome abstraction -----------------------------------------------------


def scenario(m_count=4, mc_samples=64):
    cfg = ScenarioConfig()
    return replace(
        cfg,
        traffic=TrafficProfile.homogeneous(32.0, 50.0, m_count),
        analysis=replace(cfg.analysis, mc_samples=mc_samples),
    )


def test_zero_attempt_is_vacuously_perfect():
    est = outcome_abstraction(0.0, scenario())
    assert est.outcomes.p_s == (1.0,) * 4
    assert est.trials == 0
    assert est.std_error == 0.0


def test_single_user_generous_budget():
    est = outcome_abstraction(1.0, scenario(m_count=1, mc_samples=128))
    assert est.trials == 128
    assert est.outcomes.p_s[0] >= 0.95


def test_saturated_over_capacity_fails():
    cfg = scenario(m_count=512, mc_samples=16)
    # tiny grid: omega=4, 1 bit per RU, 64-bit packets -> undecodable pileup
    cfg = replace(
        cfg,
        prp=replace(cfg.prp, omega=4, ru_payload_bits=1.0, beta=4.0),
        traffic=TrafficProfile.homogeneous(64.0, 50.0, 512),
    )
    est = outcome_abstraction(1.0, cfg)
    assert est.outcomes.p_s[0] < 0.05


def test_abstraction_is_deterministic():
    a = outcome_abstraction(0.37, scenario())
    b = outcome_abstraction(0.37, scenario())
    assert a.outcomes.p_s == b.outcomes.p_s
    assert a.trials == b.trials


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        outcome_abstraction(1.5, scenario())
    with pytest.raises(ValueError):
        outcome_abstraction(0.5, scenario(), samples=0)
