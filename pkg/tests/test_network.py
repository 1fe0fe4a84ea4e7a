import math

import numpy as np
import pytest

from oranslice import network as net
from oranslice.network import (
    Allocation,
    ConfigError,
    NetworkConfig,
    SliceSpec,
    check_constraints,
    dbm_to_watts,
    delay,
    draw_instance,
    link_metrics,
    noise_power,
    objective,
    proportional_quotas,
    rate_per_ue,
    rate_total,
    ru_capacity,
    ru_positions,
    sample_channel,
    sinr,
    sinr_matrix,
    watts_to_dbm,
)

from conftest import desk_config, make_alloc, manual_channel

NOISE_W = 7.165929069962975e-16  # -174 dBm/Hz over 180 kHz


# ---------------------------------------------------------------------------
# unit conversions
# ---------------------------------------------------------------------------

def test_dbm_to_watts_known_values():
    assert dbm_to_watts(46.0) == pytest.approx(39.810717055349734, rel=1e-14)
    assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-14)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3, rel=1e-14)
    assert dbm_to_watts(-174.0) == pytest.approx(3.981071705534986e-21, rel=1e-14)


def test_noise_power_matches_psd_times_bandwidth():
    assert noise_power(-174.0, 180e3) == pytest.approx(NOISE_W, rel=1e-14)
    with pytest.raises(ValueError):
        noise_power(-174.0, 0.0)


def test_watts_to_dbm_round_trip(rng):
    for _ in range(50):
        x = rng.uniform(-120.0, 60.0)
        assert watts_to_dbm(dbm_to_watts(x)) == pytest.approx(x, abs=1e-10)
    assert watts_to_dbm(0.0) == -math.inf


def test_delay_model():
    assert delay(12000.0, 1e6) == pytest.approx(0.012, rel=1e-14)
    assert delay(12000.0, 0.0) == math.inf
    with pytest.raises(ValueError):
        delay(0.0, 1e6)


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def test_proportional_quotas():
    assert proportional_quotas(50) == (20, 20, 10)
    assert proportional_quotas(7) == (3, 3, 1)
    assert proportional_quotas(1) == (1, 0, 0)
    assert proportional_quotas(0) == (0, 0, 0)
    assert proportional_quotas(5, weights=(0.5, 0.5)) == (3, 2)


def test_proportional_quotas_sum(rng):
    for _ in range(100):
        k = int(rng.integers(0, 200))
        assert sum(proportional_quotas(k)) == k


def test_index_maps():
    cfg = desk_config()
    assert cfg.num_ues == 4
    assert cfg.num_slices == 3
    assert list(cfg.ue_slice()) == [0, 0, 1, 2]
    assert list(cfg.prb_slice()) == [0, 0, 1, 2]


def test_prb_slice_leaves_unquotaed_prbs_unowned():
    cfg = desk_config(total_prbs=6)
    assert list(cfg.prb_slice()) == [0, 0, 1, 2, -1, -1]


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(num_rus=0, slices=(SliceSpec("eMBB", 1),), total_prbs=1)
    with pytest.raises(ConfigError):
        desk_config(total_prbs=3)  # quotas sum to 4
    with pytest.raises(ConfigError):
        SliceSpec("video", 1)
    with pytest.raises(ConfigError):
        SliceSpec("eMBB", 1, min_rate=-1.0)
    with pytest.raises(ConfigError):
        SliceSpec("URLLC", 1, max_delay=0.0)
    with pytest.raises(ConfigError):
        desk_config(interference_mode="nearest")


def test_allocation_arrays_are_frozen():
    alloc = Allocation.empty(2, 1, 3)
    assert alloc.assoc.shape == (2, 1)
    assert alloc.prb.shape == (2, 1, 3)
    assert alloc.power.shape == (2, 1, 3)
    with pytest.raises(ValueError):
        alloc.assoc[0, 0] = 1


# ---------------------------------------------------------------------------
# geometry and channel draws
# ---------------------------------------------------------------------------

def test_ru_layout():
    assert np.allclose(ru_positions(desk_config()), [[0.0, 0.0]])
    pos = ru_positions(desk_config(num_rus=4))
    assert pos.shape == (4, 2)
    assert np.allclose(np.hypot(pos[:, 0], pos[:, 1]), 200.0)


def test_draw_instance_is_seed_deterministic():
    cfg = desk_config(num_rus=2)
    a_pos, _, a_chan = draw_instance(cfg, seed=7)
    b_pos, _, b_chan = draw_instance(cfg, seed=7)
    assert np.array_equal(a_pos, b_pos)
    assert np.array_equal(a_chan.gain, b_chan.gain)
    c_pos, _, c_chan = draw_instance(cfg, seed=8)
    assert not np.array_equal(a_chan.gain, c_chan.gain)


def test_ue_positions_lie_within_reach_of_an_ru():
    cfg = desk_config(num_rus=3)
    for seed in range(20):
        pos, rus, _ = draw_instance(cfg, seed)
        d = np.hypot(pos[:, None, 0] - rus[None, :, 0],
                     pos[:, None, 1] - rus[None, :, 1])
        assert np.all(d.min(axis=1) <= cfg.cell_radius)
        assert np.all(np.hypot(pos[:, 0], pos[:, 1]) <= cfg.cell_radius)


def test_channel_gain_mean_tracks_path_loss():
    # unit-mean fading: averaged over many PRBs the gain approaches d^-eta
    cfg = NetworkConfig(num_rus=1, slices=(SliceSpec("eMBB", 1),),
                        total_prbs=4000)
    chan = sample_channel(cfg, np.array([[2.0, 0.0]]), np.zeros((1, 2)), seed=3)
    path = 0.07381204133934566  # 2^-3.76
    mean = chan.gain[0, 0].mean()
    se = path / math.sqrt(cfg.total_prbs)
    assert abs(mean - path) < 4 * se
    assert np.all(chan.gain >= 0)


def test_distances_are_clamped_to_reference():
    cfg = NetworkConfig(num_rus=1, slices=(SliceSpec("eMBB", 2),), total_prbs=8)
    pos = np.array([[0.0, 0.0], [0.5, 0.0]])  # both inside d0 = 1 m
    chan = sample_channel(cfg, pos, np.zeros((1, 2)), seed=1)
    # path term is 1.0 for both, so gains are pure Exp(1) draws
    assert chan.gain.max() < 50.0


# ---------------------------------------------------------------------------
# SINR / rates: hand-computed single instances
# ---------------------------------------------------------------------------

def _two_cell_scenario(mode):
    cfg = NetworkConfig(
        num_rus=2,
        slices=(SliceSpec("eMBB", 2, prb_quota=1),),
        total_prbs=1,
        interference_mode=mode,
    )
    gain = [[[1e-12], [2e-13]], [[1e-13], [5e-13]]]
    chan = manual_channel(cfg, gain)
    alloc = make_alloc(
        cfg,
        assoc=[[1, 0], [0, 1]],
        prb=[[[1], [0]], [[0], [1]]],
        power=[[[2.0], [0.0]], [[0.0], [3.0]]],
    )
    return cfg, chan, alloc


def test_sinr_with_intercell_interference():
    cfg, chan, alloc = _two_cell_scenario("all-rus")
    # interfering transmission: RU1 -> UE1 at 3 W over gain 5e-13
    expect0 = (2.0 * 1e-12) / (NOISE_W + 3.0 * 5e-13)
    expect1 = (3.0 * 5e-13) / (NOISE_W + 2.0 * 1e-12)
    assert sinr(alloc, chan, cfg, u=0, k=0, r=0) == pytest.approx(expect0, rel=1e-12)
    assert sinr(alloc, chan, cfg, u=1, k=0, r=1) == pytest.approx(expect1, rel=1e-12)
    mat = sinr_matrix(alloc, chan, cfg)
    assert mat[0, 0] == pytest.approx(expect0, rel=1e-12)
    assert mat[1, 0] == pytest.approx(expect1, rel=1e-12)

    rates = rate_per_ue(alloc, chan, cfg)
    assert rates[0] == pytest.approx(180e3 * math.log2(1 + expect0), rel=1e-12)
    assert rate_total(alloc, chan, cfg) == pytest.approx(rates.sum(), rel=1e-12)
    assert objective(alloc, chan, cfg) == rate_total(alloc, chan, cfg)


def test_same_slice_transmissions_do_not_interfere_by_default():
    cfg, chan, alloc = _two_cell_scenario(net.INTERFERENCE_CROSS_SLICE)
    expect0 = (2.0 * 1e-12) / NOISE_W
    assert sinr(alloc, chan, cfg, u=0, k=0, r=0) == pytest.approx(expect0, rel=1e-12)


def test_cross_slice_transmissions_do_interfere():
    cfg = NetworkConfig(
        num_rus=2,
        slices=(SliceSpec("eMBB", 1, prb_quota=1), SliceSpec("URLLC", 1)),
        total_prbs=1,
    )
    gain = [[[1e-12], [2e-13]], [[1e-13], [5e-13]]]
    chan = manual_channel(cfg, gain)
    alloc = make_alloc(cfg, assoc=[[1, 0], [0, 1]],
                       prb=[[[1], [0]], [[0], [1]]],
                       power=[[[2.0], [0.0]], [[0.0], [3.0]]])
    # the co-channel UE now sits in another slice, so its 3 W counts
    expect0 = (2.0 * 1e-12) / (NOISE_W + 3.0 * 5e-13)
    assert sinr(alloc, chan, cfg, u=0, k=0, r=0) == pytest.approx(expect0, rel=1e-12)


def test_external_interferer_raises_noise_floor():
    cfg = NetworkConfig(num_rus=1, slices=(SliceSpec("eMBB", 1, prb_quota=1),),
                        total_prbs=1, interference_power_dbm=30.0)
    chan = manual_channel(cfg, gain=[[[1e-12]]], ext_gain=[[0.5]])
    alloc = make_alloc(cfg, assoc=[[1]], prb=[[[1]]], power=[[[2.0]]])
    expect = (2.0 * 1e-12) / (NOISE_W + 1.0 * 0.5)
    assert sinr(alloc, chan, cfg, u=0, k=0, r=0) == pytest.approx(expect, rel=1e-12)


def test_unassigned_links_have_zero_sinr_and_rate():
    cfg = desk_config()
    _, _, chan = draw_instance(cfg, seed=0)
    alloc = Allocation.empty(cfg.num_ues, cfg.num_rus, cfg.total_prbs)
    assert sinr(alloc, chan, cfg, u=0, k=0, r=0) == 0.0
    assert np.all(sinr_matrix(alloc, chan, cfg) == 0.0)
    assert rate_total(alloc, chan, cfg) == 0.0
    m = link_metrics(alloc, chan, cfg)
    assert np.all(np.isinf(m.delay))


def _feasible_desk_alloc(cfg):
    # one PRB per UE within each slice's partition, 9.9 W each
    assoc = np.ones((4, 1), dtype=np.int8)
    prb = np.zeros((4, 1, 4), dtype=np.int8)
    for u in range(4):
        prb[u, 0, u] = 1
    power = prb * 9.9
    return make_alloc(cfg, assoc, prb, power)


def test_link_metrics_consistency():
    cfg = desk_config()
    chan = manual_channel(cfg, gain=np.full((4, 1, 4), 10.0))
    alloc = _feasible_desk_alloc(cfg)
    m = link_metrics(alloc, chan, cfg)
    for u in range(4):
        assert m.rate_ue[u] == pytest.approx(net.rate_ue(alloc, chan, cfg, u),
                                             rel=1e-12)
    assert m.rate_total == pytest.approx(m.rate_ue.sum(), rel=1e-12)
    assert m.rate_slice.sum() == pytest.approx(m.rate_total, rel=1e-12)
    assert m.rate_slice[0] == pytest.approx(m.rate_ue[0] + m.rate_ue[1], rel=1e-12)
    assert m.ru_capacity[0] == pytest.approx(ru_capacity(alloc, chan, cfg, 0),
                                             rel=1e-12)
    assert m.ru_capacity[0] == pytest.approx(m.rate_total, rel=1e-12)
    # per-UE delay follows L / R with slice-specific packet sizes
    assert m.delay[2] == pytest.approx(1600.0 / m.rate_ue[2], rel=1e-12)
    assert m.delay[0] == pytest.approx(12000.0 / m.rate_ue[0], rel=1e-12)


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

def test_feasible_allocation_passes_all_checks():
    cfg = desk_config()
    chan = manual_channel(cfg, gain=np.full((4, 1, 4), 10.0))
    rep = check_constraints(_feasible_desk_alloc(cfg), chan, cfg)
    assert rep.all_ok
    assert rep.structural_ok
    assert rep.normalized_total() == 0.0


def test_power_budget_violation_is_flagged():
    cfg = desk_config()
    chan = manual_channel(cfg, gain=np.full((4, 1, 4), 10.0))
    alloc = _feasible_desk_alloc(cfg)
    power = np.array(alloc.power)
    power[0, 0, 0] = 39.0  # RU total 68.7 W > 39.81 W
    bad = make_alloc(cfg, alloc.assoc, alloc.prb, power)
    rep = check_constraints(bad, chan, cfg)
    assert not rep["power"].ok
    used = 39.0 + 3 * 9.9
    assert rep["power"].violation == pytest.approx(used - cfg.ru_max_power_w,
                                                   rel=1e-12)
    assert rep["delay"].ok and rep["min_rate"].ok
    assert rep.structural_ok


def test_structural_violations_are_flagged():
    cfg = desk_config()
    chan = manual_channel(cfg, gain=np.full((4, 1, 4), 10.0))
    good = _feasible_desk_alloc(cfg)

    assoc = np.array(good.assoc)
    assoc[1, 0] = 0  # UE1 attached nowhere, but still holds a PRB
    rep = check_constraints(make_alloc(cfg, assoc, good.prb, good.power),
                            chan, cfg)
    assert not rep["association"].ok
    assert not rep["prb_requires_association"].ok

    prb = np.array(good.prb)
    prb[1, 0, 0] = 1  # PRB0 now carries UE0 and UE1
    rep = check_constraints(make_alloc(cfg, good.assoc, prb, good.power),
                            chan, cfg)
    assert not rep["prb_exclusivity"].ok

    prb = np.array(good.prb)
    prb[3, 0, 3] = 0
    prb[3, 0, 0] = 1  # mMTC UE moved onto an eMBB PRB
    rep = check_constraints(make_alloc(cfg, good.assoc, prb, good.power),
                            chan, cfg)
    assert not rep["prb_partition"].ok
    assert not rep["prb_exclusivity"].ok


def test_qos_violations_are_normalized_and_finite():
    cfg = desk_config()
    chan = manual_channel(cfg, gain=np.full((4, 1, 4), 10.0))
    good = _feasible_desk_alloc(cfg)
    power = np.array(good.power)
    power[2] = 0.0  # starve the delay-constrained UE
    rep = check_constraints(make_alloc(cfg, good.assoc, good.prb, power),
                            chan, cfg)
    assert not rep["delay"].ok
    assert rep["delay"].violation == math.inf
    assert rep["delay"].normalized == 1.0  # rate-domain shortfall is capped
    assert not rep["min_rate"].ok
    assert math.isfinite(rep.normalized_total())


def test_capacity_cap():
    cfg = desk_config(ru_max_capacity=1e6)
    chan = manual_channel(cfg, gain=np.full((4, 1, 4), 10.0))
    rep = check_constraints(_feasible_desk_alloc(cfg), chan, cfg)
    assert not rep["capacity"].ok
    assert rep["capacity"].violation > 0


def test_slice_power_cap():
    caps = (
        SliceSpec("eMBB", 2, min_rate=10e6, prb_quota=2, power_cap_dbm=40.0),
        SliceSpec("URLLC", 1, min_rate=2e6, max_delay=1e-3,
                  packet_bits=1600.0, prb_quota=1),
        SliceSpec("mMTC", 1, prb_quota=1),
    )
    cfg = desk_config(slices=caps)
    chan = manual_channel(cfg, gain=np.full((4, 1, 4), 10.0))
    rep = check_constraints(_feasible_desk_alloc(cfg), chan, cfg)
    # eMBB spends 19.8 W > 10 W cap; other slices have no cap configured
    assert not rep["slice_power"].ok
    assert rep["slice_power"].violation == pytest.approx(19.8 - 10.0, rel=1e-9)


def test_sinr_scalar_matches_matrix_on_random_allocations(rng):
    cfg = desk_config(num_rus=2, interference_mode="all-rus")
    for trial in range(20):
        _, _, chan = draw_instance(cfg, seed=trial)
        assoc = np.zeros((4, 2), dtype=np.int8)
        assoc[np.arange(4), rng.integers(0, 2, size=4)] = 1
        prb = (rng.uniform(size=(4, 2, 4)) < 0.4).astype(np.int8)
        power = rng.uniform(0.0, 5.0, size=(4, 2, 4)) * prb
        alloc = make_alloc(cfg, assoc, prb, power)
        mat = sinr_matrix(alloc, chan, cfg)
        for u in range(4):
            r = int(np.argmax(assoc[u]))
            for k in range(4):
                assert mat[u, k] == pytest.approx(
                    sinr(alloc, chan, cfg, u=u, k=k, r=r), rel=1e-12, abs=1e-300)
