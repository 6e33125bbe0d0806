import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncdfl.errors import ConfigError, ContractViolation
from asyncdfl.wireless import (RadioEnvironment, Schedule, WirelessConfig, allocate_bandwidth,
                               build_schedule, db_to_linear, dbm_to_watts, make_environment,
                               min_rates, min_throughput, place_nodes, plan_epoch, random_allocation,
                               sinr, sinr_matrix, transmission_durations, uniform_allocation,
                               waiting_duration)

NAN = float("nan")


def two_node_env(noise=0.01, d=2.0, interferer=None):
    kw = {}
    if interferer is not None:
        kw = dict(interferers=np.array([interferer]), interferer_fading=np.ones((2, 1)))
    return RadioEnvironment(np.array([[0.0, 0.0], [d, 0.0]]), 500.0, 4.0, 1.0, noise, np.ones((2, 2)), **kw)


def full_schedule(n):
    return Schedule({i: frozenset(j for j in range(n) if j != i) for i in range(n)}, frozenset(range(n)))


def random_instance(rng, n):
    m = 10 ** rng.uniform(-1, 3, size=(n, n))
    np.fill_diagonal(m, NAN)
    return m


# --------------------------------------------------------------------------
# unit conversions and placement

def test_unit_conversions():
    assert dbm_to_watts(30) == pytest.approx(1.0)
    assert db_to_linear(10) == pytest.approx(10.0)
    assert db_to_linear(0) == 1.0


def test_table_defaults():
    cfg = WirelessConfig()
    assert (cfg.cell_radius_m, cfg.path_loss_exponent, cfg.bandwidth_hz) == (500.0, 4.0, 1e7)
    assert (cfg.tx_power_dbm, cfg.noise_dbm_per_hz, cfg.quant_bits) == (30.0, -174.0, 16)
    assert cfg.payload_bits(100) == 1600


def test_placement_uniform_in_disk():
    pts = place_nodes(np.random.default_rng(0), 500.0, 20_000)
    r = np.linalg.norm(pts, axis=1)
    assert r.max() <= 500.0
    # the radius of a uniform point in a disk has mean 2R/3
    assert r.mean() == pytest.approx(1000 / 3, rel=0.01)


def test_poisson_placement_has_two_nodes():
    pts = place_nodes(np.random.default_rng(1), 10.0, density=0.005)
    assert len(pts) >= 2


def test_placement_needs_count_or_density():
    with pytest.raises(ConfigError):
        place_nodes(np.random.default_rng(0), 1.0)


# --------------------------------------------------------------------------
# SINR

def test_sinr_unit_when_signal_equals_noise():
    assert sinr(two_node_env(noise=1 / 16), 0, 1) == pytest.approx(1.0, rel=1e-14)


def test_sinr_hand_value():
    assert sinr(two_node_env(), 0, 1) == pytest.approx(6.25, rel=1e-14)


def test_sinr_equal_interferer_and_vanishing_noise():
    # the interferer sits at distance 2 from receiver 1, like the transmitter
    env = two_node_env(noise=1e-15, interferer=(2.0, 2.0))
    assert sinr(env, 0, 1) == pytest.approx(1.0, rel=1e-9)


def test_sinr_self_link_rejected():
    with pytest.raises(ContractViolation):
        sinr(two_node_env(), 1, 1)


def test_matrix_matches_scalar_and_is_not_symmetric():
    env = make_environment(WirelessConfig(multi_cell=True), np.random.default_rng(2), count=5)
    m = sinr_matrix(env)
    for j in range(5):
        for i in range(5):
            if i != j:
                assert m[j, i] == pytest.approx(sinr(env, i, j), rel=1e-12)
    off = ~np.eye(5, dtype=bool)
    assert not np.allclose(m[off], m.T[off])


def test_interference_lowers_sinr():
    assert sinr(two_node_env(interferer=(5.0, 5.0)), 0, 1) < sinr(two_node_env(), 0, 1)


# --------------------------------------------------------------------------
# scheduling

HAND = np.array([[NAN, 2, 0.5], [2, NAN, 2], [0.5, 2, NAN]])


def test_schedule_hand_matrix():
    s = build_schedule(HAND, 1.0)
    assert s.receivers == {0: {1}, 1: {0, 2}, 2: {1}}
    assert s.scheduled == {0, 1, 2}


def test_schedule_extremes():
    assert build_schedule(HAND, 1e-12).receivers == full_schedule(3).receivers
    s = build_schedule(HAND, 1e12)
    assert not s.scheduled and all(not r for r in s.receivers.values())


def test_schedule_rejects_non_positive_threshold():
    with pytest.raises(ContractViolation):
        build_schedule(HAND, 0.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), g1=st.floats(0.01, 100), g2=st.floats(0.01, 100))
def test_schedule_monotone_in_threshold(seed, g1, g2):
    lo, hi = sorted((g1, g2))
    m = random_instance(np.random.default_rng(seed), 6)
    a, b = build_schedule(m, lo), build_schedule(m, hi)
    assert all(b.receivers[i] <= a.receivers[i] for i in range(6))
    assert b.scheduled <= a.scheduled


# --------------------------------------------------------------------------
# bandwidth

def rates_matrix(rates):
    """SINR matrix with a single receiver per node giving the requested ``R_i``."""
    n = len(rates)
    m = np.full((n, n), NAN)
    for i, r in enumerate(rates):
        m[(i + 1) % n, i] = 2.0 ** r - 1.0
    return m


def grid_oracle(r1, r2, total, res=1e-4):
    b1 = np.arange(0, 1 + res / 2, res) * total
    objective = np.minimum(b1 * r1, (total - b1) * r2)
    return b1[np.argmax(objective)]


def test_symmetric_split():
    m = rates_matrix([1.0, 1.0])
    bw = allocate_bandwidth(build_schedule(m, 0.5), m, 1e7)
    assert bw[0] == pytest.approx(5e6) and bw[1] == pytest.approx(5e6)


def test_inverse_rate_split_and_grid_oracle():
    m = rates_matrix([1.0, 3.0])
    bw = allocate_bandwidth(build_schedule(m, 0.5), m, 12.0)
    assert bw[0] == pytest.approx(9.0, rel=1e-12) and bw[1] == pytest.approx(3.0, rel=1e-12)
    assert bw[0] * 1.0 == pytest.approx(bw[1] * 3.0, rel=1e-12)
    assert abs(grid_oracle(1.0, 3.0, 12.0) - bw[0]) <= 1e-3 * 12


def test_closed_form_matches_simplex_oracle_on_random_draws():
    rng = np.random.default_rng(3)
    for _ in range(50):
        r1, r2 = rng.uniform(0.1, 10, size=2)
        m = rates_matrix([r1, r2])
        bw = allocate_bandwidth(build_schedule(m, 1e-9), m, 1.0)
        assert abs(grid_oracle(r1, r2, 1.0) - bw[0]) <= 1e-3


def test_maxmin_beats_uniform_and_random_allocations():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        m = random_instance(rng, n)
        s = build_schedule(m, float(10 ** rng.uniform(-1, 1)))
        if not s.scheduled:
            continue
        best = min_throughput(s, m, allocate_bandwidth(s, m, 1e7))
        assert best >= min_throughput(s, m, uniform_allocation(s, m, 1e7)) * (1 - 1e-12)
        for _ in range(50):
            assert best >= min_throughput(s, m, random_allocation(s, m, 1e7, rng)) * (1 - 1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 9), total=st.floats(1e3, 1e8))
def test_conservation_and_equalisation(seed, n, total):
    m = random_instance(np.random.default_rng(seed), n)
    s = build_schedule(m, 1.0)
    bw = allocate_bandwidth(s, m, total)
    rates = min_rates(s, m)
    if not rates:
        assert all(b == 0 for b in bw.values())
        return
    assert math.fsum(bw.values()) == pytest.approx(total, rel=1e-9)
    products = [bw[i] * r for i, r in rates.items()]
    assert max(products) == pytest.approx(min(products), rel=1e-9)
    assert all(bw[i] == 0 for i in range(n) if i not in s.scheduled)


def test_zero_rate_node_excluded(caplog):
    m = rates_matrix([1.0, 2.0, 1.0])
    s = Schedule({0: frozenset({1}), 1: frozenset({2}), 2: frozenset({0})}, frozenset({0, 1, 2}))
    m[0, 2] = 0.0
    bw = allocate_bandwidth(s, m, 10.0)
    assert bw[2] == 0.0 and "zero achievable rate" in caplog.text
    assert bw[0] + bw[1] == pytest.approx(10.0)


# --------------------------------------------------------------------------
# timing

def test_duration_hand_value():
    m = rates_matrix([1.0, 1.0])
    s = build_schedule(m, 0.5)
    dur, slots, gamma_t = transmission_durations(s, {0: 1e6, 1: 1e6}, m, 1.0, 1e6, 1.0)
    assert dur[(1, 0)] == pytest.approx(1.0) and slots[(1, 0)] == 1 and gamma_t == 1


def test_doubling_bandwidth_halves_duration():
    m = rates_matrix([1.3, 2.1])
    s = build_schedule(m, 0.5)
    a, _, _ = transmission_durations(s, {0: 1e5, 1: 1e5}, m, 1.0, 1e6, 0.3)
    b, _, _ = transmission_durations(s, {0: 2e5, 1: 2e5}, m, 1.0, 1e6, 0.3)
    for k in a:
        assert b[k] == pytest.approx(a[k] / 2, rel=1e-14)


def test_gamma_t_is_max_slot():
    rng = np.random.default_rng(5)
    m = random_instance(rng, 6)
    s = build_schedule(m, 1.0)
    _, slots, gamma_t = transmission_durations(s, allocate_bandwidth(s, m, 1e4), m, 1.0, 1e5, 0.1)
    assert gamma_t == max(slots.values())
    assert all(isinstance(v, int) and v >= 1 for v in slots.values())


def test_zero_bandwidth_rejected():
    m = rates_matrix([1.0, 1.0])
    with pytest.raises(ContractViolation):
        transmission_durations(build_schedule(m, 0.5), {0: 0.0, 1: 1.0}, m, 1.0, 1.0, 1.0)


@pytest.mark.parametrize("scheduled,w0,expected", [(5, 1, 0), (3, 1, 2), (4, 3, 3)])
def test_waiting_duration(scheduled, w0, expected):
    s = Schedule({}, frozenset(range(scheduled)))
    assert waiting_duration(s, 5, w0) == expected


def test_plan_epoch_consistency():
    cfg = WirelessConfig(payload_params=10_000)
    env = make_environment(cfg, np.random.default_rng(6), count=6)
    out = plan_epoch(env, cfg, model_dim=10)
    assert out.gamma == out.gamma_t + out.gamma_w
    assert math.fsum(out.bandwidths.values()) == pytest.approx(cfg.bandwidth_hz, rel=1e-9)
    assert out.bandwidth_min == min(out.bandwidths[i] for i in out.scheduled)
    with pytest.raises(ContractViolation):
        plan_epoch(env, cfg, 10, allocation="random")
    with pytest.raises(ConfigError):
        plan_epoch(env, cfg, 10, allocation="greedy")
