import math

import pytest
from hypothesis import given, settings, strategies as st

from mlosim import phy
from mlosim.engine import Simulator
from mlosim.mac import BLOCK_ACK_US, DIFS_US, SIFS_US, LinkMac, Medium
from mlosim.mld import (
    LOST,
    CongestionEstimate,
    MldDevice,
    canonical_policy,
    split_uniform,
    split_weighted,
)
from mlosim.traffic import AppFrame, default_stream_set

DL = default_stream_set()[0]
MCS11_80 = phy.MCS_TABLE[11]


class FixedRng:
    def __init__(self, values):
        self.values = list(values)

    def randint(self, a, b):
        v = self.values.pop(0)
        self.values.append(v)  # cycle
        return v


class DictCollector:
    def __init__(self):
        self.records = {}

    def record(self, frame, delay):
        key = (frame.station, frame.stream.kind, frame.index)
        assert key not in self.records, "frame recorded twice"
        self.records[key] = delay


def dl_frame(size, station=1, index=0, t=0):
    return AppFrame(stream=DL, station=station, index=index,
                    gen_time=t, arrival_time=t, size=size)


def make_device(policy, n_links=2, fixed_mcs=11, backoffs=(0,), **kwargs):
    sim = Simulator(seed=3)
    carriers = (5.2, 5.5, 6.1, 6.5)
    media = [Medium(sim, phy.LinkSpec(carriers[j], 80), j) for j in range(n_links)]
    collector = DictCollector()
    dev = MldDevice(sim, 0, policy, collector, **kwargs)
    for med in media:
        mac = LinkMac(sim, med, 0, dev, rate_control="fixed", fixed_mcs=fixed_mcs)
        mac.backoff_rng = FixedRng(backoffs)
        dev.add_mac(mac)
    return sim, media, dev, collector


def spy_transmissions(sim, dev):
    sent = []
    orig = dev.build_ampdu

    def wrapper(mac):
        ampdu = orig(mac)
        if ampdu is not None:
            sent.append((sim.now, mac.link_index, len(ampdu.mpdus)))
        return ampdu

    dev.build_ampdu = wrapper
    return sent


# -- policy arithmetic ---------------------------------------------------

def test_policy_names_and_aliases():
    assert canonical_policy("greedy") == "greedy"
    assert canonical_policy("single_link") == "sl"
    assert canonical_policy("congestion_aware") == "congestion"
    assert canonical_policy("condition_aware") == "condition"
    with pytest.raises(ValueError):
        canonical_policy("round_robin")


def test_split_uniform_cases():
    assert split_uniform(14, 2) == [7, 7]
    assert split_uniform(5, 2) == [3, 2]
    assert split_uniform(1, 4) == [1, 0, 0, 0]
    assert split_uniform(10, 4) == [3, 3, 3, 1]


@given(st.integers(1, 500), st.integers(1, 8))
@settings(max_examples=300)
def test_split_uniform_exact_sum(n, i):
    counts = split_uniform(n, i)
    assert sum(counts) == n
    assert len(counts) == i
    assert all(c >= 0 for c in counts)
    assert max(counts) == -(-n // i)


def test_split_weighted_free_time_ratio():
    assert split_weighted(10, [300_000, 200_000]) == [6, 4]


def test_split_weighted_condition_formula():
    # free 0.3 s x 100 Mb/s and 0.4 s x 50 Mb/s
    assert split_weighted(10, [0.3 * 100, 0.4 * 50]) == [6, 4]


def test_split_weighted_zero_weight_link_excluded():
    assert split_weighted(10, [0.5, 0.0]) == [10, 0]


def test_split_weighted_equal_reduces_to_uniform():
    assert split_weighted(14, [1.0, 1.0]) == [7, 7]


def test_split_weighted_all_zero_falls_back_to_uniform():
    assert split_weighted(10, [0.0, 0.0, 0.0]) == [4, 4, 2]


@given(
    st.integers(0, 400),
    st.lists(st.floats(0, 1000, allow_nan=False), min_size=1, max_size=6),
)
@settings(max_examples=300)
def test_split_weighted_exact_sum_and_monotone(n, weights):
    counts = split_weighted(n, weights)
    assert sum(counts) == n
    if sum(weights) > 0:
        top = max(range(len(weights)), key=lambda j: weights[j])
        if all(weights[top] > w for j, w in enumerate(weights) if j != top):
            assert counts[top] == max(counts)


# -- congestion estimator --------------------------------------------------

def test_estimator_constant_window():
    est = CongestionEstimate()
    for _ in range(10):
        est.update(100_000)
    assert est.busy_ma_us == 100_000
    assert est.free_time_us() == 400_000


def test_estimator_partial_window():
    est = CongestionEstimate()
    est.update(50_000)
    assert est.busy_ma_us == 50_000


def test_estimator_converges_to_duty_cycle():
    est = CongestionEstimate()
    for _ in range(10):
        est.update(200_000)  # 40% of 0.5 s
    assert abs(est.busy_ma_us - 200_000) / 200_000 < 0.10
    assert len(est.samples) == 10


def test_estimator_window_evicts_oldest():
    est = CongestionEstimate()
    for _ in range(10):
        est.update(0)
    for _ in range(10):
        est.update(300_000)
    assert est.busy_ma_us == 300_000


def test_estimator_rejects_busy_beyond_period():
    est = CongestionEstimate()
    with pytest.raises(ValueError):
        est.update(500_001)


def test_empty_estimator_reports_full_free_time():
    est = CongestionEstimate()
    assert est.free_time_us() == 500_000


# -- device behavior -------------------------------------------------------

def test_sl_requires_single_link():
    sim, media, dev, _ = make_device("sl", n_links=2)
    with pytest.raises(ValueError):
        dev.validate()
    sim, media, dev, _ = make_device("uniform", n_links=1)
    with pytest.raises(ValueError):
        dev.validate()


def test_uniform_presplits_across_links():
    sim, media, dev, _ = make_device("uniform", n_links=2)
    dev.on_frame(dl_frame(21000))  # 14 MPDUs
    assert [len(m.allocated) for m in dev.macs] == [7, 7]
    assert dev.pending == []


def test_greedy_leaves_pool_shared():
    sim, media, dev, _ = make_device("greedy", n_links=2)
    dev.on_frame(dl_frame(21000))
    assert [len(m.allocated) for m in dev.macs] == [0, 0]
    assert len(dev.pending) == 14


def test_congestion_allocation_follows_free_time():
    sim, media, dev, _ = make_device("congestion", n_links=2)
    for _ in range(10):
        dev.estimators[0].update(200_000)  # free 0.3 s
        dev.estimators[1].update(300_000)  # free 0.2 s
    dev.on_frame(dl_frame(15000, index=0))  # 10 MPDUs
    assert [len(m.allocated) for m in dev.macs] == [6, 4]


def test_condition_allocation_weighs_data_rate():
    sim, media, dev, _ = make_device("condition", n_links=2)
    dev.macs[0].fixed_mcs = 7   # 344 Mb/s at 80 MHz
    dev.macs[1].fixed_mcs = 4   # 206.4 Mb/s
    dev.on_frame(dl_frame(15000))  # equal free time; 10 MPDUs
    assert [len(m.allocated) for m in dev.macs] == [6, 4]


def test_condition_equal_rates_reduces_to_congestion():
    sim, media, dev, _ = make_device("condition", n_links=2)
    for _ in range(10):
        dev.estimators[0].update(200_000)
        dev.estimators[1].update(300_000)
    dev.on_frame(dl_frame(15000))
    assert [len(m.allocated) for m in dev.macs] == [6, 4]


def test_greedy_single_access_for_one_frame():
    sim, media, dev, collector = make_device("greedy", n_links=2)
    sent = spy_transmissions(sim, dev)
    dev.on_frame(dl_frame(21000))
    sim.run_until(100_000)
    assert len(sent) == 1 and sent[0][2] == 14
    key = (1, "dl_video", 0)
    dur = phy.tx_duration(21000, MCS11_80, 80)
    assert collector.records[key] == DIFS_US + dur + SIFS_US + BLOCK_ACK_US


def test_delay_recorded_at_blockack_completion():
    sim, media, dev, collector = make_device("sl", n_links=1, backoffs=(5,))
    dev.on_frame(dl_frame(21000))
    sim.run_until(100_000)
    dur = phy.tx_duration(21000, MCS11_80, 80)
    expected = DIFS_US + 5 * 9 + dur + SIFS_US + BLOCK_ACK_US
    assert collector.records[(1, "dl_video", 0)] == expected


def test_sap_blocked_link_drain_and_restart_count():
    sim, media, dev, collector = make_device("uniform", n_links=2)
    media[1].inject_busy(10**9)  # link B never goes idle
    sent = spy_transmissions(sim, dev)
    dev.on_frame(dl_frame(96000))  # 64 MPDUs
    sim.run_until(1_000_000)
    assert collector.records[(1, "dl_video", 0)] is not LOST
    assert [s[2] for s in sent] == [32, 16, 8, 4, 2, 1, 1]
    assert all(s[1] == 0 for s in sent)
    assert math.ceil(math.log2(64)) <= dev.restart_count <= math.ceil(math.log2(64)) + 2
    assert dev.mpdu_load == 0


def test_greedy_blocked_link_single_access():
    sim, media, dev, collector = make_device("greedy", n_links=2)
    media[1].inject_busy(10**9)
    sent = spy_transmissions(sim, dev)
    dev.on_frame(dl_frame(96000))
    sim.run_until(1_000_000)
    assert [s[2] for s in sent] == [64]
    assert dev.restart_count == 0
    assert collector.records[(1, "dl_video", 0)] is not LOST


def test_sap_restart_preserves_sequence_order():
    sim, media, dev, _ = make_device("uniform", n_links=2)
    media[1].inject_busy(10**9)
    dev.on_frame(dl_frame(21000))
    sim.run_until(2_000)  # partway through the drain
    seqs = [m.seq for m in dev.macs[0].allocated] + [m.seq for m in dev.macs[1].allocated]
    assert dev.macs[0].allocated == sorted(dev.macs[0].allocated, key=lambda m: m.seq)
    if dev.macs[0].allocated and dev.macs[1].allocated:
        assert dev.macs[0].allocated[-1].seq < dev.macs[1].allocated[0].seq
    assert seqs == sorted(seqs)


def test_buffer_cap_drops_whole_frame_as_lost():
    sim, media, dev, collector = make_device("greedy", n_links=2, buffer_cap=10)
    dev.on_frame(dl_frame(21000))  # 14 MPDUs > 10
    assert collector.records[(1, "dl_video", 0)] is LOST
    assert dev.admission_drops == 1
    assert dev.mpdu_load == 0


def test_retry_exhaustion_records_lost():
    # two saturated devices on one medium with zero backoff collide forever
    sim = Simulator(seed=1)
    medium = Medium(sim, phy.LinkSpec(5.2, 80), 0)
    col_a, col_b = DictCollector(), DictCollector()
    dev_a = MldDevice(sim, 0, "sl", col_a)
    dev_b = MldDevice(sim, 1, "sl", col_b)
    for dev in (dev_a, dev_b):
        mac = LinkMac(sim, medium, dev.device, dev, rate_control="fixed", fixed_mcs=11)
        mac.backoff_rng = FixedRng([0])
        dev.add_mac(mac)
    dev_a.on_frame(dl_frame(1500, station=1))
    dev_b.on_frame(dl_frame(1500, station=2))
    sim.run_until(1_000_000)
    assert col_a.records[(1, "dl_video", 0)] is LOST
    assert col_b.records[(2, "dl_video", 0)] is LOST
    assert dev_a.mpdu_load == 0 and dev_b.mpdu_load == 0


def test_conservation_across_allocation_and_restart():
    sim, media, dev, collector = make_device("uniform", n_links=2)
    total = 0
    for k in range(6):
        dev.on_frame(dl_frame(21000, index=k, t=0))
        total += 14

    def in_system():
        q = len(dev.pending) + sum(len(m.allocated) for m in dev.macs)
        q += sum(len(m.in_flight.mpdus) for m in dev.macs if m.in_flight)
        return q

    checks = []
    for t in range(0, 20_000, 500):
        sim.schedule(t, lambda: checks.append((in_system(), dev.mpdu_load)))
    sim.run_until(200_000)
    assert all(queued == load for queued, load in checks)
    assert dev.mpdu_load == 0
    assert len(collector.records) == 6
    assert all(v is not LOST for v in collector.records.values())


def test_on_tick_feeds_estimators_from_medium():
    sim, media, dev, _ = make_device("congestion", n_links=2)
    for t in range(0, 500_000, 100_000):
        sim.schedule(t, media[0].inject_busy, 40_000)  # 40% duty on link 0
    sim.schedule(500_000, dev.on_tick)
    sim.run_until(600_000)
    assert dev.estimators[0].busy_ma_us == 200_000
    assert dev.estimators[1].busy_ma_us == 0
