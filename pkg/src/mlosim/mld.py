"""Upper MAC of a multi-link device: shared buffer and link allocation.

A device (AP or STA) owns one MPDU pool shared by all of its link MACs.
Five allocation behaviors are supported:

- sl: degenerate single-link device; the one link drains the pool.
- greedy: every link contends whenever the pool is non-empty; the link
  that wins an access pulls the largest sendable prefix at that moment.
- uniform: the pool is pre-split across links in equal shares.
- congestion: shares proportional to each link's estimated free time
  (update period minus moving-average busy time).
- condition: shares proportional to free time times the data rate the
  link's rate selector would use next.

The pre-splitting policies re-run on every BlockAck or timeout
resolution: all MPDUs still waiting on any link are recalled and the full
pool is redistributed.  A link whose share lands on a busy medium simply
keeps the MPDUs parked until the next restart, which is what starves
transfers when one link never wins access.

Frame delay is recorded when the BlockAck confirming the frame's last
fragment completes; frames that exhaust retries, overflow the buffer, or
never finish get the LOST sentinel.
"""

from __future__ import annotations

import logging
from collections import deque

from .mac import Ampdu, LinkMac, aggregate, mpdu_dest, retry_or_drop
from .phy import tx_duration
from .traffic import AppFrame, fragment

log = logging.getLogger(__name__)

LOST = None

SL = "sl"
GREEDY = "greedy"
UNIFORM = "uniform"
CONGESTION = "congestion"
CONDITION = "condition"
POLICIES = (SL, GREEDY, UNIFORM, CONGESTION, CONDITION)
SAP_POLICIES = (UNIFORM, CONGESTION, CONDITION)

POLICY_ALIASES = {
    "single_link": SL,
    "congestion_aware": CONGESTION,
    "condition_aware": CONDITION,
}

DEFAULT_BUFFER_CAP = 2048
DEFAULT_UPDATE_PERIOD_US = 500_000
DEFAULT_MA_WINDOW = 10


def canonical_policy(name: str) -> str:
    policy = POLICY_ALIASES.get(name, name)
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; expected one of {POLICIES}")
    return policy


class CongestionEstimate:
    """Moving average of per-period link busy time."""

    def __init__(self, update_period_us: int = DEFAULT_UPDATE_PERIOD_US,
                 window: int = DEFAULT_MA_WINDOW):
        self.update_period_us = update_period_us
        self.samples = deque(maxlen=window)

    def update(self, period_busy_us: int):
        if not 0 <= period_busy_us <= self.update_period_us:
            raise ValueError("busy time outside the update period")
        self.samples.append(period_busy_us)

    @property
    def busy_ma_us(self) -> float:
        if not self.samples:
            return 0.0
        return sum(self.samples) / len(self.samples)

    def free_time_us(self) -> float:
        return max(self.update_period_us - self.busy_ma_us, 0.0)


def split_uniform(n: int, i: int) -> list[int]:
    """Sequential shares of ceil(n/i), last links absorbing the shortfall."""
    share = -(-n // i)
    counts = []
    remaining = n
    for _ in range(i):
        c = min(share, remaining)
        counts.append(c)
        remaining -= c
    return counts


def split_weighted(n: int, weights: list[float]) -> list[int]:
    """Largest-remainder apportionment of n items by weight.

    Exact sum is guaranteed; remainder ties break toward the lower index.
    All-zero weights degrade to the uniform split.
    """
    total = sum(weights)
    if total <= 0:
        return split_uniform(n, len(weights))
    quotas = [n * w / total for w in weights]
    counts = [int(q) for q in quotas]
    leftover = n - sum(counts)
    by_remainder = sorted(range(len(weights)), key=lambda j: (counts[j] - quotas[j], j))
    for j in by_remainder[:leftover]:
        counts[j] += 1
    return counts


class MldDevice:
    """One AP or STA: the shared buffer, its link MACs, and the policy."""

    def __init__(self, sim, device: int, policy: str, collector,
                 buffer_cap: int = DEFAULT_BUFFER_CAP,
                 count_own_tx: bool = True,
                 update_period_us: int = DEFAULT_UPDATE_PERIOD_US,
                 ma_window: int = DEFAULT_MA_WINDOW,
                 default_snr_db: float = 100.0):
        self.sim = sim
        self.device = device
        self.policy = canonical_policy(policy)
        self.collector = collector
        self.buffer_cap = buffer_cap
        self.count_own_tx = count_own_tx
        self.update_period_us = update_period_us
        self.ma_window = ma_window
        self.default_snr_db = default_snr_db
        self.macs: list[LinkMac] = []
        self.estimators: list[CongestionEstimate] = []
        self._busy_snapshots: list[int] = []
        self.snr_map: dict[tuple[int, int], float] = {}
        self.network: dict[int, "MldDevice"] | None = None
        self.pending: list = []
        self.mpdu_load = 0
        self._seq = 0
        self.remaining: dict[AppFrame, int] = {}
        self.policy_runs = 0
        self.restart_count = 0
        self.admission_drops = 0

    def add_mac(self, mac: LinkMac):
        self.macs.append(mac)
        self.estimators.append(CongestionEstimate(self.update_period_us, self.ma_window))
        self._busy_snapshots.append(0)

    def validate(self):
        if self.policy == SL and len(self.macs) != 1:
            raise ValueError("sl requires exactly 1 link")
        if self.policy != SL and len(self.macs) < 2:
            raise ValueError(f"{self.policy} requires at least 2 links")

    # -- wiring hooks used by LinkMac -----------------------------------

    def snr_to(self, dest: int, link_index: int) -> float:
        return self.snr_map.get((dest, link_index), self.default_snr_db)

    def mac_of(self, dest: int, link_index: int):
        if self.network is None:
            return None
        return self.network[dest].macs[link_index]

    # -- traffic entry ---------------------------------------------------

    def on_frame(self, frame: AppFrame):
        mpdus = fragment(frame)
        if self.mpdu_load + len(mpdus) > self.buffer_cap:
            self.admission_drops += 1
            log.debug("dev%d buffer full, dropping %s frame %d",
                      self.device, frame.stream.kind, frame.index)
            self.collector.record(frame, LOST)
            return
        for m in mpdus:
            m.seq = self._seq
            self._seq += 1
        self.mpdu_load += len(mpdus)
        self.remaining[frame] = len(mpdus)
        was_empty = not self.pending
        self.pending.extend(mpdus)
        if self.policy in SAP_POLICIES and was_empty:
            self._run_policy()
        self._kick_macs()

    # -- policy ------------------------------------------------------------

    def _weights(self) -> list[float]:
        free = [est.free_time_us() for est in self.estimators]
        if self.policy == CONGESTION:
            return free
        dest = mpdu_dest(self.pending[0])
        return [f * mac.decided_rate(dest) for f, mac in zip(free, self.macs)]

    def _run_policy(self):
        n = len(self.pending)
        if self.policy == UNIFORM:
            counts = split_uniform(n, len(self.macs))
        else:
            counts = split_weighted(n, self._weights())
        start = 0
        for mac, c in zip(self.macs, counts):
            if c:
                mac.allocated.extend(self.pending[start:start + c])
                start += c
        self.pending.clear()
        self.policy_runs += 1

    def _kick_macs(self):
        if self.policy in SAP_POLICIES:
            for mac in self.macs:
                if mac.allocated:
                    mac.ensure_contending()
        elif self.pending:
            for mac in self.macs:
                mac.ensure_contending()

    # -- transmission service (called by LinkMac) ---------------------------

    def build_ampdu(self, mac: LinkMac):
        source = mac.allocated if self.policy in SAP_POLICIES else self.pending
        if not source:
            return None
        dest = mpdu_dest(source[0])
        mcs = mac.pick_mcs(dest)
        mpdus = aggregate(source, mcs, mac.bandwidth)
        del source[:len(mpdus)]
        if not source and self.policy not in SAP_POLICIES:
            # pool drained: siblings still counting down backoff have
            # nothing to send, stand them down until new frames arrive
            for mc in self.macs:
                if mc is not mac:
                    mc.abort_contention()
        duration = tx_duration(sum(m.payload for m in mpdus), mcs, mac.bandwidth)
        return Ampdu(mpdus, duration, self.device, dest, mac.link_index, mcs)

    def on_resolution(self, mac: LinkMac, ampdu: Ampdu, bitmap):
        now = self.sim.now
        if bitmap is None:
            delivered, failed = [], ampdu.mpdus
        else:
            delivered = [m for m, ok in zip(ampdu.mpdus, bitmap) if ok]
            failed = [m for m, ok in zip(ampdu.mpdus, bitmap) if not ok]
        for m in delivered:
            self._deliver(m, now)
        requeue = []
        for m in failed:
            if retry_or_drop(m):
                requeue.append(m)
            else:
                self._drop(m)
        if self.policy in SAP_POLICIES:
            recalled = requeue
            for mc in self.macs:
                if mc.allocated:
                    recalled.extend(mc.allocated)
                    mc.allocated = []
            recalled.extend(self.pending)
            recalled.sort(key=lambda m: m.seq)
            self.pending = recalled
            if self.pending:
                self.restart_count += 1
                self._run_policy()
            for mc in self.macs:
                if not mc.allocated:
                    mc.abort_contention()
        elif requeue:
            self.pending = sorted(requeue + self.pending, key=lambda m: m.seq)
        self._kick_macs()

    # -- frame bookkeeping ---------------------------------------------------

    def _deliver(self, mpdu, now: int):
        self.mpdu_load -= 1
        frame = mpdu.frame
        left = self.remaining.get(frame)
        if left is None:  # a sibling already pushed the frame to LOST
            return
        if left == 1:
            del self.remaining[frame]
            self.collector.record(frame, now - frame.arrival_time)
        else:
            self.remaining[frame] = left - 1

    def _drop(self, mpdu):
        self.mpdu_load -= 1
        frame = mpdu.frame
        if frame in self.remaining:
            del self.remaining[frame]
            self.collector.record(frame, LOST)

    # -- congestion sampling ---------------------------------------------------

    def on_tick(self):
        """Per update period: push each link's fresh busy time into its MA."""
        now = self.sim.now
        for j, mac in enumerate(self.macs):
            total = mac.sensed_busy_total(now, self.count_own_tx)
            self.estimators[j].update(total - self._busy_snapshots[j])
            self._busy_snapshots[j] = total
