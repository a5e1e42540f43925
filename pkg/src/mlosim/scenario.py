"""Single-cell experiment assembly: geometry, wiring, seed orchestration.

One AP (device 0) and n stations share every configured radio link.
Stations are dropped uniformly over a disk around the AP and activate at
independent uniform instants inside the activation window; each station's
three flows are phase-aligned to its activation, which staggers frame
arrivals across stations.  A run pre-generates all application frames
(their randomness depends only on the seed and the per-stream RNG
labels), schedules their buffer arrivals, runs the event loop to the
horizon, and marks every unfinished frame LOST.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import mld, phy
from .engine import Simulator, rng_stream
from .mac import LinkMac, Medium
from .stats import LOST, DelayCollector, DelayRecord
from .traffic import default_stream_set, generate_frames

log = logging.getLogger(__name__)

AP_ID = 0

CARRIER_ORDER = (5.2, 5.5, 6.1, 6.5)

LINK_SET_SHORTHANDS = {
    "80": (80,),
    "160": (160,),
    "2x40": (40, 40),
    "4x20": (20, 20, 20, 20),
    "2x80": (80, 80),
}

ALLOWED_BANDWIDTH_SETS = {tuple(sorted(v)) for v in LINK_SET_SHORTHANDS.values()}

MIN_LINK_DISTANCE_M = 1.0  # geometry floor; propagation is near-field below


def expand_links(value) -> tuple[phy.LinkSpec, ...]:
    """Accepts a shorthand ("2x40") or a bandwidth list ([40, 40])."""
    if isinstance(value, str):
        if value not in LINK_SET_SHORTHANDS:
            raise ValueError(f"unknown link set {value!r}; "
                             f"expected one of {sorted(LINK_SET_SHORTHANDS)}")
        bws = LINK_SET_SHORTHANDS[value]
    else:
        bws = tuple(int(b) for b in value)
    if len(bws) > len(CARRIER_ORDER):
        raise ValueError("more links than available carriers")
    return tuple(phy.LinkSpec(CARRIER_ORDER[i], bw) for i, bw in enumerate(bws))


def links_label(links) -> str:
    bws = [l.bandwidth_mhz for l in links]
    if len(bws) == 1:
        return str(bws[0])
    if len(set(bws)) == 1:
        return f"{len(bws)}x{bws[0]}"
    return "+".join(str(b) for b in bws)


def equivalent_single_link(links) -> tuple[phy.LinkSpec, ...]:
    """The single link with the same total bandwidth as an MLO link set."""
    total = sum(l.bandwidth_mhz for l in links)
    return expand_links((total,))


@dataclass(frozen=True)
class ScenarioConfig:
    policy: str = "greedy"
    links: tuple = field(default_factory=lambda: expand_links("2x40"))
    n_sta: int = 1
    cell_radius_m: float = 10.0
    sim_duration_s: float = 50.0
    activation_window_s: float = 1.0
    seeds: tuple = tuple(range(10))
    traffic_overrides: dict | None = None
    buffer_cap: int = mld.DEFAULT_BUFFER_CAP
    count_own_tx: bool = True
    update_period_s: float = 0.5
    ma_window: int = mld.DEFAULT_MA_WINDOW
    rate_control: str = "minstrel"
    fixed_mcs: int = 7

    def validate(self):
        policy = mld.canonical_policy(self.policy)
        if self.n_sta < 1:
            raise ValueError("n_sta must be at least 1")
        if not self.seeds:
            raise ValueError("at least one seed required")
        if policy == mld.SL and len(self.links) != 1:
            raise ValueError("sl requires exactly 1 link")
        if policy != mld.SL and len(self.links) < 2:
            raise ValueError(f"{policy} requires at least 2 links")
        bws = tuple(sorted(l.bandwidth_mhz for l in self.links))
        if bws not in ALLOWED_BANDWIDTH_SETS:
            raise ValueError(f"unsupported link set {bws}; "
                             f"allowed: {sorted(ALLOWED_BANDWIDTH_SETS)}")
        carriers = [l.carrier_ghz for l in self.links]
        if len(set(carriers)) != len(carriers):
            raise ValueError("links must use distinct carriers")
        if self.rate_control not in ("minstrel", "fixed"):
            raise ValueError(f"unknown rate_control {self.rate_control!r}")
        if not 0 <= self.fixed_mcs < len(phy.MCS_TABLE):
            raise ValueError("fixed_mcs out of range")
        if self.sim_duration_s <= 0 or self.activation_window_s < 0:
            raise ValueError("durations must be positive")
        if self.sim_duration_s <= self.activation_window_s:
            raise ValueError("sim_duration_s must exceed activation_window_s")

    @property
    def horizon_us(self) -> int:
        return int(self.sim_duration_s * 1_000_000)

    @property
    def update_period_us(self) -> int:
        return int(self.update_period_s * 1_000_000)


def streams_of(cfg: ScenarioConfig):
    overrides = dict(cfg.traffic_overrides or {})
    enabled = overrides.pop("enabled", None)
    streams = default_stream_set(overrides)
    if enabled is not None:
        streams = [s for s in streams if s.kind in enabled]
        if not streams:
            raise ValueError("traffic.enabled selects no streams")
    return streams


@dataclass
class Deployment:
    positions: list  # (x, y) per station, AP at the origin
    activation_us: list

    def distance(self, sta_index: int) -> float:
        x, y = self.positions[sta_index]
        return max(math.hypot(x, y), MIN_LINK_DISTANCE_M)


def deploy(cfg: ScenarioConfig, seed: int) -> Deployment:
    """Disk-uniform positions (r = R sqrt(u)) and uniform activations."""
    pos_rng = rng_stream(seed, "deploy.pos")
    act_rng = rng_stream(seed, "deploy.act")
    window = int(cfg.activation_window_s * 1_000_000)
    positions, activations = [], []
    for _ in range(cfg.n_sta):
        r = cfg.cell_radius_m * math.sqrt(pos_rng.random())
        theta = 2 * math.pi * pos_rng.random()
        positions.append((r * math.cos(theta), r * math.sin(theta)))
        activations.append(round(act_rng.random() * window))
    return Deployment(positions, activations)


class Experiment:
    """One seed's fully wired simulation."""

    def __init__(self, cfg: ScenarioConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.sim = Simulator(seed)
        self.collector = DelayCollector()
        self.deployment = deploy(cfg, seed)
        self.streams = streams_of(cfg)
        policy = mld.canonical_policy(cfg.policy)

        self.media = [Medium(self.sim, link, j) for j, link in enumerate(cfg.links)]
        self.devices: dict[int, mld.MldDevice] = {}
        for dev_id in range(cfg.n_sta + 1):
            device = mld.MldDevice(
                self.sim, dev_id, policy, self.collector,
                buffer_cap=cfg.buffer_cap, count_own_tx=cfg.count_own_tx,
                update_period_us=cfg.update_period_us, ma_window=cfg.ma_window)
            for medium in self.media:
                device.add_mac(LinkMac(
                    self.sim, medium, dev_id, device,
                    rate_control=cfg.rate_control, fixed_mcs=cfg.fixed_mcs))
            device.validate()
            self.devices[dev_id] = device

        network = self.devices
        for device in self.devices.values():
            device.network = network
        for sta in range(1, cfg.n_sta + 1):
            dist = self.deployment.distance(sta - 1)
            for j, link in enumerate(cfg.links):
                s = phy.snr(link, dist)
                self.devices[AP_ID].snr_map[(sta, j)] = s
                self.devices[sta].snr_map[(AP_ID, j)] = s

        self.frames = self._generate_traffic()
        # arrivals are chained per stream (each event schedules its
        # successor) to keep the event heap shallow
        for chain in self._arrival_chains:
            self._schedule_arrival(chain, 0)
        self.sim.schedule(cfg.update_period_us, self._tick)

    def _generate_traffic(self):
        frames = []
        self._arrival_chains = []
        horizon = self.cfg.horizon_us
        for sta in range(1, self.cfg.n_sta + 1):
            act = self.deployment.activation_us[sta - 1]
            for stream in self.streams:
                size_rng = rng_stream(self.seed, f"traffic.sta{sta}.{stream.kind}.size")
                jitter_rng = rng_stream(self.seed, f"traffic.sta{sta}.{stream.kind}.jitter")
                chain = generate_frames(stream, sta, size_rng, jitter_rng,
                                        horizon - act)
                for frame in chain:
                    frame.gen_time += act
                    frame.arrival_time += act
                if chain:
                    self._arrival_chains.append(chain)
                    frames.extend(chain)
        return frames

    def _schedule_arrival(self, chain: list, i: int):
        self.sim.schedule(chain[i].arrival_time, self._on_arrival, chain, i)

    def _on_arrival(self, chain: list, i: int):
        if i + 1 < len(chain):
            self._schedule_arrival(chain, i + 1)
        frame = chain[i]
        target = AP_ID if frame.stream.downlink else frame.station
        self.devices[target].on_frame(frame)

    def _tick(self):
        for device in self.devices.values():
            device.on_tick()
        nxt = self.sim.now + self.cfg.update_period_us
        if nxt <= self.cfg.horizon_us:
            self.sim.schedule(nxt, self._tick)

    def run(self) -> list[DelayRecord]:
        self.sim.run_until(self.cfg.horizon_us)
        for frame in self.frames:
            if not self.collector.has(frame):
                self.collector.record(frame, LOST)
        return self.collector.rows(self.seed)


def run_one(cfg: ScenarioConfig, seed: int) -> list[DelayRecord]:
    return Experiment(cfg, seed).run()


def _seed_task(args):
    cfg, seed = args
    return run_one(cfg, seed)


def run_seeds(cfg: ScenarioConfig, workers: int = 1) -> list[DelayRecord]:
    """One independent simulation per seed; records merged in seed order."""
    cfg.validate()
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_seed_task, [(cfg, s) for s in cfg.seeds]))
    else:
        results = [run_one(cfg, seed) for seed in cfg.seeds]
    merged = []
    for rows in results:
        merged.extend(rows)
    return merged
