"""AR traffic generation: periodic DL/UL video and UL pose streams.

Each station runs three flows modeled on the 3GPP XR augmented-reality
profile: a downlink video stream (60 fps, truncated-Gaussian frame sizes,
network jitter on arrivals), an uplink video stream (60 fps, no jitter),
and a fixed-size uplink pose/control stream at 250 Hz.  Application frames
larger than the MPDU payload limit are fragmented before they reach the
MAC buffers.

Times are integer microseconds, sizes integer bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .engine import RngStream

US_PER_MS = 1000

MPDU_PAYLOAD = 1500  # bytes

DL_VIDEO = "dl_video"
UL_VIDEO = "ul_video"
POSE = "pose"


@dataclass(frozen=True)
class TruncGaussModel:
    """Gaussian conditioned on [min, max]; std 0 degenerates to the mean."""

    mean: float
    std: float
    min: float
    max: float

    def __post_init__(self):
        if not (self.min <= self.mean <= self.max):
            raise ValueError("mean outside [min, max]")
        if self.std < 0:
            raise ValueError("negative std")
        if self.min > self.max:
            raise ValueError("min above max")


@dataclass(frozen=True)
class StreamConfig:
    kind: str
    periodicity_us: int
    pdb_us: int
    size_model: TruncGaussModel | int  # int means fixed bytes
    data_rate_mbps: float
    frame_rate: float
    jitter_model: TruncGaussModel | None = None  # in microseconds
    success_rate: float = 0.99

    def __post_init__(self):
        if self.kind not in (DL_VIDEO, UL_VIDEO, POSE):
            raise ValueError(f"unknown stream kind {self.kind!r}")
        if (self.jitter_model is not None) != (self.kind == DL_VIDEO):
            raise ValueError("jitter applies to DL video only")
        if self.pdb_us <= 0:
            raise ValueError("pdb must be positive")
        if isinstance(self.size_model, TruncGaussModel):
            nominal = self.size_model.mean * 8 * self.frame_rate / 1e6
            if abs(nominal - self.data_rate_mbps) / self.data_rate_mbps > 0.02:
                raise ValueError("size model inconsistent with data rate")

    @property
    def downlink(self):
        return self.kind == DL_VIDEO


@dataclass(eq=False, slots=True)
class AppFrame:
    """One application-layer frame (video frame or pose update).

    Identity semantics: frames are tracked as objects through the MAC, so
    equality is not structural.
    """

    stream: StreamConfig
    station: int
    index: int
    gen_time: int
    arrival_time: int
    size: int


@dataclass(eq=False, slots=True)
class Mpdu:
    frame: AppFrame
    index: int
    payload: int
    retries: int = 0
    seq: int = -1  # assigned on buffer admission, orders the shared pool

    def __repr__(self):
        return f"Mpdu(sta={self.frame.station}, {self.frame.stream.kind}#{self.frame.index}.{self.index})"


def default_stream_set(overrides: dict | None = None) -> list[StreamConfig]:
    """The three per-station AR flows with their default parameters.

    overrides maps stream kind to a dict of StreamConfig field replacements,
    e.g. {"dl_video": {"pdb_us": 5000}}.
    """
    base = [
        StreamConfig(
            kind=DL_VIDEO,
            periodicity_us=16667,
            pdb_us=10_000,
            size_model=TruncGaussModel(mean=21000, std=2205, min=10500, max=31500),
            data_rate_mbps=10.0,
            frame_rate=60.0,
            jitter_model=TruncGaussModel(mean=0, std=2000, min=-4000, max=4000),
        ),
        StreamConfig(
            kind=UL_VIDEO,
            periodicity_us=16667,
            pdb_us=30_000,
            size_model=TruncGaussModel(mean=7000, std=735, min=3500, max=10500),
            data_rate_mbps=3.3,
            frame_rate=60.0,
        ),
        StreamConfig(
            kind=POSE,
            periodicity_us=4000,
            pdb_us=10_000,
            size_model=100,
            data_rate_mbps=0.2,
            frame_rate=250.0,
        ),
    ]
    if not overrides:
        return base
    out = []
    for cfg in base:
        repl = overrides.get(cfg.kind)
        if repl:
            fields = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
            fields.update(repl)
            cfg = StreamConfig(**fields)
        out.append(cfg)
    return out


def stream_set_for_station(sta: int, overrides: dict | None = None) -> list[StreamConfig]:
    # Parameters are station-independent; identity kept for future asymmetry.
    return default_stream_set(overrides)


def sample_trunc_gauss(model: TruncGaussModel, rng: RngStream) -> float:
    """Draw from Gaussian(mean, std) conditioned on [min, max].

    Rejection keeps the conditioned shape rather than piling mass at the
    bounds the way clamping would.
    """
    if model.std == 0:
        return model.mean
    while True:
        x = rng.gauss(model.mean, model.std)
        if model.min <= x <= model.max:
            return x


def sample_frame_size(cfg: StreamConfig, rng: RngStream | None) -> int:
    if isinstance(cfg.size_model, int):
        return cfg.size_model
    return round(sample_trunc_gauss(cfg.size_model, rng))


def next_frame_arrival(cfg: StreamConfig, k: int, rng: RngStream | None) -> int:
    """Arrival instant of frame k: k * periodicity plus jitter, floored at 0."""
    t = k * cfg.periodicity_us
    if cfg.jitter_model is not None:
        t += round(sample_trunc_gauss(cfg.jitter_model, rng))
    return max(t, 0)


def fragment(frame: AppFrame) -> list[Mpdu]:
    """Split a frame into <=1500 B MPDUs; only the last may run short."""
    n = math.ceil(frame.size / MPDU_PAYLOAD)
    mpdus = []
    remaining = frame.size
    for i in range(n):
        payload = min(MPDU_PAYLOAD, remaining)
        mpdus.append(Mpdu(frame=frame, index=i, payload=payload))
        remaining -= payload
    return mpdus


def generate_frames(cfg: StreamConfig, station: int, size_rng, jitter_rng, horizon_us: int) -> list[AppFrame]:
    """All frames of one stream with gen_time inside [0, horizon).

    Draw order is fixed (size then jitter, in frame order) so the sequence
    depends only on the stream's RNG labels, not on event interleaving.
    """
    frames = []
    k = 0
    while True:
        gen = k * cfg.periodicity_us
        if gen >= horizon_us:
            break
        size = sample_frame_size(cfg, size_rng)
        arrival = gen
        if cfg.jitter_model is not None:
            arrival = max(gen + round(sample_trunc_gauss(cfg.jitter_model, jitter_rng)), 0)
        frames.append(AppFrame(stream=cfg, station=station, index=k,
                               gen_time=gen, arrival_time=arrival, size=size))
        k += 1
    return frames
