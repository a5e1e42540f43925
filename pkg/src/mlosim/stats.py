"""Delay accounting and the pass/fail machinery built on it.

A frame either finishes with a delay in microseconds or is LOST (retry
exhaustion, buffer overflow, or still unfinished at the horizon).  LOST
sorts above every finite delay, so a station with more than 1% lost
frames cannot pass a 99th-percentile check no matter how fast the rest
was delivered.

The headline metric mirrors the evaluation procedure: per-station p99
over seed-merged samples, worst station compared against the stream's
delay budget, and a capacity sweep that raises the station count until a
stream misses its budget.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

from .traffic import StreamConfig

log = logging.getLogger(__name__)

LOST = None

_LOST_KEY = math.inf


@dataclass(frozen=True, slots=True)
class DelayRecord:
    seed: int
    station: int
    stream: str
    frame_index: int
    delay_us: int | None


class DelayCollector:
    """Per-run sink; guards against double-recording a frame."""

    def __init__(self):
        self._records = {}

    def record(self, frame, delay_us):
        key = (frame.station, frame.stream.kind, frame.index)
        if key in self._records:
            raise RuntimeError(f"frame {key} recorded twice")
        self._records[key] = delay_us

    def has(self, frame) -> bool:
        return (frame.station, frame.stream.kind, frame.index) in self._records

    def rows(self, seed: int) -> list[DelayRecord]:
        return [DelayRecord(seed, sta, kind, idx, delay)
                for (sta, kind, idx), delay in sorted(self._records.items())]


def _sort_key(delay) -> float:
    return _LOST_KEY if delay is None else delay


def percentile(samples: list, p: float) -> float:
    """Nearest-rank percentile; LOST sentinels count as +inf.

    Value at 1-based index ceil(p*N) of the ascending sort.  The epsilon
    guards against float noise in p*N landing a hair above an integer.
    """
    if not samples:
        raise ValueError("no samples")
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    rank = math.ceil(p * len(samples) - 1e-9)
    value = sorted(samples, key=_sort_key)[rank - 1]
    return _LOST_KEY if value is None else value


@dataclass
class StreamVerdict:
    stream: str
    worst_p99_us: float
    pdb_us: int
    passed: bool
    station_p99: dict


def verdict(records: list, stream_kind: str, pdb_us: int) -> StreamVerdict:
    """Worst per-station p99 for one stream, merged across seeds."""
    by_station: dict[int, list] = {}
    for r in records:
        if r.stream == stream_kind:
            by_station.setdefault(r.station, []).append(r.delay_us)
    if not by_station:
        raise ValueError(f"no records for stream {stream_kind!r}")
    station_p99 = {sta: percentile(v, 0.99) for sta, v in sorted(by_station.items())}
    worst = max(station_p99.values())
    return StreamVerdict(stream_kind, worst, pdb_us, worst <= pdb_us, station_p99)


def evaluate(records: list, streams: list[StreamConfig]) -> list[StreamVerdict]:
    return [verdict(records, s.kind, s.pdb_us) for s in streams]


def all_pass(verdicts: list[StreamVerdict]) -> bool:
    return all(v.passed for v in verdicts)


def export_ccdf(records: list, stream_kind: str) -> list[tuple[int, float]]:
    """Pooled empirical CCDF: P(delay > d) at each distinct finite delay.

    LOST frames keep the tail from reaching zero (residual floor).
    """
    delays = [r.delay_us for r in records if r.stream == stream_kind]
    if not delays:
        raise ValueError(f"no records for stream {stream_kind!r}")
    finite = sorted(d for d in delays if d is not None)
    n = len(delays)
    rows = []
    seen = 0
    i = 0
    while i < len(finite):
        d = finite[i]
        while i < len(finite) and finite[i] == d:
            seen += 1
            i += 1
        rows.append((d, (n - seen) / n))
    return rows


@dataclass
class CapacityResult:
    policy: str
    links_label: str
    max_sta: int
    per_n: list  # (n, [StreamVerdict], bool)


def capacity_search(base_cfg, max_n: int = 64, workers: int = 1) -> CapacityResult:
    """Raise n_sta from 1 until a stream verdict fails; previous n is the
    capacity.  Stops early on the first failure (loads only grow with n).
    """
    from . import scenario  # deferred: scenario pulls in the whole stack

    per_n = []
    max_sta = 0
    n = 1
    while n <= max_n:
        cfg = replace(base_cfg, n_sta=n)
        records = scenario.run_seeds(cfg, workers=workers)
        verdicts = evaluate(records, scenario.streams_of(cfg))
        ok = all_pass(verdicts)
        per_n.append((n, verdicts, ok))
        log.info("capacity probe policy=%s n=%d -> %s", base_cfg.policy, n,
                 "pass" if ok else "fail")
        if not ok:
            break
        max_sta = n
        n += 1
    else:
        log.warning("capacity sweep hit max_n=%d without failing", max_n)
    if max_sta == 0:
        log.warning("capacity 0: n=1 already fails for policy=%s", base_cfg.policy)
    return CapacityResult(base_cfg.policy, scenario.links_label(base_cfg.links),
                          max_sta, per_n)


# -- file formats ---------------------------------------------------------

def format_delay(delay) -> str:
    if delay is None or delay == math.inf:
        return "LOST"
    return str(int(delay))


def format_records(records: list[DelayRecord]) -> str:
    lines = ["seed,station,stream,frame_index,delay_us"]
    for r in records:
        lines.append(f"{r.seed},{r.station},{r.stream},{r.frame_index},{format_delay(r.delay_us)}")
    return "\n".join(lines) + "\n"


def parse_records(text: str) -> list[DelayRecord]:
    records = []
    lines = text.strip().splitlines()
    for line in lines[1:]:
        seed, sta, stream, idx, delay = line.split(",")
        records.append(DelayRecord(int(seed), int(sta), stream, int(idx),
                                   None if delay == "LOST" else int(delay)))
    return records


def format_ccdf(rows: list[tuple[int, float]]) -> str:
    lines = ["delay_us,ccdf"]
    for d, c in rows:
        lines.append(f"{d},{c:.10g}")
    return "\n".join(lines) + "\n"


def format_summary(verdicts: list[StreamVerdict]) -> str:
    lines = []
    for v in verdicts:
        lines.append(f"stream={v.stream} worst_p99_us={format_delay(v.worst_p99_us)} "
                     f"pdb_us={v.pdb_us} verdict={'PASS' if v.passed else 'FAIL'}")
    lines.append(f"overall={'PASS' if all_pass(verdicts) else 'FAIL'}")
    return "\n".join(lines) + "\n"


def format_capacity(result: CapacityResult) -> str:
    lines = [f"policy={result.policy} links={result.links_label} max_sta={result.max_sta}"]
    for n, verdicts, ok in result.per_n:
        parts = [f"n={n}", "pass" if ok else "fail"]
        for v in verdicts:
            parts.append(f"{v.stream}_p99_us={format_delay(v.worst_p99_us)}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
