"""Aggregate statistics over an event log."""

from __future__ import annotations

import math
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from ..platform import EventLog, EventRecord

_PROGRAM = re.compile(r"\bregion=(\d+)\b.*\bduration_ms=([0-9.eE+-]+)")


@dataclass(frozen=True)
class RegionStats:
    durations_ms: tuple[float, ...]
    mean_ms: float
    sample_std_ms: float

    @property
    def n(self) -> int:
        return len(self.durations_ms)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "durations_ms": list(self.durations_ms),
            "mean_ms": self.mean_ms,
            "sample_std_ms": self.sample_std_ms,
        }


@dataclass(frozen=True)
class MetricsSummary:
    regions: dict[int, RegionStats] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "regions": {str(rid): st.to_dict() for rid, st in sorted(self.regions.items())},
            "counts": dict(sorted(self.counts.items())),
        }


def summarize(durations: Sequence[float]) -> RegionStats:
    """Mean and n-1 sample standard deviation; both are 0.0 below their minimum n."""
    xs = tuple(float(x) for x in durations)
    n = len(xs)
    if n == 0:
        return RegionStats(xs, 0.0, 0.0)
    mean = math.fsum(xs) / n
    if n < 2:
        return RegionStats(xs, mean, 0.0)
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return RegionStats(xs, mean, math.sqrt(var))


def collect_metrics(log: EventLog | Iterable[EventRecord]) -> MetricsSummary:
    """Per-region programming durations and counts by action.

    Durations come from successful ``reconfig.program`` records only;
    reloads after scrubbing are counted but not timed.
    """
    per_region: dict[int, list[float]] = {}
    counts: Counter[str] = Counter()
    for rec in log:
        counts[rec.action] += 1
        if rec.action == "reconfig.program" and rec.outcome == "ok":
            m = _PROGRAM.search(rec.detail)
            if m:
                per_region.setdefault(int(m.group(1)), []).append(float(m.group(2)))
    return MetricsSummary({rid: summarize(d) for rid, d in per_region.items()}, dict(counts))
