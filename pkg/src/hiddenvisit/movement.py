"""Segments, stay/pass-by classification, and displacement extraction."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

from .errors import OrderingError
from .localization import Presence
from .model import DAY, DEFAULT_TAU, GeoPoint, eti_flag, haversine_km

DEFAULT_DWELL_MIN = 600
# distinct days per 30-day window
DEFAULT_FREQ_MIN = 4


@dataclass(frozen=True)
class Segment:
    user: str
    location: int
    start: int
    end: int
    times: tuple

    @property
    def n_presences(self) -> int:
        return len(self.times)

    @property
    def span(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class StayPoint:
    location: int
    time: int
    segment: Segment

    @property
    def end(self) -> int:
        return self.segment.end


class Displacement(NamedTuple):
    user: str
    origin: int
    destination: int
    depart: int
    arrive: int
    eti: int
    distance_km: float

    @property
    def duration(self) -> int:
        return self.arrive - self.depart


def scaled_frequency(freq_per_30_days: float, study_days: float) -> int:
    """Scale a days-per-month threshold to a study window of another length."""
    return max(1, int(math.ceil(freq_per_30_days * study_days / 30.0 - 1e-9)))


def segment_presences(presences: Sequence[Presence], tau: int = DEFAULT_TAU) -> list[Segment]:
    """Merge runs of presences at one location whose successive gaps are < tau."""
    segments = []
    if not presences:
        return segments
    first = presences[0]
    loc, times = first.location, [first.time]
    prev = first.time
    for p in presences[1:]:
        if p.time < prev:
            raise OrderingError(f"presence at {p.time} follows {prev}")
        if p.location == loc and p.time - prev < tau:
            times.append(p.time)
        else:
            segments.append(Segment(first.user, loc, times[0], times[-1], tuple(times)))
            loc, times = p.location, [p.time]
        prev = p.time
    segments.append(Segment(first.user, loc, times[0], times[-1], tuple(times)))
    return segments


def location_days(segments: Sequence[Segment]) -> dict:
    """location -> number of distinct local days with a presence there."""
    days = defaultdict(set)
    for seg in segments:
        bucket = days[seg.location]
        for t in seg.times:
            bucket.add(t // DAY)
    return {loc: len(d) for loc, d in days.items()}


def classify_segments(
    segments: Sequence[Segment], dwell_min: int = DEFAULT_DWELL_MIN, freq_min: int = DEFAULT_FREQ_MIN
):
    """Split segments into stays and pass-bys.

    A segment is a stay when it spans at least ``dwell_min`` seconds or its
    location was seen on at least ``freq_min`` distinct days.  Returns the stay
    points and the number of pass-by presences dropped.
    """
    days = location_days(segments)
    stays = []
    passbys = 0
    for seg in segments:
        if seg.span >= dwell_min or days[seg.location] >= freq_min:
            stays.append(StayPoint(seg.location, seg.start, seg))
        else:
            passbys += seg.n_presences
    return stays, passbys


def extract_displacements(
    stays: Sequence[StayPoint],
    tau: int = DEFAULT_TAU,
    centroids: Mapping[int, GeoPoint] | None = None,
) -> list[Displacement]:
    """Displacements between consecutive stays at distinct locations.

    Runs of stays at one location collapse into a single stay first.  A
    displacement departs at the end of the origin run and arrives at the start
    of the destination run; the ETI flag is evaluated on that gap.
    """
    out = []
    if not stays:
        return out
    user = stays[0].segment.user
    loc, run_end = stays[0].location, stays[0].end
    for sp in stays[1:]:
        if sp.time < run_end:
            raise OrderingError("stays must be time-ordered")
        if sp.location == loc:
            run_end = sp.end
            continue
        dist = haversine_km(centroids[loc], centroids[sp.location]) if centroids is not None else float("nan")
        out.append(Displacement(user, loc, sp.location, run_end, sp.time, eti_flag(run_end, sp.time, tau), dist))
        loc, run_end = sp.location, sp.end
    return out
