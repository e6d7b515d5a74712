"""Home/work anchors and the 15-entry feature vector of a displacement."""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .model import DAY, HOUR, day_index, hour_of_day, weekday
from .movement import Displacement, StayPoint

FEATURE_NAMES = tuple(f"f{i}" for i in range(1, 16))
FEATURE_DESCRIPTIONS = (
    "Distance between origin and destination (km)",
    "Destination = Home",
    "Displacement type = HBW",
    "Displacement type = HBO",
    "Displacement type = WBO",
    "If any trip from origin to destination is observed",
    "% of displacements (without ETIs) between origin and destination",
    "Duration of the ETI (hours)",
    "ETI overlaps with morning peak hours (07:00-09:00)",
    "ETI overlaps with afternoon peak hours (16:00-19:00)",
    "ETI overlaps with midday hours (10:00-15:00)",
    "If user appears in other locations during same time of day",
    "Frequency (hours) of user appearing elsewhere during same time of day",
    "Number of observed user locations",
    "Number of displacements per active hour",
)
FEATURE_GROUPS = {
    "spatial": tuple(range(0, 7)),
    "temporal": tuple(range(7, 13)),
    "personal": tuple(range(13, 15)),
}

# (start, end) in seconds after local midnight; end may pass midnight
MORNING = (7 * HOUR, 9 * HOUR)
AFTERNOON = (16 * HOUR, 19 * HOUR)
MIDDAY = (10 * HOUR, 15 * HOUR)
NIGHT = (20 * HOUR, 30 * HOUR)

NIGHT_BEFORE = 7
NIGHT_FROM = 19


class DisplacementType(enum.Enum):
    HBW = "HBW"
    HBO = "HBO"
    WBO = "WBO"
    OBO = "OBO"


class AnchorAssignment(NamedTuple):
    home: int | None
    work: int | None


class TodOverlap(NamedTuple):
    morning: int
    afternoon: int
    midday: int
    night: int


def _is_home_time(t: int) -> bool:
    if weekday(t) >= 5:
        return True
    h = hour_of_day(t)
    return h < NIGHT_BEFORE or h >= NIGHT_FROM


def infer_home_work(stays: Sequence[StayPoint], min_days: int) -> AnchorAssignment:
    """Home and work among the two most visited qualifying locations.

    Locations are ranked by distinct visit days, then presences, then id.  Of
    the top two, the one with more presences on weekends or on weekday nights
    (before 07:00 or from 19:00) is home; on a tie the higher ranked one is.
    """
    days = defaultdict(set)
    presences: Counter = Counter()
    home_score: Counter = Counter()
    for sp in stays:
        for t in sp.segment.times:
            days[sp.location].add(t // DAY)
            presences[sp.location] += 1
            if _is_home_time(t):
                home_score[sp.location] += 1
    qualifying = [loc for loc in days if len(days[loc]) >= min_days]
    qualifying.sort(key=lambda loc: (-len(days[loc]), -presences[loc], loc))
    top = qualifying[:2]
    if not top:
        return AnchorAssignment(None, None)
    if len(top) == 1:
        return AnchorAssignment(top[0], None)
    a, b = top
    if home_score[b] > home_score[a]:
        a, b = b, a
    return AnchorAssignment(a, b)


def displacement_type(d: Displacement, anchors: AnchorAssignment) -> DisplacementType:
    ends = {d.origin, d.destination}
    home, work = anchors
    has_home = home is not None and home in ends
    has_work = work is not None and work in ends
    if has_home and has_work:
        return DisplacementType.HBW
    if has_home:
        return DisplacementType.HBO
    if has_work:
        return DisplacementType.WBO
    return DisplacementType.OBO


def _overlaps(depart: int, arrive: int, window: tuple) -> int:
    ws, we = window
    for day in range(day_index(depart) - 1, day_index(arrive) + 1):
        base = day * DAY
        if depart <= base + we and arrive >= base + ws:
            return 1
    return 0


def tod_overlap(d: Displacement) -> TodOverlap:
    """Whether ``[depart, arrive]`` touches each closed time-of-day window."""
    return TodOverlap(
        _overlaps(d.depart, d.arrive, MORNING),
        _overlaps(d.depart, d.arrive, AFTERNOON),
        _overlaps(d.depart, d.arrive, MIDDAY),
        _overlaps(d.depart, d.arrive, NIGHT),
    )


def clock_slots(depart: int, arrive: int) -> list[int]:
    """Hour-of-day slots touched by ``[depart, arrive)``, wrapping past midnight."""
    if arrive - depart >= DAY:
        return list(range(24))
    first = depart // HOUR
    last = max(first, (arrive - 1) // HOUR) if arrive > depart else first
    return sorted({h % 24 for h in range(first, last + 1)})


@dataclass
class UserHistory:
    """Everything about one user's voice view that the features need."""

    stays: Sequence[StayPoint]
    displacements: Sequence[Displacement]
    active_hours: int
    anchors: AnchorAssignment = AnchorAssignment(None, None)
    _slot_index: dict = field(default=None, init=False, repr=False)
    _no_eti: Counter = field(default=None, init=False, repr=False)
    _no_eti_total: int = field(default=0, init=False, repr=False)

    def slot_index(self) -> dict:
        """slot -> {day -> set of stay locations observed then}"""
        if self._slot_index is None:
            index: dict = defaultdict(lambda: defaultdict(set))
            for sp in self.stays:
                for t in sp.segment.times:
                    index[hour_of_day(t)][day_index(t)].add(sp.location)
            self._slot_index = index
        return self._slot_index

    def no_eti_pairs(self):
        if self._no_eti is None:
            pairs = Counter((d.origin, d.destination) for d in self.displacements if not d.eti)
            self._no_eti = pairs
            self._no_eti_total = sum(pairs.values())
        return self._no_eti, self._no_eti_total


def same_tod_elsewhere(d: Displacement, history: UserHistory) -> tuple[int, int]:
    """Hours, on days the ETI does not touch, when the user stayed somewhere
    other than either endpoint within the ETI's clock window."""
    index = history.slot_index()
    own_days = range(day_index(d.depart), day_index(d.arrive) + 1)
    ends = {d.origin, d.destination}
    count = 0
    for slot in clock_slots(d.depart, d.arrive):
        for day, locs in index.get(slot, {}).items():
            if day in own_days:
                continue
            if not locs <= ends:
                count += 1
    return int(count > 0), count


def pair_history(d: Displacement, history: UserHistory) -> tuple[int, float]:
    """(directed origin->destination seen without ETI, undirected share of no-ETI displacements)."""
    pairs, total = history.no_eti_pairs()
    forward = pairs.get((d.origin, d.destination), 0)
    backward = pairs.get((d.destination, d.origin), 0)
    share = (forward + backward) / total if total else 0.0
    return int(forward > 0), share


def personal_features(history: UserHistory) -> tuple[int, float]:
    n_locations = len({sp.location for sp in history.stays})
    rate = len(history.displacements) / history.active_hours if history.active_hours else 0.0
    return n_locations, rate


def build_feature_vector(d: Displacement, anchors: AnchorAssignment, history: UserHistory) -> np.ndarray:
    kind = displacement_type(d, anchors)
    tod = tod_overlap(d)
    f6, f7 = pair_history(d, history)
    f12, f13 = same_tod_elsewhere(d, history)
    f14, f15 = personal_features(history)
    return np.array(
        [
            d.distance_km,
            float(anchors.home is not None and d.destination == anchors.home),
            float(kind is DisplacementType.HBW),
            float(kind is DisplacementType.HBO),
            float(kind is DisplacementType.WBO),
            f6,
            f7,
            d.duration / HOUR,
            tod.morning,
            tod.afternoon,
            tod.midday,
            f12,
            f13,
            f14,
            f15,
        ],
        dtype=float,
    )


def feature_dictionary() -> str:
    return "".join(f"{n}\t{desc}\n" for n, desc in zip(FEATURE_NAMES, FEATURE_DESCRIPTIONS))
