"""Core domain types, time binning, great-circle distance and the ETI predicate.

Timestamps are integer seconds on the study's local wall clock, counted from
1970-01-01T00:00:00 of that clock.  Keeping everything in local seconds means
hour-of-day, calendar day and weekday are plain integer arithmetic.
"""

from __future__ import annotations

import datetime as _dt
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import OrderingError, OutOfWindowError

EARTH_RADIUS_KM = 6371.0
HOUR = 3600
DAY = 86400
DEFAULT_TAU = 3600

_EPOCH = _dt.datetime(1970, 1, 1)


class EventType(enum.IntEnum):
    VOICE_IN = 0
    VOICE_OUT = 1
    DATA = 2

    @property
    def is_voice(self) -> bool:
        return self is not EventType.DATA

    @property
    def token(self) -> str:
        return _TOKENS[self]


_TOKENS = {EventType.VOICE_IN: "VOICE_IN", EventType.VOICE_OUT: "VOICE_OUT", EventType.DATA: "DATA"}
EVENT_BY_TOKEN = {v: k for k, v in _TOKENS.items()}
VOICE_EVENTS = frozenset({EventType.VOICE_IN, EventType.VOICE_OUT})
DATA_EVENTS = frozenset({EventType.DATA})


class GeoPoint(NamedTuple):
    lon: float
    lat: float

    def is_valid(self) -> bool:
        return (
            math.isfinite(self.lon)
            and math.isfinite(self.lat)
            and -180.0 <= self.lon <= 180.0
            and -90.0 <= self.lat <= 90.0
        )


class CellTowerId(NamedTuple):
    lac: int
    cell: int


class CdrRecord(NamedTuple):
    user: str
    tower: CellTowerId
    time: int
    event: EventType


@dataclass(frozen=True)
class StudyWindow:
    """Half-open interval ``[start, end)`` of local seconds."""

    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("study window must have positive length")

    @classmethod
    def from_days(cls, start: int, days: int) -> "StudyWindow":
        return cls(start, start + days * DAY)

    @property
    def hours(self) -> int:
        return -(-(self.end - self.start) // HOUR)

    @property
    def days(self) -> float:
        return (self.end - self.start) / DAY

    def __contains__(self, t: int) -> bool:
        return self.start <= t < self.end


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    lon1, lat1 = math.radians(a[0]), math.radians(a[1])
    lon2, lat2 = math.radians(b[0]), math.radians(b[1])
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    # clamp guards against h drifting past 1 at antipodes
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


def hour_bin(t: int, window: StudyWindow) -> int:
    """Index of the hour bin containing ``t``, counted from the window start."""
    if not window.start <= t < window.end:
        raise OutOfWindowError(f"timestamp {t} outside study window [{window.start}, {window.end})")
    return (t - window.start) // HOUR


def eti_flag(t_i: int, t_next: int, tau: int = DEFAULT_TAU) -> int:
    if t_next < t_i:
        raise OrderingError(f"t_next={t_next} precedes t_i={t_i}")
    return 1 if t_next - t_i > tau else 0


def hour_of_day(t: int) -> int:
    return (t % DAY) // HOUR


def day_index(t: int) -> int:
    return t // DAY


def weekday(t: int) -> int:
    """Monday=0 .. Sunday=6 (1970-01-01 was a Thursday)."""
    return (t // DAY + 3) % 7


def parse_timestamp(text: str, utc_offset: int = 0) -> int:
    """Parse ISO-8601 text into local seconds.

    Naive timestamps are taken as already being on the study clock.  Offset-aware
    ones are moved onto the study clock using ``utc_offset`` seconds.
    Fractional seconds are truncated.
    """
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = _dt.datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.astimezone(_dt.timezone.utc).replace(tzinfo=None) + _dt.timedelta(seconds=utc_offset)
    delta = dt - _EPOCH
    return delta.days * DAY + delta.seconds


def format_timestamp(t: int) -> str:
    return (_EPOCH + _dt.timedelta(seconds=int(t))).isoformat()
