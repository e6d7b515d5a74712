"""Parsing of raw CDR and cell-tower CSV files.

CDR rows are ``user_id,lac,cell_id,timestamp,event`` with event one of
``VOICE_IN``, ``VOICE_OUT`` or ``DATA``.  Tower rows are ``lac,cell_id,lon,lat``.
A header line is optional in both.  Bad rows are counted, never fatal.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from operator import attrgetter
from typing import BinaryIO, Iterable, Sequence, Union

from .errors import DuplicateTowerError
from .model import (
    EVENT_BY_TOKEN,
    CdrRecord,
    CellTowerId,
    GeoPoint,
    StudyWindow,
    format_timestamp,
    parse_timestamp,
)

CDR_HEADER = "user_id,lac,cell_id,timestamp,event"
TOWER_HEADER = "lac,cell_id,lon,lat"

Source = Union[str, os.PathLike, bytes, BinaryIO]


@dataclass
class TowerRegistry:
    towers: dict = field(default_factory=dict)
    duplicates: int = 0
    malformed: int = 0

    @property
    def count(self) -> int:
        return len(self.towers)

    def __contains__(self, tower) -> bool:
        return tower in self.towers

    def __getitem__(self, tower) -> GeoPoint:
        return self.towers[tower]

    def get(self, tower, default=None):
        return self.towers.get(tower, default)

    def add(self, tower: CellTowerId, point: GeoPoint) -> bool:
        """Register a tower; returns False if it was an identical duplicate."""
        known = self.towers.get(tower)
        if known is None:
            self.towers[tower] = point
            return True
        if known != point:
            raise DuplicateTowerError(f"tower {tower} registered at {known} and {point}")
        self.duplicates += 1
        return False


@dataclass
class IngestReport:
    accepted: int = 0
    rejected_malformed: int = 0
    rejected_unmatched_tower: int = 0
    rejected_out_of_window: int = 0

    @property
    def total(self) -> int:
        return self.accepted + self.rejected_malformed + self.rejected_unmatched_tower + self.rejected_out_of_window

    def merge(self, other: "IngestReport") -> "IngestReport":
        return IngestReport(
            self.accepted + other.accepted,
            self.rejected_malformed + other.rejected_malformed,
            self.rejected_unmatched_tower + other.rejected_unmatched_tower,
            self.rejected_out_of_window + other.rejected_out_of_window,
        )

    def to_text(self) -> str:
        return "".join(
            f"{k}={getattr(self, k)}\n"
            for k in ("accepted", "rejected_malformed", "rejected_unmatched_tower", "rejected_out_of_window")
        )

    @classmethod
    def from_text(cls, text: str) -> "IngestReport":
        values = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(**{k: int(v) for k, v in values.items()})


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    return data.decode("utf-8")


def _is_header(line: str, header: str) -> bool:
    return line.strip().lower().replace(" ", "") == header


def parse_tower_file(source: Source) -> TowerRegistry:
    registry = TowerRegistry()
    lines = _read_text(source).splitlines()
    if lines and _is_header(lines[0], TOWER_HEADER):
        lines = lines[1:]
    for line in lines:
        parts = line.split(",")
        try:
            if len(parts) != 4:
                raise ValueError(line)
            tower = CellTowerId(int(parts[0]), int(parts[1]))
            point = GeoPoint(float(parts[2]), float(parts[3]))
            if not point.is_valid():
                raise ValueError(line)
        except ValueError:
            registry.malformed += 1
            continue
        registry.add(tower, point)
    return registry


def _stamp_seconds(stamp: str, cache: dict, utc_offset: int) -> int:
    # fast path for the canonical "YYYY-MM-DDTHH:MM:SS" form; dates repeat heavily
    if len(stamp) == 19 and stamp[10] == "T" and stamp[13] == ":" and stamp[16] == ":":
        day = stamp[:10]
        base = cache.get(day)
        if base is None:
            base = cache[day] = parse_timestamp(day + "T00:00:00")
        h, m, s = int(stamp[11:13]), int(stamp[14:16]), int(stamp[17:19])
        if 0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60:
            return base + h * 3600 + m * 60 + s
        raise ValueError(stamp)
    return parse_timestamp(stamp, utc_offset)


def iter_cdr_rows(lines: Iterable[str], window: StudyWindow, report: IngestReport, utc_offset: int = 0):
    """Yield ``(user, tower, time, event)`` for valid in-window rows; count the rest in ``report``."""
    events = EVENT_BY_TOKEN
    towers: dict = {}
    start, end = window.start, window.end
    stamp_cache: dict = {}
    for line in lines:
        parts = line.rstrip("\r").split(",")
        if len(parts) != 5:
            report.rejected_malformed += 1
            continue
        user, lac, cell, stamp, token = parts
        event = events.get(token)
        if event is None or not user:
            report.rejected_malformed += 1
            continue
        try:
            key = (lac, cell)
            tower = towers.get(key)
            if tower is None:
                tower = towers[key] = CellTowerId(int(lac), int(cell))
            t = _stamp_seconds(stamp, stamp_cache, utc_offset)
        except ValueError:
            report.rejected_malformed += 1
            continue
        if not start <= t < end:
            report.rejected_out_of_window += 1
            continue
        report.accepted += 1
        yield user, tower, t, event


def parse_cdr_lines(lines: Iterable[str], window: StudyWindow, utc_offset: int = 0):
    """Parse CDR lines (no header) into records in input order, plus a report."""
    report = IngestReport()
    records = [CdrRecord(*row) for row in iter_cdr_rows(lines, window, report, utc_offset)]
    return records, report


def sort_records(records: Sequence[CdrRecord]) -> list:
    """Group by user and order by time; ties keep input order (stable sort)."""
    return sorted(records, key=attrgetter("user", "time"))


def parse_cdr_file(source: Source, window: StudyWindow, utc_offset: int = 0):
    """Parse a whole CDR file; returns (records sorted per user by time, report)."""
    lines = _read_text(source).splitlines()
    if lines and _is_header(lines[0], CDR_HEADER):
        lines = lines[1:]
    records, report = parse_cdr_lines(lines, window, utc_offset)
    return sort_records(records), report


def geolocate(records: Iterable[CdrRecord], registry: TowerRegistry, report: IngestReport | None = None):
    """Pair each record with its tower coordinate, dropping unknown towers.

    When ``report`` is given, dropped records move from ``accepted`` to
    ``rejected_unmatched_tower``.
    """
    towers = registry.towers
    out = []
    dropped = 0
    for rec in records:
        point = towers.get(rec.tower)
        if point is None:
            dropped += 1
        else:
            out.append((rec, point))
    if report is not None:
        report.accepted -= dropped
        report.rejected_unmatched_tower += dropped
    return out


def format_cdr_row(rec: CdrRecord) -> str:
    return f"{rec.user},{rec.tower.lac},{rec.tower.cell},{format_timestamp(rec.time)},{rec.event.token}"


def write_cdr(records: Iterable[CdrRecord], fh: io.TextIOBase, header: bool = True) -> None:
    if header:
        fh.write(CDR_HEADER + "\n")
    fh.writelines(format_cdr_row(r) + "\n" for r in records)


def write_towers(registry: TowerRegistry, fh: io.TextIOBase) -> None:
    fh.write(TOWER_HEADER + "\n")
    for tower in sorted(registry.towers):
        p = registry.towers[tower]
        fh.write(f"{tower.lac},{tower.cell},{p.lon!r},{p.lat!r}\n")
