"""Data-fusion labeling.

Frequent data users carry dense, mostly passive data-access records.  Their
hourly data-access locations act as ground truth for the displacements seen in
their sparse voice-call view.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, EmptyDatasetError
from .localization import Presence
from .model import DATA_EVENTS, HOUR, VOICE_EVENTS, CdrRecord, EventType, StudyWindow
from .movement import Displacement


class UsageKind(enum.Enum):
    DATA_ONLY = "data_only"
    CALL_ONLY = "call_only"
    MIXED = "mixed"


@dataclass(frozen=True)
class UserClass:
    kind: UsageKind
    frequent: bool
    active_voice_hours: int
    active_data_hours: int


class Label(enum.IntEnum):
    NO_HIDDEN = 0
    HIDDEN = 1
    UNRECOVERABLE = 2


def frequent_threshold(window: StudyWindow) -> int:
    return math.ceil(window.hours / 2)


def active_hours(records: Iterable, window: StudyWindow, events=None) -> int:
    """Distinct hour bins holding at least one record whose event is in ``events``."""
    start = window.start
    bins = {(r.time - start) // HOUR for r in records if events is None or r.event in events}
    return len(bins)


def classify_user(records: Sequence[CdrRecord], window: StudyWindow, frequent_hours: int | None = None):
    """Usage class of one user, or None for a user without records."""
    if not records:
        return None
    voice = active_hours(records, window, VOICE_EVENTS)
    data = active_hours(records, window, DATA_EVENTS)
    if voice == 0:
        kind = UsageKind.DATA_ONLY
    elif data == 0:
        kind = UsageKind.CALL_ONLY
    else:
        kind = UsageKind.MIXED
    threshold = frequent_threshold(window) if frequent_hours is None else frequent_hours
    return UserClass(kind, kind is UsageKind.MIXED and data >= threshold, voice, data)


def classify_users(per_user: Mapping[str, Sequence[CdrRecord]], window: StudyWindow, frequent_hours=None):
    """Returns ``(user -> UserClass, number of users excluded for having no records)``."""
    classes = {}
    excluded = 0
    for user, records in per_user.items():
        cls = classify_user(records, window, frequent_hours)
        if cls is None:
            excluded += 1
        else:
            classes[user] = cls
    return classes, excluded


@dataclass
class TruthTimeline:
    """Hour bin -> dominant data-access location."""

    bins: dict = field(default_factory=dict)

    @property
    def coverage(self) -> frozenset:
        return frozenset(self.bins)

    def __contains__(self, b: int) -> bool:
        return b in self.bins

    def __getitem__(self, b: int) -> int:
        return self.bins[b]


def derive_truth_timeline(presences: Iterable[Presence], window: StudyWindow) -> TruthTimeline:
    """Most frequent location per hour bin; ties go to the location seen first."""
    counts: dict = defaultdict(lambda: defaultdict(int))
    first: dict = defaultdict(dict)
    start = window.start
    for p in presences:
        if p.event is not EventType.DATA:
            continue
        b = (p.time - start) // HOUR
        counts[b][p.location] += 1
        seen = first[b].get(p.location)
        if seen is None or p.time < seen:
            first[b][p.location] = p.time
    bins = {}
    for b, per_loc in counts.items():
        bins[b] = min(per_loc, key=lambda loc: (-per_loc[loc], first[b][loc], loc))
    return TruthTimeline(dict(sorted(bins.items())))


def interior_bins(depart: int, arrive: int, window: StudyWindow) -> range:
    """Whole hour bins ``[s, s + 1h)`` lying inside the open span ``(depart, arrive)``."""
    start = window.start
    lo = (depart - start) // HOUR + 1
    hi = (arrive - start) // HOUR
    return range(max(lo, 0), min(hi, window.hours))


def label_displacement(d: Displacement, timeline: TruthTimeline, window: StudyWindow) -> Label:
    if not d.eti:
        raise ContractError("only displacements with an ETI can be labeled")
    if d.origin == d.destination:
        raise ContractError("origin and destination must differ")
    bins = timeline.bins
    hidden = False
    for b in interior_bins(d.depart, d.arrive, window):
        loc = bins.get(b)
        if loc is None:
            return Label.UNRECOVERABLE
        if loc != d.origin and loc != d.destination:
            hidden = True
    return Label.HIDDEN if hidden else Label.NO_HIDDEN


def is_eligible(d: Displacement, label: Label) -> bool:
    return bool(d.eti) and d.origin != d.destination and label is not Label.UNRECOVERABLE


def assemble_training_set(per_user: Mapping[str, Sequence], seed: int) -> list:
    """Pick one eligible observation per user with a seeded generator.

    ``per_user`` maps user -> sequence of ``(displacement, label, payload...)``
    tuples.  Users are visited in sorted order so the choice depends only on
    the seed and the data.
    """
    rng = np.random.default_rng(seed)
    chosen = []
    for user in sorted(per_user):
        eligible = [obs for obs in per_user[user] if is_eligible(obs[0], obs[1])]
        if not eligible:
            continue
        chosen.append(eligible[int(rng.integers(len(eligible)))])
    if not chosen:
        raise EmptyDatasetError("no user has an eligible labeled observation")
    return chosen


def label_balance(labels: Iterable[Label]) -> dict:
    counts = {lab: 0 for lab in Label}
    for lab in labels:
        counts[Label(lab)] += 1
    return counts
