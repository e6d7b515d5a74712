"""Per-user orchestration of localization, movement extraction and labeling.

Records travel between processes in columnar form (one numpy array per field,
rows grouped by user and ordered by time); each worker rebuilds the records of
its shard of users and returns one ``UserView`` per user.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import PipelineConfig
from .errors import EmptyDatasetError
from .features import UserHistory, build_feature_vector, infer_home_work
from .fusion import Label, TruthTimeline, UserClass, assemble_training_set, classify_user, derive_truth_timeline, label_displacement
from .ingest import CDR_HEADER, IngestReport, TowerRegistry, _is_header, iter_cdr_rows
from .learning import Dataset
from .localization import UserLocation, assign_presences, locate_user
from .model import DATA_EVENTS, VOICE_EVENTS, CdrRecord, CellTowerId, EventType, StudyWindow
from .movement import Displacement, StayPoint, classify_segments, extract_displacements, segment_presences
from .rng import derive_seed

_EVENTS = {int(e): e for e in EventType}


@dataclass
class RecordTable:
    """Accepted records grouped by user (sorted ids) and ordered by time within user."""

    users: list
    offsets: np.ndarray
    lac: np.ndarray
    cell: np.ndarray
    time: np.ndarray
    event: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    def records(self, i: int) -> list[CdrRecord]:
        lo, hi = int(self.offsets[i]), int(self.offsets[i + 1])
        return _rebuild(self.users[i], self.lac[lo:hi], self.cell[lo:hi], self.time[lo:hi], self.event[lo:hi])

    def by_user(self) -> dict:
        return {u: self.records(i) for i, u in enumerate(self.users)}

    def shard(self, lo: int, hi: int) -> "RecordTable":
        a, b = int(self.offsets[lo]), int(self.offsets[hi])
        return RecordTable(
            self.users[lo:hi], self.offsets[lo : hi + 1] - a,
            self.lac[a:b], self.cell[a:b], self.time[a:b], self.event[a:b],
        )

    @classmethod
    def from_columns(cls, users, lac, cell, time, event) -> "RecordTable":
        users = np.asarray(users, dtype=object)
        lac = np.asarray(lac, dtype=np.int64)
        cell = np.asarray(cell, dtype=np.int64)
        time = np.asarray(time, dtype=np.int64)
        event = np.asarray(event, dtype=np.int8)
        if len(time) == 0:
            return cls([], np.zeros(1, dtype=np.int64), lac, cell, time, event)
        ids, codes = np.unique(users.astype(str), return_inverse=True)
        order = np.lexsort((time, codes))  # stable: equal times keep input order
        codes = codes[order]
        offsets = np.searchsorted(codes, np.arange(len(ids) + 1))
        return cls([str(u) for u in ids], offsets.astype(np.int64), lac[order], cell[order], time[order], event[order])

    @classmethod
    def from_records(cls, records: Iterable[CdrRecord]) -> "RecordTable":
        records = list(records)
        return cls.from_columns(
            [r.user for r in records], [r.tower.lac for r in records], [r.tower.cell for r in records],
            [r.time for r in records], [int(r.event) for r in records],
        )


def _rebuild(user, lac, cell, time, event) -> list[CdrRecord]:
    towers: dict = {}
    out = []
    for a, c, t, e in zip(lac.tolist(), cell.tolist(), time.tolist(), event.tolist()):
        tower = towers.get((a, c))
        if tower is None:
            tower = towers[(a, c)] = CellTowerId(a, c)
        out.append(CdrRecord(user, tower, t, _EVENTS[e]))
    return out


# ---------------------------------------------------------------- ingestion


def _parse_chunk(path: str, lo: int, hi: int, window: StudyWindow, utc_offset: int, towers: dict):
    with open(path, "rb") as fh:
        fh.seek(lo)
        text = fh.read(hi - lo).decode("utf-8")
    lines = text.splitlines()
    if lo == 0 and lines and _is_header(lines[0], CDR_HEADER):
        lines = lines[1:]
    report = IngestReport()
    users, lacs, cells, times, events = [], [], [], [], []
    unmatched = 0
    for user, tower, t, ev in iter_cdr_rows(lines, window, report, utc_offset):
        if tower not in towers:
            unmatched += 1
            continue
        users.append(user)
        lacs.append(tower.lac)
        cells.append(tower.cell)
        times.append(t)
        events.append(int(ev))
    report.accepted -= unmatched
    report.rejected_unmatched_tower += unmatched
    cols = (
        np.array(users, dtype=object), np.array(lacs, dtype=np.int64), np.array(cells, dtype=np.int64),
        np.array(times, dtype=np.int64), np.array(events, dtype=np.int8),
    )
    return cols, report


def _chunk_bounds(path: str, n_chunks: int) -> list[tuple[int, int]]:
    size = os.path.getsize(path)
    if n_chunks <= 1 or size == 0:
        return [(0, size)]
    cuts = [0]
    with open(path, "rb") as fh:
        for i in range(1, n_chunks):
            pos = max(size * i // n_chunks, cuts[-1])
            fh.seek(pos)
            fh.readline()  # advance to the next line start
            cuts.append(min(fh.tell(), size))
    cuts.append(size)
    return [(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]


def read_table(path: str, registry: TowerRegistry, window: StudyWindow, utc_offset: int = 0,
               workers: int = 1) -> tuple[RecordTable, IngestReport]:
    """Parse, window-filter and geolocate a CDR file into a ``RecordTable``."""
    bounds = _chunk_bounds(path, workers * 4 if workers > 1 else 1)
    towers = registry.towers
    if workers > 1 and len(bounds) > 1:
        with _pool(workers) as pool:
            futures = [pool.submit(_parse_chunk, path, a, b, window, utc_offset, towers) for a, b in bounds]
            parts = [f.result() for f in futures]
    else:
        parts = [_parse_chunk(path, a, b, window, utc_offset, towers) for a, b in bounds]
    report = IngestReport()
    for _, rep in parts:
        report = report.merge(rep)
    cols = [np.concatenate([p[0][j] for p in parts]) for j in range(5)]
    return RecordTable.from_columns(*cols), report


# ------------------------------------------------------------ per-user view


@dataclass
class UserView:
    user: str
    usage: UserClass
    locations: list
    stays: list
    displacements: list
    passbys: int
    timeline: TruthTimeline | None = None

    @property
    def frequent(self) -> bool:
        return self.usage.frequent

    @property
    def centroids(self) -> dict:
        return {loc.id: loc.centroid for loc in self.locations}


def localize(records: Sequence[CdrRecord], registry, cfg: PipelineConfig):
    """Usage class and locations of one user.

    Frequent data users are clustered on all their records so the voice view and
    the data-derived truth share one location space; everybody else is
    clustered on voice records only.
    """
    usage = classify_user(records, cfg.window, cfg.frequent_threshold)
    if usage is None:
        return None, []
    basis = records if usage.frequent else [r for r in records if r.event in VOICE_EVENTS]
    return usage, locate_user(basis, registry, cfg.diameter_km) if basis else []


def extract(records: Sequence[CdrRecord], locations: Sequence[UserLocation] | Mapping, centroids: Mapping,
            cfg: PipelineConfig) -> tuple[list[StayPoint], list[Displacement], int]:
    voice = [r for r in records if r.event in VOICE_EVENTS]
    presences = assign_presences(voice, locations)
    stays, passbys = classify_segments(segment_presences(presences, cfg.tau), cfg.dwell_min, cfg.freq_min_days)
    return stays, extract_displacements(stays, cfg.tau, centroids), passbys


def timeline_for(records: Sequence[CdrRecord], locations, window: StudyWindow) -> TruthTimeline:
    data = [r for r in records if r.event in DATA_EVENTS]
    return derive_truth_timeline(assign_presences(data, locations), window)


def process_user(user: str, records: Sequence[CdrRecord], registry, cfg: PipelineConfig) -> UserView | None:
    usage, locations = localize(records, registry, cfg)
    if usage is None:
        return None
    centroids = {loc.id: loc.centroid for loc in locations}
    stays, displacements, passbys = extract(records, locations, centroids, cfg)
    timeline = timeline_for(records, locations, cfg.window) if usage.frequent else None
    return UserView(user, usage, locations, stays, displacements, passbys, timeline)


def _apply_shard(fn, table: RecordTable, args: tuple) -> list:
    return [fn(user, table.records(i), *args) for i, user in enumerate(table.users)]


def _shards(table: RecordTable, n: int) -> list[tuple[int, int]]:
    """Contiguous user ranges holding roughly equal record counts."""
    n_users = len(table.users)
    if n <= 1 or n_users <= 1:
        return [(0, n_users)]
    targets = np.linspace(0, len(table), n + 1)[1:-1]
    cuts = np.unique(np.concatenate([[0], np.searchsorted(table.offsets, targets), [n_users]]))
    return [(int(a), int(b)) for a, b in zip(cuts, cuts[1:]) if b > a]


def _pool(workers: int) -> ProcessPoolExecutor:
    # forkserver children do not inherit the parent's heap, which can be large
    return ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("forkserver"))


def map_users(fn, table: RecordTable, args: tuple = (), workers: int = 1) -> list:
    """``fn(user, records, *args)`` for every user, in user order.

    With several workers, users are split into contiguous shards processed in
    separate processes; ``fn`` must then be a module-level function.
    """
    if workers <= 1:
        return _apply_shard(fn, table, args)
    with _pool(workers) as pool:
        futures = [pool.submit(_apply_shard, fn, table.shard(a, b), args) for a, b in _shards(table, workers * 4)]
        return [r for f in futures for r in f.result()]


def process_table(table: RecordTable, registry, cfg: PipelineConfig, workers: int = 1) -> dict:
    """user -> UserView for every user with records, in sorted user order."""
    towers = registry.towers if hasattr(registry, "towers") else registry
    views = map_users(process_user, table, (towers, cfg), workers)
    return {v.user: v for v in views if v is not None}


def process_records(records: Iterable[CdrRecord], registry, cfg: PipelineConfig, workers: int = 1) -> dict:
    return process_table(RecordTable.from_records(records), registry, cfg, workers)


# ------------------------------------------------------ labels and features


def label_view(view: UserView, window: StudyWindow) -> list[tuple[Displacement, Label]]:
    """Labels for a frequent user's ETI displacements (empty for other users)."""
    if view.timeline is None:
        return []
    return [
        (d, label_displacement(d, view.timeline, window))
        for d in view.displacements
        if d.eti and d.origin != d.destination
    ]


def user_history(view: UserView, cfg: PipelineConfig) -> UserHistory:
    anchors = infer_home_work(view.stays, cfg.freq_min_days)
    return UserHistory(view.stays, view.displacements, view.usage.active_voice_hours, anchors)


def feature_rows(view: UserView, cfg: PipelineConfig, displacements: Sequence[Displacement]) -> list[np.ndarray]:
    history = user_history(view, cfg)
    return [build_feature_vector(d, history.anchors, history) for d in displacements]


def labeled_observations(views: Mapping[str, UserView], cfg: PipelineConfig) -> dict:
    """user -> [(displacement, label, feature vector)] for frequent users."""
    out = {}
    for user, view in views.items():
        labeled = label_view(view, cfg.window)
        if not labeled:
            continue
        rows = feature_rows(view, cfg, [d for d, _ in labeled])
        out[user] = [(d, lab, x) for (d, lab), x in zip(labeled, rows)]
    return out


def training_set(observations: Mapping[str, Sequence], seed: int) -> tuple[Dataset, list]:
    """One eligible observation per user, chosen with the ``training-pick`` substream."""
    chosen = assemble_training_set(observations, derive_seed(seed, "training-pick"))
    X = np.vstack([obs[2] for obs in chosen])
    y = np.array([int(obs[1]) for obs in chosen])
    return Dataset(X, y, [obs[0].user for obs in chosen]), chosen


def build_training_set(views: Mapping[str, UserView], cfg: PipelineConfig) -> tuple[Dataset, list]:
    observations = labeled_observations(views, cfg)
    if not observations:
        raise EmptyDatasetError("no frequent data user has a labeled ETI displacement")
    return training_set(observations, cfg.seed)
