"""Population scoring, hidden-visit shares, hourly curves and distance correction."""

from __future__ import annotations

from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyDatasetError
from .learning import ModelParams, predict_proba
from .model import DAY, HOUR, VOICE_EVENTS, CdrRecord, StudyWindow, hour_of_day
from .movement import Displacement

DEFAULT_MAX_DURATION_HOURS = 8.0


class ScoredDisplacement(NamedTuple):
    displacement: Displacement
    p_hidden: float


class HourlyCurves(NamedTuple):
    eti_share: np.ndarray
    mean_p_hidden: np.ndarray
    hidden_share: np.ndarray


def within_duration(d: Displacement, max_duration_hours: float) -> bool:
    return d.arrive - d.depart < max_duration_hours * HOUR


def is_scorable(d: Displacement, max_duration_hours: float) -> bool:
    return bool(d.eti) and d.origin != d.destination and within_duration(d, max_duration_hours)


def score_population(
    displacements: Iterable[Displacement],
    params: ModelParams,
    features: Callable[[Displacement], np.ndarray],
    max_duration_hours: float = DEFAULT_MAX_DURATION_HOURS,
) -> list[ScoredDisplacement]:
    """Score every ETI displacement shorter than ``max_duration_hours``."""
    eligible = [d for d in displacements if is_scorable(d, max_duration_hours)]
    if not eligible:
        return []
    X = np.vstack([features(d) for d in eligible])
    p = predict_proba(params, X)
    return [ScoredDisplacement(d, float(pi)) for d, pi in zip(eligible, p)]


def expected_hidden_share(
    scored: Sequence[ScoredDisplacement],
    displacements: Iterable[Displacement],
    max_duration_hours: float = DEFAULT_MAX_DURATION_HOURS,
) -> tuple[float, float]:
    """(expected hidden share among scored ETI displacements, among all displacements)."""
    if not scored:
        raise EmptyDatasetError("no scored displacements")
    total = sum(1 for d in displacements if within_duration(d, max_duration_hours))
    expected = sum(s.p_hidden for s in scored)
    return expected / len(scored), expected / total


def hourly_curves(
    scored: Sequence[ScoredDisplacement],
    displacements: Iterable[Displacement],
    max_duration_hours: float = DEFAULT_MAX_DURATION_HOURS,
) -> HourlyCurves:
    """Per departure hour: ETI share, mean P(hidden) of scored, overall hidden share.

    Hours without displacements are NaN.
    """
    n_all = np.zeros(24)
    n_eti = np.zeros(24)
    for d in displacements:
        if within_duration(d, max_duration_hours):
            h = hour_of_day(d.depart)
            n_all[h] += 1
            n_eti[h] += bool(d.eti) and d.origin != d.destination
    n_scored = np.zeros(24)
    p_sum = np.zeros(24)
    for s in scored:
        h = hour_of_day(s.displacement.depart)
        n_scored[h] += 1
        p_sum[h] += s.p_hidden
    with np.errstate(invalid="ignore", divide="ignore"):
        eti_share = np.where(n_all > 0, n_eti / n_all, np.nan)
        mean_p = np.where(n_scored > 0, p_sum / n_scored, np.nan)
        hidden = np.where(n_all > 0, p_sum / n_all, np.nan)
    return HourlyCurves(eti_share, mean_p, hidden)


def weighted_mean_distance(
    scored: Sequence[ScoredDisplacement], no_eti: Iterable[Displacement]
) -> tuple[float, float, float]:
    """(mean no-ETI distance, mean ETI distance, ETI mean weighted by 1 - P(hidden))."""
    plain = [d.distance_km for d in no_eti]
    dist = np.array([s.displacement.distance_km for s in scored], dtype=float)
    w = 1.0 - np.array([s.p_hidden for s in scored], dtype=float)
    if w.sum() <= 0:
        raise EmptyDatasetError("all weights are zero")
    mean_no_eti = float(np.mean(plain)) if plain else float("nan")
    return mean_no_eti, float(dist.mean()), float((w * dist).sum() / w.sum())


class UsageStatistics(NamedTuple):
    hourly: dict
    histogram: dict
    bin_edges: np.ndarray


DEFAULT_GAP_EDGES = np.arange(0, 6 * HOUR + 1, 300)


def _category(event) -> str:
    return "voice" if event in VOICE_EVENTS else "data"


def usage_statistics(
    records: Iterable[CdrRecord], window: StudyWindow, bin_edges=DEFAULT_GAP_EDGES
) -> UsageStatistics:
    """Mean records per user-hour by hour of day, and within-user inter-event
    gap histograms, both split into voice and data.

    The last histogram bin also collects gaps beyond the final edge.
    """
    edges = np.asarray(bin_edges)
    counts = {"voice": np.zeros(24), "data": np.zeros(24)}
    gaps = {"voice": [], "data": []}
    last: dict = {}
    users = set()
    for r in records:
        users.add(r.user)
        cat = _category(r.event)
        counts[cat][hour_of_day(r.time)] += 1
        key = (r.user, cat)
        prev = last.get(key)
        if prev is not None:
            gaps[cat].append(r.time - prev)
        last[key] = r.time
    user_days = max(len(users), 1) * (window.end - window.start) / DAY
    hourly = {cat: c / user_days for cat, c in counts.items()}
    hist = {}
    for cat, g in gaps.items():
        g = np.minimum(np.asarray(g, dtype=float), edges[-1])
        hist[cat] = np.histogram(g, bins=edges)[0]
    return UsageStatistics(hourly, hist, edges)


def histogram_mode(hist: np.ndarray, edges: np.ndarray) -> tuple[float, float]:
    i = int(np.argmax(hist))
    return float(edges[i]), float(edges[i + 1])

