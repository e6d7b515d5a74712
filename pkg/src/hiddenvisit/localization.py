"""Per-user leader clustering of cell towers into user locations."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import ContractError, UnresolvedTowerError
from .model import DAY, CdrRecord, CellTowerId, EventType, GeoPoint, haversine_km

DEFAULT_DIAMETER_KM = 1.0


class TowerImportance(NamedTuple):
    tower: CellTowerId
    call_days: int
    total_records: int


@dataclass(frozen=True)
class UserLocation:
    id: int
    centroid: GeoPoint
    members: frozenset
    weight: int


class Presence(NamedTuple):
    user: str
    location: int
    time: int
    event: EventType


def rank_towers(records: Iterable[CdrRecord]) -> list[TowerImportance]:
    """Order a single user's towers by call-days, then record count, then id."""
    days = defaultdict(set)
    totals: dict = defaultdict(int)
    users = set()
    for rec in records:
        users.add(rec.user)
        days[rec.tower].add(rec.time // DAY)
        totals[rec.tower] += 1
    if len(users) > 1:
        raise ContractError("rank_towers expects the records of a single user")
    ranked = [TowerImportance(t, len(days[t]), totals[t]) for t in totals]
    ranked.sort(key=lambda ti: (-ti.call_days, -ti.total_records, ti.tower.lac, ti.tower.cell))
    return ranked


def leader_cluster(
    ranked: Sequence[TowerImportance], registry, diameter_km: float = DEFAULT_DIAMETER_KM
) -> list[UserLocation]:
    """Leader clustering in importance order.

    Each still-unassigned tower, taken in ranked order, founds a location and
    absorbs every unassigned tower lying within ``diameter_km / 2`` of it.
    Centroids are call-day weighted means of member coordinates (in degrees).
    """
    if diameter_km <= 0:
        raise ValueError("diameter_km must be positive")
    towers = registry.towers if hasattr(registry, "towers") else registry
    points = []
    for ti in ranked:
        p = towers.get(ti.tower)
        if p is None:
            raise UnresolvedTowerError(ti.tower)
        points.append(p)

    radius = diameter_km / 2.0
    assigned = [False] * len(ranked)
    locations = []
    for i, leader in enumerate(ranked):
        if assigned[i]:
            continue
        members = [i]
        assigned[i] = True
        for j in range(i + 1, len(ranked)):
            if not assigned[j] and haversine_km(points[i], points[j]) <= radius:
                assigned[j] = True
                members.append(j)
        weight = sum(ranked[m].call_days for m in members)
        lon = sum(points[m].lon * ranked[m].call_days for m in members) / weight
        lat = sum(points[m].lat * ranked[m].call_days for m in members) / weight
        locations.append(
            UserLocation(len(locations), GeoPoint(lon, lat), frozenset(ranked[m].tower for m in members), weight)
        )
    return locations


def membership(locations: Iterable[UserLocation]) -> dict:
    """tower -> location id"""
    return {tower: loc.id for loc in locations for tower in loc.members}


def assign_presences(records: Iterable, locations: Iterable[UserLocation] | Mapping) -> list[Presence]:
    """Map each record (or ``(record, point)`` pair) to a presence at its location.

    Input order is kept; the input is expected to be time-ordered already.
    """
    lookup = locations if isinstance(locations, Mapping) else membership(locations)
    out = []
    for item in records:
        rec = item[0] if isinstance(item, tuple) and not isinstance(item, CdrRecord) else item
        loc = lookup.get(rec.tower)
        if loc is None:
            raise UnresolvedTowerError(rec.tower)
        out.append(Presence(rec.user, loc, rec.time, rec.event))
    return out


def locate_user(records: Sequence[CdrRecord], registry, diameter_km: float = DEFAULT_DIAMETER_KM):
    """Rank and cluster one user's towers; returns the location list."""
    return leader_cluster(rank_towers(records), registry, diameter_km)
