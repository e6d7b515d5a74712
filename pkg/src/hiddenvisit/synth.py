"""Ground-truth mobility and phone-usage simulator.

Users move between a home, a workplace and a few other places, all snapped to
towers of a regular grid.  Visits start and end on whole hours.  Voice events
follow a diurnal intensity; frequent data users also emit one data record per
heartbeat period.  Hidden visits are planted as silent detours to a third
location, more often on longer displacements.

With ``reveal_visits`` on, every non-planted visit gets enough voice activity
to form a stay, so planted detours are the only hidden visits.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .ingest import TowerRegistry
from .model import DAY, HOUR, CdrRecord, CellTowerId, EventType, GeoPoint, StudyWindow, haversine_km, parse_timestamp
from .movement import Displacement
from .rng import substream

KM_PER_DEG_LAT = math.pi * 6371.0 / 180.0

# two peaks, morning and late afternoon; averages ~0.15 calls per hour
DEFAULT_VOICE_CURVE = (
    0.02, 0.01, 0.01, 0.01, 0.01, 0.03, 0.08, 0.18, 0.26, 0.30, 0.27, 0.22,
    0.17, 0.18, 0.21, 0.25, 0.29, 0.31, 0.26, 0.20, 0.17, 0.13, 0.08, 0.04,
)
# rows/cols: home, work, other
DEFAULT_TRANSITIONS = ((0.0, 0.6, 0.4), (0.6, 0.0, 0.4), (0.5, 0.25, 0.25))

HOME, WORK, OTHER = 0, 1, 2
ROLE_NAMES = ("home", "work", "other")


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    study_start: str = "2013-11-01T00:00:00"
    study_days: int = 30
    grid_size: int = 20
    grid_spacing_km: float = 1.0
    center_lon: float = 114.05
    center_lat: float = 22.55
    locations_per_user: int = 6
    transition_weights: tuple = DEFAULT_TRANSITIONS
    home_hours: tuple = (2, 6)
    work_hours: tuple = (4, 9)
    other_hours: tuple = (1, 3)
    voice_curve: tuple = DEFAULT_VOICE_CURVE
    heartbeat_s: int = 3600
    frequent_fraction: float = 0.3
    mixed_fraction: float = 0.5
    data_rate: float = 0.05
    hidden_rate: float = 0.2
    hidden_distance_coef: float = 0.2
    hidden_reference_km: float = 8.0
    hidden_hours: tuple = (1, 2)
    reveal_visits: bool = True
    reveal_dwell_s: int = 600
    reveal_tau_s: int = 3600
    outage_rate: float = 0.03
    tower_noise: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.n_users < 1:
            problems.append("n_users must be >= 1")
        if self.study_days < 1:
            problems.append("study_days must be >= 1")
        if self.grid_size < 2 or self.grid_spacing_km <= 0:
            problems.append("grid_size must be >= 2 and grid_spacing_km > 0")
        if self.locations_per_user < 3:
            problems.append("locations_per_user must be >= 3")
        if self.locations_per_user > self.grid_size**2:
            problems.append("locations_per_user exceeds tower count")
        if len(self.voice_curve) != 24 or min(self.voice_curve) < 0:
            problems.append("voice_curve needs 24 non-negative intensities")
        if self.heartbeat_s <= 0:
            problems.append("heartbeat_s must be positive")
        for name in ("frequent_fraction", "mixed_fraction", "hidden_rate", "outage_rate", "tower_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if self.data_rate < 0:
            problems.append("data_rate must be >= 0")
        for name in ("home_hours", "work_hours", "other_hours", "hidden_hours"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                problems.append(f"{name} must satisfy 1 <= low <= high")
        weights = np.asarray(self.transition_weights, dtype=float)
        if weights.shape != (3, 3) or (weights < 0).any() or (weights.sum(axis=1) <= 0).any():
            problems.append("transition_weights must be a 3x3 non-negative matrix with positive rows")
        if problems:
            raise ConfigError(problems)

    @property
    def window(self) -> StudyWindow:
        return StudyWindow.from_days(parse_timestamp(self.study_start), self.study_days)


@dataclass(frozen=True)
class UserWorld:
    user: str
    index: int
    towers: tuple  # location id -> CellTowerId; 0 is home, 1 is work
    frequent: bool
    has_data: bool

    def role(self, location: int) -> int:
        return location if location < 2 else OTHER


@dataclass
class World:
    registry: TowerRegistry
    grid: dict  # (row, col) -> CellTowerId
    users: list


class Visit(NamedTuple):
    location: int
    start: int
    end: int
    planted: bool


@dataclass
class GroundTruth:
    visits: dict = field(default_factory=dict)  # user -> list[Visit]

    def location_at(self, user: str, t: int) -> int:
        visits = self.visits.get(user)
        if not visits:
            raise ContractError(f"no ground truth for user {user!r}")
        i = bisect_right([v.start for v in visits], t) - 1
        if i < 0 or t >= visits[i].end:
            raise ContractError(f"user {user!r} has no true visit at {t}")
        return visits[i].location


class Simulation(NamedTuple):
    records: list
    truth: GroundTruth


def tower_id(row: int, col: int, grid_size: int) -> CellTowerId:
    return CellTowerId(1000 + row // 5, row * grid_size + col)


def generate_world(config: SynthConfig) -> World:
    config.validate()
    n = config.grid_size
    half = (n - 1) / 2.0
    dlat = config.grid_spacing_km / KM_PER_DEG_LAT
    # use the row farthest from the equator so east-west spacing never drops below the target
    far_lat = max(abs(config.center_lat - half * dlat), abs(config.center_lat + half * dlat))
    dlon = config.grid_spacing_km / (KM_PER_DEG_LAT * math.cos(math.radians(far_lat)))
    registry = TowerRegistry()
    grid = {}
    for r in range(n):
        for c in range(n):
            tid = tower_id(r, c, n)
            registry.add(tid, GeoPoint(config.center_lon + (c - half) * dlon, config.center_lat + (r - half) * dlat))
            grid[(r, c)] = tid
    cells = list(grid.values())
    users = []
    rng = substream(config.seed, "world")
    for i in range(config.n_users):
        picks = rng.choice(len(cells), size=config.locations_per_user, replace=False)
        frequent = bool(rng.random() < config.frequent_fraction)
        has_data = frequent or bool(rng.random() < config.mixed_fraction)
        users.append(UserWorld(f"u{i:05d}", i, tuple(cells[j] for j in picks), frequent, has_data))
    return World(registry, grid, users)


def _planting_probability(config: SynthConfig, dist_km: float) -> float:
    if config.hidden_rate <= 0.0:
        return 0.0
    if config.hidden_rate >= 1.0:
        return 1.0
    logit = math.log(config.hidden_rate / (1.0 - config.hidden_rate))
    z = logit + config.hidden_distance_coef * (dist_km - config.hidden_reference_km)
    return 1.0 / (1.0 + math.exp(-z))


def _dwell_hours(config: SynthConfig, role: int, start: int, rng) -> int:
    lo, hi = (config.home_hours, config.work_hours, config.other_hours)[role]
    hours = int(rng.integers(lo, hi + 1))
    if role == HOME:
        clock = (start % DAY) // HOUR
        if clock >= 18 or clock < 5:
            # overnight at home: leave the next morning between 07:00 and 09:00
            leave = int(rng.integers(7, 10))
            hours = max(hours, (leave - clock) % 24 or 24)
    return hours


def simulate_schedule(config: SynthConfig, world: World, user: UserWorld) -> list[Visit]:
    rng = substream(config.seed, "schedule", user.index)
    registry = world.registry
    window = config.window
    weights = np.asarray(config.transition_weights, dtype=float)
    cumulative = [list(np.cumsum(row / row.sum())) for row in weights]
    n_loc = len(user.towers)
    others = list(range(2, n_loc))
    visits = []
    t = window.start
    loc = HOME
    while t < window.end:
        dwell = _dwell_hours(config, user.role(loc), t, rng)
        visits.append(Visit(loc, t, min(t + dwell * HOUR, window.end), False))
        t += dwell * HOUR
        if t >= window.end:
            break
        role = user.role(loc)
        next_role = min(bisect_right(cumulative[role], rng.random()), 2)
        candidates = [HOME] if next_role == HOME else [WORK] if next_role == WORK else others
        candidates = [c for c in candidates if c != loc] or [c for c in range(n_loc) if c != loc]
        nxt = candidates[int(rng.integers(len(candidates)))]
        dist = haversine_km(registry[user.towers[loc]], registry[user.towers[nxt]])
        if rng.random() < _planting_probability(config, dist):
            thirds = [c for c in range(n_loc) if c not in (loc, nxt)]
            z = thirds[int(rng.integers(len(thirds)))]
            lo, hi = config.hidden_hours
            hours = int(rng.integers(lo, hi + 1))
            visits.append(Visit(z, t, min(t + hours * HOUR, window.end), True))
            t += hours * HOUR
        loc = nxt
    return visits


def _forms_stay(times: Sequence[int], dwell: int, tau: int) -> bool:
    if not times:
        return False
    run_start = prev = times[0]
    for t in times[1:]:
        if t - prev >= tau:
            run_start = t
        if t - run_start >= dwell:
            return True
        prev = t
    return False


def _voice_times(config: SynthConfig, visits: Sequence[Visit], rng) -> list[list[int]]:
    """Sorted voice event times for each visit (planted visits stay silent)."""
    curve = np.asarray(config.voice_curve, dtype=float)
    first_h = np.array([v.start // HOUR for v in visits], dtype=np.int64)
    n_hours = np.array([0 if v.planted else -(-v.end // HOUR) - v.start // HOUR for v in visits], dtype=np.int64)
    owner = np.repeat(np.arange(len(visits)), n_hours)
    hours = np.repeat(first_h, n_hours) + (np.arange(n_hours.sum()) - np.repeat(np.cumsum(n_hours) - n_hours, n_hours))
    lam = curve[hours % 24]
    counts = rng.poisson(lam)
    times = np.repeat(hours, counts) * HOUR + rng.integers(0, HOUR, size=int(counts.sum()))
    which = np.repeat(owner, counts)
    order = np.argsort(times, kind="stable")
    times, which = times[order].tolist(), which[order].tolist()
    per_visit: list = [[] for _ in visits]
    for t, i in zip(times, which):
        v = visits[i]
        if v.start <= t < v.end:
            per_visit[i].append(t)
    if not config.reveal_visits:
        return per_visit
    bounds = np.concatenate([[0], np.cumsum(n_hours)])
    dwell = config.reveal_dwell_s
    for i, v in enumerate(visits):
        if v.planted or _forms_stay(per_visit[i], dwell, config.reveal_tau_s):
            continue
        # a short call burst, timed by the diurnal intensity, so the visit shows up as a stay
        span = v.end - v.start
        gap = int(rng.integers(dwell, max(dwell + 1, min(3 * dwell, span // 2))))
        w = np.cumsum(lam[bounds[i] : bounds[i + 1]] + 1e-9)
        h = int(hours[bounds[i] + min(int(np.searchsorted(w, rng.random() * w[-1], side="right")), len(w) - 1)])
        first = int(h * HOUR + rng.integers(0, HOUR))
        first = min(max(first, v.start), v.end - gap - 1)
        per_visit[i] = sorted(per_visit[i] + [first, first + gap])
    return per_visit


def _outages(config: SynthConfig, rng, window: StudyWindow) -> list[tuple[int, int]]:
    out = []
    for day in range(int(window.days)):
        if rng.random() < config.outage_rate:
            start = window.start + day * DAY + int(rng.integers(0, 24)) * HOUR
            out.append((start, start + int(rng.integers(2, 7)) * HOUR))
    return out


def simulate_user(config: SynthConfig, world: World, user: UserWorld) -> tuple[list, list[Visit]]:
    visits = simulate_schedule(config, world, user)
    rng = substream(config.seed, "events", user.index)
    window = config.window
    events = []  # (time, location, event)
    for v, times in zip(visits, _voice_times(config, visits, rng)):
        directions = rng.random(len(times)) < 0.5
        for t, incoming in zip(times, directions.tolist()):
            events.append((t, v.location, EventType.VOICE_IN if incoming else EventType.VOICE_OUT))

    starts = np.array([v.start for v in visits])
    locs = np.array([v.location for v in visits])

    def loc_at(ts: np.ndarray) -> np.ndarray:
        return locs[np.searchsorted(starts, ts, side="right") - 1]

    data_times = np.empty(0, dtype=np.int64)
    if user.frequent:
        phase = int(rng.integers(0, config.heartbeat_s))
        beats = np.arange(window.start + phase, window.end, config.heartbeat_s, dtype=np.int64)
        for lo, hi in _outages(config, rng, window):
            beats = beats[(beats < lo) | (beats >= hi)]
        data_times = beats
    if user.has_data and config.data_rate > 0:
        n = rng.poisson(config.data_rate * (window.end - window.start) / HOUR)
        extra = window.start + rng.integers(0, window.end - window.start, size=n)
        data_times = np.concatenate([data_times, extra])
    for t, loc in zip(data_times.tolist(), loc_at(data_times).tolist() if len(data_times) else []):
        events.append((t, loc, EventType.DATA))

    events.sort(key=lambda e: (e[0], e[2]))
    towers = user.towers
    noise = config.tower_noise
    records = []
    for t, loc, ev in events:
        tower = towers[loc]
        if noise and rng.random() < noise:
            tower = _neighbor(world, tower, config.grid_size, rng)
        records.append(CdrRecord(user.user, tower, int(t), ev))
    return records, visits


def _neighbor(world: World, tower: CellTowerId, n: int, rng) -> CellTowerId:
    row, col = divmod(tower.cell, n)
    options = [(row + dr, col + dc) for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)) if 0 <= row + dr < n and 0 <= col + dc < n]
    return world.grid[options[int(rng.integers(len(options)))]]


def simulate(config: SynthConfig, world: World) -> Simulation:
    """Records for all users (sorted by user, then time) and the true visits."""
    records = []
    truth = GroundTruth()
    for user in world.users:
        recs, visits = simulate_user(config, world, user)
        records.extend(recs)
        truth.visits[user.user] = visits
    return Simulation(records, truth)


def oracle_labels(truth: GroundTruth, displacements: Sequence[Displacement]) -> dict:
    """1 when a true visit to a location other than the true endpoints lies
    strictly between the visits holding the departure and arrival times."""
    starts_cache: dict = {}
    out = {}
    for d in displacements:
        visits = truth.visits.get(d.user)
        if not visits:
            raise ContractError(f"displacement of unknown user {d.user!r}")
        starts = starts_cache.get(d.user)
        if starts is None:
            starts = starts_cache[d.user] = [v.start for v in visits]
        i = bisect_right(starts, d.depart) - 1
        j = bisect_right(starts, d.arrive) - 1
        if i < 0 or j < 0 or d.depart >= visits[i].end or d.arrive >= visits[j].end:
            raise ContractError(f"displacement {d} does not match the ground truth")
        ends = {visits[i].location, visits[j].location}
        out[d] = int(any(v.location not in ends for v in visits[i + 1 : j]))
    return out


def config_from_mapping(values: dict) -> SynthConfig:
    """Build a config from string values (e.g. an INI section)."""
    kwargs = {}
    by_name = {f.name: f for f in fields(SynthConfig)}
    for key, raw in values.items():
        f = by_name.get(key)
        if f is None:
            raise ConfigError(f"unknown synth option '{key}'")
        default = f.default
        try:
            if isinstance(default, bool):
                kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, tuple):
                items = [x for x in str(raw).replace(";", ",").split(",") if x.strip()]
                if isinstance(default[0], tuple):
                    flat = [float(x) for x in items]
                    kwargs[key] = tuple(tuple(flat[i : i + 3]) for i in range(0, len(flat), 3))
                else:
                    kwargs[key] = tuple(type(default[0])(float(x)) if isinstance(default[0], int) else float(x) for x in items)
            else:
                kwargs[key] = type(default)(raw) if not isinstance(default, int) else int(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synth option '{key}': {exc}") from None
    return SynthConfig(**kwargs)


def write_truth(truth: GroundTruth, fh) -> None:
    fh.write("user_id,location_id,start,end\n")
    for user in sorted(truth.visits):
        for v in truth.visits[user]:
            fh.write(f"{user},{v.location},{v.start},{v.end}\n")


def write_world(world: World, fh) -> None:
    fh.write("user_id,location_id,lac,cell_id,role,frequent\n")
    for u in world.users:
        for loc, tower in enumerate(u.towers):
            fh.write(f"{u.user},{loc},{tower.lac},{tower.cell},{ROLE_NAMES[u.role(loc)]},{int(u.frequent)}\n")


def read_truth(fh) -> GroundTruth:
    truth = GroundTruth()
    next(fh)
    for line in fh:
        user, loc, start, end = line.rstrip("\n").split(",")
        truth.visits.setdefault(user, []).append(Visit(int(loc), int(start), int(end), False))
    return truth
