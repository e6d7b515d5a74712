import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiddenvisit.errors import OrderingError
from hiddenvisit.localization import Presence
from hiddenvisit.model import DAY, HOUR, EventType, GeoPoint
from hiddenvisit.movement import (
    Segment,
    StayPoint,
    classify_segments,
    extract_displacements,
    scaled_frequency,
    segment_presences,
)

V = EventType.VOICE_IN
H8 = 8 * HOUR


def pres(loc, t):
    return Presence("u", loc, t, V)


def stay(loc, start, end=None):
    end = start if end is None else end
    times = (start,) if end == start else (start, end)
    return StayPoint(loc, start, Segment("u", loc, start, end, times))


class TestSegments:
    def test_merge_close(self):
        (seg,) = segment_presences([pres(1, 10 * HOUR), pres(1, 10 * HOUR + 300)])
        assert (seg.start, seg.end, seg.n_presences) == (10 * HOUR, 10 * HOUR + 300, 2)

    def test_gap_splits(self):
        assert len(segment_presences([pres(1, 10 * HOUR), pres(1, 12 * HOUR)], 3600)) == 2
        # a gap of exactly tau also splits
        assert len(segment_presences([pres(1, 0), pres(1, 3600)], 3600)) == 2

    def test_location_change_splits(self):
        assert len(segment_presences([pres(1, 0), pres(2, 300)])) == 2

    def test_unordered(self):
        with pytest.raises(OrderingError):
            segment_presences([pres(1, 10), pres(1, 5)])

    def test_empty(self):
        assert segment_presences([]) == []


timelines = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 7200)), max_size=40).map(
    lambda xs: [pres(loc, t) for loc, t in zip([x[0] for x in xs], _cumsum([x[1] for x in xs]))]
)


def _cumsum(xs):
    out, total = [], 0
    for x in xs:
        total += x
        out.append(total)
    return out


@given(timelines, st.integers(1, 7200), st.integers(1, 7200))
def test_segments_partition_and_monotone_in_tau(ps, t1, t2):
    lo, hi = sorted((t1, t2))
    segs_lo, segs_hi = segment_presences(ps, lo), segment_presences(ps, hi)
    assert sum(s.n_presences for s in segs_lo) == len(ps)
    assert [t for s in segs_lo for t in s.times] == [p.time for p in ps]
    assert len(segs_lo) >= len(segs_hi)
    for a, b in zip(segs_lo, segs_lo[1:]):
        assert a.end <= b.start


class TestClassify:
    def test_long_segment_is_stay(self):
        stays, passby = classify_segments([Segment("u", 1, 0, 720, (0, 720))], 600, 4)
        assert len(stays) == 1 and passby == 0

    def test_frequent_location_is_stay(self):
        segs = [Segment("u", 1, d * DAY, d * DAY + 300, (d * DAY, d * DAY + 300)) for d in range(5)]
        stays, _ = classify_segments(segs, 600, 4)
        assert len(stays) == 5

    def test_short_rare_is_passby(self):
        stays, passby = classify_segments([Segment("u", 1, 0, 120, (0, 60, 120))], 600, 4)
        assert stays == [] and passby == 3

    def test_stay_time_is_segment_start(self):
        (sp,), _ = classify_segments([Segment("u", 1, 100, 900, (100, 900))])
        assert sp.time == 100 and sp.end == 900

    def test_scaled_frequency(self):
        assert scaled_frequency(4, 30) == 4
        assert scaled_frequency(4, 15) == 2
        assert scaled_frequency(4, 1) == 1


class TestDisplacements:
    def test_eti_example(self):
        (d,) = extract_displacements([stay(0, H8), stay(1, 11 * HOUR)], 3600)
        assert (d.origin, d.destination, d.eti) == (0, 1, 1)

    def test_same_location_no_displacement(self):
        assert extract_displacements([stay(0, H8), stay(0, H8 + 5400)], 3600) == []

    def test_short_gap_no_eti(self):
        (d,) = extract_displacements([stay(0, H8), stay(1, H8 + 1800)], 3600)
        assert d.eti == 0

    def test_runs_merge_and_endpoints(self):
        stays = [stay(0, 0, 600), stay(0, 2000, 2600), stay(1, 9000, 9600), stay(2, 9700)]
        ds = extract_displacements(stays, 3600)
        assert [(d.origin, d.destination, d.depart, d.arrive) for d in ds] == [(0, 1, 2600, 9000), (1, 2, 9600, 9700)]
        assert [d.eti for d in ds] == [1, 0]
        assert all(math.isnan(d.distance_km) for d in ds)

    def test_distance_from_centroids(self):
        cents = {0: GeoPoint(0, 0), 1: GeoPoint(1, 0)}
        (d,) = extract_displacements([stay(0, 0), stay(1, 100)], 3600, cents)
        assert d.distance_km == pytest.approx(111.195, abs=1e-3)

    def test_unordered_stays(self):
        with pytest.raises(OrderingError):
            extract_displacements([stay(0, 500, 900), stay(1, 100)])


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 9000)), max_size=30))
def test_displacements_connect_consecutive_distinct_runs(steps):
    t, stays = 0, []
    for loc, gap in steps:
        t += gap
        stays.append(stay(loc, t, t + 10))
        t += 10
    ds = extract_displacements(stays, 3600)
    runs = [s.location for i, s in enumerate(stays) if i == 0 or stays[i - 1].location != s.location]
    assert [(d.origin, d.destination) for d in ds] == list(zip(runs, runs[1:]))
    assert all(d.origin != d.destination and d.arrive >= d.depart for d in ds)
