import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiddenvisit.errors import ContractError, EmptyDatasetError
from hiddenvisit.fusion import (
    Label,
    TruthTimeline,
    UsageKind,
    active_hours,
    assemble_training_set,
    classify_user,
    classify_users,
    derive_truth_timeline,
    frequent_threshold,
    interior_bins,
    label_balance,
    label_displacement,
)
from hiddenvisit.localization import Presence
from hiddenvisit.model import HOUR, CdrRecord, CellTowerId, EventType, StudyWindow
from hiddenvisit.movement import Displacement

W = StudyWindow.from_days(0, 30)
T = CellTowerId(1, 1)
A, B, Z = 0, 1, 2


def rec(t, ev):
    return CdrRecord("u", T, t, ev)


def data_hours(n):
    return [rec(h * HOUR + 5, EventType.DATA) for h in range(n)]


def disp(depart, arrive, o=A, d=B, eti=1):
    return Displacement("u", o, d, depart, arrive, eti, 1.0)


class TestUsage:
    def test_data_only(self):
        assert classify_user(data_hours(3), W).kind is UsageKind.DATA_ONLY

    def test_call_only(self):
        assert classify_user([rec(0, EventType.VOICE_OUT)], W).kind is UsageKind.CALL_ONLY

    def test_frequent_rule(self):
        voice = [rec(10, EventType.VOICE_IN)]
        assert frequent_threshold(W) == 360
        assert classify_user(voice + data_hours(400), W).frequent
        assert classify_user(voice + data_hours(360), W).frequent
        assert not classify_user(voice + data_hours(359), W).frequent
        assert not classify_user(voice + data_hours(100), W).frequent
        # data-only users are never frequent even with dense data
        assert not classify_user(data_hours(700), W).frequent

    def test_monotone_in_data_hours(self):
        voice = [rec(10, EventType.VOICE_IN)]
        flags = [classify_user(voice + data_hours(n), W).frequent for n in range(0, 720, 40)]
        assert flags == sorted(flags)

    def test_excluded_users(self):
        classes, excluded = classify_users({"a": [rec(0, EventType.DATA)], "b": []}, W)
        assert list(classes) == ["a"] and excluded == 1

    def test_active_hours(self):
        assert active_hours([rec(1, EventType.DATA)] * 3, W) == 1
        assert active_hours([rec(b * HOUR, EventType.DATA) for b in (0, 5, 719)], W) == 3
        assert active_hours([], W) == 0


class TestTimeline:
    def test_single_location(self):
        tl = derive_truth_timeline([Presence("u", Z, 9 * HOUR + 600, EventType.DATA),
                                    Presence("u", Z, 9 * HOUR + 2400, EventType.DATA)], W)
        assert tl[9] == Z and 7 not in tl

    def test_majority(self):
        ps = [Presence("u", loc, 3 * HOUR + i, EventType.DATA) for i, loc in enumerate([B, A, A])]
        assert derive_truth_timeline(ps, W)[3] == A

    def test_tie_goes_to_earliest(self):
        ps = [Presence("u", B, 3 * HOUR + 1, EventType.DATA), Presence("u", A, 3 * HOUR + 2, EventType.DATA)]
        assert derive_truth_timeline(ps, W)[3] == B
        assert derive_truth_timeline(list(reversed(ps)), W)[3] == B

    def test_voice_ignored(self):
        tl = derive_truth_timeline([Presence("u", A, 0, EventType.VOICE_IN)], W)
        assert tl.coverage == frozenset()


class TestLabel:
    d = disp(8 * HOUR, 11 * HOUR)

    def test_hidden(self):
        assert label_displacement(self.d, TruthTimeline({9: Z, 10: B}), W) is Label.HIDDEN

    def test_no_hidden(self):
        assert label_displacement(self.d, TruthTimeline({9: A, 10: B}), W) is Label.NO_HIDDEN

    def test_unrecoverable(self):
        assert label_displacement(self.d, TruthTimeline({10: B}), W) is Label.UNRECOVERABLE

    def test_partial_edge_bins_exempt(self):
        d = disp(8 * HOUR + 1800, 10 * HOUR + 1800)
        assert list(interior_bins(d.depart, d.arrive, W)) == [9]
        assert label_displacement(d, TruthTimeline({8: Z, 9: A, 10: Z}), W) is Label.NO_HIDDEN

    def test_requires_eti(self):
        with pytest.raises(ContractError):
            label_displacement(disp(0, 100, eti=0), TruthTimeline({}), W)
        with pytest.raises(ContractError):
            label_displacement(disp(0, 9000, o=A, d=A), TruthTimeline({}), W)

    @given(st.integers(0, 20 * HOUR), st.integers(3601, 12 * HOUR))
    def test_interior_bins_are_whole_and_inside(self, depart, length):
        arrive = depart + length
        for b in interior_bins(depart, arrive, W):
            assert depart < b * HOUR and (b + 1) * HOUR <= arrive
        # and no whole bin inside is missed
        whole = [b for b in range(0, 40) if depart < b * HOUR and (b + 1) * HOUR <= arrive]
        assert list(interior_bins(depart, arrive, W)) == whole

    def test_pure_function(self):
        tl = TruthTimeline({9: Z, 10: B})
        assert {label_displacement(self.d, tl, W) for _ in range(5)} == {Label.HIDDEN}


class TestTrainingSet:
    def obs(self, n, label=Label.NO_HIDDEN):
        return [(disp(i * 10 * HOUR, i * 10 * HOUR + 3 * HOUR), label, i) for i in range(n)]

    def test_one_per_user(self):
        chosen = assemble_training_set({"a": self.obs(3), "b": self.obs(0), "c": self.obs(1)}, seed=1)
        assert len(chosen) == 2

    def test_unrecoverable_not_eligible(self):
        chosen = assemble_training_set({"a": self.obs(2, Label.UNRECOVERABLE), "b": self.obs(1)}, seed=1)
        assert len(chosen) == 1

    def test_deterministic(self):
        data = {u: self.obs(5) for u in "abcdef"}
        assert assemble_training_set(data, 3) == assemble_training_set(dict(reversed(list(data.items()))), 3)

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            assemble_training_set({"a": []}, 0)

    def test_balance(self):
        counts = label_balance([Label.HIDDEN, Label.NO_HIDDEN, Label.HIDDEN])
        assert counts == {Label.NO_HIDDEN: 1, Label.HIDDEN: 2, Label.UNRECOVERABLE: 0}


def test_label_exhaustive_small_timelines():
    """Against a direct reading of the rule on every 3-bin timeline."""
    d = disp(8 * HOUR, 11 * HOUR)
    options = [None, A, B, Z]
    for combo in itertools.product(options, repeat=3):
        bins = {8 + i: loc for i, loc in enumerate(combo) if loc is not None}
        got = label_displacement(d, TruthTimeline(bins), W)
        inner = [bins.get(9), bins.get(10)]
        if None in inner:
            want = Label.UNRECOVERABLE
        elif any(x not in (A, B) for x in inner):
            want = Label.HIDDEN
        else:
            want = Label.NO_HIDDEN
        assert got is want
