import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiddenvisit.errors import DegenerateDataError, EmptyDatasetError, UndefinedMetricError
from hiddenvisit.learning import (
    Dataset,
    LogisticClassifier,
    MarginalBaseline,
    ModelParams,
    NoHiddenBaseline,
    ablate,
    average_ranks,
    baseline_deterministic,
    baseline_probabilistic,
    cross_validate,
    evaluate,
    group_combinations,
    kfold_indices,
    mcfadden_r2,
    penalized_gradient,
    penalized_loss,
    predict_class,
    predict_proba,
    roc_auc,
    train_logistic,
    wald_summary,
)

from .oracles import auc_by_pairs, confusion_by_hand


def make_data(n, theta, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, len(theta) - 1))
    p = 1 / (1 + np.exp(-(theta[0] + X @ theta[1:])))
    return Dataset(X, (rng.random(n) < p).astype(int))


class TestGradient:
    def test_finite_differences(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 15))
        y = (rng.random(200) < 0.4).astype(int)
        for _ in range(5):
            theta = rng.normal(size=16)
            g = penalized_gradient(theta, X, y, 1.0)
            num = np.array([
                (penalized_loss(theta + e, X, y, 1.0) - penalized_loss(theta - e, X, y, 1.0)) / 2e-5
                for e in np.eye(16) * 1e-5
            ])
            assert np.max(np.abs(g - num)) <= 1e-6

    def test_intercept_unpenalized(self):
        X = np.zeros((4, 1))
        y = np.array([0, 1, 0, 1])
        # loss at intercept 0 with huge coefficient only changes by the penalty
        a = penalized_loss(np.array([0.0, 10.0]), X, y, 2.0)
        b = penalized_loss(np.array([0.0, 0.0]), X, y, 2.0)
        assert a - b == pytest.approx(100 / 4)
        assert penalized_loss(np.array([3.0, 0.0]), X, y, 1e-9) > b


class TestTrain:
    def test_independent_labels_give_zero(self):
        # every feature row appears once with each label: the optimum is exactly zero
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5_000, 3))
        X = np.vstack([X, X])
        y = np.concatenate([np.zeros(5_000, int), np.ones(5_000, int)])
        p = train_logistic(Dataset(X, y), C=1.0)
        assert abs(p.intercept) < 1e-2 and np.all(np.abs(p.coefficients) < 1e-2)

    def test_recovery(self):
        theta = np.array([-0.5, 1.0, -0.7, 0.3])
        p = train_logistic(make_data(20_000, theta, 1), C=1e6)
        assert np.all(np.abs(p.theta - theta) < 0.1)
        assert p.converged

    def test_separable_finite(self):
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        p = train_logistic(Dataset(X, [0, 0, 1, 1]), C=1.0)
        assert np.all(np.isfinite(p.theta)) and p.converged

    def test_single_class(self):
        with pytest.raises(DegenerateDataError):
            train_logistic(Dataset(np.ones((3, 1)), [1, 1, 1]))

    def test_loss_monotone(self):
        p = train_logistic(make_data(500, np.array([0.2, 2.0, -1.0]), 4), C=0.5)
        hist = np.array(p.loss_history)
        assert np.all(np.diff(hist) <= 1e-9 * np.maximum(1, np.abs(hist[1:])))

    def test_deterministic(self):
        data = make_data(300, np.array([0.1, 0.5]), 2)
        assert np.array_equal(train_logistic(data).theta, train_logistic(data).theta)

    def test_wald_and_r2(self):
        data = make_data(2000, np.array([0.0, 1.5, 0.0]), 5)
        p = train_logistic(data, C=1e6)
        rows = wald_summary(p, data)
        assert [r[0] for r in rows] == ["intercept", "x1", "x2"]
        assert rows[1][3] < 1e-6 and rows[2][3] > 1e-3
        assert 0 < mcfadden_r2(p, data) < 1

    def test_json_round_trip(self):
        p = ModelParams(0.5, np.array([1.0, -2.0]), 1.0, ("a", "b"))
        text = p.to_json("2020-01-01T00:00:00Z")
        assert json.loads(text)["trained_at"] == "2020-01-01T00:00:00Z"
        q = ModelParams.from_json(text)
        assert q.intercept == 0.5 and list(q.coefficients) == [1.0, -2.0]

    def test_trained_at_honours_source_date_epoch(self, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        assert json.loads(ModelParams(0, np.zeros(1)).to_json())["trained_at"] == "1970-01-01T00:00:00Z"


class TestPredict:
    def test_zero_params(self):
        assert predict_proba(ModelParams(0.0, np.zeros(15)), np.zeros(15)) == 0.5

    def test_intercept_only(self):
        assert predict_proba(ModelParams(-1.683, np.zeros(15)), np.zeros(15)) == pytest.approx(0.1567, abs=1e-3)

    def test_distance_monotone(self):
        coef = np.zeros(15)
        coef[0] = 0.087
        params = ModelParams(-1.683, coef)
        x = np.zeros((20, 15))
        x[:, 0] = np.arange(20)
        assert np.all(np.diff(predict_proba(params, x)) > 0)

    def test_cutoff_convention(self):
        p = ModelParams(0.0, np.zeros(1))
        assert predict_class(p, np.zeros(1), 0.5) == 1
        assert predict_class(ModelParams(np.log(0.7 / 0.3), np.zeros(1)), np.zeros(1), 0.5) == 1
        assert predict_class(ModelParams(np.log(0.3 / 0.7), np.zeros(1)), np.zeros(1), 0.5) == 0

    @given(st.floats(-50, 50), st.floats(0.01, 0.98), st.floats(0.0, 0.01))
    def test_cutoff_monotone(self, z, lo, step):
        p = ModelParams(z, np.zeros(1))
        assert predict_class(p, np.zeros(1), lo + step) <= predict_class(p, np.zeros(1), lo)

    def test_extreme_inputs_strictly_inside(self):
        p = ModelParams(0.0, np.ones(1))
        out = predict_proba(p, np.array([[-30.0], [30.0]]))
        assert 0 < out[0] < out[1] < 1


class TestBaselines:
    def test_deterministic(self):
        assert baseline_deterministic(np.ones(15)) == 0
        y = np.array([0] * 628 + [1] * 372)
        m = evaluate(y, NoHiddenBaseline().fit(Dataset(np.zeros((1000, 1)), y)).predict(np.zeros((1000, 1))))
        assert (m.accuracy, m.precision, m.recall, m.f1) == (0.628, 0.0, 0.0, None)

    def test_probabilistic(self):
        assert baseline_probabilistic(0.0, 1)(100).sum() == 0
        assert baseline_probabilistic(1.0, 1)(100).sum() == 100
        assert baseline_probabilistic(0.372, 7)(100_000).mean() == pytest.approx(0.372, abs=0.005)
        assert np.array_equal(baseline_probabilistic(0.4, 3)(50), baseline_probabilistic(0.4, 3)(50))

    def test_marginal_baseline(self):
        data = Dataset(np.zeros((10, 1)), [1] * 3 + [0] * 7)
        m = MarginalBaseline().fit(data, np.random.default_rng(0))
        assert m.p == 0.3
        pred = m.predict(np.zeros((1000, 1)))
        assert np.array_equal(m.scores(np.zeros((1000, 1))), pred)


class TestMetrics:
    def test_hand_example(self):
        m = evaluate([1, 0, 1], [1, 1, 0])
        assert m.accuracy == pytest.approx(1 / 3)
        assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)

    def test_perfect(self):
        m = evaluate([0, 1, 1], [0, 1, 1], [0.1, 0.8, 0.9])
        assert (m.accuracy, m.precision, m.recall, m.f1, m.roc_auc) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            evaluate([], [])

    def test_exhaustive_small(self):
        for n in range(1, 5):
            for y in itertools.product((0, 1), repeat=n):
                for p in itertools.product((0, 1), repeat=n):
                    m = evaluate(y, p)
                    tp, fp, tn, fn = confusion_by_hand(y, p)
                    assert (m.tp, m.fp, m.tn, m.fn) == (tp, fp, tn, fn)
                    assert 0 <= m.accuracy <= 1


class TestAuc:
    def test_examples(self):
        assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
        assert roc_auc([0, 0, 1, 1], [0.9, 0.8, 0.2, 0.1]) == 0.0
        assert roc_auc([0, 1, 0, 1], [0.5] * 4) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([1, 1], [0.2, 0.3])

    def test_average_ranks(self):
        assert list(average_ranks([3, 1, 3, 2])) == [3.5, 1.0, 3.5, 2.0]

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 5)), min_size=2, max_size=30))
    def test_pairwise_oracle_and_monotone_invariance(self, rows):
        y = [r[0] for r in rows]
        s = np.array([r[1] for r in rows], dtype=float)
        if len(set(y)) < 2:
            return
        a = roc_auc(y, s)
        assert a == pytest.approx(auc_by_pairs(y, s))
        assert roc_auc(y, np.exp(s) * 3 + 1) == pytest.approx(a)


class TestCrossValidation:
    def test_fold_sizes(self):
        sizes = sorted(len(f) for f in kfold_indices(9761, 10, 0))
        assert sizes == [976] * 9 + [977]

    def test_same_seed_same_folds(self):
        a, b = kfold_indices(50, 5, 9), kfold_indices(50, 5, 9)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert sorted(np.concatenate(a)) == list(range(50))

    def test_too_few(self):
        with pytest.raises(ValueError):
            kfold_indices(3, 5, 0)

    def test_leave_one_out(self):
        data = make_data(12, np.array([0.0, 2.0]), 3)
        res = cross_validate(data, 12, 0, lambda: LogisticClassifier())
        assert res.mean["roc_auc"] is None and len(res.folds) == 12

    def test_baseline_scores_absent(self):
        data = make_data(100, np.array([0.0, 1.0]), 1)
        assert cross_validate(data, 5, 0, NoHiddenBaseline).mean["roc_auc"] is None


class TestAblation:
    def test_combinations(self):
        combos = group_combinations()
        assert len(combos) == 7 and combos[0] == ("spatial", "temporal", "personal")

    def test_spatial_matters_most(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(1500, 15))
        z = -0.5 + 1.5 * X[:, 0]
        y = (rng.random(1500) < 1 / (1 + np.exp(-z))).astype(int)
        rows = {combo: auc for combo, _, auc in ablate(Dataset(X, y), k=5, seed=1)}
        assert rows[("temporal", "personal")] < rows[("spatial",)] - 0.2
        assert all(0 <= a <= 1 for a in rows.values())

    def test_empty_group(self):
        with pytest.raises(ValueError):
            ablate(make_data(40, np.array([0.0] * 16)), combos=[()])
