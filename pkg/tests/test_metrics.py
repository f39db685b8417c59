from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsfn import oracles
from tsfn.metrics import (PAPER_TSFN_ROW, Metrics, average_precision, comparison_table,
                          compute_metrics, distance_curve_csv, emit_distance_curve,
                          mean_average_precision, predict, report_comparison)

rankings = st.integers(1, 8).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 5), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)).filter(lambda t: any(t[1])))


class TestAveragePrecision:
    def test_ranks_one_and_three(self):
        ap = average_precision([(0.9, True), (0.8, False), (0.7, True), (0.1, False)])
        assert ap == pytest.approx(float((Fraction(1) + Fraction(2, 3)) / 2), abs=1e-4)
        assert abs(ap - 0.8333) <= 1e-4

    def test_perfect(self):
        assert average_precision([(0.9, True), (0.8, True), (0.1, False)]) == 1.0

    def test_ties_keep_input_order(self):
        assert average_precision([(0.5, False), (0.5, True)]) == 0.5
        assert average_precision([(0.5, True), (0.5, False)]) == 1.0

    def test_no_positives(self):
        with pytest.raises(ValueError):
            average_precision([(0.3, False)])

    @given(rankings)
    def test_bruteforce_oracle(self, case):
        scores, labels = case
        got = average_precision(list(zip(scores, labels)))
        assert abs(got - oracles.average_precision_bruteforce(scores, labels)) <= 1e-9


class TestMeanAP:
    def test_perfect_ranking(self):
        labels = np.array([0, 1, 2, 3, 4, 5, 0])
        probs = np.eye(6)[labels] * 0.9 + 0.01
        mAP, per = mean_average_precision(probs, labels)
        assert mAP == 1.0 and per == [1.0] * 6

    def test_missing_class_warns(self):
        labels = np.array([0, 1])
        with pytest.warns(UserWarning):
            mAP, per = mean_average_precision(np.eye(6)[labels], labels)
        assert per[2] is None and mAP == 1.0


class TestComputeMetrics:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.labels = rng.integers(0, 6, size=40)
        self.dist = rng.integers(4, 29, size=40).astype(float)
        self.probs = rng.dirichlet(np.ones(6), size=40)

    def test_invariants(self):
        m = compute_metrics(self.probs, self.labels, self.dist, np.ones(40))
        assert m.accuracy == np.mean(predict(self.probs) == self.labels)
        assert sum(n for _, n in m.per_distance.values()) == 40
        assert all(0 <= a <= 1 for a, _ in m.per_distance.values())
        present = [ap for ap in m.per_class_ap if ap is not None]
        assert m.mAP == pytest.approx(np.mean(present))
        assert 0 <= m.mAP <= 1
        assert m.n_samples == 40 and m.mean_loss == 1.0

    def test_uniform_predictor_ties_to_class_zero(self):
        m = compute_metrics(np.full((40, 6), 1 / 6), self.labels, self.dist, np.zeros(40))
        assert m.accuracy == np.mean(self.labels == 0)

    def test_oracle_predictor(self):
        m = compute_metrics(np.eye(6)[self.labels], self.labels, self.dist, np.zeros(40))
        assert m.accuracy == 1.0 and m.mAP == 1.0

    def test_dict_roundtrip(self):
        m = compute_metrics(self.probs, self.labels, self.dist, np.ones(40))
        assert Metrics.from_dict(m.to_dict()) == m


class TestReports:
    def metrics(self):
        return Metrics(0.5, 1.0, 0.6, {28: (0.5, 10), 4: (1.0, 10)}, [None] * 6, 20)

    def test_curve(self, tmp_path):
        text = distance_curve_csv(self.metrics())
        assert text == "distance_m,accuracy,n_samples\n4,1.0000,10\n28,0.5000,10\n"
        emit_distance_curve(self.metrics(), tmp_path / "a.csv")
        emit_distance_curve(self.metrics(), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert len((tmp_path / "a.csv").read_text().splitlines()) == 1 + 2

    def test_curve_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            emit_distance_curve(self.metrics(), tmp_path / "missing" / "a.csv")

    def test_comparison_single(self, tmp_path):
        text = report_comparison([("TSFN", self.metrics())], tmp_path / "t.csv")
        data = [l for l in text.splitlines() if not l.startswith("#")]
        assert data == ["model,accuracy_pct,loss,mAP", "TSFN,50.0,1.00,0.60"]
        assert (tmp_path / "t.csv").read_text() == text

    def test_reference_row_verbatim(self):
        assert PAPER_TSFN_ROW == ("TSFN", 96.1, 0.12, 0.92)
        assert "TSFN 96.1 0.12 0.92" in comparison_table([("x", self.metrics())])

    def test_ablation_rows(self):
        text = comparison_table([("TSFN", self.metrics()), ("TCN", self.metrics()),
                                 ("R(2+1)D", self.metrics())])
        names = [l.split(",")[0] for l in text.splitlines() if not l.startswith("#")][1:]
        assert names == ["TSFN", "TCN", "R(2+1)D"]
