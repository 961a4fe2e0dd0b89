import math

import numpy as np
import pytest

from shiftcal import (
    BinningConfig,
    ProbabilitySet,
    bin_indices,
    brier,
    ece,
    metric_report,
    nll,
    per_sample_residuals,
    reliability_bins,
    weighted_ece,
)

from oracles import (
    brute_bin_index,
    brute_brier,
    brute_ece,
    brute_nll,
    brute_reliability,
    brute_residuals,
    random_probability_rows,
)


def pset(rows):
    return ProbabilitySet.from_probabilities(np.asarray(rows, dtype=np.float64))


class TestBinIndices:
    def test_zero_confidence_joins_first_bin(self):
        assert bin_indices(np.array([0.0]), 15).tolist() == [0]

    def test_one_lands_in_last_bin(self):
        assert bin_indices(np.array([1.0]), 15).tolist() == [14]

    def test_right_closed_edges(self):
        # an exact edge k/B belongs to the bin it closes
        for b in (1, 2, 15, 10):
            for k in range(1, b + 1):
                edge = k / b
                assert bin_indices(np.array([edge]), b)[0] == k - 1
                if edge + 1e-9 <= 1.0:
                    assert bin_indices(np.array([edge + 1e-9]), b)[0] == k

    def test_matches_brute_force_on_random_and_boundary_values(self):
        rng = np.random.default_rng(7)
        for b in (1, 2, 3, 7, 15):
            edges = [k / b for k in range(b + 1)]
            conf = np.concatenate([rng.random(200), np.array(edges)])
            got = bin_indices(conf, b)
            want = [brute_bin_index(float(c), b) for c in conf]
            assert got.tolist() == want

    def test_accepts_binning_config(self):
        cfg = BinningConfig(num_bins=4)
        assert bin_indices(np.array([0.3]), cfg)[0] == 1

    def test_rejects_bad_bin_counts(self):
        with pytest.raises(ValueError):
            bin_indices(np.array([0.5]), 0)
        with pytest.raises(ValueError):
            BinningConfig(num_bins=-3)


class TestProbabilitySet:
    def test_rejects_rows_not_summing_to_one(self):
        with pytest.raises(ValueError):
            pset([[0.6, 0.5]])

    def test_accepts_rows_within_tolerance(self):
        p = pset([[0.5 + 4e-10, 0.5]])
        assert p.num_samples == 1

    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            pset([[1.2, -0.2]])
        with pytest.raises(ValueError):
            pset([[math.nan, 1.0]])

    def test_argmax_tie_takes_lowest_class(self):
        p = pset([[0.4, 0.4, 0.2], [0.25, 0.5, 0.25]])
        assert p.predictions.tolist() == [0, 1]
        assert p.confidences.tolist() == [0.4, 0.5]

    def test_supplied_predictions_must_attain_row_max(self):
        probs = np.array([[0.7, 0.3], [0.2, 0.8]])
        ok = ProbabilitySet.from_probabilities(probs, predictions=np.array([0, 1]))
        assert ok.confidences.tolist() == [0.7, 0.8]
        with pytest.raises(ValueError):
            ProbabilitySet.from_probabilities(probs, predictions=np.array([1, 1]))


class TestEce:
    def test_single_bin_value_is_accuracy_confidence_gap(self):
        # all confidences fall in one bin, so the gap is exact
        p = pset([[0.61, 0.39], [0.62, 0.38], [0.63, 0.37]])
        labels = np.array([0, 1, 0])
        expected = abs(2.0 / 3.0 - (0.61 + 0.62 + 0.63) / 3.0)
        assert ece(p, labels) == expected

    def test_perfectly_calibrated_two_bins(self):
        # constant-confidence groups whose accuracy equals the confidence
        rows = [[0.8, 0.2]] * 5 + [[0.6, 0.4]] * 5
        labels = np.array([0, 0, 0, 0, 1, 0, 0, 0, 1, 1])
        p = pset(rows)
        assert ece(p, labels, bins=5) < 1e-15

    def test_empty_bins_contribute_nothing(self):
        p = pset([[1.0, 0.0]])
        assert ece(p, np.array([0]), bins=15) == 0.0
        assert ece(p, np.array([1]), bins=15) == 1.0

    def test_matches_brute_force_bitwise(self):
        rng = np.random.default_rng(11)
        for _ in range(250):
            n = int(rng.integers(1, 51))
            k = int(rng.integers(2, 6))
            b = int(rng.integers(1, 16))
            rows = random_probability_rows(rng, n, k)
            labels = rng.integers(0, k, size=n)
            got = ece(pset(rows), labels, bins=b)
            want = brute_ece(rows, labels.tolist(), b)
            assert got == want

    def test_weighted_matches_brute_force_bitwise(self):
        rng = np.random.default_rng(13)
        for _ in range(250):
            n = int(rng.integers(1, 51))
            k = int(rng.integers(2, 6))
            b = int(rng.integers(1, 16))
            rows = random_probability_rows(rng, n, k)
            labels = rng.integers(0, k, size=n)
            weights = rng.random(n) * 3.0
            weights[0] = max(weights[0], 1e-3)
            got = weighted_ece(pset(rows), labels, weights, bins=b)
            want = brute_ece(rows, labels.tolist(), b, weights.tolist())
            assert got == want

    def test_unit_weights_equal_unweighted_bitwise(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(1, 60))
            k = int(rng.integers(2, 5))
            rows = np.asarray(random_probability_rows(rng, n, k))
            labels = rng.integers(0, k, size=n)
            p = pset(rows)
            assert weighted_ece(p, labels, np.ones(n)) == ece(p, labels)

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(19)
        rows = random_probability_rows(rng, 40, 3)
        labels = rng.integers(0, 3, size=40)
        w = rng.random(40) + 0.1
        p = pset(rows)
        a = weighted_ece(p, labels, w)
        b = weighted_ece(p, labels, w * 7.5)
        assert abs(a - b) < 1e-12

    def test_rejects_all_zero_weights(self):
        p = pset([[0.7, 0.3]])
        with pytest.raises(ValueError):
            weighted_ece(p, np.array([0]), np.zeros(1))

    def test_rejects_negative_weights_and_bad_length(self):
        p = pset([[0.7, 0.3], [0.4, 0.6]])
        labels = np.array([0, 1])
        with pytest.raises(ValueError):
            weighted_ece(p, labels, np.array([1.0, -0.5]))
        with pytest.raises(ValueError):
            weighted_ece(p, labels, np.ones(3))

    def test_rejects_out_of_range_labels(self):
        p = pset([[0.7, 0.3]])
        with pytest.raises(ValueError):
            ece(p, np.array([2]))
        with pytest.raises(ValueError):
            ece(p, np.array([-1]))


class TestReliabilityBins:
    def test_structure_and_recompute(self):
        rng = np.random.default_rng(23)
        rows = random_probability_rows(rng, 80, 4)
        labels = rng.integers(0, 4, size=80)
        p = pset(rows)
        rb = reliability_bins(p, labels, 15)
        assert rb.num_bins == 15
        assert rb.counts.sum() == 80.0
        assert rb.recompute_ece() == rb.ece
        empty = rb.counts == 0
        assert np.all(np.isnan(rb.accuracy[empty]))
        occupied = ~empty
        assert np.all(rb.accuracy[occupied] >= 0.0)
        assert np.all(rb.accuracy[occupied] <= 1.0)

    def test_matches_brute_force_tables(self):
        rng = np.random.default_rng(29)
        rows = random_probability_rows(rng, 50, 3)
        labels = rng.integers(0, 3, size=50)
        rb = reliability_bins(pset(rows), labels, 10)
        counts, acc, conf, value = brute_reliability(rows, labels.tolist(), 10)
        assert rb.counts.tolist() == counts
        assert rb.ece == value
        for m in range(10):
            if counts[m] > 0:
                assert rb.accuracy[m] == acc[m]
                assert rb.confidence[m] == conf[m]


class TestNll:
    def test_pinned_values(self):
        p = pset([[0.5, 0.5]])
        assert nll(p, np.array([0])) == -math.log(0.5)
        p2 = pset([[0.25, 0.75], [0.25, 0.75]])
        assert abs(nll(p2, np.array([1, 0])) - (-math.log(0.75) - math.log(0.25))) < 1e-12
        assert abs(nll(p2, np.array([1, 0]), mean=True) - nll(p2, np.array([1, 0])) / 2) < 1e-15

    def test_zero_probability_is_clamped(self):
        p = pset([[1.0, 0.0]])
        assert nll(p, np.array([1])) == -math.log(1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            n = int(rng.integers(1, 51))
            k = int(rng.integers(2, 6))
            rows = random_probability_rows(rng, n, k)
            labels = rng.integers(0, k, size=n)
            got = nll(pset(rows), labels)
            want = brute_nll(rows, labels.tolist())
            assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


class TestBrier:
    def test_pinned_value(self):
        p = pset([[0.8, 0.2]])
        assert abs(brier(p, np.array([0])) - 0.04) < 1e-15

    def test_perfect_prediction_scores_zero(self):
        p = pset([[1.0, 0.0, 0.0]])
        assert brier(p, np.array([0])) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            n = int(rng.integers(1, 51))
            k = int(rng.integers(2, 6))
            rows = random_probability_rows(rng, n, k)
            labels = rng.integers(0, k, size=n)
            got = brier(pset(rows), labels)
            want = brute_brier(rows, labels.tolist())
            assert abs(got - want) <= 1e-12


class TestResiduals:
    def test_pinned_values(self):
        p = pset([[0.7, 0.3], [0.2, 0.8]])
        res = per_sample_residuals(p, np.array([0, 0]))
        assert res.tolist() == [1.0 - 0.7, 0.8]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(41)
        rows = random_probability_rows(rng, 60, 4)
        labels = rng.integers(0, 4, size=60)
        got = per_sample_residuals(pset(rows), labels)
        assert got.tolist() == brute_residuals(rows, labels.tolist())

    def test_bounded_in_unit_interval(self):
        rng = np.random.default_rng(43)
        rows = random_probability_rows(rng, 200, 5)
        labels = rng.integers(0, 5, size=200)
        res = per_sample_residuals(pset(rows), labels)
        assert np.all(res >= 0.0)
        assert np.all(res <= 1.0)

    def test_single_bin_constant_correctness_mean_equals_gap(self):
        # with every prediction correct and all confidences in one bin the
        # mean residual coincides with the binned accuracy-confidence gap
        p = pset([[0.91, 0.09], [0.93, 0.07], [0.95, 0.05]])
        labels = np.array([0, 0, 0])
        res = per_sample_residuals(p, labels)
        assert abs(res.mean() - ece(p, labels)) < 1e-15


class TestMetricReport:
    def test_fields_and_consistency(self):
        rng = np.random.default_rng(47)
        rows = random_probability_rows(rng, 30, 3)
        labels = rng.integers(0, 3, size=30)
        p = pset(rows)
        rep = metric_report(p, labels, 15)
        assert rep["num_samples"] == 30
        assert rep["num_classes"] == 3
        assert rep["num_bins"] == 15
        assert rep["ece"] == ece(p, labels, 15)
        assert rep["nll_sum"] == nll(p, labels)
        assert rep["nll_mean"] == nll(p, labels, mean=True)
        assert rep["brier"] == brier(p, labels)
        assert 0.0 <= rep["accuracy"] <= 1.0
