import unittest

import numpy as np

from core.errors import ContractError, DimensionError, InputError
from core.evaluation import (
    THRESHOLD_GRID,
    EvalReport,
    bootstrap_significance,
    decide_label,
    evaluate,
    median_of_runs,
    tune_threshold,
)


def _report(f1, precision=0.0):
    return EvalReport(
        precision=precision,
        recall=0.0,
        f1=f1,
        threshold=0.0,
        n_instances=1,
        n_gold_positive=0,
        n_pred_positive=0,
        n_correct=0,
    )


class DecisionRuleTests(unittest.TestCase):
    relations = ("a", "b")

    def test_zero_threshold_is_plain_argmax(self):
        self.assertEqual(decide_label([0.2, 0.5, 0.3], self.relations, 0.0), "b")
        self.assertIsNone(decide_label([0.2, 0.3, 0.5], self.relations, 0.0))

    def test_threshold_demotes_to_none(self):
        self.assertIsNone(decide_label([0.2, 0.5, 0.3], self.relations, 0.95))
        uniform = np.full(3, 1.0 / 3.0)
        self.assertIsNone(decide_label(uniform, self.relations, 0.5))

    def test_max_over_relations_ignores_none_probability(self):
        probs = [0.3, 0.1, 0.6]
        self.assertEqual(decide_label(probs, self.relations, 0.25, "max_over_r"), "a")
        self.assertIsNone(decide_label(probs, self.relations, 0.35, "max_over_r"))
        self.assertIsNone(decide_label(probs, self.relations, 0.0, "argmax"))

    def test_bad_inputs(self):
        with self.assertRaises(DimensionError):
            decide_label([0.5, 0.5], self.relations, 0.0)
        with self.assertRaises(InputError):
            decide_label([0.2, 0.5, 0.3], self.relations, 0.0, "vote")


class EvaluateTests(unittest.TestCase):
    def test_hand_counted_example(self):
        report = evaluate(["r1", None, "r3"], ["r1", "r2", None])
        self.assertAlmostEqual(report.precision, 0.5)
        self.assertAlmostEqual(report.recall, 0.5)
        self.assertAlmostEqual(report.f1, 0.5)
        self.assertEqual(dict(report.per_relation)["r3"], (0, 1, 0))

    def test_all_none_predictions(self):
        report = evaluate([None, None], ["r1", None])
        self.assertEqual((report.precision, report.recall, report.f1), (0.0, 0.0, 0.0))

    def test_perfect_predictions(self):
        report = evaluate(["r1", None, "r2"], ["r1", None, "r2"])
        self.assertEqual((report.precision, report.recall, report.f1), (1.0, 1.0, 1.0))

    def test_f1_matches_recount_from_counts(self):
        rng = np.random.default_rng(4)
        labels = ["r1", "r2", "r3", None]
        preds = [labels[int(i)] for i in rng.integers(0, 4, size=200)]
        gold = [labels[int(i)] for i in rng.integers(0, 4, size=200)]
        report = evaluate(preds, gold)
        expected = 2.0 * report.n_correct / (report.n_pred_positive + report.n_gold_positive)
        self.assertAlmostEqual(report.f1, expected)

    def test_length_mismatch(self):
        with self.assertRaises(InputError):
            evaluate(["r1"], ["r1", None])

    def test_report_dict_layout(self):
        data = evaluate(["r1"], ["r1"]).to_dict()
        self.assertEqual(data["counts"], {"gold_positive": 1, "predicted_positive": 1, "correct": 1})
        self.assertEqual(data["per_relation"]["r1"], {"gold": 1, "predicted": 1, "correct": 1})


class ThresholdTests(unittest.TestCase):
    relations = ("a", "b", "c")

    def test_grid(self):
        self.assertEqual(len(THRESHOLD_GRID), 20)
        self.assertEqual(THRESHOLD_GRID[0], 0.0)
        self.assertEqual(THRESHOLD_GRID[-1], 0.95)
        self.assertIn(0.35, THRESHOLD_GRID)

    def test_threshold_separating_wrong_positives(self):
        probs = np.array(
            [
                [0.50, 0.20, 0.10, 0.20],
                [0.10, 0.40, 0.20, 0.30],
                [0.32, 0.28, 0.20, 0.20],
                [0.25, 0.30, 0.25, 0.20],
            ]
        )
        gold = ["a", "b", None, None]
        tau, report = tune_threshold(probs, gold, self.relations)
        self.assertEqual(tau, 0.35)
        self.assertEqual(report.f1, 1.0)
        for other in THRESHOLD_GRID:
            self.assertGreaterEqual(report.f1, tune_threshold(probs, gold, self.relations, grid=[other])[1].f1)

    def test_ties_pick_smallest_threshold(self):
        probs = np.array([[0.1, 0.1, 0.1, 0.7], [0.2, 0.1, 0.1, 0.6]])
        tau, report = tune_threshold(probs, ["a", None], self.relations)
        self.assertEqual(tau, 0.0)
        self.assertEqual(report.f1, 0.0)

    def test_empty_or_misaligned_input(self):
        with self.assertRaises(InputError):
            tune_threshold(np.zeros((0, 4)), [], self.relations)
        with self.assertRaises(InputError):
            tune_threshold(np.full((2, 4), 0.25), ["a"], self.relations)


class MedianTests(unittest.TestCase):
    def test_median_is_third_of_five(self):
        reports = [_report(f) for f in (0.5, 0.1, 0.4, 0.2, 0.3)]
        aggregate = median_of_runs(reports)
        self.assertEqual(aggregate.median.f1, 0.3)
        self.assertEqual(aggregate.median_index, 4)
        self.assertEqual(median_of_runs(list(reversed(reports))).median.f1, 0.3)

    def test_equal_runs(self):
        self.assertEqual(median_of_runs([_report(0.7)] * 5).median.f1, 0.7)

    def test_wrong_number_of_runs(self):
        with self.assertRaises(ContractError):
            median_of_runs([_report(0.1)] * 4)


class BootstrapTests(unittest.TestCase):
    def test_identical_systems_are_not_separated(self):
        gold = ["r1", None, "r2", "r1"] * 25
        preds = ["r1", "r2", None, "r1"] * 25
        self.assertGreater(bootstrap_significance(preds, preds, gold, n=500, seed=1), 0.9)

    def test_perfect_against_always_wrong(self):
        rng = np.random.default_rng(0)
        gold = [("r1", "r2", None)[int(i)] for i in rng.integers(0, 3, size=1000)]
        wrong = ["r3"] * 1000
        self.assertLess(bootstrap_significance(gold, wrong, gold, n=2000, seed=2), 0.001)
        self.assertLess(bootstrap_significance(wrong, gold, gold, n=2000, seed=2), 0.001)

    def test_seed_determinism_and_errors(self):
        rng = np.random.default_rng(3)
        gold = [("r1", None)[int(i)] for i in rng.integers(0, 2, size=60)]
        a = [("r1", None)[int(i)] for i in rng.integers(0, 2, size=60)]
        b = [("r1", None)[int(i)] for i in rng.integers(0, 2, size=60)]
        self.assertEqual(bootstrap_significance(a, b, gold, n=300, seed=9), bootstrap_significance(a, b, gold, n=300, seed=9))
        with self.assertRaises(InputError):
            bootstrap_significance(a, b[:-1], gold)
        with self.assertRaises(InputError):
            bootstrap_significance([], [], [])


if __name__ == "__main__":
    unittest.main()
