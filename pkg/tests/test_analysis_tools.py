import unittest

from core.analysis import LAYER_GRID, aggregate, parse_grid, render_ablation_table, run_ablation
from core.config import TrainConfig
from core.errors import InputError
from core.evaluation import EvalReport
from core.graphs import EdgeToggles
from tests.fixtures import small_config, small_split


def _report(f1):
    return EvalReport(
        precision=f1, recall=f1, f1=f1, threshold=0.5, n_instances=4, n_gold_positive=2, n_pred_positive=2, n_correct=1
    )


class GridTests(unittest.TestCase):
    def test_default_grid_is_base_setting(self):
        settings = parse_grid("", TrainConfig())
        self.assertEqual(len(settings), 1)
        self.assertEqual(settings[0].label, "L1=1 L2=1 full")

    def test_layer_and_edge_shortcuts(self):
        settings = parse_grid("layers=grid;edges=each", TrainConfig())
        self.assertEqual(len(settings), len(LAYER_GRID) * 6)
        self.assertEqual((settings[0].l1, settings[0].l2), (1, 1))
        self.assertEqual(settings[1].toggles, EdgeToggles.without(["emg1"]))

    def test_explicit_values(self):
        settings = parse_grid("layers=2x1, 3X2; edges=full,-emg1-eg2", TrainConfig())
        self.assertEqual([(s.l1, s.l2) for s in settings], [(2, 1), (2, 1), (3, 2), (3, 2)])
        self.assertEqual(settings[1].toggles.disabled(), ("emg1", "eg2"))
        self.assertEqual(settings[1].label, "L1=2 L2=1 -emg1,-eg2")

    def test_bad_grids(self):
        for spec in ("layers", "layers=", "layers=1", "layers=0x1", "edges=emg1", "edges=-emg7", "depth=2"):
            with self.subTest(spec=spec):
                with self.assertRaises(InputError):
                    parse_grid(spec, TrainConfig())


class AggregateTests(unittest.TestCase):
    def test_median_of_five_and_fallback(self):
        self.assertEqual(aggregate([_report(f) for f in (0.1, 0.5, 0.3, 0.2, 0.4)]).f1, 0.3)
        self.assertEqual(aggregate([_report(f) for f in (0.1, 0.9, 0.4)]).f1, 0.4)

    def test_table_rendering(self):
        rows = [
            {"setting": "L1=1 L2=1 full", "precision": 0.5, "recall": 0.25, "f1": 0.3333, "threshold": 0.35},
            {"setting": "L1=1 L2=1 -emg1", "precision": 1.0, "recall": 0.5, "f1": 0.6667, "threshold": 0.0},
        ]
        lines = render_ablation_table(rows).splitlines()
        self.assertEqual(len(lines), 4)
        self.assertTrue(lines[0].startswith("Настройка"))
        self.assertIn("0.333", lines[2])
        self.assertTrue(lines[3].endswith("0.00"))


class AblationRunTests(unittest.TestCase):
    def test_rows_follow_settings(self):
        train_set, val_set, _ = small_split(seed=6)
        base = small_config(max_epochs=1)
        settings = parse_grid("edges=full,-emg2", base)
        rows = run_ablation("hegcn", train_set, val_set, val_set, base, settings, seeds=[1])
        self.assertEqual([row["setting"] for row in rows], ["L1=1 L2=1 full", "L1=1 L2=1 -emg2"])
        self.assertEqual(rows[1]["disabled_edges"], ["emg2"])
        self.assertEqual(len(rows[0]["run_f1"]), 1)
        with self.assertRaises(InputError):
            run_ablation("hegcn", train_set, [], [], base, settings, seeds=[1])


if __name__ == "__main__":
    unittest.main()
