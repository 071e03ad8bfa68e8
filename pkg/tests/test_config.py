import os
import tempfile
import unittest

from core.config import (
    TrainConfig,
    apply_settings,
    load_config_file,
    parse_overrides,
    train_config_from_dict,
    train_config_to_dict,
)
from core.errors import InputError, ParseError
from core.graphs import EdgeToggles


class ConfigTests(unittest.TestCase):
    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual(config.batch_size, 32)
        self.assertEqual(config.patience, 5)
        self.assertEqual(config.model.dropout, 0.5)
        self.assertEqual(config.model_kind, "hegcn")

    def test_file_then_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.conf")
            with open(path, "w", encoding="utf-8") as f:
                f.write("# маленькая модель\nd_w = 16\nd_z=4\n\nmodel = linkpath  # базовая\nkernel_widths = 2,3\n")
            values = load_config_file(path)
        config = apply_settings(TrainConfig(), values)
        config = apply_settings(config, parse_overrides(["d_w=8", "disable_edges=emg1,eg2", "threshold_rule=max_over_r"]))
        self.assertEqual(config.model.d_w, 8)
        self.assertEqual(config.model.d_z, 4)
        self.assertEqual(config.model.kernel_widths, (2, 3))
        self.assertEqual(config.model_kind, "linkpath")
        self.assertEqual(config.model.toggles, EdgeToggles.without(["emg1", "eg2"]))
        self.assertEqual(config.threshold_rule, "max_over_r")

    def test_unknown_key_reports_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.conf")
            with open(path, "w", encoding="utf-8") as f:
                f.write("d_w = 16\nwidth = 3\n")
            with self.assertRaises(ParseError) as ctx:
                load_config_file(path)
            self.assertEqual(ctx.exception.line_no, 2)
            with self.assertRaises(InputError):
                load_config_file(os.path.join(tmp, "missing.conf"))

    def test_bad_values(self):
        with self.assertRaises(InputError):
            parse_overrides(["d_w"])
        with self.assertRaises(InputError):
            apply_settings(TrainConfig(), {"d_w": "many"})
        with self.assertRaises(InputError):
            apply_settings(TrainConfig(), {"model": "gpt"})
        with self.assertRaises(InputError):
            apply_settings(TrainConfig(), {"disable_edges": "emg9"})

    def test_dict_round_trip(self):
        config = apply_settings(TrainConfig(), {"disable_edges": "eg1", "kernel_widths": "3", "seed": "7"})
        data = train_config_to_dict(config)
        self.assertEqual(data["model"]["toggles"]["eg1"], False)
        self.assertEqual(train_config_from_dict(data), config)


if __name__ == "__main__":
    unittest.main()
