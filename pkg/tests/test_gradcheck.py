import unittest

import numpy as np

from core import numerics as nx
from core.gradcheck import GradCheckReport, check_gradients, op_cases, render_gradcheck_text, run_gradcheck, toy_chain


class GradCheckTests(unittest.TestCase):
    def test_every_op_passes_over_seeded_trials(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            for name, build, inputs in op_cases(rng):
                with self.subTest(op=name, seed=seed):
                    result = check_gradients(name, build, inputs, rng)
                    self.assertTrue(result.passed, f"{name}: {result.max_rel_error:.3e} at {result.worst_param}{result.worst_index}")

    def test_models_pass_and_report_is_reproducible(self):
        first = run_gradcheck(seed=0, max_coords=10)
        second = run_gradcheck(seed=0, max_coords=10)
        self.assertTrue(first.passed, render_gradcheck_text(first))
        self.assertEqual(
            [(r.name, r.max_rel_error) for r in first.results],
            [(r.name, r.max_rel_error) for r in second.results],
        )
        self.assertIn("model:hegcn", [r.name for r in first.results])

    def test_wrong_gradient_is_caught_and_named(self):
        def broken_square(tape, t):
            x = t["x"]
            # значение x², а градиент как у x
            value = tape.record("bad", x.value * x.value, (x,), lambda g: (g,))
            return nx.sum_all(value)

        result = check_gradients("bad_square", broken_square, {"x": np.array([1.5, -2.0, 3.0])})
        self.assertFalse(result.passed)
        self.assertEqual(result.worst_param, "x")
        # |1 - 2x| / |2x| максимально при x = -2
        self.assertEqual(result.worst_index, (1,))
        text = render_gradcheck_text(GradCheckReport(results=(result,)))
        self.assertIn("FAIL", text)
        self.assertIn("bad_square", text)

    def test_toy_chain_is_positive(self):
        chain = toy_chain(0)
        self.assertFalse(chain.is_none)
        self.assertEqual(len(chain.common_keys), 1)


if __name__ == "__main__":
    unittest.main()
