import unittest

import numpy as np

from core.corpus import Mention, tokenize
from core.errors import ContractError, InputError
from core.graphs import (
    EdgeToggles,
    build_chain_graphs,
    build_entity_graph,
    build_mention_graph,
    chain_graphs_to_dot,
    is_connected,
    normalize_adjacency,
)
from tests.fixtures import small_split, zoo_lake_instances


class ZooLakeGraphTests(unittest.TestCase):
    def setUp(self):
        self.positive, _ = zoo_lake_instances()
        self.graphs = build_chain_graphs(self.positive)

    def test_mention_graph_of_subject_document(self):
        mg = self.graphs.mention_graphs[0]
        self.assertEqual(
            [m.entity_key for m in mg.mentions],
            [
                "zoo lake",
                "johannesburg",
                "south africa",
                "hermann eckstein park",
                "johannesburg zoo",
                "zoo lake",
                "parktown spruit",
            ],
        )
        expected = {
            (0, 1): {"emg1", "emg3"},
            (0, 2): {"emg1"},
            (0, 5): {"emg2"},
            (1, 2): {"emg1", "emg3"},
            (2, 3): {"emg3"},
            (3, 4): {"emg1", "emg3"},
            (4, 5): {"emg3"},
            (5, 6): {"emg1", "emg3"},
        }
        self.assertEqual({k: set(v) for k, v in mg.edges.items()}, expected)

    def test_mention_graph_of_object_document(self):
        mg = self.graphs.mention_graphs[1]
        self.assertEqual([m.entity_key for m in mg.mentions], ["johannesburg", "south africa", "gauteng", "south africa"])
        expected = {(0, 1): {"emg1", "emg3"}, (1, 2): {"emg3"}, (1, 3): {"emg2"}, (2, 3): {"emg1", "emg3"}}
        self.assertEqual({k: set(v) for k, v in mg.edges.items()}, expected)

    def test_entity_graph_edges(self):
        eg = self.graphs.entity_graphs[0]
        self.assertEqual(eg.nodes[0], "zoo lake")
        self.assertEqual(eg.node_mentions[0], (0, 5))
        self.assertEqual(set(eg.edges[(0, 5)]), {"eg1"})
        self.assertEqual(set(eg.edges[(0, 1)]), {"eg1", "eg2"})
        self.assertEqual(set(eg.edges[(4, 5)]), {"eg2"})

    def test_unified_graph_merges_common_entities(self):
        unified = self.graphs.unified
        self.assertEqual(unified.n_nodes, 7)
        self.assertEqual(unified.nodes[-1], "gauteng")
        sa = unified.index_of("south africa")
        self.assertEqual(unified.node_mentions[sa], ((0, 2), (1, 1), (1, 3)))
        self.assertEqual(set(unified.edges[(sa, unified.index_of("gauteng"))]), {"eg1", "eg2"})
        self.assertTrue(is_connected(unified.edges, unified.n_nodes))
        with self.assertRaises(ContractError):
            unified.index_of("tanzania")

    def test_toggles_remove_edge_types(self):
        graphs = build_chain_graphs(self.positive, EdgeToggles.without(["emg1", "emg3"]))
        self.assertEqual({k: set(v) for k, v in graphs.mention_graphs[0].edges.items()}, {(0, 5): {"emg2"}})
        graphs = build_chain_graphs(self.positive, EdgeToggles.all_off())
        self.assertEqual(dict(graphs.unified.edges), {})
        np.testing.assert_allclose(graphs.unified.adjacency(), np.eye(7))

    def test_dot_export_lists_every_graph(self):
        dot = chain_graphs_to_dot(self.graphs, "zoo")
        self.assertEqual(dot.count("graph "), 3)
        self.assertIn('label="Zoo Lake[0]"', dot)
        self.assertIn('label="gauteng"', dot)


class EdgeRuleTests(unittest.TestCase):
    def setUp(self):
        self.doc = tokenize("Alpha met Beta . Alpha left . Alpha came back .", "d")
        self.mentions = [
            Mention("d", 0, 1, "Alpha", "alpha"),
            Mention("d", 2, 3, "Beta", "beta"),
            Mention("d", 4, 5, "Alpha", "alpha"),
            Mention("d", 7, 8, "Alpha", "alpha"),
        ]
        self.only_emg2 = EdgeToggles.without(["emg1", "emg3"])

    def test_pairwise_emg2_links_every_pair(self):
        mg = build_mention_graph(self.doc, self.mentions, self.only_emg2, "pairwise")
        self.assertEqual(set(mg.edges), {(0, 2), (0, 3), (2, 3)})

    def test_chain_emg2_links_consecutive_occurrences(self):
        mg = build_mention_graph(self.doc, self.mentions, self.only_emg2, "chain")
        self.assertEqual(set(mg.edges), {(0, 2), (2, 3)})

    def test_unknown_wiring_and_edge_names(self):
        with self.assertRaises(InputError):
            build_mention_graph(self.doc, self.mentions, EdgeToggles(), "star")
        with self.assertRaises(InputError):
            EdgeToggles.without(["emg4"])

    def test_mentions_of_other_document_are_rejected(self):
        with self.assertRaises(ContractError):
            build_entity_graph(self.doc, [Mention("other", 0, 1, "Alpha", "alpha")])

    def test_toggle_labels(self):
        self.assertEqual(EdgeToggles().label(), "full")
        self.assertEqual(EdgeToggles().disable("EG1").disable("emg_2").label(), "-emg2,-eg1")


class AdjacencyTests(unittest.TestCase):
    def test_normalized_adjacency_values(self):
        a = normalize_adjacency([(0, 1)], 3)
        expected = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(a, expected)
        np.testing.assert_allclose(a, a.T)

    def test_star_graph_degrees(self):
        a = normalize_adjacency([(0, 1), (0, 2)], 3)
        self.assertAlmostEqual(a[0, 0], 1.0 / 3.0)
        self.assertAlmostEqual(a[0, 1], 1.0 / np.sqrt(6.0))
        self.assertAlmostEqual(a[1, 1], 0.5)

    def test_matches_dense_formula_on_random_graphs(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            m = int(rng.integers(1, 13))
            dense = (rng.random((m, m)) < 0.3).astype(float)
            dense = np.triu(dense, 1)
            dense = dense + dense.T
            edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(dense, 1)))]
            a = dense + np.eye(m)
            d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
            self.assertLess(np.abs(normalize_adjacency(edges, m) - d @ a @ d).max(), 1e-12)

    def test_invalid_graphs(self):
        with self.assertRaises(ContractError):
            normalize_adjacency([], 0)
        with self.assertRaises(ContractError):
            normalize_adjacency([(0, 3)], 2)
        self.assertFalse(is_connected([(0, 1)], 3))


class ConnectivityTests(unittest.TestCase):
    def _instances(self):
        train_set, val_set, _ = small_split(n_records=8, seed=2)
        return list(zoo_lake_instances()) + train_set + val_set

    def test_emg3_alone_connects_every_mention_graph(self):
        only_emg3 = EdgeToggles.without(["emg1", "emg2", "eg1", "eg2"])
        for inst in self._instances():
            graphs = build_chain_graphs(inst, only_emg3)
            for mg in graphs.mention_graphs:
                with self.subTest(doc=mg.doc_id):
                    self.assertTrue(is_connected(mg.edges, mg.n_nodes))
                    self.assertEqual(len(mg.edges), mg.n_nodes - 1)

    def test_full_mention_graphs_are_connected(self):
        for inst in self._instances():
            for mg in build_chain_graphs(inst).mention_graphs:
                self.assertTrue(is_connected(mg.edges, mg.n_nodes))

    def test_without_emg3_a_graph_can_fall_apart(self):
        positive, _ = zoo_lake_instances()
        graphs = build_chain_graphs(positive, EdgeToggles.without(["emg3"]))
        self.assertFalse(all(is_connected(mg.edges, mg.n_nodes) for mg in graphs.mention_graphs))


if __name__ == "__main__":
    unittest.main()
