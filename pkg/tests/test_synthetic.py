import os
import tempfile
import unittest

from core.corpus import build_dataset, load_kb, load_wikihop_records, write_kb, write_records
from core.errors import InputError
from core.synthetic import SyntheticConfig, generate_synthetic, relation_name


def _token_after(tokens, key):
    words = key.split()
    lowered = [t.casefold() for t in tokens]
    for start in range(len(lowered) - len(words)):
        if lowered[start : start + len(words)] == words:
            return tokens[start + len(words)]
    raise AssertionError(f"{key!r} не найден")


class SyntheticCorpusTests(unittest.TestCase):
    def test_same_seed_same_corpus(self):
        config = SyntheticConfig(n_relations=3, n_records=10, seed=4)
        self.assertEqual(generate_synthetic(config), generate_synthetic(config))
        other = generate_synthetic(SyntheticConfig(n_relations=3, n_records=10, seed=5))
        self.assertNotEqual(generate_synthetic(config)[0], other[0])

    def test_invalid_configs(self):
        for config in (SyntheticConfig(n_relations=1), SyntheticConfig(n_records=0), SyntheticConfig(vocab=0)):
            with self.subTest(config=config):
                with self.assertRaises(InputError):
                    generate_synthetic(config)

    def test_all_relations_are_declared(self):
        _, kb = generate_synthetic(SyntheticConfig(n_relations=4, n_records=3, seed=2))
        self.assertEqual(kb.relations, tuple(relation_name(k) for k in range(4)))
        self.assertEqual(len(kb.triples), 3)

    def test_label_combines_link_words_from_both_documents(self):
        n = 5
        records, kb = generate_synthetic(SyntheticConfig(n_relations=n, n_records=20, seed=3))
        instances, _ = build_dataset(records, kb)
        positives = [inst for inst in instances if not inst.is_none]
        self.assertEqual(len(positives), 20)
        for inst in positives:
            a = int(_token_after(inst.doc_s.tokens, inst.subject_key)[len("link") :])
            b = int(_token_after(inst.doc_o.tokens, inst.common_keys[0])[len("link") :])
            self.assertEqual(inst.label, relation_name((a + b) % n))

    def test_written_corpus_reads_back(self):
        records, kb = generate_synthetic(SyntheticConfig(n_relations=3, n_records=5, seed=1))
        with tempfile.TemporaryDirectory() as tmp:
            write_records(os.path.join(tmp, "records.jsonl"), records)
            write_kb(os.path.join(tmp, "kb.tsv"), kb)
            loaded = load_wikihop_records(os.path.join(tmp, "records.jsonl"))
            loaded_kb = load_kb(os.path.join(tmp, "kb.tsv"))
        self.assertEqual(loaded, records)
        self.assertEqual(loaded_kb.triples, kb.triples)


if __name__ == "__main__":
    unittest.main()
