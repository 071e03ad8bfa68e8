import os
import tempfile
import unittest
from collections import Counter

import numpy as np

from core.corpus import (
    InstanceChain,
    KBStore,
    Mention,
    balance_none,
    build_dataset,
    build_two_hop_instances,
    capitalized_runs,
    check_none_instances,
    dataset_stats,
    detect_entities,
    find_mentions,
    instance_from_dict,
    instance_to_dict,
    load_kb,
    load_wikihop_records,
    none_candidates,
    read_instances,
    split_records,
    split_tokens,
    split_train_val,
    tokenize,
    write_instances,
    write_kb,
    write_records,
)
from core.errors import ContractError, InputError, ParseError
from core.synthetic import SyntheticConfig, generate_synthetic
from tests.fixtures import RELATION, zoo_lake_instances, zoo_lake_kb, zoo_lake_record


class TokenizerTests(unittest.TestCase):
    def test_punctuation_is_split_from_words(self):
        self.assertEqual(split_tokens("Hello, world."), ["Hello", ",", "world", "."])
        self.assertEqual(split_tokens('("quoted")'), ["(", '"', "quoted", '"', ")"])
        self.assertEqual(split_tokens("..."), ["..."])

    def test_sentences_end_on_terminal_punctuation(self):
        doc = tokenize("One two . Three four ! Five", "d")
        self.assertEqual(doc.sentence_spans, ((0, 3), (3, 6), (6, 7)))
        self.assertEqual(doc.sentence_of(4), 1)
        self.assertEqual(doc.sentence_of(6), 2)

    def test_empty_text_is_rejected(self):
        with self.assertRaises(InputError):
            tokenize("   ", "d")

    def test_sentence_spans_must_cover_tokens(self):
        from core.corpus import Document

        with self.assertRaises(ContractError):
            Document(id="d", tokens=("a", "b", "c"), sentence_spans=((0, 2),))


class MentionTests(unittest.TestCase):
    def test_longest_match_wins_and_matching_ignores_case(self):
        doc = tokenize("the Johannesburg Zoo is near JOHANNESBURG .", "d")
        mentions = find_mentions(doc, {"johannesburg", "johannesburg zoo"})
        self.assertEqual([(m.start, m.end, m.entity_key) for m in mentions], [(1, 3, "johannesburg zoo"), (5, 6, "johannesburg")])
        self.assertEqual(mentions[1].surface, "JOHANNESBURG")

    def test_capitalized_runs_skip_leading_function_words(self):
        doc = tokenize("The Zoo Lake is here . It rains in South Africa .", "d")
        spans = capitalized_runs(doc)
        self.assertEqual([" ".join(doc.tokens[s:e]) for s, e in spans], ["Zoo Lake", "South Africa"])

    def test_custom_recognizer_is_used(self):
        doc = tokenize("alpha beta gamma .", "d")
        self.assertEqual(detect_entities(doc, lambda d: [(1, 2)]), {"beta"})
        with self.assertRaises(ContractError):
            detect_entities(doc, lambda d: [(2, 9)])


class DistantSupervisionTests(unittest.TestCase):
    def test_zoo_lake_positive_instance(self):
        positive, _ = zoo_lake_instances()
        self.assertEqual((positive.doc_s.id, positive.doc_o.id), ("zoo#0", "zoo#1"))
        self.assertEqual(positive.subject_key, "zoo lake")
        self.assertEqual(positive.object_key, "gauteng")
        self.assertEqual(positive.label, RELATION)
        self.assertEqual(positive.common_keys, ("johannesburg", "south africa"))

    def test_zoo_lake_none_instance(self):
        _, negative = zoo_lake_instances()
        self.assertEqual((negative.doc_s.id, negative.doc_o.id), ("zoo#0", "zoo#2"))
        self.assertEqual(negative.object_key, "tanzania")
        self.assertIsNone(negative.label)
        self.assertEqual(negative.common_keys, ("south africa",))

    def test_record_yields_exactly_two_instances(self):
        instances = build_two_hop_instances(zoo_lake_record(), zoo_lake_kb(), warnings=Counter())
        self.assertEqual(len(instances), 2)
        self.assertEqual(sum(1 for i in instances if i.is_none), 1)

    def test_candidate_linked_in_kb_is_not_a_none_candidate(self):
        kb = KBStore.from_triples([("Tanzania", "shares_border_with", "Gauteng")])
        self.assertEqual(none_candidates(zoo_lake_record(), kb), set())
        self.assertEqual(none_candidates(zoo_lake_record(), zoo_lake_kb()), {"tanzania"})

    def test_any_of_the_four_pairs_excludes_a_candidate(self):
        base = sorted(zoo_lake_kb().triples)
        pairs = [("zoo lake", "tanzania"), ("tanzania", "zoo lake"), ("tanzania", "gauteng"), ("gauteng", "tanzania")]
        for s, o in pairs:
            with self.subTest(pair=(s, o)):
                kb = KBStore.from_triples(base + [(s, "located_in", o)])
                self.assertNotIn("tanzania", none_candidates(zoo_lake_record(), kb))

    def test_record_without_positive_chain_is_skipped(self):
        record = zoo_lake_record()
        from dataclasses import replace

        broken = replace(record, supports=(record.supports[0], record.supports[2]), candidates=("gauteng", "tanzania"))
        warnings = Counter()
        self.assertEqual(build_two_hop_instances(broken, zoo_lake_kb(), warnings=warnings), [])
        self.assertEqual(warnings["record_without_positive_chain"], 1)

    def test_none_instances_never_have_kb_relation(self):
        records, kb = generate_synthetic(SyntheticConfig(n_records=20, seed=3))
        instances, _ = build_dataset(records, kb)
        self.assertEqual(check_none_instances(instances, kb), [])
        self.assertTrue(any(i.is_none for i in instances))

    def test_none_check_covers_pairs_with_subject_and_answer(self):
        _, negative = zoo_lake_instances()
        self.assertEqual(negative.answer_key, "gauteng")
        base = sorted(zoo_lake_kb().triples)
        self.assertEqual(check_none_instances([negative], zoo_lake_kb()), [])
        cand = negative.object_key
        pairs = [("zoo lake", cand), (cand, "zoo lake"), (cand, "gauteng"), ("gauteng", cand)]
        for s, o in pairs:
            with self.subTest(pair=(s, o)):
                kb = KBStore.from_triples(base + [(s, "located_in", o)])
                self.assertEqual(check_none_instances([negative], kb), [negative])

        restored = instance_from_dict(instance_to_dict(negative))
        self.assertEqual(restored.answer_key, "gauteng")
        kb = KBStore.from_triples(base + [("gauteng", "located_in", cand)])
        self.assertEqual(check_none_instances([restored], kb), [restored])

    def test_instance_invariants_are_checked(self):
        positive, _ = zoo_lake_instances()
        with self.assertRaises(ContractError):
            InstanceChain(
                doc_s=positive.doc_s,
                doc_o=positive.doc_o,
                subject_key="zoo lake",
                object_key="gauteng",
                common_keys=("parktown spruit",),
                label=RELATION,
                mentions=positive.mentions,
            )
        with self.assertRaises(ContractError):
            InstanceChain(
                doc_s=positive.doc_s,
                doc_o=positive.doc_s,
                subject_key="zoo lake",
                object_key="zoo lake",
                common_keys=("johannesburg",),
                label=None,
                mentions=positive.mentions,
            )
        bad_surface = Mention(positive.doc_s.id, 0, 2, "Zoo Pond", "zoo lake")
        with self.assertRaises(ContractError):
            InstanceChain(
                doc_s=positive.doc_s,
                doc_o=positive.doc_o,
                subject_key="zoo lake",
                object_key="gauteng",
                common_keys=positive.common_keys,
                label=RELATION,
                mentions=(bad_surface,) + positive.mentions[1:],
            )


class DatasetTests(unittest.TestCase):
    def setUp(self):
        self.records, self.kb = generate_synthetic(SyntheticConfig(n_records=30, seed=5))
        self.instances, self.warnings = build_dataset(self.records, self.kb)

    def test_synthetic_records_give_one_positive_and_one_none(self):
        self.assertEqual(len(self.instances), 60)
        self.assertEqual(sum(1 for i in self.instances if i.is_none), 30)
        self.assertEqual(self.warnings["record_without_positive_chain"], 0)

    def test_split_takes_floor_of_ten_percent(self):
        train, val = split_train_val(self.instances, np.random.default_rng(0))
        self.assertEqual(len(val), 6)
        self.assertEqual(len(train), 54)

    def test_record_split_keeps_record_instances_together(self):
        rest, test = split_records(self.records, np.random.default_rng(0))
        self.assertEqual((len(rest), len(test)), (27, 3))
        rest_instances, _ = build_dataset(rest, self.kb)
        test_instances, _ = build_dataset(test, self.kb)
        self.assertEqual(len(test_instances), 6)
        test_ids = {inst.record_id for inst in test_instances}
        self.assertEqual(test_ids, {r.id for r in test})
        self.assertFalse(test_ids & {inst.record_id for inst in rest_instances})
        self.assertEqual(len({id(i) for i in train} & {id(i) for i in val}), 0)

    def test_balance_keeps_all_positives(self):
        extra_none = [i for i in self.instances if i.is_none] * 2
        balanced = balance_none(list(self.instances) + extra_none, np.random.default_rng(0))
        n_pos = sum(1 for i in balanced if not i.is_none)
        self.assertEqual(n_pos, 30)
        self.assertEqual(len(balanced) - n_pos, 30)

    def test_stats_count_chains_and_histogram(self):
        stats = dataset_stats(self.instances).to_dict()
        self.assertEqual(stats["positive_instances"], 30)
        self.assertEqual(stats["none_instances"], 30)
        self.assertEqual(stats["document_chains"], 60)
        self.assertEqual(stats["common_entities_histogram"]["1"], 60)
        self.assertEqual(sum(stats["per_relation"].values()), 30)

    def test_zoo_lake_stats(self):
        stats = dataset_stats(list(zoo_lake_instances())).to_dict()
        self.assertEqual(stats["common_entities_histogram"], {"1": 1, "2": 1, "3": 0, "4": 0, ">=5": 0})
        self.assertEqual(stats["positive_entity_pairs"], 1)

    def test_parallel_build_matches_serial(self):
        parallel, warnings = build_dataset(self.records[:6], self.kb, jobs=2)
        serial, _ = build_dataset(self.records[:6], self.kb)
        self.assertEqual(parallel, serial)
        self.assertEqual(warnings["record_without_positive_chain"], 0)


class CorpusIOTests(unittest.TestCase):
    def test_records_kb_and_instances_survive_files(self):
        records, kb = generate_synthetic(SyntheticConfig(n_records=4, seed=2))
        with tempfile.TemporaryDirectory() as tmp:
            write_records(os.path.join(tmp, "r.jsonl"), records)
            write_kb(os.path.join(tmp, "kb.tsv"), kb)
            loaded = load_wikihop_records(os.path.join(tmp, "r.jsonl"))
            loaded_kb = load_kb(os.path.join(tmp, "kb.tsv"))
            self.assertEqual([r.id for r in loaded], [r.id for r in records])
            self.assertEqual(loaded[0].supports[0].tokens, records[0].supports[0].tokens)
            self.assertEqual(loaded_kb.triples, kb.triples)

            instances, _ = build_dataset(loaded, loaded_kb.with_relations(r.relation for r in loaded))
            write_instances(os.path.join(tmp, "i.jsonl"), instances)
            self.assertEqual(read_instances(os.path.join(tmp, "i.jsonl")), instances)

    def test_parse_errors_carry_line_numbers(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "kb.tsv")
            with open(path, "w", encoding="utf-8") as f:
                f.write("a\tr\tb\nbroken line\n")
            with self.assertRaises(ParseError) as ctx:
                load_kb(path)
            self.assertEqual(ctx.exception.line_no, 2)

            path = os.path.join(tmp, "r.jsonl")
            with open(path, "w", encoding="utf-8") as f:
                f.write('{"id": "x"}\n')
            with self.assertRaises(ParseError) as ctx:
                load_wikihop_records(path)
            self.assertEqual(ctx.exception.line_no, 1)

    def test_string_supports_get_default_ids(self):
        from core.corpus import record_from_dict

        record = record_from_dict(
            {
                "id": "q1",
                "question": {"relation": "country", "subject": "Zoo Lake"},
                "candidates": ["South Africa"],
                "answer": "South Africa",
                "supports": ["Zoo Lake is in South Africa .", {"text": "South Africa is big ."}],
            }
        )
        self.assertEqual([d.id for d in record.supports], ["q1#0", "q1#1"])
        self.assertEqual(record.subject_key, "zoo lake")


if __name__ == "__main__":
    unittest.main()
