import json

import numpy as np
import pytest

import brute_force
from conftest import random_kb
from pairkb.core import KBSchema, KnowledgeBase, PairEntry, l2_normalize
from pairkb.errors import EmptyKBError, EmptyTrainsetError, SchemaMismatchError
from pairkb.refine import concat_embedding, refine_kb
from pairkb.retrieval import RetrievalQuery, score_pair_to_pair


def one_query_trainset(audio, text, qid=100):
    schema = KBSchema(len(audio), len(text))
    return KnowledgeBase(schema, [PairEntry(qid, audio, text, "query")], name="train")


class TestConcatEmbedding:
    def test_e1(self, toy_kb):
        c = concat_embedding(toy_kb.entry(1))
        assert np.allclose(c.values, [1.0, 0.0, 1.0, 0.0])
        assert c.parent_id == 1

    def test_e3(self, toy_kb):
        assert np.allclose(
            concat_embedding(toy_kb.entry(3)).values, [0.8, 0.6, 0.6, 0.8], atol=1e-6
        )

    def test_norm_is_sqrt2(self, toy_kb):
        for e in toy_kb:
            norm = np.linalg.norm(concat_embedding(e).values.astype(np.float64))
            assert norm == pytest.approx(np.sqrt(2.0), abs=1e-6)


class TestRefineKB:
    def test_toy_example(self, toy_kb):
        refined, report = refine_kb(toy_kb, one_query_trainset([1.0, 0.0], [1.0, 0.0]), k=2)
        assert sorted(e.id for e in refined) == [1, 3]
        assert refined.name == "refined"
        (qid, hits), = report.per_query_hits
        assert qid == 100
        assert dict(hits)[1] == pytest.approx(1.0, abs=1e-6)
        assert dict(hits)[3] == pytest.approx(0.7, abs=1e-6)
        assert report.output_size == 2
        assert report.input_kb_size == 3

    def test_k_saturates_to_full_kb(self, toy_kb):
        refined, _ = refine_kb(toy_kb, one_query_trainset([1.0, 0.0], [1.0, 0.0]), k=10)
        assert sorted(e.id for e in refined) == [1, 2, 3]

    def test_exclude_self_on_overlapping_trainset(self):
        kb = random_kb(5, 4, 4, seed=6)
        trainset = kb.subset(range(5), name="train")
        refined, report = refine_kb(kb, trainset, k=1, exclude_self=True)
        for qid, hits in report.per_query_hits:
            assert qid not in [i for i, _ in hits]
        # Oracle: per-query best non-self neighbor by concatenation cosine.
        rows = brute_force.kb_rows(kb)
        for qid, hits in report.per_query_hits:
            q = kb.entry(qid)
            want = brute_force.concat_cosine_ranking(
                rows, q.audio_emb, q.text_emb, exclude={qid}
            )[0]
            assert hits[0][0] == want[0]

    def test_exclude_self_defaults_on_when_ids_overlap(self):
        kb = random_kb(5, 4, 4, seed=6)
        trainset = kb.subset(range(5), name="train")
        _, report = refine_kb(kb, trainset, k=1)
        assert report.exclude_self is True
        src = random_kb(3, 4, 4, seed=99, name="t")
        disjoint = KnowledgeBase(
            src.schema,
            [
                PairEntry(e.id + 1000, e.audio_emb, e.text_emb, e.caption)
                for e in src
            ],
            name="t",
        )
        _, report2 = refine_kb(kb, disjoint, k=1)
        assert report2.exclude_self is False

    def test_schema_mismatch(self, toy_kb):
        with pytest.raises(SchemaMismatchError):
            refine_kb(toy_kb, random_kb(2, 4, 4, seed=0), k=1)

    def test_empty_inputs(self, toy_kb):
        empty = KnowledgeBase(toy_kb.schema, [])
        with pytest.raises(EmptyTrainsetError):
            refine_kb(toy_kb, empty, k=1)
        with pytest.raises(EmptyKBError):
            refine_kb(empty, toy_kb, k=1)

    def test_subset_size_and_containment(self):
        kb = random_kb(400, 8, 8, seed=14)
        trainset = random_kb(20, 8, 8, seed=15, name="train")
        refined, report = refine_kb(kb, trainset, k=5)
        kb_ids = set(kb.ids.tolist())
        refined_ids = set(refined.ids.tolist())
        assert refined_ids <= kb_ids
        assert len(refined) <= min(len(kb), 5 * len(trainset))
        for qid, hits in report.per_query_hits:
            assert {i for i, _ in hits} <= refined_ids

    def test_monotone_in_k(self):
        kb = random_kb(300, 6, 6, seed=16)
        trainset = random_kb(10, 6, 6, seed=17, name="train")
        previous = set()
        for k in (1, 2, 3, 5, 8):
            refined, _ = refine_kb(kb, trainset, k=k)
            ids = set(refined.ids.tolist())
            assert previous <= ids
            previous = ids

    def test_deterministic(self):
        kb = random_kb(300, 6, 6, seed=18)
        trainset = random_kb(10, 6, 6, seed=19, name="train")
        r1, rep1 = refine_kb(kb, trainset, k=4)
        r2, rep2 = refine_kb(kb, trainset, k=4)
        assert list(r1.ids) == list(r2.ids)
        assert rep1 == rep2

    def test_report_json_round_trips(self, toy_kb):
        _, report = refine_kb(toy_kb, one_query_trainset([1.0, 0.0], [1.0, 0.0]), k=2)
        body = json.loads(report.to_json())
        assert body["output_size"] == 2
        assert body["per_query_hits"][0]["query_id"] == 100


class TestConcatFusionIdentity:
    def test_cosine_equals_half_weight_fused(self):
        rng = np.random.default_rng(20)
        for _ in range(1000):
            dim_a = int(rng.integers(2, 12))
            dim_t = int(rng.integers(2, 12))
            e = PairEntry(
                1,
                l2_normalize(rng.standard_normal(dim_a)),
                l2_normalize(rng.standard_normal(dim_t)),
                "x",
            )
            q_audio = l2_normalize(rng.standard_normal(dim_a))
            q_text = l2_normalize(rng.standard_normal(dim_t))
            query = RetrievalQuery(audio_emb=q_audio, text_emb=q_text)
            fused = score_pair_to_pair(query, e, 0.5).s_fused

            zq = np.concatenate([q_audio, q_text]).astype(np.float64)
            zi = concat_embedding(e).values.astype(np.float64)
            cosine = float(zq @ zi) / (np.linalg.norm(zq) * np.linalg.norm(zi))
            assert abs(cosine - fused) <= 1e-6
