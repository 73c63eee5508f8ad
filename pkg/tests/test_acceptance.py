"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete. Tolerances and runtime budgets are asserted
in-test; oracles live in brute_force.py and share no ranking code with
the engine.
"""

import functools
import json
import threading
import time

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

import brute_force
from conftest import random_kb
from pairkb.cli import generate_fixture, generate_queries, main
from pairkb.config import EngineConfig
from pairkb.core import (
    KBSchema,
    KnowledgeBase,
    PairEntry,
    ScoredHit,
    dot,
    l2_normalize,
    toy_knowledge_base,
)
from pairkb.context import assemble_context
from pairkb.errors import PairKBError
from pairkb.evaluation import (
    EvalQuery,
    GroundTruth,
    recall_at_k,
    similarity_stats,
    weight_sweep,
)
from pairkb.formats import load_kb, meta_path_for, save_kb
from pairkb.fusion import CandidateText, FusionQuery, cross_modal_rank, fused_candidate_score, zero_shot_classify
from pairkb.index import IndexField, build_clustered, build_flat, load_index, save_index, search_topk
from pairkb.providers import StubCaptioner, StubTextEncoder
from pairkb.refine import refine_kb
from pairkb.retrieval import (
    IndexSet,
    RetrievalQuery,
    Strategy,
    StrategyKind,
    generative_retrieve,
    retrieve,
    score_audio_to_audio,
    score_audio_to_mixture,
    score_audio_to_text,
    score_pair_to_pair,
)
from pairkb.service import create_app

A2A = Strategy(StrategyKind.AUDIO_TO_AUDIO)


def criterion(number, title):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[acceptance] criterion {number:02d} FAIL: {title}")
                raise
            print(f"[acceptance] criterion {number:02d} PASS: {title}")

        return wrapper

    return decorate


def pair(w):
    return Strategy(StrategyKind.PAIR_TO_PAIR, w)


@criterion(1, "flat index matches brute-force oracle (100 queries, N=1000, <5s)")
def test_criterion_01_flat_oracle():
    start = time.perf_counter()
    kb = random_kb(1000, 16, 16, seed=1001)
    index = build_flat(kb, IndexField.AUDIO)
    rng = np.random.default_rng(1002)
    for _ in range(100):
        q = l2_normalize(rng.standard_normal(16))
        got = search_topk(index, q, k=10)
        want = brute_force.topk_by_dot(kb.ids, kb.audio_matrix, q, 10)
        assert got.ids() == [i for i, _ in want]
        for s_got, (_, s_want) in zip(got.scores(), want):
            assert abs(s_got - s_want) <= 1e-6
    assert time.perf_counter() - start < 5.0


@criterion(2, "forced over-fetch pair retrieval equals full-scan ranking (<10s)")
def test_criterion_02_fused_oracle():
    start = time.perf_counter()
    kb = random_kb(1000, 16, 16, seed=2001, correlated=True)
    indexes = IndexSet.flat_for(kb)
    rng = np.random.default_rng(2002)
    for w in (0.1, 0.5, 0.9):
        for _ in range(50):
            q = RetrievalQuery(
                audio_emb=l2_normalize(rng.standard_normal(16)),
                text_emb=l2_normalize(rng.standard_normal(16)),
            )
            forced = retrieve(kb, indexes, pair(w), q, k=10, exact_threshold=0)
            oracle = brute_force.fused_ranking(
                brute_force.kb_rows(kb), q.audio_emb, q.text_emb, w
            )[:10]
            assert [h.entry_id for h in forced] == [i for i, _ in oracle]
    assert time.perf_counter() - start < 10.0


@criterion(3, "W=1 reduces to audio ranking, W=0 to text ranking (50 KBs)")
def test_criterion_03_degenerate_weights():
    rng = np.random.default_rng(3001)
    for trial in range(50):
        kb = random_kb(200, 8, 8, seed=3100 + trial)
        q = RetrievalQuery(
            audio_emb=l2_normalize(rng.standard_normal(8)),
            text_emb=l2_normalize(rng.standard_normal(8)),
        )
        audio_rank = [h.entry_id for h in retrieve(kb, None, A2A, q, k=200)]
        w1_rank = [h.entry_id for h in retrieve(kb, None, pair(1.0), q, k=200)]
        assert w1_rank == audio_rank

        text_oracle = brute_force.fused_ranking(
            brute_force.kb_rows(kb), q.audio_emb, q.text_emb, 0.0
        )
        w0_rank = [h.entry_id for h in retrieve(kb, None, pair(0.0), q, k=200)]
        assert w0_rank == [i for i, _ in text_oracle]


@criterion(4, "concatenation cosine == W=0.5 fused score within 1e-6 (1000 pairs)")
def test_criterion_04_concat_identity():
    rng = np.random.default_rng(4001)
    for _ in range(1000):
        dim_a = int(rng.integers(2, 24))
        dim_t = int(rng.integers(2, 24))
        audio_e = l2_normalize(rng.standard_normal(dim_a))
        text_e = l2_normalize(rng.standard_normal(dim_t))
        q_audio = l2_normalize(rng.standard_normal(dim_a))
        q_text = l2_normalize(rng.standard_normal(dim_t))

        entry = PairEntry(1, audio_e, text_e, "x")
        fused = score_pair_to_pair(
            RetrievalQuery(audio_emb=q_audio, text_emb=q_text), entry, 0.5
        ).s_fused

        zq = np.concatenate([q_audio, q_text]).astype(np.float64)
        zi = np.concatenate([audio_e, text_e]).astype(np.float64)
        cosine = float(zq @ zi) / (np.linalg.norm(zq) * np.linalg.norm(zi))
        assert abs(cosine - fused) <= 1e-6


@criterion(5, "refinement invariants at N=10k, trainset 500, k=10 (<30s)")
def test_criterion_05_refinement():
    start = time.perf_counter()
    kb = random_kb(10_000, 16, 16, seed=5001, correlated=True)
    src = random_kb(500, 16, 16, seed=5002, correlated=True)
    trainset = KnowledgeBase(
        src.schema,
        [PairEntry(e.id + 1_000_000, e.audio_emb, e.text_emb, e.caption) for e in src],
        name="trainset",
    )

    refined, report = refine_kb(kb, trainset, k=10)
    kb_ids = set(kb.ids.tolist())
    refined_ids = set(refined.ids.tolist())
    assert refined_ids <= kb_ids
    assert len(refined) <= 5000
    for _, hits in report.per_query_hits:
        assert {i for i, _ in hits} <= refined_ids

    # Spot-check per-query top-k lists against the independent oracle.
    rows = brute_force.kb_rows(kb)
    hit_map = dict(report.per_query_hits)
    rng = np.random.default_rng(5003)
    for qid in rng.choice(sorted(hit_map), size=10, replace=False):
        q = trainset.entry(int(qid))
        oracle = brute_force.concat_cosine_ranking(rows, q.audio_emb, q.text_emb)[:10]
        assert [i for i, _ in hit_map[int(qid)]] == [i for i, _ in oracle]

    refined_11, _ = refine_kb(kb, trainset, k=11)
    assert refined_ids <= set(refined_11.ids.tolist())

    rerun, rerun_report = refine_kb(kb, trainset, k=10)
    assert list(rerun.ids) == list(refined.ids)
    assert rerun_report == report
    assert time.perf_counter() - start < 30.0


@criterion(6, "clustered index: full probe == flat, quarter probe recall@10 >= 0.8")
def test_criterion_06_clustered_contract():
    kb = random_kb(1000, 16, 16, seed=1001)
    flat = build_flat(kb, IndexField.AUDIO)
    clustered = build_clustered(kb, IndexField.AUDIO, n_clusters=32, seed=0, n_probe=8)
    rng = np.random.default_rng(6001)
    overlap = []
    for _ in range(100):
        q = l2_normalize(rng.standard_normal(16))
        exact = search_topk(flat, q, k=10)
        assert clustered.search(q, k=10, n_probe=32) == exact
        approx = clustered.search(q, k=10)
        overlap.append(len(set(exact.ids()) & set(approx.ids())) / 10)
    assert float(np.mean(overlap)) >= 0.8


@criterion(7, "fusion: zero generated text reduces to audio baseline; additive (1e-6)")
def test_criterion_07_fusion_baseline():
    rng = np.random.default_rng(7001)
    dim = 12
    candidates = [
        CandidateText(i, f"c{i}", l2_normalize(rng.standard_normal(dim)))
        for i in range(500)
    ]
    for _ in range(20):
        audio = l2_normalize(rng.standard_normal(dim))
        gen = l2_normalize(rng.standard_normal(dim))
        zeroed = FusionQuery(audio, np.zeros(dim, dtype=np.float32))
        fused_order = cross_modal_rank(zeroed, candidates, k=500).ids()
        baseline = sorted(
            candidates,
            key=lambda c: (
                -float(np.asarray(audio, np.float64) @ np.asarray(c.text_emb, np.float64)),
                c.id,
            ),
        )
        assert fused_order == [c.id for c in baseline]

        q = FusionQuery(audio, gen)
        for c in candidates[:50]:
            s_audio = float(np.asarray(audio, np.float64) @ np.asarray(c.text_emb, np.float64))
            s_text = float(np.asarray(gen, np.float64) @ np.asarray(c.text_emb, np.float64))
            assert abs(fused_candidate_score(q, c) - (s_audio + s_text)) <= 1e-6


@criterion(8, "recall@k exact on hand-built fixture; non-decreasing in k")
def test_criterion_08_metric_correctness():
    # Query i's correct id appears at rank i, so recall@k == k/10 exactly.
    rankings = {q: [q * 100 + r for r in range(1, 11)] for q in range(1, 11)}
    truth = GroundTruth.from_mapping({q: [q * 100 + q] for q in range(1, 11)})
    values = [recall_at_k(rankings, truth, k) for k in range(1, 11)]
    assert values == [k / 10 for k in range(1, 11)]
    assert all(b >= a for a, b in zip(values, values[1:]))

    half = recall_at_k(
        {1: [10, 11, 12], 2: [20, 21, 22]},
        GroundTruth.from_mapping({1: [10], 2: [22]}),
        1,
    )
    assert half == 0.5


@criterion(9, "weight sweep shape on correlated corpus: recall@1 best at W=0.5")
def test_criterion_09_sweep_shape():
    # Self-pair relevance: each query is a symmetric-noise perturbation of
    # one KB entry and must retrieve that entry, so self-exclusion stays off.
    kb = generate_fixture(5000, 32, 32, seed=9001, correlation=0.8, name="corr")
    qkb = generate_queries(kb, 300, noise=0.35, seed=9002)
    queries = [
        EvalQuery(
            query_id=e.id,
            query=RetrievalQuery(audio_emb=e.audio_emb, text_emb=e.text_emb),
        )
        for e in qkb
    ]

    nine = weight_sweep(
        queries, kb, [round(0.1 * i, 1) for i in range(1, 10)], k=1,
        metrics=("recall",), exclude_self=False,
    )
    assert len(nine.points) == 9
    assert [v for v, _ in nine.points] == [round(0.1 * i, 1) for i in range(1, 10)]

    ends = weight_sweep(
        queries, kb, [0.0, 0.5, 1.0], k=1, metrics=("recall",), exclude_self=False
    )
    recall_by_w = {v: m["recall"] for v, m in ends.points}

    # Independent oracle pass: recompute recall@1 per W with the full-scan
    # python-loop oracle on a 40-query sample, and require exact agreement
    # of the engine's top-1 with the oracle's top-1 on every sampled query.
    rows = brute_force.kb_rows(kb)
    rng = np.random.default_rng(9003)
    sample = rng.choice(len(queries), size=40, replace=False)
    oracle_hits = {w: 0 for w in (0.0, 0.5, 1.0)}
    for w in oracle_hits:
        for idx in sample:
            eq = queries[int(idx)]
            oracle_top = brute_force.fused_ranking(
                rows, eq.query.audio_emb, eq.query.text_emb, w
            )[0][0]
            engine_top = retrieve(kb, None, pair(w), eq.query, k=1)[0].entry_id
            assert engine_top == oracle_top
            oracle_hits[w] += oracle_top == eq.query_id

    # Guard against a vacuous all-zero curve: the fixture is built so the
    # midpoint is decisively informative, and the oracle must agree.
    assert recall_by_w[0.5] >= 0.3
    assert oracle_hits[0.5] > max(oracle_hits[0.0], oracle_hits[1.0])
    assert recall_by_w[0.5] >= recall_by_w[0.0]
    assert recall_by_w[0.5] >= recall_by_w[1.0]
    assert recall_by_w[0.5] == {v: m["recall"] for v, m in nine.points}[0.5]


@criterion(10, "format round trips bit-exact; 1000 mutated files raise typed errors")
def test_criterion_10_format_round_trips(tmp_path):
    kb = random_kb(128, 12, 6, seed=10001)
    pkb = tmp_path / "kb.pkb"
    save_kb(kb, pkb)
    pkb2 = tmp_path / "kb2.pkb"
    save_kb(load_kb(pkb), pkb2)
    assert pkb.read_bytes() == pkb2.read_bytes()
    assert meta_path_for(pkb).read_bytes() == meta_path_for(pkb2).read_bytes()

    pkix = tmp_path / "kb.pkix"
    save_index(build_clustered(kb, IndexField.PAIR_CONCAT, n_clusters=8, seed=1), pkix)
    pkix2 = tmp_path / "kb2.pkix"
    save_index(load_index(pkix), pkix2)
    assert pkix.read_bytes() == pkix2.read_bytes()

    rng = np.random.default_rng(10002)
    meta_bytes = meta_path_for(pkb).read_bytes()
    for source, loader, target in (
        (pkb.read_bytes(), load_kb, tmp_path / "m.pkb"),
        (pkix.read_bytes(), load_index, tmp_path / "m.pkix"),
    ):
        if target.suffix == ".pkb":
            meta_path_for(target).write_bytes(meta_bytes)
        for _ in range(500):
            raw = bytearray(source)
            mode = rng.integers(0, 3)
            if mode == 0 and len(raw) > 1:
                raw = raw[: rng.integers(0, len(raw))]
            elif mode == 1:
                raw[rng.integers(0, len(raw))] = rng.integers(0, 256)
            else:
                for _ in range(16):
                    raw[rng.integers(0, len(raw))] = rng.integers(0, 256)
            target.write_bytes(bytes(raw))
            try:
                loader(target)
            except PairKBError:
                pass  # typed failure is the contract; success is also fine


@criterion(11, "service storm: 10k concurrent requests byte-identical, no 5xx; reload isolation")
def test_criterion_11_service_storm(tmp_path):
    toy = toy_knowledge_base()
    app = create_app(EngineConfig(), kb=toy)
    bodies = [
        {"strategy": "pair_to_pair", "k": 1, "W": 0.5, "query": {"audio": [1.0, 0.0]},
         "text": [0.0, 1.0]},
        {"strategy": "audio_to_audio", "k": 3, "query": {"audio": [1.0, 0.0]}},
        {"strategy": "audio_to_mixture", "k": 2, "query": {"audio": [0.8, 0.6]}},
        {"strategy": "audio_to_text", "k": 3, "query": {"audio": [0.0, 1.0]}},
        {"strategy": "pair_to_pair", "k": 3, "W": 0.1, "query": {"audio": [0.6, 0.8]},
         "text": [1.0, 0.0]},
        {"strategy": "audio_to_audio", "k": 2, "query": {"audio": [1.0, 0.0]},
         "exclude_ids": [1]},
    ]
    with TestClient(app) as serial:
        expected = [serial.post("/search", json=b).content for b in bodies]

    n_clients, total = 64, 10_048
    per_client = total // n_clients
    failures = []

    def worker(tid):
        with TestClient(app) as c:
            for i in range(per_client):
                idx = (tid + i) % len(bodies)
                r = c.post("/search", json=bodies[idx])
                if r.status_code >= 500:
                    failures.append(("5xx", tid, r.status_code))
                elif r.content != expected[idx]:
                    failures.append(("bytes", tid, i))

    threads = [threading.Thread(target=worker, args=(t,)) for t in range(n_clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=300)
    assert failures == []

    # Mid-flight reload isolation: responses must match exactly one snapshot.
    toy_path = tmp_path / "toy.pkb"
    save_kb(toy, toy_path)
    variant = KnowledgeBase(
        toy.schema,
        [
            PairEntry(1, (1.0, 0.0), (1.0, 0.0), "dog barking", "clip-1", "toy"),
            PairEntry(2, (0.0, 1.0), (0.0, 1.0), "rain falling", "clip-2", "toy"),
            PairEntry(3, (0.6, 0.8), (0.6, 0.8), "birds chirping", "clip-3", "toy"),
        ],
        name="variant",
    )
    variant_path = tmp_path / "variant.pkb"
    save_kb(variant, variant_path)
    app2 = create_app(EngineConfig(), kb_path=toy_path)
    probe = {"strategy": "audio_to_audio", "k": 3, "query": {"audio": [0.8, 0.6]}}
    with TestClient(app2) as ref:
        toy_bytes = ref.post("/search", json=probe).content
        ref.post("/reload", json={"kb_path": str(variant_path)})
        variant_bytes = ref.post("/search", json=probe).content
        ref.post("/reload", json={"kb_path": str(toy_path)})
    expected_by_parity = {0: variant_bytes, 1: toy_bytes}

    mix_errors = []
    stop = threading.Event()

    def searcher():
        with TestClient(app2) as c:
            while not stop.is_set():
                r = c.post("/search", json=probe)
                if r.status_code != 200:
                    mix_errors.append(f"status {r.status_code}")
                    continue
                snap = int(r.headers["x-snapshot-id"])
                if r.content != expected_by_parity[snap % 2]:
                    mix_errors.append(f"snapshot {snap} mixed")

    searchers = [threading.Thread(target=searcher) for _ in range(8)]
    for t in searchers:
        t.start()
    with TestClient(app2) as c:
        for i in range(30):
            path = variant_path if i % 2 == 0 else toy_path
            assert c.post("/reload", json={"kb_path": str(path)}).status_code == 200
    stop.set()
    for t in searchers:
        t.join(timeout=60)
    assert mix_errors == []


@criterion(12, "end-to-end CLI pipeline reproduces every derived example (<60s)")
def test_criterion_12_cli_pipeline(tmp_path):
    start = time.perf_counter()
    runner = CliRunner()
    toy = toy_knowledge_base()

    def run(args):
        result = runner.invoke(main, args, catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return result

    # gen-fixture: canonical toy KB plus a correlated random corpus.
    toy_path = tmp_path / "toy.pkb"
    run(["gen-fixture", "--out", str(toy_path), "--preset", "toy"])
    fx_path = tmp_path / "fx.pkb"
    fxq_path = tmp_path / "fxq.pkb"
    run(["gen-fixture", "--out", str(fx_path), "-n", "1000", "--audio-dim", "16",
         "--text-dim", "16", "--seed", "12", "--correlation", "0.0",
         "--queries-out", str(fxq_path), "--n-queries", "50", "--query-noise", "0.5"])

    # build-index over both fixtures.
    toy_index = tmp_path / "toy.audio.pkix"
    run(["build-index", "--kb", str(toy_path), "--field", "audio", "--kind", "flat",
         "--out", str(toy_index)])
    run(["build-index", "--kb", str(fx_path), "--field", "audio", "--kind", "clustered",
         "--clusters", "16", "--probe", "4", "--out", str(tmp_path / "fx.audio.pkix")])

    # gen-fixture correlation 0: mean |cos| small (law of large numbers).
    fx = load_kb(fx_path)
    cos = np.einsum(
        "ij,ij->i", fx.audio_matrix.astype(np.float64), fx.text_matrix.astype(np.float64)
    )
    assert abs(float(np.mean(cos))) <= 3.0 / 4.0  # 3/sqrt(16)

    # index search derived examples, via the persisted index.
    idx = load_index(toy_index)
    top2 = search_topk(idx, [1.0, 0.0], k=2)
    assert top2.ids() == [1, 3]
    assert top2.scores() == pytest.approx([1.0, 0.8], abs=1e-6)
    excl = search_topk(idx, [1.0, 0.0], k=2, exclude_ids={1})
    assert excl.ids() == [3, 2]
    assert excl.scores() == pytest.approx([0.8, 0.0], abs=1e-6)

    # refine: toy example via the CLI.
    train_path = tmp_path / "train.pkb"
    save_kb(
        KnowledgeBase(
            KBSchema(2, 2), [PairEntry(100, [1.0, 0.0], [1.0, 0.0], "query")], name="train"
        ),
        train_path,
    )
    refined_path = tmp_path / "refined.pkb"
    run(["refine", "--kb", str(toy_path), "--trainset", str(train_path), "--k", "2",
         "--out", str(refined_path)])
    refined = load_kb(refined_path)
    assert sorted(e.id for e in refined) == [1, 3]
    report = json.loads((tmp_path / "refined.report.json").read_text())
    assert report["output_size"] == 2
    hits = {h["id"]: h["score"] for h in report["per_query_hits"][0]["hits"]}
    assert hits[1] == pytest.approx(1.0, abs=1e-6)
    assert hits[3] == pytest.approx(0.7, abs=1e-6)

    # refine derived example: overlapping trainset with exclude_self, k=1.
    five = random_kb(5, 4, 4, seed=1205)
    five_path = tmp_path / "five.pkb"
    save_kb(five, five_path)
    refined5_path = tmp_path / "five_refined.pkb"
    run(["refine", "--kb", str(five_path), "--trainset", str(five_path), "--k", "1",
         "--out", str(refined5_path)])
    report5 = json.loads((tmp_path / "five_refined.report.json").read_text())
    for row in report5["per_query_hits"]:
        assert row["query_id"] not in [h["id"] for h in row["hits"]]
        oracle = brute_force.concat_cosine_ranking(
            brute_force.kb_rows(five),
            five.entry(row["query_id"]).audio_emb,
            five.entry(row["query_id"]).text_emb,
            exclude={row["query_id"]},
        )[0]
        assert row["hits"][0]["id"] == oracle[0]

    # retrieve derived examples via the CLI.
    result = run(["retrieve", "--kb", str(toy_path), "--strategy", "pair_to_pair",
                  "--W", "0.5", "--k", "1",
                  "--query", '{"audio": [1, 0], "text": [0, 1]}'])
    body = json.loads(result.output)
    assert [h["id"] for h in body["hits"]] == [3]
    assert body["hits"][0]["s_fused"] == pytest.approx(0.8, abs=1e-6)

    result = run(["retrieve", "--kb", str(toy_path), "--strategy", "audio_to_audio",
                  "--k", "2", "--query", "[1, 0]"])
    body = json.loads(result.output)
    assert [(h["id"], round(h["s_fused"], 6)) for h in body["hits"]] == [(1, 1.0), (3, 0.8)]

    result = run(["retrieve", "--kb", str(toy_path), "--strategy", "pair_to_pair",
                  "--W", "0", "--k", "1", "--query", '{"audio": [1, 0], "text": [0, 1]}'])
    body = json.loads(result.output)
    assert [(h["id"], h["s_fused"]) for h in body["hits"]] == [(2, 1.0)]

    caps = tmp_path / "caps.json"
    caps.write_text(json.dumps({"clip-1": "dog barking"}))
    encs = tmp_path / "encs.json"
    encs.write_text(json.dumps({"dog barking": [1.0, 0.0]}))
    result = run(["retrieve", "--kb", str(toy_path), "--strategy", "generative_pair_to_pair",
                  "--captioner", f"table:{caps}", "--text-encoder", f"table:{encs}",
                  "--k", "1", "--query", '{"audio": [1, 0], "audio_ref": "clip-1"}'])
    body = json.loads(result.output)
    assert body["text_query"] == "dog barking"
    assert [(h["id"], h["s_fused"]) for h in body["hits"]] == [(1, 1.0)]

    # eval derived example: half-correct at k=1.
    eval_queries = KnowledgeBase(
        KBSchema(2, 2),
        [
            PairEntry(201, [1.0, 0.0], [1.0, 0.0], "q1"),
            PairEntry(202, [0.0, 1.0], [0.0, 1.0], "q2"),
        ],
        name="queries",
    )
    evalq_path = tmp_path / "evalq.pkb"
    save_kb(eval_queries, evalq_path)
    truth_path = tmp_path / "truth.json"
    truth_path.write_text(json.dumps({"201": [1], "202": [1]}))
    result = run(["eval", "--kb", str(toy_path), "--queries", str(evalq_path),
                  "--strategy", "audio_to_audio", "--k", "1", "--metric", "recall",
                  "--truth", str(truth_path)])
    assert json.loads(result.output)["metrics"]["recall"] == pytest.approx(0.5)

    # sweep derived example: top-1 shifts e2 -> e3 -> e1 across W = 0, 0.5, 1.
    sweep_q = KnowledgeBase(
        KBSchema(2, 2), [PairEntry(300, [1.0, 0.0], [0.0, 1.0], "q")], name="queries"
    )
    sweepq_path = tmp_path / "sweepq.pkb"
    save_kb(sweep_q, sweepq_path)
    sweep_query = RetrievalQuery(audio_emb=[1.0, 0.0], text_emb=[0.0, 1.0])
    tops = [
        retrieve(toy, None, pair(w), sweep_query, k=1)[0].entry_id for w in (0.0, 0.5, 1.0)
    ]
    assert tops == [2, 3, 1]
    for target, expected_recalls in ((2, [1.0, 0.0, 0.0]), (3, [0.0, 1.0, 0.0]),
                                     (1, [0.0, 0.0, 1.0])):
        t_path = tmp_path / f"truth{target}.json"
        t_path.write_text(json.dumps({"300": [target]}))
        prefix = tmp_path / f"sweep{target}"
        run(["sweep", "--kb", str(toy_path), "--queries", str(sweepq_path), "--axis", "W",
             "--values", "0,0.5,1", "--k", "1", "--truth", str(t_path),
             "--out-prefix", str(prefix)])
        swept = json.loads((tmp_path / f"sweep{target}.json").read_text())
        assert [p["metrics"]["recall"] for p in swept["points"]] == expected_recalls
        assert len((tmp_path / f"sweep{target}.csv").read_text().strip().splitlines()) == 4

    # Remaining derived examples at the library surface.
    assert dot([0.8, 0.6], [1.0, 0.0]) == pytest.approx(0.8, abs=2e-6)
    q_audio = RetrievalQuery(audio_emb=[1.0, 0.0])
    q_pair = RetrievalQuery(audio_emb=[1.0, 0.0], text_emb=[0.0, 1.0])
    assert score_audio_to_audio(q_audio, toy.entry(3)).s_fused == pytest.approx(0.8, abs=1e-6)
    assert score_audio_to_text(q_audio, toy.entry(3)).s_fused == pytest.approx(0.6, abs=1e-6)
    assert score_audio_to_text(q_audio, toy.entry(1)).s_fused == pytest.approx(1.0)
    assert score_audio_to_mixture(q_audio, toy.entry(3)).s_fused == pytest.approx(0.7, abs=1e-6)
    assert score_pair_to_pair(q_pair, toy.entry(3), 0.5).s_fused == pytest.approx(0.8, abs=1e-6)

    caption, gen_hits = generative_retrieve(
        toy, None, RetrievalQuery(audio_emb=[1.0, 0.0], audio_ref="clip-1"),
        StubCaptioner({"clip-1": "dog barking"}),
        StubTextEncoder({"dog barking": [1.0, 0.0]}, dim=2), 0.5, k=1,
    )
    assert caption == "dog barking" and gen_hits[0].entry_id == 1

    fq = FusionQuery([1.0, 0.0], [0.0, 1.0])
    c1 = CandidateText(1, "x", [1.0, 0.0])
    c2 = CandidateText(2, "y", [0.0, 1.0])
    assert fused_candidate_score(fq, c2) == pytest.approx(1.0)
    aligned = FusionQuery([1.0, 0.0], [1.0, 0.0])
    assert cross_modal_rank(aligned, [c1, c2], k=1).hits[0] == (1, pytest.approx(2.0))
    tie = cross_modal_rank(fq, [c1, c2], k=2)
    assert tie.ids() == [1, 2] and tie.scores() == pytest.approx([1.0, 1.0])
    assert zero_shot_classify(fq, [c1, c2])[0] == 1

    ctx = assemble_context(
        [ScoredHit(3, 0.8, None, 0.8), ScoredHit(1, 0.5, None, 0.5)], toy, "clip-q", k=2
    )
    assert [d.source_entry_id for d in ctx.demonstrations] == [1, 3]

    stats = similarity_stats(
        [EvalQuery(100, RetrievalQuery(audio_emb=[1.0, 0.0]), ref_text_emb=[0.0, 1.0])],
        toy, A2A, k=2,
    )
    assert stats.mean_audio_sim == pytest.approx(0.9, abs=1e-6)
    stats_t = similarity_stats(
        [EvalQuery(100, q_pair, ref_text_emb=[0.0, 1.0])], toy, pair(0.0), k=1
    )
    assert stats_t.mean_text_sim == pytest.approx(1.0, abs=1e-6)

    assert time.perf_counter() - start < 60.0
