"""Command-line entry point.

Commands: build-index, retrieve, refine, eval, sweep, gen-fixture, serve.
Exit codes: 0 success, 1 runtime error, 2 usage error. Errors go to
stderr; results to stdout or the requested output files.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import evaluation
from .config import EngineConfig, load_config
from .core import (
    KBSchema,
    KnowledgeBase,
    PairEntry,
    l2_normalize,
    toy_knowledge_base,
)
from .errors import PairKBError
from .formats import load_kb, save_kb
from .index import IndexField, build_clustered, build_flat, load_index, save_index
from .providers import RemoteCaptioner, RemoteEncoder, StubCaptioner, StubTextEncoder
from .refine import refine_kb
from .retrieval import (
    PAIR_KINDS,
    IndexSet,
    RetrievalQuery,
    Strategy,
    StrategyKind,
    generative_retrieve,
    retrieve,
)

STRATEGY_NAMES = [s.value for s in StrategyKind]


def engine_errors(fn):
    """Map engine/runtime failures to exit code 1 with the message on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (PairKBError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def main(ctx, config_path):
    """Retrieval engine for paired audio-text embedding knowledge bases."""
    try:
        ctx.obj = load_config(config_path)
    except PairKBError as exc:
        raise click.UsageError(str(exc)) from exc


def _parse_query_spec(spec: str) -> RetrievalQuery:
    """Inline JSON floats, or a path to a 1-record PKB1 file."""
    spec = spec.strip()
    if spec.startswith("[") or spec.startswith("{"):
        try:
            raw = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"query spec is not valid JSON: {exc}") from exc
        if isinstance(raw, list):
            return RetrievalQuery(audio_emb=l2_normalize(np.asarray(raw, dtype=np.float32)))
        if isinstance(raw, dict) and "audio" in raw:
            text = raw.get("text")
            return RetrievalQuery(
                audio_emb=l2_normalize(np.asarray(raw["audio"], dtype=np.float32)),
                text_emb=None
                if text is None
                else l2_normalize(np.asarray(text, dtype=np.float32)),
                audio_ref=raw.get("audio_ref"),
            )
        raise click.UsageError("inline query must be [floats] or {\"audio\": [...], ...}")
    kb = load_kb(spec)
    if len(kb) != 1:
        raise click.UsageError(f"query file {spec} must hold exactly 1 record, has {len(kb)}")
    e = kb.entries[0]
    return RetrievalQuery(
        audio_emb=e.audio_emb, text_emb=e.text_emb, text_query=e.caption, audio_ref=e.audio_uri
    )


def _parse_provider(spec: str, kind: str, config: EngineConfig):
    """Provider spec: 'table:<json path>' or 'remote:<url>'."""
    if spec.startswith("table:"):
        path = spec[len("table:") :]
        with open(path, "r", encoding="utf-8") as fh:
            table = json.load(fh)
        if kind == "captioner":
            return StubCaptioner(table)
        dims = {len(v) for v in table.values()}
        if len(dims) != 1:
            raise click.UsageError(f"{path}: table vectors must share one dim")
        return StubTextEncoder(table, dims.pop())
    if spec.startswith("remote:"):
        url = spec[len("remote:") :]
        if kind == "captioner":
            return RemoteCaptioner(url)
        raise click.UsageError("remote text encoder needs --encoder-dim; use table: for now")
    raise click.UsageError(f"provider spec must be table:<path> or remote:<url>, got {spec!r}")


def _hits_json(hits, kb: KnowledgeBase, text_query: str | None = None) -> dict:
    rows = []
    for h in hits:
        e = kb.entry(h.entry_id)
        rows.append(
            {
                "id": h.entry_id,
                "s_audio": h.s_audio,
                "s_text": h.s_text,
                "s_fused": h.s_fused,
                "caption": e.caption,
                "audio_uri": e.audio_uri,
            }
        )
    out = {"hits": rows}
    if text_query is not None:
        out["text_query"] = text_query
    return out


def _emit(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, ensure_ascii=False, indent=2)
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


@main.command("build-index")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--field", type=click.Choice([f.value for f in IndexField]), default="audio")
@click.option("--kind", type=click.Choice(["flat", "clustered"]), default="flat")
@click.option("--clusters", type=int, default=None, help="cluster count (clustered only)")
@click.option("--probe", type=int, default=None, help="clusters probed per search")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
@engine_errors
def cmd_build_index(config: EngineConfig, kb_path, field, kind, clusters, probe, seed, out_path):
    """Build a flat or clustered index over one KB field."""
    kb = load_kb(kb_path)
    field = IndexField(field)
    if kind == "flat":
        index = build_flat(kb, field)
    else:
        clusters = clusters if clusters is not None else config.n_clusters
        if clusters < 1:
            raise click.UsageError(f"--clusters must be >= 1, got {clusters}")
        if clusters > len(kb):
            raise click.UsageError(f"--clusters {clusters} exceeds KB size {len(kb)}")
        probe = probe if probe is not None else min(config.n_probe, clusters)
        if not 1 <= probe <= clusters:
            raise click.UsageError(f"--probe {probe} outside 1..{clusters}")
        index = build_clustered(
            kb, field, clusters, seed if seed is not None else config.seed, n_probe=probe
        )
    out = Path(out_path) if out_path else Path(kb_path).with_suffix(f".{field.value}.pkix")
    save_index(index, out)
    click.echo(f"N={len(kb)} field={field.value} kind={kind} dim={index.dim} -> {out}")


@main.command("retrieve")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", type=click.Choice(STRATEGY_NAMES), required=True)
@click.option("--query", "query_spec", required=True, help="inline JSON or 1-record PKB1 path")
@click.option("--k", type=click.IntRange(min=1), default=5)
@click.option("--W", "weight", type=click.FloatRange(0.0, 1.0), default=None)
@click.option("--exclude-ids", default=None, help="comma-separated entry ids to skip")
@click.option("--captioner", "captioner_spec", default=None, help="table:<path> or remote:<url>")
@click.option("--text-encoder", "encoder_spec", default=None, help="table:<path> or remote:<url>")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
@engine_errors
def cmd_retrieve(
    config: EngineConfig,
    kb_path,
    strategy,
    query_spec,
    k,
    weight,
    exclude_ids,
    captioner_spec,
    encoder_spec,
    output,
):
    """Run one retrieval and emit the scored hits as JSON."""
    kb = load_kb(kb_path)
    kind = StrategyKind(strategy)
    query = _parse_query_spec(query_spec)
    exclude = (
        {int(x) for x in exclude_ids.split(",") if x.strip()} if exclude_ids else None
    )

    if kind == StrategyKind.GENERATIVE_PAIR_TO_PAIR:
        if captioner_spec is None:
            raise click.UsageError("generative_pair_to_pair needs --captioner")
        if encoder_spec is None:
            raise click.UsageError("generative_pair_to_pair needs --text-encoder")
        captioner = _parse_provider(captioner_spec, "captioner", config)
        encoder = _parse_provider(encoder_spec, "encoder", config)
        w = weight if weight is not None else config.default_w
        text_query, hits = generative_retrieve(
            kb, None, query, captioner, encoder, w, k, exclude,
            exact_threshold=config.exact_threshold,
        )
        _emit(_hits_json(hits, kb, text_query), output)
        return

    w = None
    if kind in PAIR_KINDS:
        w = weight if weight is not None else config.default_w
    elif weight is not None:
        raise click.UsageError(f"--W is only valid for pair strategies, not {kind.value}")
    hits = retrieve(
        kb, None, Strategy(kind, w), query, k, exclude,
        exact_threshold=config.exact_threshold,
    )
    _emit(_hits_json(hits, kb, query.text_query), output)


@main.command("refine")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--trainset", "trainset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=click.IntRange(min=1), required=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--include-self", is_flag=True, default=False, help="keep trainset self-matches")
@click.pass_obj
@engine_errors
def cmd_refine(config, kb_path, trainset_path, k, out_path, report_path, include_self):
    """Filter a KB to the union of trainset top-k pair neighbors."""
    kb = load_kb(kb_path)
    trainset = load_kb(trainset_path)
    refined, report = refine_kb(
        kb, trainset, k, exclude_self=False if include_self else None
    )
    save_kb(refined, out_path)
    report_file = Path(report_path) if report_path else Path(out_path).with_suffix(".report.json")
    report_file.write_text(report.to_json() + "\n", encoding="utf-8")
    click.echo(
        f"refined {report.input_kb_size} -> {report.output_size} entries "
        f"(k={k}, ratio {report.compression_ratio:.2f}x) -> {out_path}"
    )


def _load_eval_queries(path: str) -> list[evaluation.EvalQuery]:
    qkb = load_kb(path)
    return [
        evaluation.EvalQuery(
            query_id=e.id,
            query=RetrievalQuery(
                audio_emb=e.audio_emb,
                text_emb=e.text_emb,
                text_query=e.caption,
                audio_ref=e.audio_uri,
            ),
            ref_text_emb=e.text_emb,
        )
        for e in qkb
    ]


def _load_truth(spec: str, queries) -> evaluation.GroundTruth | None:
    if spec == "self":
        return None  # evaluation defaults to self-pairs
    with open(spec, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return evaluation.GroundTruth.from_mapping({int(k): v for k, v in raw.items()})


@main.command("eval")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", type=click.Choice(STRATEGY_NAMES), default="pair_to_pair")
@click.option("--k", type=click.IntRange(min=1), default=5)
@click.option("--W", "weight", type=click.FloatRange(0.0, 1.0), default=None)
@click.option("--metric", "metrics", multiple=True, default=("recall",),
              type=click.Choice(evaluation.METRICS))
@click.option("--truth", default="self", help="'self' or a JSON file {query_id: [ids]}")
@click.option("--include-self", is_flag=True, default=False)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
@engine_errors
def cmd_eval(config, kb_path, queries_path, strategy, k, weight, metrics, truth, include_self, output):
    """Evaluate retrieval metrics for a query set against a KB."""
    kb = load_kb(kb_path)
    queries = _load_eval_queries(queries_path)
    kind = StrategyKind(strategy)
    w = (weight if weight is not None else config.default_w) if kind in PAIR_KINDS else None
    values = evaluation.evaluate(
        queries,
        kb,
        Strategy(kind, w),
        k,
        metrics,
        truth=_load_truth(truth, queries),
        exclude_self=not include_self,
        exact_threshold=config.exact_threshold,
    )
    _emit({"kb": kb.name, "strategy": strategy, "k": k, "W": w, "metrics": values}, output)


@main.command("sweep")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", type=click.Choice(["W", "top_k"]), required=True)
@click.option("--values", required=True, help="comma-separated axis values, ascending")
@click.option("--k", type=click.IntRange(min=1), default=1, help="retrieval k (W axis)")
@click.option("--strategy", type=click.Choice(STRATEGY_NAMES), default="pair_to_pair")
@click.option("--W", "weight", type=click.FloatRange(0.0, 1.0), default=None,
              help="fixed fusion weight (top_k axis)")
@click.option("--metric", "metrics", multiple=True, default=("recall",),
              type=click.Choice(evaluation.METRICS))
@click.option("--truth", default="self")
@click.option("--include-self", is_flag=True, default=False)
@click.option("--seed", type=int, default=None)
@click.option("--out-prefix", required=True, help="writes <prefix>.csv and <prefix>.json")
@click.pass_obj
@engine_errors
def cmd_sweep(config, kb_path, queries_path, axis, values, k, strategy, weight, metrics,
              truth, include_self, seed, out_prefix):
    """Run a fusion-weight or top-k ablation sweep; emit CSV and JSON."""
    kb = load_kb(kb_path)
    queries = _load_eval_queries(queries_path)
    truth_obj = _load_truth(truth, queries)
    seed = seed if seed is not None else config.seed
    try:
        parsed = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise click.UsageError(f"--values must be numbers: {exc}") from exc

    if axis == "W":
        result = evaluation.weight_sweep(
            queries, kb, parsed, k, metrics,
            truth=truth_obj, exclude_self=not include_self,
            exact_threshold=config.exact_threshold, seed=seed,
        )
    else:
        kind = StrategyKind(strategy)
        w = (weight if weight is not None else config.default_w) if kind in PAIR_KINDS else None
        result = evaluation.topk_sweep(
            queries, kb, [int(v) for v in parsed], Strategy(kind, w), metrics,
            truth=truth_obj, exclude_self=not include_self,
            exact_threshold=config.exact_threshold, seed=seed,
        )

    csv_path = Path(f"{out_prefix}.csv")
    json_path = Path(f"{out_prefix}.json")
    csv_path.write_text(evaluation.sweep_to_csv(result), encoding="utf-8")
    json_path.write_text(evaluation.sweep_to_json(result) + "\n", encoding="utf-8")
    click.echo(f"{len(result.points)} points -> {csv_path}, {json_path}")


def _lift(audio: np.ndarray, text_dim: int) -> np.ndarray:
    if audio.shape[0] == text_dim:
        return audio
    if audio.shape[0] < text_dim:
        return np.concatenate([audio, np.zeros(text_dim - audio.shape[0], dtype=np.float32)])
    return audio[:text_dim]


@main.command("gen-fixture")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--preset", type=click.Choice(["toy"]), default=None,
              help="write a canonical fixture instead of a random corpus")
@click.option("-n", "--count", type=click.IntRange(min=1), default=1000)
@click.option("--audio-dim", type=click.IntRange(min=1), default=16)
@click.option("--text-dim", type=click.IntRange(min=1), default=16)
@click.option("--seed", type=int, default=0)
@click.option("--correlation", type=click.FloatRange(0.0, 1.0), default=0.8,
              help="how strongly text embeddings track the audio embeddings")
@click.option("--queries-out", type=click.Path(dir_okay=False), default=None,
              help="also emit a perturbed self-pair query set")
@click.option("--n-queries", type=click.IntRange(min=1), default=100)
@click.option("--query-noise", type=click.FloatRange(min=0.0), default=0.35)
@engine_errors
def cmd_gen_fixture(out_path, preset, count, audio_dim, text_dim, seed, correlation,
                    queries_out, n_queries, query_noise):
    """Generate a synthetic correlated corpus (or the canonical toy KB)."""
    if preset == "toy":
        kb = toy_knowledge_base().rename(Path(out_path).stem)
        save_kb(kb, out_path)
        click.echo(f"N={len(kb)} (toy preset) -> {out_path}")
        return

    kb = generate_fixture(count, audio_dim, text_dim, seed, correlation,
                          name=Path(out_path).stem)
    save_kb(kb, out_path)
    click.echo(f"N={count} dims={audio_dim}x{text_dim} correlation={correlation} -> {out_path}")

    if queries_out:
        if n_queries > count:
            raise click.UsageError(f"--n-queries {n_queries} exceeds corpus size {count}")
        qkb = generate_queries(kb, n_queries, query_noise, seed,
                               name=Path(queries_out).stem)
        save_kb(qkb, queries_out)
        click.echo(f"queries={n_queries} noise={query_noise} -> {queries_out}")


def generate_fixture(
    count: int, audio_dim: int, text_dim: int, seed: int, correlation: float,
    name: str = "fixture",
) -> KnowledgeBase:
    """Seeded corpus whose text embeddings track the audio embeddings.

    text_i = normalize(c * lift(audio_i) + (1 - c) * noise_i); at c == 1
    with equal dims the text embedding is bit-identical to the audio one.
    """
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(count):
        audio = l2_normalize(rng.standard_normal(audio_dim).astype(np.float32))
        if correlation == 1.0:
            text = _lift(audio, text_dim)
            if audio_dim != text_dim:
                text = l2_normalize(text)
        else:
            noise = l2_normalize(rng.standard_normal(text_dim).astype(np.float32))
            mix = correlation * _lift(audio, text_dim).astype(np.float64) + (
                1.0 - correlation
            ) * noise.astype(np.float64)
            text = l2_normalize(mix.astype(np.float32))
        entries.append(
            PairEntry(
                id=i,
                audio_emb=audio,
                text_emb=text,
                caption=f"synthetic caption {i:05d}",
                audio_uri=f"synthetic://clip-{i:05d}",
                source="synthetic",
            )
        )
    schema = KBSchema(audio_dim=audio_dim, text_dim=text_dim, normalized=True)
    return KnowledgeBase(schema, entries, name=name)


def generate_queries(
    kb: KnowledgeBase, n_queries: int, noise: float, seed: int, name: str = "queries"
) -> KnowledgeBase:
    """Perturbed self-pair queries: ids reference the source KB entries.

    Both modalities get independent noise of the same scale, so neither
    alone identifies the source entry as sharply as their fusion.
    """
    rng = np.random.default_rng(seed + 1)
    rows = np.sort(rng.choice(len(kb), size=n_queries, replace=False))
    entries = []
    for row in rows:
        e = kb.entries[int(row)]
        q_audio = l2_normalize(
            e.audio_emb.astype(np.float64)
            + noise * rng.standard_normal(e.audio_emb.shape[0])
        )
        q_text = l2_normalize(
            e.text_emb.astype(np.float64)
            + noise * rng.standard_normal(e.text_emb.shape[0])
        )
        entries.append(
            PairEntry(
                id=e.id,
                audio_emb=q_audio,
                text_emb=q_text,
                caption=e.caption,
                audio_uri=e.audio_uri,
                source="query",
            )
        )
    return KnowledgeBase(kb.schema, entries, name=name)


@main.command("serve")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--listen", default="127.0.0.1:8080", help="host:port")
@click.option("--captioner", "captioner_spec", default=None)
@click.option("--text-encoder", "encoder_spec", default=None)
@click.pass_obj
@engine_errors
def cmd_serve(config: EngineConfig, kb_path, listen, captioner_spec, encoder_spec):
    """Serve the KB over HTTP (search, refine, classify, reload)."""
    from .service import create_app, run

    captioner = _parse_provider(captioner_spec, "captioner", config) if captioner_spec else None
    encoder = _parse_provider(encoder_spec, "encoder", config) if encoder_spec else None
    host, _, port = listen.partition(":")
    if not port.isdigit():
        raise click.UsageError(f"--listen must be host:port, got {listen!r}")
    app = create_app(
        config, kb_path=kb_path, captioner=captioner, text_encoder=encoder
    )
    run(app, host=host or "127.0.0.1", port=int(port))


if __name__ == "__main__":
    main()
