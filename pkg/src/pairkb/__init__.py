"""pairkb: retrieval engine for paired audio-text embedding knowledge bases."""

from .config import EngineConfig, load_config
from .core import (
    KBSchema,
    KnowledgeBase,
    PairEntry,
    ScoredHit,
    dot,
    l2_normalize,
    toy_knowledge_base,
)
from .errors import PairKBError
from .evaluation import (
    EvalQuery,
    GroundTruth,
    SimilarityStats,
    SweepResult,
    evaluate,
    recall_at_k,
    similarity_stats,
    sweep_to_csv,
    sweep_to_json,
    topk_sweep,
    weight_sweep,
    zero_shot_accuracy,
)
from .formats import load_kb, save_kb
from .fusion import (
    CandidateText,
    FusionQuery,
    cross_modal_rank,
    fused_candidate_score,
    zero_shot_classify,
)
from .index import (
    IndexField,
    TopKResult,
    build_clustered,
    build_flat,
    load_index,
    save_index,
    search_topk,
)
from .context import (
    CurriculumManifest,
    InterleavedContext,
    assemble_context,
    build_curriculum,
    render_context_json,
    write_manifest,
)
from .providers import (
    CaptionProvider,
    EncoderProvider,
    FileBackedEncoder,
    RemoteCaptioner,
    RemoteEncoder,
    StubCaptioner,
    StubTextEncoder,
    load_embedding_store,
)
from .refine import ConcatEmbedding, RefineReport, concat_embedding, refine_kb
from .retrieval import (
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

__version__ = "0.1.0"

__all__ = [
    "CandidateText",
    "CaptionProvider",
    "ConcatEmbedding",
    "CurriculumManifest",
    "EngineConfig",
    "EvalQuery",
    "EncoderProvider",
    "FileBackedEncoder",
    "FusionQuery",
    "GroundTruth",
    "IndexField",
    "IndexSet",
    "InterleavedContext",
    "KBSchema",
    "KnowledgeBase",
    "PairEntry",
    "PairKBError",
    "RefineReport",
    "RemoteCaptioner",
    "RemoteEncoder",
    "RetrievalQuery",
    "ScoredHit",
    "SimilarityStats",
    "Strategy",
    "StrategyKind",
    "StubCaptioner",
    "StubTextEncoder",
    "SweepResult",
    "TopKResult",
    "assemble_context",
    "build_clustered",
    "build_curriculum",
    "build_flat",
    "concat_embedding",
    "cross_modal_rank",
    "dot",
    "evaluate",
    "fused_candidate_score",
    "generative_retrieve",
    "l2_normalize",
    "load_config",
    "load_embedding_store",
    "load_index",
    "load_kb",
    "recall_at_k",
    "refine_kb",
    "render_context_json",
    "retrieve",
    "save_index",
    "save_kb",
    "score_audio_to_audio",
    "score_audio_to_mixture",
    "score_audio_to_text",
    "score_pair_to_pair",
    "search_topk",
    "similarity_stats",
    "sweep_to_csv",
    "sweep_to_json",
    "topk_sweep",
    "toy_knowledge_base",
    "weight_sweep",
    "write_manifest",
    "zero_shot_accuracy",
    "zero_shot_classify",
]
