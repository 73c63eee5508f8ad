import numpy as np
import pytest

from pairkb.core import KBSchema, KnowledgeBase, PairEntry, l2_normalize, toy_knowledge_base


def random_kb(n, audio_dim, text_dim, seed, name="rand", correlated=False):
    """Seeded KB of normalized gaussian embeddings, ids 0..n-1."""
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        audio = l2_normalize(rng.standard_normal(audio_dim))
        if correlated and audio_dim == text_dim:
            text = l2_normalize(audio + 0.5 * rng.standard_normal(text_dim))
        else:
            text = l2_normalize(rng.standard_normal(text_dim))
        entries.append(
            PairEntry(
                id=i,
                audio_emb=audio,
                text_emb=text,
                caption=f"caption {i}",
                audio_uri=f"clip://{i}",
                source="rand",
            )
        )
    schema = KBSchema(audio_dim=audio_dim, text_dim=text_dim)
    return KnowledgeBase(schema, entries, name=name)


@pytest.fixture
def toy_kb():
    return toy_knowledge_base()
