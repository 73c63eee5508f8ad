import numpy as np
import pytest

from conftest import random_kb
from pairkb.core import l2_normalize
from pairkb.errors import DimMismatchError, EmptyCandidatesError
from pairkb.fusion import (
    CandidateText,
    FusionQuery,
    cross_modal_rank,
    fused_candidate_score,
    zero_shot_classify,
)

C1 = CandidateText(1, "axis x", [1.0, 0.0])
C2 = CandidateText(2, "axis y", [0.0, 1.0])


class TestFusedCandidateScore:
    def test_identical(self):
        q = FusionQuery([1.0, 0.0], [1.0, 0.0])
        assert fused_candidate_score(q, C1) == pytest.approx(2.0)

    def test_hand_computed(self):
        q = FusionQuery([1.0, 0.0], [0.0, 1.0])
        assert fused_candidate_score(q, C2) == pytest.approx(1.0)

    def test_orthogonal(self):
        q = FusionQuery([1.0, 0.0], [1.0, 0.0])
        assert fused_candidate_score(q, C2) == pytest.approx(0.0)

    def test_dim_mismatch(self):
        q = FusionQuery([1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        with pytest.raises(DimMismatchError):
            fused_candidate_score(q, C1)

    def test_additive(self):
        rng = np.random.default_rng(30)
        for _ in range(500):
            dim = int(rng.integers(2, 16))
            q = FusionQuery(
                l2_normalize(rng.standard_normal(dim)),
                l2_normalize(rng.standard_normal(dim)),
            )
            c = CandidateText(1, "c", l2_normalize(rng.standard_normal(dim)))
            audio_only = float(
                np.asarray(q.audio_emb, dtype=np.float64)
                @ np.asarray(c.text_emb, dtype=np.float64)
            )
            text_only = float(
                np.asarray(q.gen_text_emb, dtype=np.float64)
                @ np.asarray(c.text_emb, dtype=np.float64)
            )
            assert abs(fused_candidate_score(q, c) - (audio_only + text_only)) <= 1e-6

    def test_optional_weight_blends(self):
        q = FusionQuery([1.0, 0.0], [0.0, 1.0])
        assert fused_candidate_score(q, C1, weight=1.0) == pytest.approx(1.0)
        assert fused_candidate_score(q, C1, weight=0.0) == pytest.approx(0.0)


class TestCrossModalRank:
    def test_top1(self):
        q = FusionQuery([1.0, 0.0], [1.0, 0.0])
        top = cross_modal_rank(q, [C1, C2], k=1)
        assert top.hits == ((1, pytest.approx(2.0)),)

    def test_tie_breaks_by_id(self):
        q = FusionQuery([1.0, 0.0], [0.0, 1.0])
        top = cross_modal_rank(q, [C2, C1], k=2)
        assert top.ids() == [1, 2]
        assert top.scores() == pytest.approx([1.0, 1.0])

    def test_k_clips(self):
        q = FusionQuery([1.0, 0.0], [1.0, 0.0])
        assert len(cross_modal_rank(q, [C1, C2], k=5)) == 2

    def test_empty_candidates(self):
        with pytest.raises(EmptyCandidatesError):
            cross_modal_rank(FusionQuery([1.0, 0.0], [1.0, 0.0]), [], k=1)


class TestZeroShotClassify:
    def test_aligned(self):
        q = FusionQuery([1.0, 0.0], [1.0, 0.0])
        assert zero_shot_classify(q, [C1, C2])[0] == 1

    def test_symmetry(self):
        q = FusionQuery([0.0, 1.0], [0.0, 1.0])
        assert zero_shot_classify(q, [C1, C2])[0] == 2

    def test_tie_goes_to_lower_id(self):
        q = FusionQuery([1.0, 0.0], [0.0, 1.0])
        class_id, score = zero_shot_classify(q, [C1, C2])
        assert class_id == 1
        assert score == pytest.approx(1.0)


class TestFusionProperties:
    def test_zero_gen_text_reduces_to_audio_baseline(self):
        rng = np.random.default_rng(31)
        dim = 8
        candidates = [
            CandidateText(i, f"c{i}", l2_normalize(rng.standard_normal(dim)))
            for i in range(100)
        ]
        for _ in range(20):
            audio = l2_normalize(rng.standard_normal(dim))
            zero = np.zeros(dim, dtype=np.float32)
            q = FusionQuery(audio, zero)
            fused_order = cross_modal_rank(q, candidates, k=100).ids()
            baseline = sorted(
                candidates,
                key=lambda c: (
                    -float(
                        np.asarray(audio, dtype=np.float64)
                        @ np.asarray(c.text_emb, dtype=np.float64)
                    ),
                    c.id,
                ),
            )
            assert fused_order == [c.id for c in baseline]

    def test_argmax_invariant_to_positive_scaling(self):
        # Scaling every candidate embedding by one positive constant scales
        # all fused scores equally, so the ranking cannot move.
        rng = np.random.default_rng(32)
        dim = 6
        q = FusionQuery(
            l2_normalize(rng.standard_normal(dim)), l2_normalize(rng.standard_normal(dim))
        )
        base = [rng.standard_normal(dim).astype(np.float32) for _ in range(50)]
        for scale in (0.5, 2.0, 7.5):
            plain = [CandidateText(i, f"c{i}", v) for i, v in enumerate(base)]
            scaled = [CandidateText(i, f"c{i}", v * scale) for i, v in enumerate(base)]
            assert (
                cross_modal_rank(q, plain, k=50).ids()
                == cross_modal_rank(q, scaled, k=50).ids()
            )
            assert zero_shot_classify(q, plain)[0] == zero_shot_classify(q, scaled)[0]
