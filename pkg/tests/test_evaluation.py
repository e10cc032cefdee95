import numpy as np
import pytest
import torch

from siamsv.corpus import ManifestError, Waveform
from siamsv.evaluation import (
    DcfParams,
    TrialScoreSet,
    cosine_score,
    det_curve_csv,
    eer,
    evaluation_report,
    extract_embedding,
    format_report,
    load_score_file,
    min_dcf,
    operating_points,
    save_score_file,
    score_trials,
)
from siamsv.model import EncoderConfig, SpeakerModel


def sweep_oracle(labels, scores, p_target=0.05, c_miss=1.0, c_fa=1.0):
    """Exhaustive accept-if-score>=t sweep over every unique score plus +inf.

    Independent of the implementation's cumulative-count route: it recounts
    misses/false-accepts from scratch at each threshold.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_target = int((labels == 1).sum())
    n_nontarget = int((labels == 0).sum())
    points = []
    for t in sorted(set(scores.tolist())) + [np.inf]:
        p_miss = int(((labels == 1) & (scores < t)).sum()) / n_target
        p_fa = int(((labels == 0) & (scores >= t)).sum()) / n_nontarget
        points.append((t, p_fa, p_miss))

    oracle_eer = None
    for k in range(len(points)):
        _, fa, miss = points[k]
        if miss - fa >= 0:
            if miss - fa == 0:
                oracle_eer = miss
            else:
                _, f0, m0 = points[k - 1]
                _, f1, m1 = points[k]
                s = (f0 - m0) / ((m1 - m0) - (f1 - f0))
                oracle_eer = m0 + s * (m1 - m0)
            break

    costs = [c_miss * p_target * miss + c_fa * (1 - p_target) * fa for _, fa, miss in points]
    oracle_dcf = min(costs) / min(c_miss * p_target, c_fa * (1 - p_target))
    return points, oracle_eer, oracle_dcf


def random_score_set(rng, n=None, quantize=False):
    n = n or int(rng.integers(4, 600))
    while True:
        labels = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(int)
        if 0 < labels.sum() < n:
            break
    sep = rng.uniform(0.0, 2.0)
    scores = rng.standard_normal(n) + sep * labels
    if quantize:
        scores = np.round(scores, 1)  # force ties
    return TrialScoreSet(labels, scores)


class TestCosineScore:
    def test_identical(self):
        v = np.array([1.0, 2.0, 3.0])
        assert cosine_score(v, v) == pytest.approx(1.0)

    def test_antiparallel(self):
        v = np.array([1.0, -2.0])
        assert cosine_score(v, -v) == pytest.approx(-1.0)

    def test_45_degrees(self):
        assert cosine_score(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(
            1 / np.sqrt(2)
        )

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_score(np.zeros(3), np.ones(3))


class TestOperatingPoints:
    def test_interleaved_example_matches_oracle(self):
        labels = [1, 1, 0, 0]
        scores = [0.9, 0.7, 0.8, 0.6]
        score_set = TrialScoreSet(np.array(labels), np.array(scores))
        points, oracle_eer, oracle_dcf = sweep_oracle(labels, scores)
        thr, p_fa, p_miss = operating_points(score_set)
        for (t_ref, fa_ref, miss_ref), t, fa, miss in zip(points, thr, p_fa, p_miss):
            assert t == t_ref and fa == fa_ref and miss == miss_ref
        assert eer(score_set) == oracle_eer
        assert min_dcf(score_set) == oracle_dcf

    def test_random_sets_match_oracle_exactly(self):
        rng = np.random.default_rng(0)
        for case in range(50):
            score_set = random_score_set(rng, quantize=case % 3 == 0)
            points, oracle_eer, oracle_dcf = sweep_oracle(score_set.labels, score_set.scores)
            thr, p_fa, p_miss = operating_points(score_set)
            assert len(points) == len(thr)
            for (t_ref, fa_ref, miss_ref), t, fa, miss in zip(points, thr, p_fa, p_miss):
                assert t == t_ref
                assert fa == fa_ref
                assert miss == miss_ref
            assert eer(score_set) == oracle_eer
            assert min_dcf(score_set) == oracle_dcf


class TestEer:
    def test_perfect_separation(self):
        score_set = TrialScoreSet(np.array([1, 1, 0, 0]), np.array([0.9, 0.8, 0.2, 0.1]))
        assert eer(score_set) == 0.0

    def test_constant_scores_interpolate_to_half(self):
        score_set = TrialScoreSet(np.array([1, 0, 1, 0]), np.full(4, 0.5))
        assert eer(score_set) == pytest.approx(0.5)

    def test_single_distribution_near_half(self):
        rng = np.random.default_rng(1)
        labels = np.concatenate([np.ones(5000, dtype=int), np.zeros(5000, dtype=int)])
        scores = rng.standard_normal(10_000)
        assert eer(TrialScoreSet(labels, scores)) == pytest.approx(0.5, abs=0.02)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            score_set = random_score_set(rng)
            base = eer(score_set)
            for transform in (np.exp, lambda s: 2 * s + 3, np.tanh):
                transformed = TrialScoreSet(score_set.labels, transform(score_set.scores))
                assert eer(transformed) == pytest.approx(base, abs=1e-12)

    def test_label_flip_score_negation_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            score_set = random_score_set(rng)  # continuous scores: no ties
            flipped = TrialScoreSet(1 - score_set.labels, -score_set.scores)
            assert eer(flipped) == pytest.approx(eer(score_set), abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            eer(TrialScoreSet(np.ones(5, dtype=int), np.random.rand(5)))


class TestMinDcf:
    def test_perfect_separation_zero(self):
        score_set = TrialScoreSet(np.array([1, 1, 0, 0]), np.array([0.9, 0.8, 0.2, 0.1]))
        assert min_dcf(score_set) == 0.0

    def test_constant_scores_normalized_one(self):
        # reject-all is optimal: cost = p_target, normalizer = p_target
        score_set = TrialScoreSet(np.array([1, 0, 1, 0]), np.full(4, 0.3))
        assert min_dcf(score_set) == pytest.approx(1.0)

    def test_normalized_at_most_one(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            assert min_dcf(random_score_set(rng)) <= 1.0 + 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        score_set = random_score_set(rng)
        base = min_dcf(score_set)
        shifted = TrialScoreSet(score_set.labels, np.exp(score_set.scores))
        assert min_dcf(shifted) == pytest.approx(base, abs=1e-12)

    def test_unnormalized_and_custom_costs(self):
        rng = np.random.default_rng(6)
        score_set = random_score_set(rng)
        params = DcfParams(p_target=0.1, c_miss=2.0, c_fa=0.5, normalized=False)
        _, _, oracle = sweep_oracle(
            score_set.labels, score_set.scores, p_target=0.1, c_miss=2.0, c_fa=0.5
        )
        oracle_unnorm = oracle * min(2.0 * 0.1, 0.5 * 0.9)
        assert min_dcf(score_set, params) == pytest.approx(oracle_unnorm, abs=1e-15)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            DcfParams(p_target=0.0)
        with pytest.raises(ValueError):
            DcfParams(c_miss=-1.0)


class TestEmbeddingExtraction:
    def make_model(self):
        torch.manual_seed(0)
        return SpeakerModel(EncoderConfig(variant="tiny", embedding_dim=24))

    def test_deterministic_and_correct_dim(self):
        model = self.make_model()
        rng = np.random.default_rng(0)
        wav = Waveform(rng.uniform(-0.5, 0.5, 16000))
        e1 = extract_embedding(wav, model)
        e2 = extract_embedding(wav, model)
        assert e1.shape == (24,)
        np.testing.assert_array_equal(e1, e2)

    def test_too_short_rejected(self):
        model = self.make_model()
        with pytest.raises(ValueError):
            extract_embedding(Waveform(np.ones(300)), model)

    def test_score_trials(self):
        embeddings = {
            "a": np.array([1.0, 0.0]),
            "b": np.array([1.0, 0.0]),
            "c": np.array([0.0, 1.0]),
        }
        trials = [(1, "a", "b"), (0, "a", "c")]
        score_set = score_trials(trials, embeddings)
        np.testing.assert_allclose(score_set.scores, [1.0, 0.0], atol=1e-12)

    def test_score_trials_missing_embedding(self):
        with pytest.raises(KeyError, match="ghost"):
            score_trials([(1, "a", "ghost")], {"a": np.ones(2)})


class TestScoreFiles:
    def test_roundtrip(self, tmp_path):
        trials = [(1, "a", "b"), (0, "a", "c")]
        score_set = TrialScoreSet(np.array([1, 0]), np.array([0.93, -0.21]))
        path = str(tmp_path / "scores.txt")
        save_score_file(path, trials, score_set)
        back_trials, back_scores = load_score_file(path)
        assert back_trials == trials
        np.testing.assert_allclose(back_scores.scores, score_set.scores, atol=1e-8)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "s.txt"
        path.write_text("1 a b 0.5\n1 a b\n")
        with pytest.raises(ManifestError, match=":2"):
            load_score_file(str(path))

    def test_det_csv(self):
        score_set = TrialScoreSet(np.array([1, 0]), np.array([0.9, 0.1]))
        csv = det_curve_csv(score_set)
        lines = csv.strip().splitlines()
        assert lines[0] == "threshold,p_fa,p_miss"
        assert len(lines) == 4  # 2 unique scores + reject-all + header

    def test_report(self):
        score_set = TrialScoreSet(np.array([1, 1, 0, 0]), np.array([0.9, 0.8, 0.2, 0.1]))
        report = evaluation_report(score_set)
        assert report["eer"] == 0.0
        assert report["num_target"] == 2
        text = format_report(report)
        assert "EER: 0.00%" in text
        assert "minDCF" in text
