"""Verification scoring: embedding extraction, cosine trials, EER and minDCF.

Operating points sweep every unique score as an accept-if-score>=threshold
rule, plus the reject-all point. EER is found by linear interpolation on the
(P_fa, P_miss) polyline; minDCF minimizes the detection cost over the same
sweep.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .corpus import ManifestError, Trial, Waveform
from .features import featurize


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.05
    c_miss: float = 1.0
    c_fa: float = 1.0
    normalized: bool = True

    def __post_init__(self):
        if not 0 < self.p_target < 1:
            raise ValueError("p_target must be in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("detection costs must be positive")


@dataclass
class TrialScoreSet:
    """Labeled scores: labels[i] is 1 for target trials, 0 for non-target."""

    labels: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels.shape != self.scores.shape or self.labels.ndim != 1:
            raise ValueError("labels and scores must be matching 1-D arrays")

    def require_both_classes(self):
        if not ((self.labels == 1).any() and (self.labels == 0).any()):
            raise ValueError("need at least one target and one non-target trial")


def extract_embedding(wav: Waveform, model) -> np.ndarray:
    """Deterministic full-utterance embedding: featurize, eval-mode encode."""
    feat = featurize(wav)  # no augmentation, no cropping
    tensor = torch.from_numpy(feat).float().unsqueeze(0)
    z = model.embed(tensor, mode="eval")
    return z.squeeze(0).numpy().astype(np.float64)


def cosine_score(e1: np.ndarray, e2: np.ndarray) -> float:
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise ValueError("zero-norm embedding")
    return float(np.dot(e1, e2) / (n1 * n2))


def score_trials(trials: list[Trial], embeddings: dict[str, np.ndarray]) -> TrialScoreSet:
    labels, scores = [], []
    for label, utt_a, utt_b in trials:
        if utt_a not in embeddings or utt_b not in embeddings:
            missing = utt_a if utt_a not in embeddings else utt_b
            raise KeyError(f"no embedding for trial utterance {missing!r}")
        labels.append(label)
        scores.append(cosine_score(embeddings[utt_a], embeddings[utt_b]))
    return TrialScoreSet(np.array(labels), np.array(scores))


def operating_points(score_set: TrialScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, P_fa, P_miss) at every unique score, plus the reject-all point.

    Decision rule: accept when score >= threshold. P_fa is non-increasing and
    P_miss non-decreasing along the returned arrays; the final point is
    (threshold=+inf, P_fa=0, P_miss=1).
    """
    score_set.require_both_classes()
    labels, scores = score_set.labels, score_set.scores
    n_target = int((labels == 1).sum())
    n_nontarget = int((labels == 0).sum())

    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    # targets strictly below each unique threshold / non-targets at or above it
    targets_below = np.concatenate([[0], np.cumsum(sorted_labels == 1)])[:-1]
    nontargets_at_or_above = n_nontarget - np.concatenate(
        [[0], np.cumsum(sorted_labels == 0)]
    )[:-1]
    first_index_of_unique = np.nonzero(
        np.concatenate([[True], sorted_scores[1:] != sorted_scores[:-1]])
    )[0]

    thresholds = sorted_scores[first_index_of_unique]
    p_miss = targets_below[first_index_of_unique] / n_target
    p_fa = nontargets_at_or_above[first_index_of_unique] / n_nontarget

    thresholds = np.concatenate([thresholds, [np.inf]])
    p_miss = np.concatenate([p_miss, [1.0]])
    p_fa = np.concatenate([p_fa, [0.0]])
    return thresholds, p_fa, p_miss


def eer(score_set: TrialScoreSet) -> float:
    """Rate where false-accept equals false-reject, interpolated on the ROC polyline."""
    _, p_fa, p_miss = operating_points(score_set)
    diff = p_miss - p_fa
    k = int(np.argmax(diff >= 0))  # first point with P_miss >= P_fa
    if diff[k] == 0:
        return float(p_miss[k])
    m0, f0 = p_miss[k - 1], p_fa[k - 1]
    m1, f1 = p_miss[k], p_fa[k]
    s = (f0 - m0) / ((m1 - m0) - (f1 - f0))
    return float(m0 + s * (m1 - m0))


def min_dcf(score_set: TrialScoreSet, params: DcfParams = DcfParams()) -> float:
    """Minimum over thresholds of the weighted detection cost."""
    _, p_fa, p_miss = operating_points(score_set)
    costs = params.c_miss * params.p_target * p_miss + params.c_fa * (1 - params.p_target) * p_fa
    value = float(np.min(costs))
    if params.normalized:
        value /= min(params.c_miss * params.p_target, params.c_fa * (1 - params.p_target))
    return value


def det_curve_csv(score_set: TrialScoreSet) -> str:
    """CSV of (threshold, p_fa, p_miss) rows for external plotting."""
    thresholds, p_fa, p_miss = operating_points(score_set)
    lines = ["threshold,p_fa,p_miss"]
    for t, fa, miss in zip(thresholds, p_fa, p_miss):
        lines.append(f"{t:.10g},{fa:.10g},{miss:.10g}")
    return "\n".join(lines) + "\n"


def save_score_file(path: str, trials: list[Trial], score_set: TrialScoreSet) -> None:
    """Write ``<0|1> <utt_id_a> <utt_id_b> <score>`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for (label, utt_a, utt_b), score in zip(trials, score_set.scores):
            fh.write(f"{label} {utt_a} {utt_b} {score:.8f}\n")


def load_score_file(path: str) -> tuple[list[Trial], TrialScoreSet]:
    trials, labels, scores = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4 or fields[0] not in ("0", "1"):
                raise ManifestError(
                    f"{path}:{lineno}: expected '<0|1> <utt_a> <utt_b> <score>'"
                )
            trials.append((int(fields[0]), fields[1], fields[2]))
            labels.append(int(fields[0]))
            try:
                scores.append(float(fields[3]))
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad score {fields[3]!r}") from None
    return trials, TrialScoreSet(np.array(labels), np.array(scores))


def evaluation_report(score_set: TrialScoreSet, params: DcfParams = DcfParams()) -> dict:
    score_set.require_both_classes()
    return {
        "eer": eer(score_set),
        "eer_pct": 100.0 * eer(score_set),
        "min_dcf": min_dcf(score_set, params),
        "p_target": params.p_target,
        "num_target": int((score_set.labels == 1).sum()),
        "num_nontarget": int((score_set.labels == 0).sum()),
    }


def format_report(report: dict) -> str:
    return (
        f"trials: {report['num_target']} target / {report['num_nontarget']} non-target\n"
        f"EER: {report['eer_pct']:.2f}%\n"
        f"minDCF (p_target={report['p_target']}): {report['min_dcf']:.4f}\n"
    )
