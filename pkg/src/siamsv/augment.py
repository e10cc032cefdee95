"""Online waveform augmentation and positive-pair segmentation.

Each training utterance is cropped into two non-overlapping segments; each
segment is then independently reverberated, noise-mixed, and/or
speed-perturbed according to an :class:`AugmentationPolicy`. Every random
choice is drawn from an explicit rng and recorded in the segment's op log, so
a (policy, corpora, seed) triple fully determines the output.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve, resample_poly

from . import SAMPLE_RATE, SEGMENT_SECONDS
from .corpus import NoiseCorpus, RirCorpus, Waveform, load_waveform


@dataclass(frozen=True)
class AugmentationPolicy:
    """Which waveform/feature ops run, and with what parameters.

    SpecAug masking itself lives in the features module; the flag here lets a
    single policy object describe a full augmentation strategy.
    """

    reverb_enabled: bool = False
    noise_enabled: bool = False
    speed_enabled: bool = False
    specaug_enabled: bool = False
    snr_db_range: tuple[float, float] = (3.0, 15.0)
    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)
    reverb_prob: float = 1.0
    noise_prob: float = 1.0
    speed_prob: float = 0.5
    specaug_prob: float = 0.5

    def __post_init__(self):
        low, high = self.snr_db_range
        if low > high:
            raise ValueError(f"snr_db_range low {low} > high {high}")
        if any(f <= 0 for f in self.speed_factors):
            raise ValueError("speed factors must be positive")
        for name in ("reverb_prob", "noise_prob", "speed_prob", "specaug_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")


#: Augmentation strategies: 1 none, 2 reverb, 3 noise, 4 reverb+noise,
#: 5 adds SpecAug, 6 adds SpecAug and speed perturbation. Reverb/noise are
#: applied to every segment when enabled; SpecAug/speed fire with prob 0.5.
STRATEGIES = {
    1: AugmentationPolicy(),
    2: AugmentationPolicy(reverb_enabled=True),
    3: AugmentationPolicy(noise_enabled=True),
    4: AugmentationPolicy(reverb_enabled=True, noise_enabled=True),
    5: AugmentationPolicy(reverb_enabled=True, noise_enabled=True, specaug_enabled=True),
    6: AugmentationPolicy(
        reverb_enabled=True, noise_enabled=True, specaug_enabled=True, speed_enabled=True
    ),
}


def strategy_policy(strategy_id: int) -> AugmentationPolicy:
    if strategy_id not in STRATEGIES:
        raise ValueError(f"unknown augmentation strategy {strategy_id}; valid: 1-6")
    return STRATEGIES[strategy_id]


@dataclass(frozen=True)
class SegmentPair:
    """Two segments cropped from disjoint sample ranges of one utterance."""

    seg_a: Waveform
    seg_b: Waveform
    source_utterance_id: str
    range_a: tuple[int, int]
    range_b: tuple[int, int]
    applied_ops_a: tuple[str, ...] = ()
    applied_ops_b: tuple[str, ...] = ()


@dataclass
class AugmentCorpora:
    """Preloaded noise/RIR waveforms keyed by corpus id."""

    noises: list[tuple[str, Waveform]] = field(default_factory=list)
    rirs: list[tuple[str, Waveform]] = field(default_factory=list)


def load_augment_corpora(
    noise_corpus: NoiseCorpus | None, rir_corpus: RirCorpus | None
) -> AugmentCorpora:
    noises = [(e.id, load_waveform(e.path)) for e in noise_corpus.entries] if noise_corpus else []
    rirs = [(e.id, load_waveform(e.path)) for e in rir_corpus.entries] if rir_corpus else []
    return AugmentCorpora(noises=noises, rirs=rirs)


def crop_pair(
    utt: Waveform,
    utterance_id: str,
    rng: np.random.Generator,
    segment_s: float = SEGMENT_SECONDS,
) -> SegmentPair:
    """Crop two equal-length, non-overlapping segments at random positions.

    Positions are drawn uniformly over all non-overlapping placements; which
    segment becomes "a" is random.
    """
    seg_len = int(round(segment_s * utt.sample_rate_hz))
    n = len(utt)
    if n < 2 * seg_len:
        raise ValueError(
            f"utterance {utterance_id!r} has {n} samples; need at least "
            f"{2 * seg_len} to crop two {segment_s}s segments"
        )
    slack = n - 2 * seg_len
    u1 = int(rng.integers(0, slack + 1))
    u2 = int(rng.integers(0, slack + 1))
    lo, hi = min(u1, u2), max(u1, u2)
    start_1, start_2 = lo, hi + seg_len
    if rng.random() < 0.5:
        start_a, start_b = start_1, start_2
    else:
        start_a, start_b = start_2, start_1
    range_a = (start_a, start_a + seg_len)
    range_b = (start_b, start_b + seg_len)
    return SegmentPair(
        seg_a=Waveform(utt.samples[range_a[0] : range_a[1]], utt.sample_rate_hz),
        seg_b=Waveform(utt.samples[range_b[0] : range_b[1]], utt.sample_rate_hz),
        source_utterance_id=utterance_id,
        range_a=range_a,
        range_b=range_b,
    )


def reverberate(wav: Waveform, rir: Waveform) -> Waveform:
    """Convolve with an impulse response; truncate and renormalize to the input peak."""
    if wav.sample_rate_hz != rir.sample_rate_hz:
        raise ValueError(
            f"sample rate mismatch: {wav.sample_rate_hz} vs {rir.sample_rate_hz}"
        )
    out = fftconvolve(wav.samples, rir.samples)[: len(wav)]
    in_peak = np.max(np.abs(wav.samples))
    out_peak = np.max(np.abs(out))
    if out_peak > 0:
        out = out * (in_peak / out_peak)
    return Waveform(out, wav.sample_rate_hz)


def mix_noise(
    clean: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator
) -> Waveform:
    """Add noise scaled so the clean/noise mean-square power ratio hits ``snr_db``.

    The noise is circularly shifted by a random offset and tiled to cover the
    clean signal.
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("sample rate mismatch between clean and noise")
    p_clean = float(np.mean(clean.samples**2))
    if p_clean == 0.0:
        raise ValueError("clean signal is silent; SNR undefined")

    offset = int(rng.integers(0, len(noise)))
    rolled = np.roll(noise.samples, -offset)
    reps = int(np.ceil(len(clean) / len(noise)))
    noise_seg = np.tile(rolled, reps)[: len(clean)]
    p_noise = float(np.mean(noise_seg**2))
    if p_noise == 0.0:
        raise ValueError("noise segment is silent; cannot reach target SNR")

    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * noise_seg, clean.sample_rate_hz)


def speed_perturb(wav: Waveform, factor: float) -> Waveform:
    """Resampling-based speed change: tempo and pitch both scale by ``factor``.

    Output length is round(len/factor); polyphase resampling can be one sample
    off, which is fixed by edge-trim/pad.
    """
    if factor <= 0:
        raise ValueError("speed factor must be positive")
    if factor == 1.0:
        return Waveform(wav.samples.copy(), wav.sample_rate_hz)
    frac = Fraction(factor).limit_denominator(1000)
    out = resample_poly(wav.samples, up=frac.denominator, down=frac.numerator)
    target = int(round(len(wav) / factor))
    if len(out) > target:
        out = out[:target]
    elif len(out) < target:
        out = np.concatenate([out, np.full(target - len(out), out[-1])])
    return Waveform(out, wav.sample_rate_hz)


def _refit_length(samples: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    if len(samples) == target:
        return samples
    if len(samples) > target:
        offset = int(rng.integers(0, len(samples) - target + 1))
        return samples[offset : offset + target]
    return np.concatenate([samples, np.zeros(target - len(samples))])


def _augment_segment(
    seg: Waveform,
    policy: AugmentationPolicy,
    corpora: AugmentCorpora,
    rng: np.random.Generator,
) -> tuple[Waveform, list[str]]:
    ops: list[str] = []
    out = seg
    if policy.reverb_enabled and rng.random() < policy.reverb_prob:
        if not corpora.rirs:
            raise ValueError("reverb enabled but RIR corpus is empty")
        idx = int(rng.integers(0, len(corpora.rirs)))
        rir_id, rir = corpora.rirs[idx]
        out = reverberate(out, rir)
        ops.append(f"reverb={rir_id}")
    if policy.noise_enabled and rng.random() < policy.noise_prob:
        if not corpora.noises:
            raise ValueError("noise enabled but noise corpus is empty")
        idx = int(rng.integers(0, len(corpora.noises)))
        noise_id, noise = corpora.noises[idx]
        low, high = policy.snr_db_range
        snr = float(rng.uniform(low, high))
        out = mix_noise(out, noise, snr, rng)
        ops.append(f"noise={noise_id},snr={snr:.2f}")
    if policy.speed_enabled and rng.random() < policy.speed_prob:
        idx = int(rng.integers(0, len(policy.speed_factors)))
        factor = policy.speed_factors[idx]
        out = speed_perturb(out, factor)
        out = Waveform(_refit_length(out.samples, len(seg), rng), out.sample_rate_hz)
        ops.append(f"speed={factor}")
    return out, ops


def apply_policy(
    pair: SegmentPair,
    policy: AugmentationPolicy,
    corpora: AugmentCorpora,
    rng: np.random.Generator,
) -> SegmentPair:
    """Augment both segments independently; extend their op logs.

    Per-segment order: reverb, additive noise, speed perturbation (with a
    refit back to the original segment length). SpecAug happens later in the
    feature pipeline.
    """
    seg_a, ops_a = _augment_segment(pair.seg_a, policy, corpora, rng)
    seg_b, ops_b = _augment_segment(pair.seg_b, policy, corpora, rng)
    return replace(
        pair,
        seg_a=seg_a,
        seg_b=seg_b,
        applied_ops_a=pair.applied_ops_a + tuple(ops_a),
        applied_ops_b=pair.applied_ops_b + tuple(ops_b),
    )


def format_op_log(pair: SegmentPair) -> list[str]:
    """Two audit lines per pair: ``<utt_id> <a|b> crop=<lo>:<hi> <op>=<params>...``."""
    crop_a = f"crop={pair.range_a[0]}:{pair.range_a[1]}"
    crop_b = f"crop={pair.range_b[0]}:{pair.range_b[1]}"
    return [
        " ".join([pair.source_utterance_id, "a", crop_a, *pair.applied_ops_a]),
        " ".join([pair.source_utterance_id, "b", crop_b, *pair.applied_ops_b]),
    ]
