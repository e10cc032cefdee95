"""Corpus handling: manifests, trial lists, and a synthetic toy-speaker corpus.

Training manifests deliberately carry no speaker labels. The toy generator
returns its speaker map separately so evaluation code can build trials without
the labels ever reaching the trainer.
"""

import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from . import SAMPLE_RATE, SEGMENT_SECONDS

logger = logging.getLogger(__name__)


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest/trial files."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples plus sample rate; the unit all augmentation acts on."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    path: str
    duration_s: float


@dataclass
class UtteranceManifest:
    """Training-facing utterance list. Carries no speaker labels by design."""

    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    path: str


@dataclass
class NoiseCorpus:
    entries: list[CorpusEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)


@dataclass
class RirCorpus:
    entries: list[CorpusEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class ToySpeakerSpec:
    """Synthetic speaker identity: a fundamental plus formant-like resonances."""

    speaker_id: int
    fundamental_hz: float
    formant_centers_hz: tuple[float, ...]
    envelope_seed: int

    def __post_init__(self):
        nyquist = SAMPLE_RATE / 2
        if self.fundamental_hz >= nyquist or any(
            f >= nyquist for f in self.formant_centers_hz
        ):
            raise ValueError("speaker frequencies must stay below Nyquist")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (hash-based, process-independent)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ---------------------------------------------------------------------------
# Audio file I/O (16-bit PCM mono WAV at 16 kHz only; other rates rejected)
# ---------------------------------------------------------------------------

def load_waveform(path: str) -> Waveform:
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(
            f"{path}: sample rate {rate} != {SAMPLE_RATE}; resampling is not supported"
        )
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    return Waveform(data.astype(np.float64) / 32768.0, rate)


def save_waveform(path: str, wav: Waveform) -> None:
    peak = np.max(np.abs(wav.samples))
    samples = wav.samples
    if peak > 1.0:  # avoid int16 wraparound for hot augmented signals
        samples = samples / peak
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, wav.sample_rate_hz, pcm)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def load_manifest(path: str, on_missing: str = "warn") -> UtteranceManifest:
    """Parse a tab-separated ``<utt_id>\\t<path>\\t<duration_s>`` manifest.

    Relative audio paths are resolved against the manifest's directory.
    ``on_missing`` controls the policy for listed-but-absent audio files:
    "ignore", "warn" (default), or "error".
    """
    if on_missing not in ("ignore", "warn", "error"):
        raise ValueError(f"unknown on_missing policy: {on_missing!r}")
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ManifestError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            utt_id, audio_path, dur_text = fields
            try:
                duration = float(dur_text)
            except ValueError:
                raise ManifestError(
                    f"{path}:{lineno}: duration {dur_text!r} is not a number"
                ) from None
            if duration <= 0:
                raise ManifestError(f"{path}:{lineno}: duration must be > 0")
            if utt_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance_id {utt_id!r}")
            seen.add(utt_id)
            if not os.path.isabs(audio_path):
                audio_path = os.path.join(root, audio_path)
            if not os.path.exists(audio_path):
                if on_missing == "error":
                    raise ManifestError(f"{path}:{lineno}: audio file missing: {audio_path}")
                if on_missing == "warn":
                    logger.warning("manifest %s:%d: audio file missing: %s", path, lineno, audio_path)
            entries.append(ManifestEntry(utt_id, audio_path, duration))
    return UtteranceManifest(entries)


def save_manifest(path: str, manifest: UtteranceManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(f"{e.utterance_id}\t{e.path}\t{e.duration_s:.6f}\n")


def _load_id_path_list(path: str, cls):
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ManifestError(
                    f"{path}:{lineno}: expected 2 tab-separated fields, got {len(fields)}"
                )
            entry_id, audio_path = fields
            if entry_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {entry_id!r}")
            seen.add(entry_id)
            if not os.path.isabs(audio_path):
                audio_path = os.path.join(root, audio_path)
            entries.append(CorpusEntry(entry_id, audio_path))
    return cls(entries)


def load_noise_corpus(path: str) -> NoiseCorpus:
    """Parse a tab-separated ``<id>\\t<path>`` noise list."""
    return _load_id_path_list(path, NoiseCorpus)


def load_rir_corpus(path: str) -> RirCorpus:
    """Parse a tab-separated ``<id>\\t<path>`` impulse-response list."""
    return _load_id_path_list(path, RirCorpus)


def save_corpus_list(path: str, corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in corpus.entries:
            fh.write(f"{e.id}\t{e.path}\n")


# ---------------------------------------------------------------------------
# Toy speaker synthesis
# ---------------------------------------------------------------------------

_FORMANT_BANDS = ((350.0, 900.0), (1000.0, 2200.0), (2400.0, 3600.0))


def make_toy_speakers(num_speakers: int, seed: int) -> list[ToySpeakerSpec]:
    rng = np.random.default_rng(derive_seed(seed, "speakers"))
    specs = []
    seen = set()
    for sid in range(num_speakers):
        while True:
            f0 = float(rng.uniform(90.0, 240.0))
            formants = tuple(float(rng.uniform(lo, hi)) for lo, hi in _FORMANT_BANDS)
            key = (round(f0, 3), tuple(round(f, 2) for f in formants))
            if key not in seen:
                seen.add(key)
                break
        specs.append(ToySpeakerSpec(sid, f0, formants, int(rng.integers(2**31))))
    return specs


def _spectral_envelope(freqs_hz: np.ndarray, spec: ToySpeakerSpec) -> np.ndarray:
    """Speaker-specific harmonic amplitude curve: formant bumps over a soft rolloff."""
    env_rng = np.random.default_rng(spec.envelope_seed)
    bandwidths = env_rng.uniform(110.0, 220.0, size=len(spec.formant_centers_hz))
    gains = env_rng.uniform(0.7, 1.0, size=len(spec.formant_centers_hz))
    env = 0.06 * np.ones_like(freqs_hz)
    for center, bw, gain in zip(spec.formant_centers_hz, bandwidths, gains):
        env = env + gain * np.exp(-0.5 * ((freqs_hz - center) / bw) ** 2)
    rolloff = (1.0 + freqs_hz / 700.0) ** -0.5
    return env * rolloff


def synth_toy_utterance(spec: ToySpeakerSpec, duration_s: float, utt_seed: int) -> Waveform:
    """One harmonic-plus-noise utterance of a toy speaker.

    Speaker identity lives in the spectral envelope (fundamental + formants).
    Per-utterance randomness (pitch jitter, vibrato, amplitude phrasing, a
    random one-zero channel tilt, and a faint echo) makes utterances of the
    same speaker differ the way recordings do.
    """
    rng = np.random.default_rng(utt_seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    f0 = spec.fundamental_hz * (1.0 + rng.uniform(-0.04, 0.04))
    vibrato = 1.0 + 0.012 * np.sin(
        2 * np.pi * rng.uniform(3.5, 6.5) * t + rng.uniform(0, 2 * np.pi)
    )
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / SAMPLE_RATE

    max_harmonic = int(7400.0 // f0)
    k = np.arange(1, max_harmonic + 1)
    amps = _spectral_envelope(k * f0, spec)
    phases = rng.uniform(0, 2 * np.pi, size=max_harmonic)
    signal = (amps[None, :] * np.sin(np.outer(phase, k) + phases[None, :])).sum(axis=1)

    # slow amplitude "phrasing" so segments of one utterance differ in level
    mod_freqs = rng.uniform(0.4, 2.2, size=3)
    mod_phases = rng.uniform(0, 2 * np.pi, size=3)
    phrasing = 1.0 + 0.25 * np.mean(
        np.sin(2 * np.pi * np.outer(t, mod_freqs) + mod_phases[None, :]), axis=1
    )
    signal = signal * phrasing

    signal = signal + 0.01 * rng.standard_normal(n)

    # per-utterance channel: one-zero tilt plus a faint echo
    tilt = rng.uniform(-0.7, 0.7)
    signal = signal + tilt * np.concatenate(([0.0], signal[:-1]))
    delay = int(rng.uniform(0.004, 0.018) * SAMPLE_RATE)
    echo = rng.uniform(0.05, 0.25)
    colored = signal.copy()
    colored[delay:] += echo * signal[:-delay]

    colored = 0.6 * colored / np.max(np.abs(colored))
    return Waveform(colored, SAMPLE_RATE)


def generate_toy_corpus(
    out_dir: str,
    num_speakers: int,
    utts_per_speaker: int,
    utt_duration_s: float,
    seed: int,
    segment_s: float = SEGMENT_SECONDS,
) -> tuple[UtteranceManifest, dict[str, int]]:
    """Write a synthetic corpus to ``out_dir`` and return (manifest, label map).

    The label map (utterance_id -> speaker_id) exists only so evaluation code
    can build trials; it is never stored in the manifest.
    """
    if num_speakers < 2:
        raise ValueError("need at least 2 speakers")
    if utts_per_speaker < 1:
        raise ValueError("need at least 1 utterance per speaker")
    if utt_duration_s < 2 * segment_s:
        raise ValueError(
            f"utterance duration {utt_duration_s}s too short to crop two "
            f"{segment_s}s segments"
        )
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)

    speakers = make_toy_speakers(num_speakers, seed)
    entries = []
    labels: dict[str, int] = {}
    for spk in speakers:
        for u in range(utts_per_speaker):
            utt_id = f"spk{spk.speaker_id:03d}_utt{u:03d}"
            wav = synth_toy_utterance(
                spk, utt_duration_s, derive_seed(seed, "utt", spk.speaker_id, u)
            )
            path = os.path.join(wav_dir, f"{utt_id}.wav")
            save_waveform(path, wav)
            entries.append(ManifestEntry(utt_id, path, wav.duration_s))
            labels[utt_id] = spk.speaker_id
    return UtteranceManifest(entries), labels


def generate_toy_noise_corpus(out_dir: str, count: int, duration_s: float, seed: int) -> NoiseCorpus:
    """Synthetic additive-noise corpus: white, lowpassed, and hum-plus-noise."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    n = int(round(duration_s * SAMPLE_RATE))
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, "noise", i))
        kind = i % 3
        x = rng.standard_normal(n)
        if kind == 1:  # lowpassed rumble
            kernel = np.ones(32) / 32.0
            x = np.convolve(x, kernel, mode="same")
        elif kind == 2:  # mains-style hum over a noise floor
            t = np.arange(n) / SAMPLE_RATE
            hum_f = rng.uniform(60.0, 300.0)
            x = 0.3 * x + np.sin(2 * np.pi * hum_f * t + rng.uniform(0, 2 * np.pi))
        x = 0.5 * x / np.max(np.abs(x))
        noise_id = f"noise{i:03d}"
        path = os.path.join(out_dir, f"{noise_id}.wav")
        save_waveform(path, Waveform(x, SAMPLE_RATE))
        entries.append(CorpusEntry(noise_id, path))
    return NoiseCorpus(entries)


def generate_toy_rir_corpus(out_dir: str, count: int, seed: int) -> RirCorpus:
    """Synthetic room impulse responses: direct path plus exponential noise tail."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, "rir", i))
        tail_s = rng.uniform(0.08, 0.3)
        n = int(tail_s * SAMPLE_RATE)
        t60 = rng.uniform(0.05, 0.2)
        decay = np.exp(-3.0 * np.log(10) * np.arange(n) / (t60 * SAMPLE_RATE))
        h = rng.standard_normal(n) * decay
        h[0] = 1.0  # direct path dominates
        h = h / np.max(np.abs(h))
        rir_id = f"rir{i:03d}"
        path = os.path.join(out_dir, f"{rir_id}.wav")
        save_waveform(path, Waveform(h, SAMPLE_RATE))
        entries.append(CorpusEntry(rir_id, path))
    return RirCorpus(entries)


# ---------------------------------------------------------------------------
# Trial lists
# ---------------------------------------------------------------------------

Trial = tuple[int, str, str]


def build_trial_list(label_map: dict[str, int], num_trials: int, seed: int) -> list[Trial]:
    """Sample balanced, self-pair-free verification trials from a label map.

    Target and non-target counts differ by at most one; pairs are unique.
    """
    by_speaker: dict[int, list[str]] = {}
    for utt, spk in label_map.items():
        by_speaker.setdefault(spk, []).append(utt)
    for spk in by_speaker:
        by_speaker[spk].sort()
    if len(by_speaker) < 2:
        raise ValueError("need utterances from at least 2 speakers to build trials")

    n_target = (num_trials + 1) // 2
    n_nontarget = num_trials - n_target
    rng = np.random.default_rng(derive_seed(seed, "trials"))

    same_pairs = []
    for spk in sorted(by_speaker):
        utts = by_speaker[spk]
        for i in range(len(utts)):
            for j in range(i + 1, len(utts)):
                same_pairs.append((utts[i], utts[j]))
    if len(same_pairs) < n_target:
        raise ValueError(
            f"insufficient utterances: {len(same_pairs)} same-speaker pairs "
            f"available, {n_target} target trials requested"
        )
    order = rng.permutation(len(same_pairs))
    trials: list[Trial] = [(1, *same_pairs[i]) for i in order[:n_target]]

    all_utts = sorted(label_map)
    chosen = set()
    attempts = 0
    max_attempts = 50 * max(n_nontarget, 1) + 1000
    while len(chosen) < n_nontarget:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                "insufficient utterances: could not sample enough distinct "
                "non-target pairs"
            )
        a, b = rng.choice(len(all_utts), size=2, replace=False)
        ua, ub = all_utts[a], all_utts[b]
        if label_map[ua] == label_map[ub]:
            continue
        key = (ua, ub) if ua < ub else (ub, ua)
        if key in chosen:
            continue
        chosen.add(key)
        trials.append((0, ua, ub))

    perm = rng.permutation(len(trials))
    return [trials[i] for i in perm]


def save_trial_list(path: str, trials: list[Trial]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label, a, b in trials:
            fh.write(f"{label} {a} {b}\n")


def load_trial_list(path: str) -> list[Trial]:
    """Parse ``<0|1> <utt_id_a> <utt_id_b>`` lines."""
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 3 or fields[0] not in ("0", "1"):
                raise ManifestError(
                    f"{path}:{lineno}: expected '<0|1> <utt_a> <utt_b>', got {line.rstrip()!r}"
                )
            trials.append((int(fields[0]), fields[1], fields[2]))
    return trials


def save_label_map(path: str, labels: dict[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in sorted(labels):
            fh.write(f"{utt}\t{labels[utt]}\n")


def load_label_map(path: str) -> dict[str, int]:
    labels: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise ManifestError(f"{path}:{lineno}: expected '<utt_id>\\t<speaker_id>'")
            labels[fields[0]] = int(fields[1])
    return labels
