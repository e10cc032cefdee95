"""Log-mel filterbank features, mean-variance normalization, and SpecAug.

Pipeline order contract: logmel -> mvn -> specaug, so the SpecAug mask value
of 0 coincides with the post-MVN per-bin mean.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .corpus import Waveform

FRAME_LENGTH = 400  # 25 ms at 16 kHz
FRAME_SHIFT = 160  # 10 ms
N_FFT = 512
N_MELS = 40
MEL_LOW_HZ = 20.0
MEL_HIGH_HZ = 7600.0
LOG_FLOOR = 1e-6
VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class SpecAugPolicy:
    max_freq_mask_bins: int = 8
    max_time_mask_frames: int = 20
    num_freq_masks: int = 1
    num_time_masks: int = 1

    def __post_init__(self):
        if self.max_freq_mask_bins < 0 or self.max_time_mask_frames < 0:
            raise ValueError("mask sizes must be non-negative")
        if self.num_freq_masks < 0 or self.num_time_masks < 0:
            raise ValueError("mask counts must be non-negative")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filter_centers_hz(n_mels: int = N_MELS) -> np.ndarray:
    """Center frequencies of the triangular mel filters."""
    mels = np.linspace(hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ), n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(
    n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = 16000
) -> np.ndarray:
    """(n_mels, n_fft//2+1) triangular filters between MEL_LOW_HZ and MEL_HIGH_HZ."""
    mels = np.linspace(hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ), n_mels + 2)
    edges_hz = mel_to_hz(mels)
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fbank = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        left, center, right = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - left) / (center - left)
        down = (right - bin_hz) / (right - center)
        fbank[m] = np.maximum(0.0, np.minimum(up, down))
    return fbank


_WINDOW = np.hamming(FRAME_LENGTH)
_FBANK = mel_filterbank()


def num_frames(num_samples: int) -> int:
    if num_samples < FRAME_LENGTH:
        raise ValueError(f"need at least {FRAME_LENGTH} samples, got {num_samples}")
    return 1 + (num_samples - FRAME_LENGTH) // FRAME_SHIFT


def logmel(wav: Waveform) -> np.ndarray:
    """(T, 40) log mel-filterbank energies. T = 1 + floor((N-400)/160)."""
    x = wav.samples
    t = num_frames(len(x))
    idx = np.arange(FRAME_LENGTH)[None, :] + FRAME_SHIFT * np.arange(t)[:, None]
    frames = x[idx] * _WINDOW[None, :]
    spectrum = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = spectrum @ _FBANK.T
    return np.log(energies + LOG_FLOOR)


def mvn(feat: np.ndarray) -> np.ndarray:
    """Per-bin mean/variance normalization over time.

    Bins whose variance falls below VAR_FLOOR are mean-centered only.
    """
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 2 or feat.shape[0] < 2:
        raise ValueError("mvn needs a (T, bins) matrix with T >= 2")
    mean = feat.mean(axis=0)
    var = feat.var(axis=0)
    centered = feat - mean
    scale = np.where(var < VAR_FLOOR, 1.0, np.sqrt(var))
    return centered / scale


def specaug(
    feat: np.ndarray, policy: SpecAugPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Zero out random frequency columns and time rows (post-MVN, 0 = mean)."""
    t, bins = feat.shape
    if policy.max_freq_mask_bins > bins or policy.max_time_mask_frames > t:
        raise ValueError("SpecAug mask sizes exceed feature dimensions")
    out = feat.copy()
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, policy.max_freq_mask_bins + 1))
        start = int(rng.integers(0, bins - width + 1))
        out[:, start : start + width] = 0.0
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, policy.max_time_mask_frames + 1))
        start = int(rng.integers(0, t - width + 1))
        out[start : start + width, :] = 0.0
    return out


def featurize(
    wav: Waveform,
    specaug_policy: SpecAugPolicy | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Full pipeline: logmel -> mvn -> optional specaug."""
    feat = mvn(logmel(wav))
    if specaug_policy is not None:
        if rng is None:
            raise ValueError("specaug requires an rng")
        feat = specaug(feat, specaug_policy, rng)
    return feat


# ---------------------------------------------------------------------------
# Binary feature dump: 16-byte header (magic, T, bins, dtype), row-major data
# ---------------------------------------------------------------------------

_MAGIC = b"SVFB"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def dump_features(path: str, feat: np.ndarray) -> None:
    feat = np.ascontiguousarray(feat)
    code = 1 if feat.dtype == np.float64 else 0
    feat = feat.astype(_DTYPE_CODES[code], copy=False)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _MAGIC, feat.shape[0], feat.shape[1], code))
        fh.write(feat.tobytes())


def load_features(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated feature header")
        magic, t, bins, code = struct.unpack("<4sIII", header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if code not in _DTYPE_CODES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        data = np.frombuffer(fh.read(), dtype=_DTYPE_CODES[code])
    if data.size != t * bins:
        raise ValueError(f"{path}: payload size mismatch")
    return data.reshape(t, bins)
