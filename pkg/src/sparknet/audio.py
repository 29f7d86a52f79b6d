"""WAV ingestion and the MFCC frontend.

The frontend is deterministic (no dither) and works on batches of 1 s clips:

    pre-emphasis? -> Hann frames -> |rfft|^2 -> mel filterbank -> log -> DCT-II -> standardize?
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sparknet.errors import AudioFormatError, ConfigError, UnsupportedFormatError

SAMPLE_RATE = 16000
CLIP_SAMPLES = SAMPLE_RATE

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class MfccConfig:
    n_mfcc: int = 32
    n_fft: int = 512
    window_len: int = 400
    hop_len: int = 160
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 2.0**-24
    preemphasis: float = 0.0
    normalize_per_feature: bool = True
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not 0 < self.n_mfcc <= self.n_mels <= self.n_fft // 2 + 1:
            raise ConfigError(
                f"need 0 < n_mfcc <= n_mels <= n_fft/2+1, got {self.n_mfcc}, {self.n_mels}, {self.n_fft}"
            )
        if not 0 < self.hop_len <= self.window_len <= self.n_fft:
            raise ConfigError(
                f"need 0 < hop_len <= window_len <= n_fft, got {self.hop_len}, {self.window_len}, {self.n_fft}"
            )
        if not 0.0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError(f"need 0 <= fmin < fmax <= sample_rate/2, got {self.fmin}, {self.fmax}")
        if not self.log_floor > 0:
            raise ConfigError("log_floor must be positive")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ConfigError("preemphasis must lie in [0, 1)")

    def num_frames(self, num_samples: int = CLIP_SAMPLES) -> int:
        return 1 + (num_samples - self.window_len) // self.hop_len

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse_fmt(chunk: bytes) -> tuple[int, int, int, int]:
    if len(chunk) < 16:
        raise AudioFormatError("fmt chunk shorter than 16 bytes")
    fmt_tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", chunk[:16])
    if fmt_tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(chunk) < 26:
            raise AudioFormatError("truncated WAVE_FORMAT_EXTENSIBLE header")
        # first two bytes of the subformat GUID carry the real format tag
        (fmt_tag,) = struct.unpack("<H", chunk[24:26])
    return fmt_tag, channels, rate, bits


def read_wav(path: str | Path) -> AudioClip:
    """Read a mono 16 kHz PCM16 or IEEE-float WAV without changing its length."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise AudioFormatError(f"{path}: {exc.strerror}") from exc
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise AudioFormatError(f"{path}: missing fmt or data chunk")

    fmt_tag, channels, rate, bits = fmt
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: {channels} channels, expected mono")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if fmt_tag == _WAVE_FORMAT_PCM and bits == 16:
        pcm = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2")
        samples = pcm.astype(np.float32) / 32768.0
    elif fmt_tag == _WAVE_FORMAT_IEEE_FLOAT and bits in (32, 64):
        dtype = "<f4" if bits == 32 else "<f8"
        width = bits // 8
        samples = np.frombuffer(data[: len(data) - len(data) % width], dtype=dtype).astype(np.float32)
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise UnsupportedFormatError(f"{path}: format tag {fmt_tag} with {bits} bits is not supported")
    return AudioClip(samples, rate)


def fix_length(samples: np.ndarray, length: int = CLIP_SAMPLES) -> np.ndarray:
    """Zero-pad at the end, or center-crop, to exactly ``length`` samples."""
    n = len(samples)
    if n < length:
        return np.concatenate([samples, np.zeros(length - n, dtype=samples.dtype)])
    start = (n - length) // 2
    return samples[start : start + length]


def load_wav(path: str | Path) -> AudioClip:
    clip = read_wav(path)
    return AudioClip(fix_length(clip.samples), clip.sample_rate)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono PCM16, the inverse of the reader's division by 32768."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _WAVE_FORMAT_PCM, 1, sample_rate, sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(header + data)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config: MfccConfig) -> np.ndarray:
    """Peak frequency (Hz) of each triangular filter."""
    mels = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(config: MfccConfig) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft // 2 + 1), peaks at mel-uniform centers."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    bins = np.arange(config.n_fft // 2 + 1) * config.sample_rate / config.n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0.0)
    if empty.size:
        raise ConfigError(
            f"{empty.size} mel filters have no FFT bin support; reduce n_mels or raise n_fft"
        )
    return fb


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II basis; rows are the first ``n_out`` of the n_in-point transform."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] *= np.sqrt(0.5)
    return basis


def hann_window(length: int) -> np.ndarray:
    # periodic form
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


class MfccExtractor:
    """Holds the precomputed window, filterbank and DCT basis for one config.

    Instances are read-only after construction and can be shared across threads.
    """

    def __init__(self, config: MfccConfig | None = None):
        self.config = config or MfccConfig()
        self.window = hann_window(self.config.window_len)
        self.filterbank = mel_filterbank(self.config)
        self.dct = dct_matrix(self.config.n_mfcc, self.config.n_mels)

    def mel_energies(self, samples: np.ndarray) -> np.ndarray:
        """Pre-log mel energies, shape (..., n_mels, T) for input (..., n_samples)."""
        cfg = self.config
        x = np.asarray(samples, dtype=np.float64)
        if cfg.preemphasis:
            x = np.concatenate([x[..., :1], x[..., 1:] - cfg.preemphasis * x[..., :-1]], axis=-1)
        frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len, axis=-1)[..., :: cfg.hop_len, :]
        spec = np.fft.rfft(frames * self.window, n=cfg.n_fft, axis=-1)
        power = spec.real**2 + spec.imag**2
        return np.swapaxes(power @ self.filterbank.T, -1, -2)

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        """MFCC matrix (..., n_mfcc, T)."""
        cfg = self.config
        log_mel = np.log(self.mel_energies(samples) + cfg.log_floor)
        feats = np.swapaxes(np.swapaxes(log_mel, -1, -2) @ self.dct.T, -1, -2)
        if cfg.normalize_per_feature:
            # centering on the first frame keeps constant rows exactly zero
            dev = feats - feats[..., :1]
            dev = dev - dev.mean(axis=-1, keepdims=True)
            feats = dev / (np.sqrt(np.mean(dev**2, axis=-1, keepdims=True)) + 1e-5)
        return feats


def compute_mfcc(clip: AudioClip, config: MfccConfig | None = None) -> np.ndarray:
    """F x T MFCC matrix of a 1 s clip."""
    return MfccExtractor(config)(fix_length(np.asarray(clip.samples)))
