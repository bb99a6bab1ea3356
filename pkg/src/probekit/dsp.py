"""Logmel frontend and SpecAugment-style masking.

Audio at any sample rate is resampled to a canonical 16 kHz, framed with a
Hann window at hop ``1 / frame_rate`` seconds, and projected onto a
Slaney-scale mel filterbank.  The two encoder input configurations are
64 bins at 40 frames/s and 64 bins at 100 frames/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .container import read_container, write_container
from .errors import EmptyInput, InvalidConfig

ANALYSIS_RATE = 16000
DEFAULT_LOG_FLOOR = math.log(1e-10)


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip expects mono samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidConfig(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"clip {self.id!r} contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 64
    frame_rate: int = 40
    window_length: float = 0.025
    fmin: float = 0.0
    fmax: float | None = None  # None -> Nyquist of the analysis rate
    log_floor: float = DEFAULT_LOG_FLOOR
    sample_rate: int = ANALYSIS_RATE

    @property
    def hop(self) -> int:
        return self.sample_rate // self.frame_rate

    @property
    def win(self) -> int:
        return int(round(self.window_length * self.sample_rate))

    @property
    def n_fft(self) -> int:
        return 1 << max(self.win - 1, 1).bit_length()

    @property
    def upper(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    def validate(self) -> None:
        if self.n_mels < 1:
            raise InvalidConfig("n_mels must be >= 1")
        if self.frame_rate <= 0 or self.sample_rate % self.frame_rate:
            raise InvalidConfig(
                f"frame_rate {self.frame_rate} must divide the analysis rate {self.sample_rate}"
            )
        if self.win < 2:
            raise InvalidConfig("window_length too short")
        if self.upper > self.sample_rate / 2:
            raise InvalidConfig(f"fmax {self.upper} exceeds Nyquist {self.sample_rate / 2}")
        if not 0 <= self.fmin < self.upper:
            raise InvalidConfig(f"need 0 <= fmin < fmax, got {self.fmin}, {self.upper}")


# encoder input presets: 40 fps and 100 fps
TALNET_CONFIG = MelConfig(n_mels=64, frame_rate=40)
WEANET_CONFIG = MelConfig(n_mels=64, frame_rate=100)


@dataclass(frozen=True)
class LogMelSpectrogram:
    values: np.ndarray  # T x n_mels
    frame_rate: int
    clip_id: str = ""
    log_floor: float = DEFAULT_LOG_FLOOR

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


# --- mel scale (Slaney: linear below 1 kHz, logarithmic above) -------------

_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = math.log(6.4) / 27.0


def hz_to_mel(freq):
    freq = np.asarray(freq, dtype=np.float64)
    lin = freq / _F_SP
    with np.errstate(divide="ignore"):
        log = _MIN_LOG_MEL + np.log(np.maximum(freq, 1e-300) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(freq >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    lin = mel * _F_SP
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (mel - _MIN_LOG_MEL))
    return np.where(mel >= _MIN_LOG_MEL, log, lin)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """``n_mels + 2`` frequencies in Hz; band k spans edges[k]..edges[k+2], peaking at edges[k+1]."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    return mel_band_edges(cfg)[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Area-normalized triangular filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    edges = mel_band_edges(cfg)
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1] - edges[:-2])[:, None]
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:] - edges[1:-1])[:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    return fb * (2.0 / (edges[2:] - edges[:-2]))[:, None]


def frame_count(n_samples: int, sample_rate: int, frame_rate) -> int:
    """ceil(duration * frame_rate), computed exactly."""
    return math.ceil(Fraction(n_samples) * Fraction(frame_rate) / sample_rate)


def _resample(samples: np.ndarray, rate: int, target: int) -> np.ndarray:
    if rate == target:
        return samples
    g = math.gcd(rate, target)
    return resample_poly(samples, target // g, rate // g)


def compute_logmel(clip: AudioClip, cfg: MelConfig = TALNET_CONFIG) -> LogMelSpectrogram:
    """Log mel energies, one row per frame; frame ``t`` is centred on ``t / frame_rate`` s."""
    cfg.validate()
    if len(clip.samples) == 0:
        raise EmptyInput(f"clip {clip.id!r} is empty")

    n_frames = frame_count(len(clip.samples), clip.sample_rate, cfg.frame_rate)
    y = _resample(clip.samples, clip.sample_rate, cfg.sample_rate)

    hop, win, n_fft = cfg.hop, cfg.win, cfg.n_fft
    half = win // 2
    need = (n_frames - 1) * hop + win
    padded = np.zeros(max(need, half + len(y)))
    padded[half : half + len(y)] = y
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[::hop][:n_frames]

    window = get_window("hann", win)
    spectrum = np.fft.rfft(frames * window, n=n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(cfg).T

    floor_energy = math.exp(cfg.log_floor)
    with np.errstate(divide="ignore"):
        values = np.where(mel > floor_energy, np.log(np.maximum(mel, floor_energy)), cfg.log_floor)
    return LogMelSpectrogram(values, cfg.frame_rate, clip.id, cfg.log_floor)


# --- SpecAugment ----------------------------------------------------------


@dataclass(frozen=True)
class MaskSpec:
    max_freq_bins: int = 16
    max_time_seconds: float = 2.0
    n_freq_masks: int = 1
    n_time_masks: int = 1
    fill: str = "log_floor"  # or "mean"

    def __post_init__(self):
        if min(self.max_freq_bins, self.n_freq_masks, self.n_time_masks) < 0:
            raise InvalidConfig("mask counts must be >= 0")
        if self.max_time_seconds < 0:
            raise InvalidConfig("max_time_seconds must be >= 0")
        if self.fill not in ("log_floor", "mean"):
            raise InvalidConfig(f"unknown fill policy {self.fill!r}")

    def max_time_frames(self, frame_rate) -> int:
        # round first so 2.0 * 40 never lands at 79.999...
        return int(math.floor(round(self.max_time_seconds * frame_rate, 9)))


@dataclass(frozen=True)
class MaskRect:
    axis: str  # "freq" or "time"
    start: int
    width: int


def draw_masks(n_frames: int, n_mels: int, frame_rate, mask: MaskSpec, seed: int) -> list[MaskRect]:
    """The mask rectangles spec_augment applies for this seed."""
    rng = np.random.default_rng(seed)
    rects = []
    draws = [("freq", n_mels, mask.max_freq_bins)] * mask.n_freq_masks
    draws += [("time", n_frames, mask.max_time_frames(frame_rate))] * mask.n_time_masks
    for axis, size, limit in draws:
        width = int(rng.integers(0, min(limit, size) + 1))
        start = int(rng.integers(0, size - width + 1))
        rects.append(MaskRect(axis, start, width))
    return rects


def spec_augment(spec: LogMelSpectrogram, mask: MaskSpec = MaskSpec(), seed: int = 0) -> LogMelSpectrogram:
    rects = draw_masks(spec.n_frames, spec.n_mels, spec.frame_rate, mask, seed)
    fill = spec.log_floor if mask.fill == "log_floor" else float(np.mean(spec.values))
    out = spec.values.copy()
    for r in rects:
        if r.axis == "freq":
            out[:, r.start : r.start + r.width] = fill
        else:
            out[r.start : r.start + r.width, :] = fill
    return LogMelSpectrogram(out, spec.frame_rate, spec.clip_id, spec.log_floor)


# --- I/O ------------------------------------------------------------------


def read_wav(path) -> AudioClip:
    """Read PCM 8/16/24/32-bit or float WAV as mono float in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:  # 24-bit arrives left-justified in int32
        samples = data / 2147483648.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples, rate, Path(path).stem)


SPEC_MAGIC = b"AMAT"


def write_spectrogram(spec: LogMelSpectrogram, path) -> None:
    """Store as a float32 ``T x n_mels`` matrix in the AMAT container."""
    meta = {"clip_id": spec.clip_id, "frame_rate": spec.frame_rate, "log_floor": spec.log_floor}
    write_container(path, SPEC_MAGIC, spec.values, meta)


def read_spectrogram(path) -> LogMelSpectrogram:
    values, meta = read_container(path, SPEC_MAGIC)
    return LogMelSpectrogram(values.astype(np.float64), meta["frame_rate"], meta["clip_id"], meta["log_floor"])
