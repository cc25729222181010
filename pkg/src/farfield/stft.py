"""Waveform containers and STFT analysis/synthesis shared by all signal modules.

Axis convention for spectrogram tensors: (frequency, frame, channel).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError
from .validation import check_waveforms

_WINDOWS = ("sqrt_hann", "hann", "rect")


def _window_taper(name: str, length: int) -> np.ndarray:
    # periodic tapers so the overlap-add coverage is flat in the interior
    if name == "rect":
        return np.ones(length)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)
    if name == "hann":
        return hann
    if name == "sqrt_hann":
        return np.sqrt(hann)
    raise InputError(f"unknown window {name!r}, expected one of {_WINDOWS}")


@dataclass
class WaveformSet:
    """Synchronized multi-microphone audio.

    channels: float array (n_channels, n_samples), amplitudes in [-1, 1]-ish.
    """

    channels: np.ndarray
    sample_rate: int
    channel_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.channels = check_waveforms(self.channels)
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not self.channel_ids:
            self.channel_ids = [f"ch{i}" for i in range(self.n_channels)]
        if len(self.channel_ids) != self.n_channels:
            raise InputError("one channel_id per channel required")

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def select(self, mics) -> "WaveformSet":
        mics = list(mics)
        return WaveformSet(
            channels=self.channels[mics],
            sample_rate=self.sample_rate,
            channel_ids=[self.channel_ids[m] for m in mics],
        )

    def slice_seconds(self, start: float, end: float) -> "WaveformSet":
        i0 = max(0, int(round(start * self.sample_rate)))
        i1 = min(self.n_samples, int(round(end * self.sample_rate)))
        if i1 <= i0:
            raise InputError(f"empty slice [{start}, {end}]")
        return WaveformSet(self.channels[:, i0:i1], self.sample_rate, list(self.channel_ids))


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters.

    The window must satisfy constant overlap-add at the chosen hop: the
    accumulated squared-window coverage has to be flat in the interior so
    synthesis can invert the analysis exactly.
    """

    window_length: int = 1024
    hop: int = 256
    fft_size: int = 1024
    window: str = "sqrt_hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.window_length <= self.fft_size):
            raise InputError(
                f"need 0 < hop <= window_length <= fft_size, got "
                f"hop={self.hop} window_length={self.window_length} fft_size={self.fft_size}"
            )
        if not self.is_cola():
            raise InputError(
                f"window {self.window!r} does not satisfy constant overlap-add "
                f"at hop {self.hop}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def taper(self) -> np.ndarray:
        return _window_taper(self.window, self.window_length)

    def is_cola(self, tol: float = 1e-8) -> bool:
        """Check the squared-window overlap-add coverage is flat."""
        w2 = self.taper**2
        span = self.window_length + 4 * self.hop
        cover = np.zeros(span + self.window_length)
        offset = 0
        while offset <= span:
            cover[offset : offset + self.window_length] += w2
            offset += self.hop
        interior = cover[self.window_length : span]
        return bool(np.ptp(interior) <= tol * max(interior.max(), 1e-300))

    def frame_times(self, n_frames: int) -> np.ndarray:
        """Center time (seconds x sample_rate) offsets of each frame in samples."""
        return np.arange(n_frames) * self.hop + self.window_length / 2.0

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            raise InputError(
                f"signal of {n_samples} samples shorter than one window "
                f"({self.window_length})"
            )
        return 1 + (n_samples - self.window_length) // self.hop


@dataclass
class Spectrogram:
    """Complex STFT tensor with shape (n_bins, n_frames, n_channels)."""

    data: np.ndarray
    config: StftConfig
    sample_rate: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim == 2:
            self.data = self.data[:, :, np.newaxis]
        if self.data.ndim != 3:
            raise InputError(f"expected (bins, frames, channels), got {self.data.shape}")
        if self.data.shape[0] != self.config.n_bins:
            raise InputError(
                f"bin count {self.data.shape[0]} does not match fft_size "
                f"{self.config.fft_size}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InputError("spectrogram contains non-finite entries")

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.config.hop

    def frame_center_times(self) -> np.ndarray:
        return self.config.frame_times(self.n_frames) / self.sample_rate

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return replace(self, data=data)


def stft(wave: WaveformSet, cfg: StftConfig | None = None) -> Spectrogram:
    """Windowed forward transform of every channel.

    Frames start at multiples of the hop; the frame count is
    ``1 + (n_samples - window_length) // hop`` and trailing samples that do
    not fill a window are dropped.
    """
    cfg = cfg or StftConfig()
    x = wave.channels
    n_frames = cfg.n_frames(x.shape[1])
    taper = cfg.taper
    idx = np.arange(cfg.window_length)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[:, idx] * taper  # (channels, frames, window)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    data = np.transpose(spec, (2, 1, 0))  # -> (bins, frames, channels)
    return Spectrogram(data=data, config=cfg, sample_rate=wave.sample_rate)


def istft(spec: Spectrogram, length: int | None = None) -> WaveformSet:
    """Overlap-add synthesis inverting :func:`stft`.

    Reconstruction divides by the accumulated squared-window coverage, so the
    round trip is exact (to float precision) wherever that coverage is
    non-zero; only the outermost samples of the edge frames are lost.
    ``length`` trims or zero-pads the output to a target sample count.
    """
    cfg = spec.config
    taper = cfg.taper
    frames = np.fft.irfft(np.transpose(spec.data, (2, 1, 0)), n=cfg.fft_size, axis=-1)
    frames = frames[..., : cfg.window_length] * taper
    n_frames = spec.n_frames
    n_out = cfg.window_length + cfg.hop * (n_frames - 1)
    out = np.zeros((spec.n_channels, n_out))
    cover = np.zeros(n_out)
    for t in range(n_frames):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.window_length)
        out[:, sl] += frames[:, t]
        cover[sl] += taper**2
    nonzero = cover > 1e-10 * cover.max()
    out[:, nonzero] /= cover[nonzero]
    out[:, ~nonzero] = 0.0
    if length is not None:
        if length <= n_out:
            out = out[:, :length]
        else:
            out = np.pad(out, ((0, 0), (0, length - n_out)))
    return WaveformSet(out, spec.sample_rate)
