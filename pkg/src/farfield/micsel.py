"""Microphone ranking and subset selection for distributed arrays.

Two signal-quality features drive selection: the envelope variance computed
here from the audio, and a per-microphone clarity score (dB) supplied as data.
Selection is purely rank-based, so any strictly monotone rescaling of either
feature leaves the output unchanged.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InputError
from .stft import StftConfig, WaveformSet, stft

logger = logging.getLogger(__name__)

_MIN_SECONDS = 0.5


def _mel_filterbank(n_bands: int, n_bins: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters (bands, bins) spanning 64 Hz to Nyquist."""

    def to_mel(hz):
        return 2595.0 * np.log10(1.0 + hz / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)

    edges_mel = np.linspace(to_mel(64.0), to_mel(sample_rate / 2.0), n_bands + 2)
    edges_hz = to_hz(edges_mel)
    bin_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    bank = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        lo, mid, hi = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        rising = (bin_freqs - lo) / max(mid - lo, 1e-9)
        falling = (hi - bin_freqs) / max(hi - mid, 1e-9)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def envelope_variance(
    wave: WaveformSet, n_bands: int = 20, window_length: int = 400, hop: int = 200
) -> np.ndarray:
    """Per-microphone envelope-variance score (higher = cleaner channel).

    Sub-band envelopes on a mel scale are gain-normalized and cube-root
    compressed; the per-band temporal variance, normalized by the best
    microphone per band, is averaged over bands. Reverberation and additive
    noise both fill envelope troughs and lower the score.
    """
    if wave.duration < _MIN_SECONDS:
        raise InputError(
            f"envelope variance needs at least {_MIN_SECONDS} s of audio, "
            f"got {wave.duration:.3f} s"
        )
    cfg = StftConfig(
        window_length=window_length, hop=hop, fft_size=window_length, window="rect"
    )
    spec = stft(wave, cfg)
    power = np.abs(spec.data) ** 2  # (bins, frames, mics)
    bank = _mel_filterbank(n_bands, spec.n_bins, wave.sample_rate)
    env = np.einsum("bf,ftm->bmt", bank, power)  # (bands, mics, frames)
    env = np.maximum(env, 1e-20)
    env = env / env.mean(axis=2, keepdims=True)  # remove per-channel gain
    env = np.cbrt(env)
    band_var = env.var(axis=2)  # (bands, mics)
    best = np.maximum(band_var.max(axis=1, keepdims=True), 1e-20)
    return (band_var / best).mean(axis=0)


def select_topk_ev(scores: np.ndarray, ratio: float = 0.8) -> list[int]:
    """Indices of the top ceil(ratio * M) microphones by score.

    Ties break toward the lower index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise InputError("scores must be a non-empty vector")
    if not 0 < ratio <= 1:
        raise InputError(f"ratio must lie in (0, 1], got {ratio}")
    k = int(np.ceil(ratio * scores.size))
    order = np.argsort(-scores, kind="stable")  # stable sort: ties keep low index first
    return sorted(int(i) for i in order[:k])


def select_mics_ev_c50(
    ev: np.ndarray,
    c50: np.ndarray | None = None,
    k_min: int = 15,
    ratio_k1: float = 0.65,
) -> list[int]:
    """Intersection-based selection with a lower bound on the subset size.

    Rules, for M microphones and top-K1 sets by each feature
    (K1 = ceil(ratio_k1 * M)):

    1. M <= k_min: keep every microphone.
    2. The intersection of the two top-K1 sets has at least k_min members:
       keep exactly the intersection.
    3. Otherwise top up the intersection with the best remaining microphones
       ranked by envelope variance, to exactly k_min.

    A missing feature behaves as if every microphone ranked in its top set,
    so single-feature operation degenerates to that feature's top-K1.
    """
    ev = np.asarray(ev, dtype=np.float64)
    if ev.ndim != 1 or ev.size == 0:
        raise InputError("ev scores must be a non-empty vector")
    n_mics = ev.size
    if k_min < 1:
        raise InputError(f"k_min must be >= 1, got {k_min}")
    if not 0 < ratio_k1 <= 1:
        raise InputError(f"ratio_k1 must lie in (0, 1], got {ratio_k1}")
    if c50 is not None:
        c50 = np.asarray(c50, dtype=np.float64)
        if c50.shape != ev.shape:
            raise InputError("need one C50 score per microphone")

    if n_mics <= k_min:
        return list(range(n_mics))

    top_ev = set(select_topk_ev(ev, ratio_k1))
    top_c50 = set(range(n_mics)) if c50 is None else set(select_topk_ev(c50, ratio_k1))
    intersection = top_ev & top_c50
    if len(intersection) >= k_min:
        return sorted(intersection)

    complement = [m for m in range(n_mics) if m not in intersection]
    order = np.argsort(-ev[complement], kind="stable")
    extra = [complement[i] for i in order[: k_min - len(intersection)]]
    return sorted(intersection | set(extra))


class MicrophoneSelector(BaseEstimator):
    """Channel selector in the style of a feature selector.

    ``method`` is either ``ev-topk`` (baseline fixed-ratio top-K by envelope
    variance) or ``ev-c50`` (intersection rule with minimum count).
    """

    def __init__(self, method="ev-c50", k_min=15, ratio_k1=0.65, baseline_ratio=0.8):
        self.method = method
        self.k_min = k_min
        self.ratio_k1 = ratio_k1
        self.baseline_ratio = baseline_ratio

    def fit(self, wave: WaveformSet, c50: np.ndarray | None = None):
        if self.method not in ("ev-topk", "ev-c50"):
            raise InputError(f"unknown selection method {self.method!r}")
        self.ev_scores_ = envelope_variance(wave)
        self.c50_scores_ = None if c50 is None else np.asarray(c50, dtype=np.float64)
        if self.method == "ev-topk":
            self.selected_ = select_topk_ev(self.ev_scores_, self.baseline_ratio)
        else:
            self.selected_ = select_mics_ev_c50(
                self.ev_scores_, self.c50_scores_, self.k_min, self.ratio_k1
            )
        return self

    def get_support(self) -> np.ndarray:
        mask = np.zeros(self.ev_scores_.size, dtype=bool)
        mask[self.selected_] = True
        return mask

    def transform(self, wave: WaveformSet) -> WaveformSet:
        return wave.select(self.selected_)

    def fit_transform(self, wave: WaveformSet, c50: np.ndarray | None = None) -> WaveformSet:
        return self.fit(wave, c50).transform(wave)
