"""Shared synthetic-scene builders for the signal-path tests."""

import numpy as np
import pytest

from farfield.pipeline import make_speech_like
from farfield.segments import Segment
from farfield.stft import WaveformSet

RATE = 16000


def spatialize(source: np.ndarray, gains: np.ndarray, delays: np.ndarray) -> np.ndarray:
    """Per-channel gain and integer-sample delay images of a source."""
    images = np.zeros((gains.size, source.size))
    for ch, (g, d) in enumerate(zip(gains, delays)):
        shifted = np.roll(source, d)
        shifted[:d] = 0.0
        images[ch] = g * shifted
    return images


def two_speaker_scene(seed=0, seconds=4.0, n_mics=3, noise_db=-25.0, overlap=False):
    """Anechoic mixture of two spectrally distinct talkers plus white noise.

    Returns (wave, images, segments) where images[s] is speaker s's clean
    multichannel image and segments carries the true activity.
    """
    rng = np.random.default_rng(seed)
    n = int(seconds * RATE)
    half = seconds / 2.0
    if overlap:
        spans = [(0.2, half + 0.4), (half - 0.4, seconds - 0.2)]
    else:
        spans = [(0.2, half - 0.1), (half + 0.1, seconds - 0.2)]
    tilts = (0.85, -0.5)

    images = []
    segments = []
    for s, (start, end) in enumerate(spans):
        lo, hi = int(start * RATE), int(end * RATE)
        source = np.zeros(n)
        source[lo:hi] = make_speech_like(rng, hi - lo, RATE, tilts[s])
        gains = rng.uniform(0.5, 1.0, size=n_mics)
        delays = rng.integers(0, 24, size=n_mics)
        images.append(spatialize(source, gains, delays))
        segments.append(Segment(f"spk{s}", start, end))

    clean = np.sum(images, axis=0)
    scale = 10.0 ** (noise_db / 20.0) * np.sqrt(np.mean(clean**2))
    mixture = clean + scale * rng.standard_normal(clean.shape)
    peak = np.max(np.abs(mixture))
    mixture = mixture / peak * 0.5
    images = [im / peak * 0.5 for im in images]
    return WaveformSet(mixture, RATE), images, segments


@pytest.fixture
def rng():
    return np.random.default_rng(0)
