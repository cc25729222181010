"""MIMO dereverberation by iterative multichannel linear prediction.

Each frequency bin is processed independently: the late part of the signal is
predicted from frames at least ``delay`` hops in the past and subtracted, with
the per-frame signal variance re-estimated between iterations.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InputError
from .stft import Spectrogram

logger = logging.getLogger(__name__)

_POWER_FLOOR = 1e-10


def _stack_delayed(y: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """Stack delayed copies of (channels, frames) into (channels*taps, frames).

    Row block ``k`` holds the signal delayed by ``delay + k`` frames, zero
    padded at the start.
    """
    n_ch, n_frames = y.shape
    out = np.zeros((n_ch * taps, n_frames), dtype=y.dtype)
    for k in range(taps):
        shift = delay + k
        out[k * n_ch : (k + 1) * n_ch, shift:] = y[:, : n_frames - shift]
    return out


def wpe_dereverberate(
    spec: Spectrogram,
    taps: int = 10,
    delay: int = 2,
    iterations: int = 3,
    regularization: float = 1e-10,
) -> Spectrogram:
    """Multichannel linear-prediction dereverberation of an STFT tensor.

    Returns a spectrogram of identical shape. Deterministic for fixed input.
    If the regularized correlation matrix of some bin is still singular, that
    bin is passed through unchanged and a warning is emitted.
    """
    if taps < 1 or delay < 1 or iterations < 1:
        raise InputError("need taps >= 1, delay >= 1, iterations >= 1")
    if regularization <= 0:
        raise InputError("regularization must be positive")
    n_frames = spec.n_frames
    if n_frames <= delay + taps:
        raise InputError(
            f"too few frames for dereverberation: {n_frames} <= delay + taps "
            f"= {delay + taps}"
        )

    data = np.transpose(spec.data, (0, 2, 1))  # (bins, channels, frames)
    out = np.empty_like(data)
    failed = []
    filter_sq = 0.0
    for f in range(data.shape[0]):
        y = data[f]
        y_tilde = _stack_delayed(y, taps, delay)
        x = y
        try:
            for _ in range(iterations):
                power = np.maximum(np.mean(np.abs(x) ** 2, axis=0), _POWER_FLOOR)
                weighted = y_tilde / power
                corr = weighted @ y_tilde.conj().T
                corr += regularization * max(np.trace(corr).real, 1.0) / corr.shape[0] * np.eye(
                    corr.shape[0]
                )
                cross = weighted @ y.conj().T
                filt = np.linalg.solve(corr, cross)
                x = y - filt.conj().T @ y_tilde
            filter_sq += float(np.sum(np.abs(filt) ** 2))
        except np.linalg.LinAlgError:
            failed.append(f)
            x = y
        out[f] = x
    if failed:
        warnings.warn(
            f"dereverberation skipped {len(failed)} singular frequency bins",
            stacklevel=2,
        )
    result = spec.with_data(np.transpose(out, (0, 2, 1)))
    result.failed_bins = np.array(failed, dtype=int)
    result.filter_frobenius = float(np.sqrt(filter_sq))
    return result


class WpeDereverberator(TransformerMixin, BaseEstimator):
    """Transformer wrapper so dereverberation composes in pipelines.

    Stateless between calls: ``fit`` only validates parameters.
    """

    def __init__(self, taps=10, delay=2, iterations=3, regularization=1e-10):
        self.taps = taps
        self.delay = delay
        self.iterations = iterations
        self.regularization = regularization

    def fit(self, X: Spectrogram, y=None):
        if self.taps < 1 or self.delay < 1 or self.iterations < 1:
            raise InputError("need taps >= 1, delay >= 1, iterations >= 1")
        return self

    def transform(self, X: Spectrogram) -> Spectrogram:
        result = wpe_dereverberate(
            X,
            taps=self.taps,
            delay=self.delay,
            iterations=self.iterations,
            regularization=self.regularization,
        )
        self.failed_bins_ = result.failed_bins
        return result
