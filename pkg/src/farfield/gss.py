"""Activity-guided time-frequency mask estimation.

A complex angular central Gaussian mixture is fitted to the unit-normalized
multichannel STFT vectors with one class per source plus an always-active
noise class. Known per-source activity constrains the class posteriors: a
source's posterior is clamped to zero on frames where its activity is zero,
which both anchors the class identities and guides the EM to the wanted
decomposition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InputError
from .stft import Spectrogram
from .validation import check_unit_interval

logger = logging.getLogger(__name__)

_EPS = 1e-10


@dataclass
class ActivityMatrix:
    """Per-source activity over time: (n_sources, n_frames) values in [0, 1]."""

    values: np.ndarray
    frame_rate: float
    binary: bool = False

    def __post_init__(self):
        self.values = check_unit_interval(self.values, "activity")
        if self.values.ndim != 2:
            raise InputError(f"activity must be 2-D, got shape {self.values.shape}")
        if self.frame_rate <= 0:
            raise InputError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.binary and not np.all(np.isin(self.values, (0.0, 1.0))):
            raise InputError("binary activity must contain only 0 and 1")

    @property
    def n_sources(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class TfMaskSet:
    """Per-class masks (sources first, noise last): (n_classes, bins, frames).

    Masks sum to one over classes at every bin, and a source's mask is zero
    wherever its guiding activity was zero.
    """

    masks: np.ndarray

    def __post_init__(self):
        self.masks = check_unit_interval(self.masks, "masks")
        if self.masks.ndim != 3:
            raise InputError(f"masks must be (classes, bins, frames), got {self.masks.shape}")
        total = self.masks.sum(axis=0)
        if total.size and np.max(np.abs(total - 1.0)) > 1e-6:
            raise InputError("masks must sum to one over classes at every bin")

    @property
    def n_sources(self) -> int:
        return self.masks.shape[0] - 1

    def source(self, index: int) -> np.ndarray:
        if not 0 <= index < self.n_sources:
            raise InputError(f"source index {index} out of range")
        return self.masks[index]

    @property
    def noise(self) -> np.ndarray:
        return self.masks[-1]


def expand_segment(
    bounds: tuple[float, float], context: float, session_length: float
) -> tuple[float, float]:
    """Pad a (start, end) pair by ``context`` seconds, clamped to the session."""
    start, end = bounds
    if start > end:
        raise InputError(f"inverted bounds: start {start} > end {end}")
    if start < 0 or end > session_length:
        raise InputError(f"bounds [{start}, {end}] outside [0, {session_length}]")
    if context < 0:
        raise InputError(f"context must be >= 0, got {context}")
    return max(0.0, start - context), min(session_length, end + context)


def align_activity_to_frames(
    activity: ActivityMatrix, spec: Spectrogram, offset: float = 0.0
) -> np.ndarray:
    """Nearest-frame resampling of activities onto the STFT frame grid.

    Each STFT frame maps to the activity frame whose span contains the STFT
    frame's center time (plus ``offset`` seconds into the session).
    """
    centers = spec.frame_center_times() + offset
    idx = np.clip(
        np.floor(centers * activity.frame_rate).astype(int), 0, activity.n_frames - 1
    )
    return activity.values[:, idx]


class GssMaskEstimator(BaseEstimator):
    """EM mask estimation guided by per-source activity.

    Parameters
    ----------
    iterations:
        Number of EM sweeps.
    regularization:
        Diagonal loading added to the class shape matrices each M-step.

    Attributes
    ----------
    masks_ : TfMaskSet
        Posterior masks after fitting (sources in input order, noise last).
    nll_curve_ : ndarray
        Mean negative log-likelihood after each iteration; non-increasing.
    """

    def __init__(self, iterations: int = 20, regularization: float = 1e-10):
        self.iterations = iterations
        self.regularization = regularization

    def fit(self, spec: Spectrogram, activity: np.ndarray):
        """Fit the mixture to a spectrogram.

        ``activity`` is (n_sources, n_frames) aligned to the STFT frames;
        use :func:`align_activity_to_frames` for frame-rate conversion.
        """
        if self.iterations < 1:
            raise InputError("iterations must be >= 1")
        if spec.n_channels < 2:
            raise InputError("mask estimation needs at least 2 channels")
        activity = check_unit_interval(activity, "activity")
        if activity.ndim != 2 or activity.shape[1] != spec.n_frames:
            raise InputError(
                f"activity shape {activity.shape} does not match {spec.n_frames} frames"
            )
        if not np.any(activity > 0):
            raise InputError("all sources have all-zero activity; nothing to separate")

        n_src, n_frames = activity.shape
        n_bins, _, n_ch = spec.data.shape
        n_classes = n_src + 1

        # unit-normalized observations, zeros kept as zeros
        z = spec.data  # (F, T, K)
        norm = np.maximum(np.linalg.norm(z, axis=2, keepdims=True), _EPS)
        z = z / norm

        active = np.ones((n_classes, n_frames), dtype=bool)
        active[:n_src] = activity > 0

        # time-varying class priors shared across frequency, uniform over the
        # active classes of each frame
        priors = active / active.sum(axis=0, keepdims=True)

        shapes = np.broadcast_to(
            np.eye(n_ch, dtype=np.complex128), (n_classes, n_bins, n_ch, n_ch)
        ).copy()

        nll_curve = []
        gamma = None
        for _ in range(self.iterations):
            q = self._quadratic_forms(z, shapes)
            gamma, nll = self._e_step(q, shapes, priors, active, n_ch)
            self._check_mask_invariants(gamma, active)
            shapes = self._m_step(z, q, gamma, n_ch)
            priors = gamma.mean(axis=1)  # (C, T); inactive classes stay at zero
            nll_curve.append(nll)

        self.masks_ = TfMaskSet(np.clip(gamma, 0.0, 1.0))
        self.nll_curve_ = np.array(nll_curve)
        self.priors_ = priors
        return self

    def fit_predict(self, spec: Spectrogram, activity: np.ndarray) -> TfMaskSet:
        return self.fit(spec, activity).masks_

    @staticmethod
    def _quadratic_forms(z, shapes) -> np.ndarray:
        """z^H B^{-1} z for every class, bin and frame: (C, F, T)."""
        inv = np.linalg.inv(shapes)  # (C, F, K, K)
        q = np.einsum("ftk,cfkl,ftl->cft", z.conj(), inv, z, optimize=True).real
        return np.maximum(q, _EPS)

    @staticmethod
    def _e_step(q, shapes, priors, active, n_ch):
        _, logdet = np.linalg.slogdet(shapes)  # (C, F)
        log_lik = -logdet[:, :, None] - n_ch * np.log(q)  # (C, F, T)
        log_post = np.where(
            active[:, None, :],
            log_lik + np.log(np.maximum(priors, _EPS))[:, None, :],
            -np.inf,
        )
        top = log_post.max(axis=0, keepdims=True)
        post = np.exp(log_post - top)
        total = post.sum(axis=0, keepdims=True)
        gamma = post / total
        nll = -float(np.mean(np.log(total) + top))
        return gamma, nll

    def _m_step(self, z, q, gamma, n_ch):
        """Weighted-covariance update of the class shape matrices.

        Shapes are Hermitized, diagonally loaded and trace-normalized; the
        density is scale-invariant in the shape matrix so normalization does
        not change the likelihood.
        """
        w = gamma / q  # (C, F, T)
        num = np.einsum("cft,ftk,ftl->cfkl", w, z, z.conj(), optimize=True)
        den = np.maximum(gamma.sum(axis=2), _EPS)  # (C, F)
        shapes = n_ch * num / den[:, :, None, None]
        shapes = 0.5 * (shapes + shapes.conj().swapaxes(-1, -2))
        eye = np.eye(n_ch)
        trace = np.einsum("cfkk->cf", shapes).real
        shapes = shapes + (
            self.regularization * np.maximum(trace, 1.0) / n_ch
        )[:, :, None, None] * eye
        trace = np.einsum("cfkk->cf", shapes).real
        return shapes * (n_ch / trace)[:, :, None, None]

    @staticmethod
    def _check_mask_invariants(gamma, active):
        total = gamma.sum(axis=0)
        assert np.all(np.abs(total - 1.0) < 1e-6), "mask normalization violated"
        inactive = ~np.broadcast_to(active[:, None, :], gamma.shape)
        assert np.all(gamma[inactive] == 0.0), "guidance clamp violated"


def gss_estimate_masks(
    spec: Spectrogram, activities: ActivityMatrix, iterations: int = 20, offset: float = 0.0
) -> TfMaskSet:
    """Estimate per-source and noise masks for a spectrogram.

    Activities are resampled to the STFT frame grid by nearest frame; the
    noise class is active everywhere.
    """
    aligned = align_activity_to_frames(activities, spec, offset=offset)
    return GssMaskEstimator(iterations=iterations).fit_predict(spec, aligned)
