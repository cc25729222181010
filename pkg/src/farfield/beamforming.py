"""Mask-driven covariance estimation, the MWF beamformer family and post-filters.

All operations work per frequency bin on (bins, channels, channels) tensors.
Filter banks store one column per candidate reference microphone, so applying
column ``r`` estimates the target as observed at microphone ``r``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InputError, NumericalError
from .gss import TfMaskSet
from .stft import Spectrogram
from .validation import check_mic_index

logger = logging.getLogger(__name__)

KINDS = ("mvdr-souden", "r1-mwf", "sp-mwf", "sdw-mwf")

_LOADING = 1e-6
_EPS = 1e-12


@dataclass
class CovariancePair:
    """Per-frequency target and noise covariance estimates (bins, K, K).

    ``fallback_target`` / ``fallback_noise`` mark bins where the mask mass was
    zero and the estimate fell back to an unweighted average.
    """

    target: np.ndarray
    noise: np.ndarray
    fallback_target: np.ndarray = field(default=None)
    fallback_noise: np.ndarray = field(default=None)

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.complex128)
        self.noise = np.asarray(self.noise, dtype=np.complex128)
        for name, mat in (("target", self.target), ("noise", self.noise)):
            if mat.ndim != 3 or mat.shape[1] != mat.shape[2]:
                raise InputError(f"{name} covariance must be (bins, K, K), got {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise InputError(f"{name} covariance contains non-finite entries")
            asym = np.abs(mat - mat.conj().swapaxes(-1, -2)).max(initial=0.0)
            if asym > 1e-10 * max(np.abs(mat).max(initial=0.0), 1.0):
                raise InputError(f"{name} covariance is not Hermitian")
        if self.target.shape != self.noise.shape:
            raise InputError("target and noise covariance shapes differ")
        if self.fallback_target is None:
            self.fallback_target = np.zeros(self.n_bins, dtype=bool)
        if self.fallback_noise is None:
            self.fallback_noise = np.zeros(self.n_bins, dtype=bool)

    @property
    def n_bins(self) -> int:
        return self.target.shape[0]

    @property
    def n_channels(self) -> int:
        return self.target.shape[1]


@dataclass
class BeamformerBank:
    """Per-frequency filter matrices (bins, K, K); column r is the filter
    targeting microphone r. ``zeroed_bins`` marks bins whose filters were
    zeroed after a numerical failure."""

    filters: np.ndarray
    kind: str
    gamma: float = 0.0
    zeroed_bins: np.ndarray = field(default=None)

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.complex128)
        if self.filters.ndim != 3 or self.filters.shape[1] != self.filters.shape[2]:
            raise InputError(f"filters must be (bins, K, K), got {self.filters.shape}")
        if self.kind not in KINDS:
            raise InputError(f"unknown beamformer kind {self.kind!r}, expected {KINDS}")
        if self.gamma < 0:
            raise InputError(f"gamma must be >= 0, got {self.gamma}")
        if self.kind == "mvdr-souden" and self.gamma != 0.0:
            raise InputError("mvdr-souden requires gamma = 0")
        if not np.all(np.isfinite(self.filters)):
            raise InputError("filters contain non-finite entries")
        if self.zeroed_bins is None:
            self.zeroed_bins = np.zeros(self.filters.shape[0], dtype=bool)

    @property
    def n_channels(self) -> int:
        return self.filters.shape[1]

    def column(self, ref: int) -> np.ndarray:
        ref = check_mic_index(ref, self.n_channels)
        return self.filters[:, :, ref]


def _hermitize(mats: np.ndarray) -> np.ndarray:
    return 0.5 * (mats + mats.conj().swapaxes(-1, -2))


def estimate_covariances(
    spec: Spectrogram,
    target_mask: np.ndarray,
    noise_mask: np.ndarray,
    frames: np.ndarray | slice | None = None,
) -> CovariancePair:
    """Mask-weighted covariance averages over a frame subset.

    Both masks are (bins, frames) weight matrices; they need not be
    complementary. Bins where a class has zero total weight fall back to the
    unweighted average and are flagged.
    """
    target_mask = np.asarray(target_mask, dtype=np.float64)
    noise_mask = np.asarray(noise_mask, dtype=np.float64)
    expected = (spec.n_bins, spec.n_frames)
    for name, mask in (("target", target_mask), ("noise", noise_mask)):
        if mask.shape != expected:
            raise InputError(f"{name} mask shape {mask.shape}, expected {expected}")

    if frames is None:
        frames = slice(None)
    y = spec.data[:, frames, :]  # (F, T', K)
    if y.shape[1] == 0:
        raise InputError("empty frame selection")

    pair = []
    fallbacks = []
    for w in (target_mask[:, frames], noise_mask[:, frames]):
        mass = w.sum(axis=1)  # (F,)
        fallback = mass <= 0.0
        if np.any(fallback):
            w = np.where(fallback[:, None], 1.0, w)
            mass = w.sum(axis=1)
        cov = np.einsum("ft,ftk,ftl->fkl", w, y, y.conj(), optimize=True)
        cov /= mass[:, None, None]
        pair.append(_hermitize(cov))
        fallbacks.append(fallback)
    if np.any(fallbacks[0]) or np.any(fallbacks[1]):
        warnings.warn(
            f"{int(fallbacks[0].sum())} target / {int(fallbacks[1].sum())} noise bins "
            "had zero mask mass; fell back to unweighted averages",
            stacklevel=2,
        )
    return CovariancePair(
        target=pair[0],
        noise=pair[1],
        fallback_target=fallbacks[0],
        fallback_noise=fallbacks[1],
    )


def covariances_from_masks(
    spec: Spectrogram,
    masks: TfMaskSet,
    target: int,
    frames: np.ndarray | slice | None = None,
) -> CovariancePair:
    """Covariances for one source of a fitted mask set.

    Everything that is not the target, interfering sources included, counts
    as noise, so the noise weight is the complement of the target mask.
    """
    target_mask = masks.source(target)
    return estimate_covariances(
        spec, target_mask, np.clip(1.0 - target_mask, 0.0, 1.0), frames
    )


def _loaded_inverse(noise: np.ndarray) -> np.ndarray:
    """Invert the noise covariance after trace-scaled diagonal loading."""
    n_ch = noise.shape[-1]
    trace = np.einsum("fkk->f", noise).real
    loading = _LOADING * np.maximum(trace, _EPS) / n_ch
    loaded = noise + loading[:, None, None] * np.eye(n_ch)
    return np.linalg.inv(loaded)


def compute_beamformer(cov: CovariancePair, kind: str, gamma: float = 0.0) -> BeamformerBank:
    """Build the per-frequency filter matrix for the requested variant.

    The variants share the numerator R_n^{-1} R_s u_r and differ only in the
    scalar denominator, except sdw-mwf, which solves
    (R_s + gamma R_n)^{-1} R_s directly.
    """
    if kind not in KINDS:
        raise InputError(f"unknown beamformer kind {kind!r}, expected {KINDS}")
    if gamma < 0:
        raise InputError(f"gamma must be >= 0, got {gamma}")
    if kind == "mvdr-souden":
        if gamma != 0.0:
            raise InputError("mvdr-souden requires gamma = 0")
        kind_formula = "r1-mwf"
    else:
        kind_formula = kind

    r_s = cov.target

    if kind_formula == "sdw-mwf":
        n_inv = _loaded_inverse(r_s + gamma * cov.noise)
        filters = n_inv @ r_s
    else:
        n_inv = _loaded_inverse(cov.noise)
        numerator = n_inv @ r_s  # column r is R_n^{-1} R_s u_r
        if kind_formula == "r1-mwf":
            denom = gamma + np.einsum("fkk->f", numerator).real  # (F,)
            filters = numerator / np.maximum(denom, _EPS)[:, None, None]
        else:  # sp-mwf
            ref_power = np.einsum("fkk->fk", r_s).real  # (F, K): u_r^T R_s u_r
            cross = np.einsum("fkl,flm->fkm", r_s, numerator)
            pred_power = np.einsum("fkk->fk", cross).real  # u_r^T R_s R_n^-1 R_s u_r
            denom = gamma + pred_power / np.maximum(ref_power, _EPS)  # (F, K)
            filters = numerator / np.maximum(denom, _EPS)[:, None, :]

    bad = ~np.all(np.isfinite(filters), axis=(1, 2))
    if np.any(bad):
        warnings.warn(
            f"{int(bad.sum())} frequency bins produced non-finite filters and were zeroed",
            stacklevel=2,
        )
        filters[bad] = 0.0
    return BeamformerBank(filters=filters, kind=kind, gamma=gamma, zeroed_bins=bad)


def estimate_rtf(cov: CovariancePair, ref: int) -> np.ndarray:
    """Relative transfer function of the target, unity at the reference mic."""
    ref = check_mic_index(ref, cov.n_channels)
    ref_power = cov.target[:, ref, ref].real
    if np.any(ref_power <= 0):
        raise InputError(f"zero target power at reference microphone {ref}")
    rtf = cov.target[:, :, ref] / ref_power[:, None]
    rtf[:, ref] = 1.0
    return rtf


def select_reference_mic(bank: BeamformerBank, cov: CovariancePair) -> int:
    """Pick the filter column with the highest broadband output SNR.

    Ties break toward the lowest index.
    """
    if bank.filters.shape != cov.target.shape:
        raise InputError("filter bank and covariances disagree in shape")
    w = bank.filters
    signal = np.einsum("fkr,fkl,flr->r", w.conj(), cov.target, w, optimize=True).real
    noise = np.einsum("fkr,fkl,flr->r", w.conj(), cov.noise, w, optimize=True).real
    if np.all(noise <= 0):
        raise NumericalError("all candidate references have zero output noise power")
    snr = np.where(noise > 0, signal / np.maximum(noise, _EPS), -np.inf)
    return int(np.argmax(snr))


def apply_beamformer(spec: Spectrogram, bank: BeamformerBank, ref: int) -> Spectrogram:
    """Inner product of the chosen filter column with every STFT vector."""
    ref = check_mic_index(ref, spec.n_channels)
    if bank.n_channels != spec.n_channels:
        raise InputError("filter bank channel count does not match spectrogram")
    w = bank.column(ref)
    out = np.einsum("fk,ftk->ft", w.conj(), spec.data)
    return spec.with_data(out[:, :, None])


def ban_postfilter(signal: Spectrogram, w: np.ndarray, noise_cov: np.ndarray) -> Spectrogram:
    """Blind analytic normalization: rescale each bin so the filter's scale
    cancels out of the chain. Degenerate denominators keep gain 1."""
    w = np.asarray(w, dtype=np.complex128)
    noise_cov = np.asarray(noise_cov, dtype=np.complex128)
    if signal.n_channels != 1:
        raise InputError("BAN expects a single-channel (beamformed) spectrogram")
    if w.shape != noise_cov.shape[:2] or noise_cov.shape[1] != noise_cov.shape[2]:
        raise InputError("filter and noise covariance shapes disagree")
    rn_w = np.einsum("fkl,fl->fk", noise_cov, w)
    denom = np.einsum("fk,fk->f", w.conj(), rn_w).real
    numer = np.sqrt(np.maximum(np.einsum("fk,fk->f", rn_w.conj(), rn_w).real, 0.0))
    degenerate = denom <= 0
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} bins had degenerate BAN denominators; gain set to 1",
            stacklevel=2,
        )
    gain = np.where(degenerate, 1.0, numer / np.where(degenerate, 1.0, denom))
    return signal.with_data(signal.data * gain[:, None, None])


def tf_mask_postfilter(signal: Spectrogram, mask: np.ndarray, floor: float) -> Spectrogram:
    """Apply the target mask with a lower bound on the gain.

    ``floor`` = 1 disables masking entirely; the default pipeline setting is
    -9 dB, about 0.355.
    """
    if not 0.0 <= floor <= 1.0:
        raise InputError(f"mask floor must lie in [0, 1], got {floor}")
    mask = np.asarray(mask, dtype=np.float64)
    if signal.n_channels != 1:
        raise InputError("mask post-filter expects a single-channel spectrogram")
    if mask.shape != signal.data.shape[:2]:
        raise InputError(
            f"mask shape {mask.shape} does not match signal {signal.data.shape[:2]}"
        )
    gain = np.maximum(mask, floor)
    return signal.with_data(signal.data * gain[:, :, None])


def db_to_gain(db: float) -> float:
    return float(10.0 ** (db / 20.0))


class MwfBeamformer(BaseEstimator):
    """Estimator bundling covariance fitting, filter design, reference
    selection and post-filtering.

    Parameters mirror the pipeline defaults: spatial-prediction weighting,
    gamma 0, BAN off, mask floor -9 dB.
    """

    def __init__(self, kind="sp-mwf", gamma=0.0, ban=False, mask_floor_db=-9.0):
        self.kind = kind
        self.gamma = gamma
        self.ban = ban
        self.mask_floor_db = mask_floor_db

    def fit(self, spec: Spectrogram, masks: TfMaskSet, target: int = 0, frames=None):
        self.covariances_ = covariances_from_masks(spec, masks, target, frames)
        self.bank_ = compute_beamformer(self.covariances_, self.kind, self.gamma)
        self.reference_mic_ = select_reference_mic(self.bank_, self.covariances_)
        self._target_mask = masks.source(target)
        return self

    def transform(self, spec: Spectrogram, frames=None) -> Spectrogram:
        out = apply_beamformer(_slice_frames(spec, frames), self.bank_, self.reference_mic_)
        if self.ban:
            out = ban_postfilter(
                out, self.bank_.column(self.reference_mic_), self.covariances_.noise
            )
        floor = db_to_gain(self.mask_floor_db) if self.mask_floor_db is not None else 1.0
        mask = self._target_mask if frames is None else self._target_mask[:, frames]
        return tf_mask_postfilter(out, mask, min(floor, 1.0))

    def fit_transform(self, spec: Spectrogram, masks: TfMaskSet, target: int = 0, frames=None):
        return self.fit(spec, masks, target, frames).transform(spec, frames)


def _slice_frames(spec: Spectrogram, frames) -> Spectrogram:
    if frames is None:
        return spec
    return spec.with_data(spec.data[:, frames, :])
