"""Input validation helpers used by the estimators and functional API."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def check_waveforms(channels, *, min_samples: int = 1) -> np.ndarray:
    """Coerce to a finite float64 array of shape (channels, samples)."""
    try:
        x = np.asarray(channels, dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise InputError(f"waveform channels are not rectangular numeric data: {err}")
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2:
        raise InputError(f"expected 1-D or 2-D waveform data, got ndim={x.ndim}")
    if x.shape[0] == 0:
        raise InputError("zero channels")
    if x.shape[1] < min_samples:
        raise InputError(
            f"signal too short: {x.shape[1]} samples, need at least {min_samples}"
        )
    if not np.all(np.isfinite(x)):
        raise InputError("waveform contains non-finite samples")
    return x


def check_complex_tensor(data, name: str = "data") -> np.ndarray:
    """Coerce to a finite complex128 array."""
    x = np.asarray(data, dtype=np.complex128)
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite entries")
    return x


def check_unit_interval(values, name: str = "values") -> np.ndarray:
    """Coerce to float64 and require every entry to lie in [0, 1]."""
    x = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite entries")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise InputError(f"{name} must lie in [0, 1]")
    return x


def check_square(mat, name: str = "matrix") -> np.ndarray:
    x = np.asarray(mat, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise InputError(f"{name} must be square, got shape {x.shape}")
    return x


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise InputError(f"{name} must be positive, got {value}")
    return float(value)


def check_nonnegative(value: float, name: str) -> float:
    if value < 0:
        raise InputError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_mic_index(index: int, n_channels: int) -> int:
    index = int(index)
    if not 0 <= index < n_channels:
        raise InputError(f"microphone index {index} out of range [0, {n_channels})")
    return index
