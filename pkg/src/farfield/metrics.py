"""Diarization and counting evaluation.

DER follows the md-eval conventions: overlap-aware frame scoring, a collar
excised around every reference boundary, and the reference/hypothesis speaker
mapping chosen by the Hungarian algorithm to maximize attributed overlap.
Times are quantized to 1 ms frames for scoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError
from .segments import Segment, rasterize_segments

logger = logging.getLogger(__name__)

_FRAME = 0.001


@dataclass(frozen=True)
class DerReport:
    miss: float
    false_alarm: float
    confusion: float
    der: float
    collar: float

    def as_dict(self) -> dict:
        return {
            "miss": self.miss,
            "false_alarm": self.false_alarm,
            "confusion": self.confusion,
            "der": self.der,
            "collar": self.collar,
        }


@dataclass(frozen=True)
class CountReport:
    sca: float  # percent of sessions with the exact count
    sce: float  # mean absolute count error

    def as_dict(self) -> dict:
        return {"sca": self.sca, "sce": self.sce}


def der(
    ref: list[Segment], hyp: list[Segment], collar: float = 0.25, frame: float = _FRAME
) -> DerReport:
    """Diarization error rate with miss / false-alarm / confusion breakdown.

    All components are fractions of the scored reference speech time, so they
    sum exactly to the DER.
    """
    if not ref:
        raise InputError("empty reference")
    if collar < 0:
        raise InputError("collar must be >= 0")
    horizon = max(
        max(s.end for s in ref), max((s.end for s in hyp), default=0.0)
    ) + frame

    ref_grid, _ = rasterize_segments(ref, frame, horizon=horizon)
    hyp_grid, _ = rasterize_segments(hyp, frame, horizon=horizon)
    n_frames = ref_grid.shape[1]

    if collar > 0:
        centers = (np.arange(n_frames) + 0.5) * frame
        keep = np.ones(n_frames, dtype=bool)
        for seg in ref:
            for boundary in (seg.start, seg.end):
                keep &= ~(np.abs(centers - boundary) < collar)
        ref_grid = ref_grid[:, keep]
        hyp_grid = hyp_grid[:, keep]

    ref_counts = ref_grid.sum(axis=0)
    hyp_counts = hyp_grid.sum(axis=0)
    total_ref = float(ref_counts.sum())
    if total_ref <= 0:
        raise InputError("reference has no scored speech (collar removed everything)")

    # optimal speaker mapping on scored frames
    overlap = (ref_grid[:, None, :] & hyp_grid[None, :, :]).sum(axis=2).astype(float)
    rows, cols = linear_sum_assignment(-overlap)
    correct_pairs = [(r, c) for r, c in zip(rows, cols) if overlap[r, c] > 0]
    if correct_pairs:
        matched = np.array(
            [ref_grid[r] & hyp_grid[c] for r, c in correct_pairs]
        ).sum(axis=0)
    else:
        matched = np.zeros(ref_grid.shape[1], dtype=int)

    miss = np.maximum(ref_counts - hyp_counts, 0).sum()
    false_alarm = np.maximum(hyp_counts - ref_counts, 0).sum()
    confusion = (np.minimum(ref_counts, hyp_counts) - matched).clip(min=0).sum()

    return DerReport(
        miss=float(miss) / total_ref,
        false_alarm=float(false_alarm) / total_ref,
        confusion=float(confusion) / total_ref,
        der=float(miss + false_alarm + confusion) / total_ref,
        collar=collar,
    )


def count_metrics(ref_counts: list[int], hyp_counts: list[int]) -> CountReport:
    """Exact-match percentage and mean absolute error of speaker counts."""
    if len(ref_counts) != len(hyp_counts):
        raise InputError(
            f"count lists differ in length: {len(ref_counts)} vs {len(hyp_counts)}"
        )
    if not ref_counts:
        raise InputError("empty count lists")
    ref_arr = np.asarray(ref_counts, dtype=np.float64)
    hyp_arr = np.asarray(hyp_counts, dtype=np.float64)
    exact = float(np.mean(ref_arr == hyp_arr) * 100.0)
    return CountReport(sca=exact, sce=float(np.mean(np.abs(ref_arr - hyp_arr))))
