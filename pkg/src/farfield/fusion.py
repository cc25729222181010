"""Combining per-microphone diarization hypotheses into one.

Hypotheses are rasterized onto a common frame grid, speaker labels are
aligned to the first input with the Hungarian algorithm on overlap durations,
and frames are fused by majority vote (ties count as active, since downstream
recognition tolerates false alarms better than missed speech).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError
from .segments import Segment, rasterize_segments, segments_from_grid

logger = logging.getLogger(__name__)


@dataclass
class FrameGrid:
    """Binary speaker-by-frame activity at a fixed resolution."""

    activity: np.ndarray  # (speakers, frames) bool
    speakers: list[str]
    resolution: float

    def __post_init__(self):
        self.activity = np.asarray(self.activity, dtype=bool)
        if self.activity.ndim != 2 or self.activity.shape[0] != len(self.speakers):
            raise InputError("one activity row per speaker required")
        if self.resolution <= 0:
            raise InputError("resolution must be positive")


def _common_horizon(inputs: list[list[Segment]]) -> float:
    return max((seg.end for segments in inputs for seg in segments), default=0.0)


def rasterize_inputs(
    inputs: list[list[Segment]], resolution: float = 0.01
) -> list[FrameGrid]:
    horizon = _common_horizon(inputs)
    grids = []
    for segments in inputs:
        act, spk = rasterize_segments(segments, resolution, horizon=horizon)
        grids.append(FrameGrid(act, spk, resolution))
    return grids


def align_speakers(inputs: list[list[Segment]], resolution: float = 0.01) -> list[dict]:
    """Label mapping per input onto the first input's label space.

    Later inputs are matched against the accumulated activity of all labels
    aligned so far (maximum total overlap, Hungarian). Labels whose best
    match has zero overlap get fresh global labels instead.
    """
    if not inputs:
        raise InputError("need at least one diarization input")
    grids = rasterize_inputs(inputs, resolution)
    n_frames = grids[0].activity.shape[1] if grids else 0

    def fresh(base: str, existing: list[str]) -> str:
        label = base
        while label in existing:
            label += "*"
        return label

    mappings: list[dict] = []
    global_labels: list[str] = []
    accumulated = np.zeros((0, n_frames))

    for position, grid in enumerate(grids):
        matched_cols: dict[int, str] = {}
        if position == 0:
            matched_cols = dict(enumerate(grid.speakers))
        elif global_labels:
            overlap = accumulated @ grid.activity.T.astype(float)  # (global, input)
            rows, cols = linear_sum_assignment(-overlap)
            for r, c in zip(rows, cols):
                if overlap[r, c] > 0:
                    matched_cols[c] = global_labels[r]
        mapping: dict[str, str] = {}
        for c, spk in enumerate(grid.speakers):
            label = matched_cols.get(c)
            if label is None:
                label = fresh(spk, global_labels)
            if label not in global_labels:
                global_labels.append(label)
                accumulated = np.vstack([accumulated, np.zeros((1, n_frames))])
            mapping[spk] = label
            accumulated[global_labels.index(label)] += grid.activity[c]
        mappings.append(mapping)
    return mappings


def majority_vote(grids: list[FrameGrid]) -> FrameGrid:
    """Per speaker and frame: active when at least half of the inputs agree."""
    if not grids:
        raise InputError("need at least one grid")
    resolution = grids[0].resolution
    labels = sorted({spk for g in grids for spk in g.speakers})
    n_frames = max(g.activity.shape[1] for g in grids)
    votes = np.zeros((len(labels), n_frames))
    for g in grids:
        if g.resolution != resolution:
            raise InputError("grids must share one resolution")
        for row, spk in zip(g.activity, g.speakers):
            votes[labels.index(spk), : row.size] += row
    fused = votes >= len(grids) / 2.0
    return FrameGrid(fused, labels, resolution)


def fuse(inputs: list[list[Segment]], resolution: float = 0.01) -> list[Segment]:
    """Align every input to the first one, vote, and re-extract segments."""
    if not inputs:
        raise InputError("need at least one diarization input")
    mappings = align_speakers(inputs, resolution)
    grids = rasterize_inputs(inputs, resolution)
    renamed = []
    for grid, mapping in zip(grids, mappings):
        renamed.append(
            FrameGrid(grid.activity, [mapping[s] for s in grid.speakers], resolution)
        )
    fused = majority_vote(renamed)
    return segments_from_grid(fused.activity, resolution, fused.speakers)
