"""Timed speaker segments: the exchange type between diarization, fusion and scoring.

A segment list is a plain list of :class:`Segment`; helpers here keep the
lists sorted, positive-length and non-overlapping per speaker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True, order=True)
class Segment:
    speaker: str
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise InputError(f"segment must have positive length: {self}")

    @property
    def duration(self) -> float:
        return self.end - self.start


def sort_segments(segments: list[Segment]) -> list[Segment]:
    return sorted(segments, key=lambda s: (s.start, s.end, s.speaker))


def speakers_of(segments: list[Segment]) -> list[str]:
    return sorted({s.speaker for s in segments})


def total_duration(segments: list[Segment]) -> float:
    return float(sum(s.duration for s in segments))


def merge_overlaps(segments: list[Segment]) -> list[Segment]:
    """Union per-speaker intervals so each speaker's segments are disjoint."""
    out: list[Segment] = []
    for spk in speakers_of(segments):
        spans = sorted((s.start, s.end) for s in segments if s.speaker == spk)
        cur_start, cur_end = spans[0]
        for start, end in spans[1:]:
            if start <= cur_end:
                cur_end = max(cur_end, end)
            else:
                out.append(Segment(spk, cur_start, cur_end))
                cur_start, cur_end = start, end
        out.append(Segment(spk, cur_start, cur_end))
    return sort_segments(out)


def pad_segments(
    segments: list[Segment], offset: float, horizon: float | None = None
) -> list[Segment]:
    """Extend every segment by ``offset`` seconds on both sides, clamped."""
    if offset < 0:
        raise InputError(f"offset must be >= 0, got {offset}")
    padded = []
    for s in segments:
        start = max(0.0, s.start - offset)
        end = s.end + offset if horizon is None else min(horizon, s.end + offset)
        padded.append(Segment(s.speaker, start, end))
    return merge_overlaps(padded)


def fill_short_gaps(segments: list[Segment], max_gap: float) -> list[Segment]:
    """Join consecutive same-speaker segments whose gap is shorter than ``max_gap``."""
    if max_gap < 0:
        raise InputError(f"max_gap must be >= 0, got {max_gap}")
    out: list[Segment] = []
    for spk in speakers_of(segments):
        spans = sorted((s.start, s.end) for s in segments if s.speaker == spk)
        cur_start, cur_end = spans[0]
        for start, end in spans[1:]:
            if start - cur_end < max_gap:
                cur_end = max(cur_end, end)
            else:
                out.append(Segment(spk, cur_start, cur_end))
                cur_start, cur_end = start, end
        out.append(Segment(spk, cur_start, cur_end))
    return sort_segments(out)


def segments_from_frames(
    active: np.ndarray, frame_rate: float, speaker: str
) -> list[Segment]:
    """Turn a boolean frame sequence into segments at frame-boundary times."""
    active = np.asarray(active, dtype=bool)
    if active.ndim != 1:
        raise InputError("expected a 1-D frame activity sequence")
    edges = np.flatnonzero(np.diff(np.concatenate(([False], active, [False]))))
    starts, ends = edges[0::2], edges[1::2]
    return [
        Segment(speaker, round(s / frame_rate, 6), round(e / frame_rate, 6))
        for s, e in zip(starts, ends)
    ]


def rasterize_segments(
    segments: list[Segment],
    resolution: float,
    horizon: float | None = None,
    speakers: list[str] | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Sample segments onto a regular grid.

    Returns a boolean matrix (speakers, frames) plus the speaker order. A
    frame is active when its center falls inside a segment.
    """
    if resolution <= 0:
        raise InputError(f"resolution must be positive, got {resolution}")
    speakers = speakers if speakers is not None else speakers_of(segments)
    if horizon is None:
        horizon = max((s.end for s in segments), default=0.0)
    n_frames = int(np.ceil(horizon / resolution - 1e-9))
    grid = np.zeros((len(speakers), n_frames), dtype=bool)
    index = {spk: i for i, spk in enumerate(speakers)}
    centers = (np.arange(n_frames) + 0.5) * resolution
    for seg in segments:
        if seg.speaker not in index:
            continue
        row = index[seg.speaker]
        grid[row] |= (centers >= seg.start) & (centers < seg.end)
    return grid, speakers


def segments_from_grid(
    grid: np.ndarray, resolution: float, speakers: list[str]
) -> list[Segment]:
    """Inverse of :func:`rasterize_segments` (up to grid quantization)."""
    out: list[Segment] = []
    for row, spk in zip(np.asarray(grid, dtype=bool), speakers):
        out.extend(segments_from_frames(row, 1.0 / resolution, spk))
    return sort_segments(out)


def validate_segments(segments: list[Segment]) -> None:
    """Assert per-speaker sortedness and non-overlap; raises on violation."""
    for spk in speakers_of(segments):
        spans = sorted((s.start, s.end) for s in segments if s.speaker == spk)
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise InputError(f"overlapping segments for speaker {spk!r}")
