"""Assembling a recording-level diarization from chunk-wise speaker posteriors.

Chunks carry a small fixed number of local speaker slots; embeddings of those
slots are clustered into global speakers under the constraint that two slots
of the same chunk must not share a cluster. Stitching then lays the chunk
posteriors onto the global timeline and post-processing turns activity into
utterance boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.cluster import KMeans

from .errors import InputError
from .segments import Segment, fill_short_gaps, pad_segments, segments_from_frames, sort_segments
from .validation import check_unit_interval

logger = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass
class ChunkSegmentation:
    """Per-chunk local speaker activity posteriors.

    posteriors: (n_chunks, n_local_speakers, frames_per_chunk) in [0, 1].
    """

    posteriors: np.ndarray
    frame_rate: float
    chunk_len: float

    def __post_init__(self):
        self.posteriors = check_unit_interval(self.posteriors, "posteriors")
        if self.posteriors.ndim != 3:
            raise InputError(
                f"posteriors must be (chunks, local speakers, frames), got "
                f"{self.posteriors.shape}"
            )
        if self.frame_rate <= 0 or self.chunk_len <= 0:
            raise InputError("frame_rate and chunk_len must be positive")

    @property
    def n_chunks(self) -> int:
        return self.posteriors.shape[0]

    @property
    def n_local_speakers(self) -> int:
        return self.posteriors.shape[1]

    @property
    def frames_per_chunk(self) -> int:
        return self.posteriors.shape[2]


def single_speaker_mask(
    segmentation: ChunkSegmentation, chunk: int, speaker: int, threshold: float = 0.5
) -> np.ndarray:
    """Frames where exactly this speaker is active: its posterior reaches the
    threshold and every other local speaker stays below it."""
    post = segmentation.posteriors
    if not 0 <= chunk < segmentation.n_chunks:
        raise InputError(f"chunk {chunk} out of range")
    if not 0 <= speaker < segmentation.n_local_speakers:
        raise InputError(f"local speaker {speaker} out of range")
    own = post[chunk, speaker] >= threshold
    others = np.delete(post[chunk], speaker, axis=0)
    return own & np.all(others < threshold, axis=0)


class ConstrainedSpectralClustering(ClusterMixin, BaseEstimator):
    """Spectral clustering with cannot-link groups.

    Affinity is ``exp(-gamma * (1 - cosine))`` (an RBF on cosine distance;
    switchable to the squared-distance reading). The spectral embedding
    follows the symmetric-normalization recipe: top eigenvectors of the
    normalized affinity, rows renormalized, then k-means. Duplicate
    assignments inside a cannot-link group are repaired greedily: the member
    closest to the contested centroid keeps it, the others move to their next
    nearest free centroid while any remain.
    """

    def __init__(self, n_clusters=2, gamma=1.0, kernel="cos", random_state=0):
        self.n_clusters = n_clusters
        self.gamma = gamma
        self.kernel = kernel
        self.random_state = random_state

    def fit(self, X, groups=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise InputError(f"X must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        if self.n_clusters < 1:
            raise InputError("n_clusters must be >= 1")
        if n < self.n_clusters:
            raise InputError(f"{n} embeddings cannot form {self.n_clusters} clusters")
        if self.kernel not in ("cos", "sqdist"):
            raise InputError(f"unknown kernel {self.kernel!r}")
        if self.n_clusters == 1:
            self.labels_ = np.zeros(n, dtype=int)
            return self

        normed = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), _EPS)
        cos = np.clip(normed @ normed.T, -1.0, 1.0)
        distance = 1.0 - cos
        if self.kernel == "cos":
            affinity = np.exp(-self.gamma * distance)
        else:
            affinity = np.exp(-self.gamma * distance**2)

        embedding = self._spectral_embedding(affinity, self.n_clusters)
        km = KMeans(
            n_clusters=self.n_clusters, n_init=10, random_state=self.random_state
        ).fit(embedding)
        labels = km.labels_.astype(int)
        if groups is not None:
            groups = np.asarray(groups)
            if groups.shape != (n,):
                raise InputError("one cannot-link group id per sample required")
            labels = self._repair_cannot_link(embedding, km.cluster_centers_, labels, groups)
        self.labels_ = labels
        return self

    def fit_predict(self, X, groups=None) -> np.ndarray:
        return self.fit(X, groups=groups).labels_

    @staticmethod
    def _spectral_embedding(affinity: np.ndarray, k: int) -> np.ndarray:
        degree = np.maximum(affinity.sum(axis=1), _EPS)
        scale = 1.0 / np.sqrt(degree)
        normalized = affinity * scale[:, None] * scale[None, :]
        eigenvalues, eigenvectors = np.linalg.eigh(normalized)
        top = eigenvectors[:, -k:]
        norms = np.maximum(np.linalg.norm(top, axis=1, keepdims=True), _EPS)
        return top / norms

    @staticmethod
    def _repair_cannot_link(points, centers, labels, groups) -> np.ndarray:
        labels = labels.copy()
        for group in np.unique(groups):
            members = np.flatnonzero(groups == group)
            if len(members) <= 1:
                continue
            dist = np.linalg.norm(points[members][:, None, :] - centers[None], axis=2)
            order = np.argsort(dist.min(axis=1), kind="stable")
            taken: set[int] = set()
            for pos in order:
                idx = members[pos]
                prefs = np.argsort(dist[pos], kind="stable")
                chosen = next((int(c) for c in prefs if c not in taken), None)
                if chosen is None:
                    # more members than clusters: keep the nearest assignment
                    chosen = int(prefs[0])
                else:
                    taken.add(chosen)
                labels[idx] = chosen
        return labels


def stitch(
    segmentation: ChunkSegmentation,
    assignment: dict[tuple[int, int], int],
    n_speakers: int,
) -> np.ndarray:
    """Lay chunk posteriors onto the global timeline per cluster assignment.

    Where two local slots of the same cluster overlap in time the maximum
    posterior wins. Returns (n_speakers, total_frames).
    """
    if n_speakers < 1:
        raise InputError("n_speakers must be >= 1")
    frames = segmentation.frames_per_chunk
    total = segmentation.n_chunks * frames
    out = np.zeros((n_speakers, total))
    for (chunk, local), cluster in assignment.items():
        if not 0 <= cluster < n_speakers:
            raise InputError(f"cluster {cluster} out of range [0, {n_speakers})")
        if not 0 <= chunk < segmentation.n_chunks:
            raise InputError(f"chunk {chunk} out of range")
        if not 0 <= local < segmentation.n_local_speakers:
            raise InputError(f"local speaker {local} out of range")
        span = slice(chunk * frames, (chunk + 1) * frames)
        out[cluster, span] = np.maximum(out[cluster, span], segmentation.posteriors[chunk, local])
    return out


def _speaker_names(n: int) -> list[str]:
    return [f"spk{c:02d}" for c in range(n)]


def postprocess_median(
    activity: np.ndarray,
    frame_rate: float,
    threshold: float = 0.5,
    kernel: int = 25,
    speakers: list[str] | None = None,
) -> list[Segment]:
    """Median-smooth each speaker's activity, binarize, extract segments."""
    activity = check_unit_interval(activity, "activity")
    if activity.ndim != 2:
        raise InputError("activity must be (speakers, frames)")
    if kernel < 1 or kernel % 2 == 0:
        raise InputError(f"median kernel must be odd and >= 1, got {kernel}")
    speakers = speakers or _speaker_names(activity.shape[0])
    segments: list[Segment] = []
    for row, name in zip(activity, speakers):
        smooth = median_filter(row, size=kernel, mode="nearest") if kernel > 1 else row
        segments.extend(segments_from_frames(smooth >= threshold, frame_rate, name))
    return sort_segments(segments)


def postprocess_merge(
    activity: np.ndarray,
    frame_rate: float,
    threshold: float = 0.30,
    offset: float = 0.0,
    merge: float = 1.5,
    speakers: list[str] | None = None,
) -> list[Segment]:
    """Threshold, pad each utterance by an offset, fill short pauses.

    Padding is clamped to the recording span; same-speaker gaps strictly
    shorter than ``merge`` seconds are filled.
    """
    activity = check_unit_interval(activity, "activity")
    if activity.ndim != 2:
        raise InputError("activity must be (speakers, frames)")
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must lie in (0, 1), got {threshold}")
    if offset < 0 or merge < 0:
        raise InputError("offset and merge must be >= 0")
    speakers = speakers or _speaker_names(activity.shape[0])
    horizon = activity.shape[1] / frame_rate
    segments: list[Segment] = []
    for row, name in zip(activity, speakers):
        segs = segments_from_frames(row >= threshold, frame_rate, name)
        if offset > 0:
            segs = pad_segments(segs, offset, horizon=horizon)
        if merge > 0 and segs:
            segs = fill_short_gaps(segs, merge)
        segments.extend(segs)
    return sort_segments(segments)
