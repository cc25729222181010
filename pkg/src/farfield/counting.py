"""Multi-channel speaker counting.

Short-window speaker embeddings are pooled over groups of similar
microphones; each group's count comes from the eigengap of a binarized
affinity graph, and the per-group counts are combined by a weighted average.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .errors import InputError
from .gss import ActivityMatrix
from .stft import StftConfig, WaveformSet, stft
from .micsel import _mel_filterbank

logger = logging.getLogger(__name__)

_EPS = 1e-10


@dataclass
class EmbeddingSet:
    """Embedding vectors with (mic, chunk, subchunk, local speaker) provenance
    and the speech duration each vector was computed from."""

    vectors: np.ndarray
    index: list[tuple]  # (mic, chunk, subchunk, local_speaker)
    durations: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise InputError(f"vectors must be 2-D, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise InputError("embedding vectors contain non-finite entries")
        if len(self.index) != len(self.vectors):
            raise InputError("one index tuple per vector required")
        if self.durations is None:
            self.durations = np.zeros(len(self.vectors))
        self.durations = np.asarray(self.durations, dtype=np.float64)
        if self.durations.shape != (len(self.vectors),):
            raise InputError("one duration per vector required")
        if np.any(self.durations < 0):
            raise InputError("durations must be >= 0")

    def __len__(self) -> int:
        return len(self.vectors)

    def subset(self, keep: np.ndarray) -> "EmbeddingSet":
        keep = np.asarray(keep)
        return EmbeddingSet(
            self.vectors[keep],
            [self.index[i] for i in np.flatnonzero(keep)] if keep.dtype == bool
            else [self.index[i] for i in keep],
            self.durations[keep],
        )

    def mics(self) -> np.ndarray:
        return np.array([entry[0] for entry in self.index], dtype=int)


@dataclass
class MicGroups:
    """Partition of microphone indices plus the similarity matrix behind it."""

    groups: list[list[int]]
    similarity: np.ndarray

    def __post_init__(self):
        seen: set[int] = set()
        for group in self.groups:
            if seen & set(group):
                raise InputError("microphone groups must be disjoint")
            seen.update(group)
        n = self.similarity.shape[0]
        if seen != set(range(n)):
            raise InputError("microphone groups must cover every microphone")


@dataclass
class CountEstimate:
    per_group: list[tuple[int, int]]  # (count, weight = embeddings in group)
    session: int


def split_subchunks(
    activity: ActivityMatrix, chunk_len: float, subchunk_len: float
) -> list[ActivityMatrix]:
    """Slice a chunk's activity into subchunk windows.

    A trailing remainder shorter than ``subchunk_len`` is kept as its own
    subchunk.
    """
    if chunk_len <= 0 or subchunk_len <= 0:
        raise InputError("chunk and subchunk lengths must be positive")
    frames_per = max(1, int(round(subchunk_len * activity.frame_rate)))
    out = []
    for start in range(0, activity.n_frames, frames_per):
        piece = activity.values[:, start : start + frames_per]
        out.append(ActivityMatrix(piece, activity.frame_rate, binary=activity.binary))
    return out


def filter_embeddings(embeddings: EmbeddingSet, t_min: float = 0.75) -> EmbeddingSet:
    """Drop vectors computed from less than ``t_min`` seconds of speech."""
    if t_min < 0:
        raise InputError(f"t_min must be >= 0, got {t_min}")
    return embeddings.subset(embeddings.durations >= t_min)


def mic_similarity(wave: WaveformSet, t_corr: float = 120.0) -> np.ndarray:
    """Pairwise Pearson correlation over the first ``t_corr`` seconds.

    Zero-variance channels get zero off-diagonal similarity and a warning.
    """
    if wave.duration < 1.0:
        raise InputError(f"need at least 1 s of audio, got {wave.duration:.3f} s")
    if t_corr <= 0:
        raise InputError(f"t_corr must be positive, got {t_corr}")
    n = min(wave.n_samples, int(round(t_corr * wave.sample_rate)))
    x = wave.channels[:, :n]
    std = x.std(axis=1)
    degenerate = std <= 0
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} zero-variance channels in similarity computation",
            stacklevel=2,
        )
    centered = x - x.mean(axis=1, keepdims=True)
    denom = np.where(degenerate, 1.0, std) * np.sqrt(n)
    normed = centered / denom[:, None]
    sim = normed @ normed.T
    sim[degenerate, :] = 0.0
    sim[:, degenerate] = 0.0
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)


def group_microphones(similarity: np.ndarray, theta_mic: float = 0.05) -> MicGroups:
    """Agglomerate microphones on distance 1 - similarity with Ward linkage,
    cutting the dendrogram where cluster similarity drops below ``theta_mic``."""
    similarity = np.asarray(similarity, dtype=np.float64)
    if similarity.ndim != 2 or similarity.shape[0] != similarity.shape[1]:
        raise InputError(f"similarity must be square, got {similarity.shape}")
    if not np.allclose(similarity, similarity.T, atol=1e-9):
        raise InputError("similarity matrix must be symmetric")
    n = similarity.shape[0]
    if n == 1:
        return MicGroups(groups=[[0]], similarity=similarity)
    distance = 1.0 - similarity
    np.fill_diagonal(distance, 0.0)
    tree = linkage(squareform(distance, checks=False), method="ward")
    labels = fcluster(tree, t=1.0 - theta_mic, criterion="distance")
    groups = [sorted(np.flatnonzero(labels == lab)) for lab in np.unique(labels)]
    groups = [[int(m) for m in g] for g in sorted(groups, key=lambda g: g[0])]
    return MicGroups(groups=groups, similarity=similarity)


def nme_count(
    embeddings: EmbeddingSet | np.ndarray,
    p_max_divisor: int = 10,
    max_speakers: int = 16,
    zero_tol: float = 0.1,
) -> int:
    """Cluster count from the normalized maximum eigengap of a binarized
    cosine-affinity graph.

    For each neighbor count p up to ``n // p_max_divisor``: binarize the
    affinity matrix to each row's top p entries, symmetrize by maximum, take
    the unnormalized graph Laplacian and its ascending eigenvalues. Candidate
    counts are the eigengap positions inside the near-null space (eigenvalue
    below ``zero_tol`` of the spectral radius, since k clusters show up as k
    near-zero eigenvalues); the count at the p whose normalized gap ratio is
    smallest wins.
    """
    vectors = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else embeddings
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if n < 2:
        raise InputError(f"need at least 2 embeddings to count, got {n}")
    normed = vectors / np.maximum(np.linalg.norm(vectors, axis=1, keepdims=True), _EPS)
    affinity = normed @ normed.T

    best_ratio = np.inf
    best_count = 1
    for p in range(1, max(1, n // p_max_divisor) + 1):
        top = np.argsort(-affinity, axis=1, kind="stable")[:, :p]
        binary = np.zeros_like(affinity)
        np.put_along_axis(binary, top, 1.0, axis=1)
        binary = np.maximum(binary, binary.T)
        np.fill_diagonal(binary, 0.0)
        laplacian = np.diag(binary.sum(axis=1)) - binary
        eigenvalues = np.linalg.eigvalsh(laplacian)
        spectral_radius = max(eigenvalues[-1], _EPS)
        gaps = np.diff(eigenvalues)
        k_max = min(n - 1, max_speakers)
        candidates = np.flatnonzero(eigenvalues[:k_max] <= zero_tol * spectral_radius)
        count = int(candidates[np.argmax(gaps[candidates])]) + 1
        ratio = (p / n) / (gaps[candidates].max() / spectral_radius + _EPS)
        if ratio < best_ratio:
            best_ratio = ratio
            best_count = count
    return best_count


def aggregate_counts(per_group: list[tuple[int, int]]) -> int:
    """Weighted average of group counts, rounded half away from zero."""
    if not per_group:
        raise InputError("no group counts to aggregate")
    counts = np.array([c for c, _ in per_group], dtype=np.float64)
    weights = np.array([w for _, w in per_group], dtype=np.float64)
    if np.any(weights <= 0):
        raise InputError("group weights must be positive")
    mean = float(np.sum(weights * counts) / np.sum(weights))
    return int(np.floor(mean + 0.5)) if mean >= 0 else -int(np.floor(-mean + 0.5))


def count_speakers_session(
    wave: WaveformSet,
    embeddings: EmbeddingSet,
    t_min: float = 0.75,
    theta_mic: float = 0.05,
    t_corr: float = 120.0,
) -> CountEstimate:
    """Full counting path: filter embeddings, group microphones by signal
    similarity, count per group, aggregate.

    Groups with fewer than two usable embeddings contribute a count of one.
    """
    kept = filter_embeddings(embeddings, t_min)
    if len(kept) == 0:
        raise InputError("no embeddings left after duration filtering")
    groups = group_microphones(mic_similarity(wave, t_corr), theta_mic)
    mics = kept.mics()
    per_group = []
    for group in groups.groups:
        member = np.isin(mics, group)
        weight = int(member.sum())
        if weight == 0:
            continue
        subset = kept.subset(member)
        count = 1 if len(subset) < 2 else nme_count(subset)
        per_group.append((count, weight))
    if not per_group:
        raise InputError("no microphone group has any embeddings")
    return CountEstimate(per_group=per_group, session=aggregate_counts(per_group))


def logmel_embedding(
    wave: np.ndarray, sample_rate: int, n_bands: int = 40
) -> np.ndarray:
    """Deterministic 80-dim stand-in embedding: per-band log-mel mean and std.

    Stub extractor so the counting and clustering paths can run end to end
    without a neural embedding model; not a speaker-recognition feature.
    """
    x = np.asarray(wave, dtype=np.float64).reshape(1, -1)
    window = max(2, min(400, x.shape[1]) // 2 * 2)  # even so half-hop is COLA
    cfg = StftConfig(window_length=window, hop=window // 2, fft_size=window, window="rect")
    spec = stft(WaveformSet(x, sample_rate), cfg)
    power = np.abs(spec.data[:, :, 0]) ** 2  # (bins, frames)
    bank = _mel_filterbank(n_bands, spec.n_bins, sample_rate)
    logmel = np.log(np.maximum(bank @ power, 1e-12))  # (bands, frames)
    return np.concatenate([logmel.mean(axis=1), logmel.std(axis=1)])
