"""File formats: session manifests, WAV audio, DMX1 matrices, RTTM, score files.

DMX1 is the binary matrix interchange format used for activities and
embeddings: one ASCII header line ``DMX1 <rows> <cols> f32`` followed by
row-major little-endian IEEE-754 float32 data.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import yaml
from scipy.io import wavfile

from .errors import InputError
from .segments import Segment, sort_segments
from .stft import WaveformSet

_DMX_MAGIC = b"DMX1"


# ---------------------------------------------------------------------------
# WAV audio


def read_wav(path) -> tuple[np.ndarray, int]:
    """Load a PCM16 or float32 RIFF file as float64 (channels, samples) in [-1, 1]."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing audio file: {path}")
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise InputError(f"unsupported WAV sample format {data.dtype} in {path}")
    if x.ndim == 1:
        x = x[np.newaxis, :]
    else:
        x = x.T
    return x, int(rate)


def write_wav(path, channels: np.ndarray, sample_rate: int) -> None:
    """Write float32 RIFF; data is clipped to [-1, 1]."""
    x = np.asarray(channels, dtype=np.float64)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    x = np.clip(x, -1.0, 1.0).astype(np.float32)
    wavfile.write(Path(path), sample_rate, x.T.squeeze())


# ---------------------------------------------------------------------------
# Session manifest


class SessionManifest:
    """Parsed session description.

    YAML file with keys ``sample_rate`` and ordered list ``channels`` of audio
    paths (relative paths resolve against the manifest directory), plus
    optional ``activities_dir``, ``embeddings_dir``, ``c50_file`` and
    ``activity_frame_rate``.
    """

    def __init__(self, mapping: dict, base_dir: Path, name: str = "session"):
        if "sample_rate" not in mapping:
            raise InputError("manifest is missing 'sample_rate'")
        if not mapping.get("channels"):
            raise InputError("manifest lists zero channels")
        self.name = str(mapping.get("name", name))
        self.sample_rate = int(mapping["sample_rate"])
        self.base_dir = base_dir
        self.channel_paths = [self._resolve(p) for p in mapping["channels"]]
        self.activities_dir = self._resolve_opt(mapping.get("activities_dir"))
        self.embeddings_dir = self._resolve_opt(mapping.get("embeddings_dir"))
        self.c50_file = self._resolve_opt(mapping.get("c50_file"))
        self.activity_frame_rate = (
            float(mapping["activity_frame_rate"])
            if "activity_frame_rate" in mapping
            else None
        )

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def _resolve_opt(self, p):
        return None if p is None else self._resolve(p)


def load_manifest(path) -> SessionManifest:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing manifest: {path}")
    with open(path) as fh:
        mapping = yaml.safe_load(fh)
    if not isinstance(mapping, dict):
        raise InputError(f"manifest {path} is not a mapping")
    return SessionManifest(mapping, path.parent, name=path.stem)


def read_session(manifest_path) -> WaveformSet:
    """Load all channels listed in a manifest into one synchronized set.

    All files must share the manifest sample rate. Channels of unequal length
    are truncated to the shortest and a warning is emitted.
    """
    manifest = load_manifest(manifest_path)
    channels: list[np.ndarray] = []
    ids: list[str] = []
    for p in manifest.channel_paths:
        x, rate = read_wav(p)
        if rate != manifest.sample_rate:
            raise InputError(
                f"sample-rate mismatch: {p} has {rate} Hz, manifest says "
                f"{manifest.sample_rate} Hz"
            )
        channels.extend(x)
        if x.shape[0] == 1:
            ids.append(p.stem)
        else:
            ids.extend(f"{p.stem}.{k}" for k in range(x.shape[0]))
    lengths = {c.shape[0] for c in channels}
    if len(lengths) > 1:
        shortest = min(lengths)
        warnings.warn(
            f"channels differ in length {sorted(lengths)}; truncating to {shortest}",
            stacklevel=2,
        )
        channels = [c[:shortest] for c in channels]
    return WaveformSet(np.stack(channels), manifest.sample_rate, ids)


# ---------------------------------------------------------------------------
# DMX1 matrices


def write_dmx(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise InputError(f"DMX1 stores 2-D matrices, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(f"DMX1 {m.shape[0]} {m.shape[1]} f32\n".encode("ascii"))
        fh.write(m.tobytes(order="C"))


def read_dmx(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing matrix file: {path}")
    with open(path, "rb") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 4 or parts[0] != _DMX_MAGIC or parts[3] != b"f32":
            raise InputError(f"bad DMX1 header in {path}: {header!r}")
        rows, cols = int(parts[1]), int(parts[2])
        payload = fh.read(rows * cols * 4)
    if len(payload) != rows * cols * 4:
        raise InputError(f"truncated DMX1 payload in {path}")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)


# ---------------------------------------------------------------------------
# RTTM segments


def write_rttm(path, segments: list[Segment], session: str) -> None:
    with open(path, "w") as fh:
        for seg in sort_segments(segments):
            fh.write(
                f"SPEAKER {session} 1 {seg.start:.3f} {seg.duration:.3f} "
                f"<NA> <NA> {seg.speaker} <NA> <NA>\n"
            )


def read_rttm(path) -> list[Segment]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing RTTM file: {path}")
    segments = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith(";"):
                continue
            parts = line.split()
            if len(parts) < 8 or parts[0] != "SPEAKER":
                raise InputError(f"{path}:{lineno}: not an RTTM SPEAKER line")
            start, dur = float(parts[3]), float(parts[4])
            if dur <= 0:
                continue
            segments.append(Segment(parts[7], start, start + dur))
    return sort_segments(segments)


# ---------------------------------------------------------------------------
# Per-microphone score files


def read_c50(path) -> dict[str, float]:
    """One ``mic_id value_dB`` pair per line."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing C50 file: {path}")
    scores: dict[str, float] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'mic_id value_dB'")
            scores[parts[0]] = float(parts[1])
    return scores


def write_c50(path, scores: dict[str, float]) -> None:
    with open(path, "w") as fh:
        for mic, value in scores.items():
            fh.write(f"{mic} {value:.3f}\n")


# ---------------------------------------------------------------------------
# Embedding files: DMX1 vectors plus a sidecar index


def write_embeddings(path_prefix, vectors: np.ndarray, index: list[tuple]) -> None:
    """Store vectors as ``<prefix>.dmx`` and rows of
    ``mic chunk subchunk local_speaker duration`` as ``<prefix>.idx``.

    Chunk-level embeddings (used for clustering) carry subchunk -1; subchunk
    rows >= 0 are the short-window embeddings used for speaker counting.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(index):
        raise InputError("one index row per embedding vector required")
    prefix = Path(path_prefix)
    write_dmx(prefix.with_suffix(".dmx"), vectors)
    with open(prefix.with_suffix(".idx"), "w") as fh:
        for mic, chunk, subchunk, local_speaker, duration in index:
            fh.write(f"{mic} {chunk} {subchunk} {local_speaker} {duration:.3f}\n")


def read_embeddings(path_prefix) -> tuple[np.ndarray, list[tuple]]:
    prefix = Path(path_prefix)
    dmx, idx = prefix.with_suffix(".dmx"), prefix.with_suffix(".idx")
    if not idx.is_file():
        raise InputError(f"missing embedding index file: {idx}")
    vectors = read_dmx(dmx)
    index = []
    with open(idx) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise InputError(
                    f"{idx}:{lineno}: expected 'mic chunk subchunk local_speaker duration'"
                )
            index.append(
                (int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]))
            )
    if len(index) != vectors.shape[0]:
        raise InputError(f"{idx}: row count does not match {dmx}")
    return vectors, index


# ---------------------------------------------------------------------------
# Line-oriented reports


def write_report(path, values: dict) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(values))


def format_report(values: dict) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            lines.append(f"{key} {value:.6f}")
        else:
            lines.append(f"{key} {value}")
    return "\n".join(lines) + "\n"
