"""End-to-end orchestration of the enhancement and diarization paths.

Two enhancement flows share the same machinery:

* utterance-wise: microphone subset selection, context expansion,
  dereverberation, guided mask estimation over the expanded span, then
  beamforming and post-filtering restricted to the original segment;
* chunk-wise (feeding embedding extraction): all microphones, no context, one
  guided separation per microphone's own activity estimate, no post-filtering.

The diarization assembly path counts speakers, clusters chunk embeddings per
microphone under cannot-link constraints, stitches, post-processes and fuses.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .beamforming import MwfBeamformer
from .counting import CountEstimate, EmbeddingSet, count_speakers_session
from .diarization import (
    ChunkSegmentation,
    ConstrainedSpectralClustering,
    postprocess_median,
    stitch,
)
from .errors import InputError
from .fusion import fuse
from .gss import GssMaskEstimator, expand_segment
from .io import write_c50, write_dmx, write_embeddings, write_rttm, write_wav
from .micsel import envelope_variance, select_mics_ev_c50, select_topk_ev
from .segments import Segment, fill_short_gaps, pad_segments, speakers_of
from .stft import StftConfig, WaveformSet, istft, stft
from .wpe import wpe_dereverberate

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class WpeSettings:
    enabled: bool = True
    taps: int = 10
    delay: int = 2
    iterations: int = 3
    regularization: float = 1e-10


@dataclass
class GssSettings:
    iterations: int = 20


@dataclass
class BeamformerSettings:
    kind: str = "sp-mwf"
    gamma: float = 0.0
    ban: bool = False
    mask_floor_db: float = -9.0


@dataclass
class SelectionSettings:
    method: str = "ev-c50"
    k_min: int = 15
    ratio_k1: float = 0.65
    baseline_ratio: float = 0.8


@dataclass
class CountingSettings:
    subchunk_len: float = 15.0
    t_min: float = 0.75
    theta_mic: float = 0.05
    t_corr: float = 120.0


@dataclass
class PostprocessSettings:
    # utterance-boundary chain tuned for recognizer input
    threshold: float = 0.30
    offset: float = 0.0
    merge: float = 1.5
    # assembly chain: median smoothing then plain thresholding
    smooth_threshold: float = 0.5
    smooth_kernel: int = 25
    profile: str = "for-asr"  # or "for-gss": thresholding only


@dataclass
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    wpe: WpeSettings = field(default_factory=WpeSettings)
    gss: GssSettings = field(default_factory=GssSettings)
    beamformer: BeamformerSettings = field(default_factory=BeamformerSettings)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    counting: CountingSettings = field(default_factory=CountingSettings)
    postprocessing: PostprocessSettings = field(default_factory=PostprocessSettings)
    context: float = 15.0
    chunk_len: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.context < 0:
            raise InputError("context must be >= 0")
        if self.chunk_len <= 0:
            raise InputError("chunk_len must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, mapping: dict | None) -> "PipelineConfig":
        mapping = dict(mapping or {})
        kwargs = {}
        sub_types = {
            "stft": StftConfig,
            "wpe": WpeSettings,
            "gss": GssSettings,
            "beamformer": BeamformerSettings,
            "selection": SelectionSettings,
            "counting": CountingSettings,
            "postprocessing": PostprocessSettings,
        }
        for key, sub in sub_types.items():
            if key in mapping:
                kwargs[key] = sub(**mapping.pop(key))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        kwargs.update(mapping)
        return cls(**kwargs)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(yaml.safe_load(text))


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing config file: {path}")
    return PipelineConfig.from_yaml(path.read_text())


# ---------------------------------------------------------------------------
# Utterance-wise enhancement


def _activity_at_times(
    boundaries: list[Segment], speakers: list[str], times: np.ndarray
) -> np.ndarray:
    activity = np.zeros((len(speakers), times.size))
    index = {spk: i for i, spk in enumerate(speakers)}
    for seg in boundaries:
        active = (times >= seg.start) & (times < seg.end)
        activity[index[seg.speaker], active] = 1.0
    return activity


def _segment_frames(times: np.ndarray, start: float, end: float) -> np.ndarray:
    mask = (times >= start) & (times < end)
    if not np.any(mask):
        mask = np.zeros_like(mask)
        mask[int(np.argmin(np.abs(times - 0.5 * (start + end))))] = True
    return np.flatnonzero(mask)


def select_microphones(
    wave: WaveformSet, cfg: PipelineConfig, c50: dict[str, float] | None
) -> list[int]:
    """Subset selection for one utterance; falls back to all microphones when
    the span is too short to score."""
    min_samples = int(0.5 * wave.sample_rate)
    if wave.n_samples < max(min_samples, 2 * 400):
        return list(range(wave.n_channels))
    ev = envelope_variance(wave)
    if cfg.selection.method == "ev-topk":
        return select_topk_ev(ev, cfg.selection.baseline_ratio)
    c50_vec = None
    if c50:
        try:
            c50_vec = np.array([c50[cid] for cid in wave.channel_ids])
        except KeyError as missing:
            raise InputError(f"C50 file has no entry for microphone {missing}")
    return select_mics_ev_c50(ev, c50_vec, cfg.selection.k_min, cfg.selection.ratio_k1)


def enhance_utterance(
    wave: WaveformSet,
    boundaries: list[Segment],
    target: tuple[str, int],
    cfg: PipelineConfig | None = None,
    c50: dict[str, float] | None = None,
) -> WaveformSet:
    """Enhance one diarized utterance to a mono waveform covering it.

    ``target`` names a speaker label and the index of the wanted segment in
    that speaker's time-sorted segment list. The diarization of all speakers
    guides the separation.
    """
    cfg = cfg or PipelineConfig()
    speaker, j = target
    own = sorted(
        (s for s in boundaries if s.speaker == speaker), key=lambda s: (s.start, s.end)
    )
    if not own:
        raise InputError(f"no segments for speaker {speaker!r}")
    if not 0 <= j < len(own):
        raise InputError(f"segment index {j} out of range for speaker {speaker!r}")
    segment = own[j]
    if segment.end > wave.duration + 1e-6:
        raise InputError("segment extends past the end of the session")

    # subset selection scores the segment itself; the context expansion only
    # serves the mask estimation afterwards
    selected = select_microphones(
        wave.slice_seconds(segment.start, min(segment.end, wave.duration)), cfg, c50
    )
    start, end = expand_segment(
        (segment.start, min(segment.end, wave.duration)), cfg.context, wave.duration
    )
    cut = wave.select(selected).slice_seconds(start, end)

    spec = stft(cut, cfg.stft)
    if cfg.wpe.enabled:
        spec = wpe_dereverberate(
            spec,
            taps=cfg.wpe.taps,
            delay=cfg.wpe.delay,
            iterations=cfg.wpe.iterations,
            regularization=cfg.wpe.regularization,
        )

    speakers = speakers_of(boundaries)
    times = spec.frame_center_times() + start
    activity = _activity_at_times(boundaries, speakers, times)
    target_idx = speakers.index(speaker)
    # the target must be treated as active on its own segment even if the
    # frame grid sampled no interior point
    frames = _segment_frames(times, segment.start, segment.end)
    activity[target_idx, frames] = 1.0

    if spec.n_channels == 1:
        # nothing to separate spatially: pass the (dereverberated) segment on
        enhanced = spec.with_data(spec.data[:, frames, :])
    else:
        masks = GssMaskEstimator(iterations=cfg.gss.iterations).fit_predict(spec, activity)
        beamformer = MwfBeamformer(
            kind=cfg.beamformer.kind,
            gamma=cfg.beamformer.gamma,
            ban=cfg.beamformer.ban,
            mask_floor_db=cfg.beamformer.mask_floor_db,
        )
        enhanced = beamformer.fit(spec, masks, target=target_idx, frames=frames).transform(
            spec, frames=frames
        )

    mono = istft(enhanced)
    # reconstruction covers [first_frame * hop, ...) of the cut span; trim to
    # the segment itself
    offset_samples = int(round((segment.start - start) * wave.sample_rate))
    first_sample = int(frames[0]) * cfg.stft.hop
    length = max(1, int(round(segment.duration * wave.sample_rate)))
    rel = offset_samples - first_sample
    data = np.zeros((1, length))
    src = mono.channels
    lo = max(0, rel)
    hi = min(src.shape[1], rel + length)
    if hi > lo:
        data[0, lo - rel : hi - rel] = src[0, lo:hi]
    return WaveformSet(data, wave.sample_rate)


# ---------------------------------------------------------------------------
# Chunk-wise enhancement (diarization support path)


def enhance_chunkwise(
    wave: WaveformSet,
    activities_per_mic: list[ChunkSegmentation],
    cfg: PipelineConfig | None = None,
    threshold: float = 0.5,
) -> dict[tuple[int, int, int], np.ndarray]:
    """Per-microphone guided separation of every chunk.

    Every microphone's activity estimate drives its own separation run over
    all channels; no context, no subset selection and no post-filtering (the
    mask floor is forced to 1). Returns mono waveforms keyed by
    (microphone, chunk, local speaker); local speakers with no active frames
    in a chunk are skipped.
    """
    cfg = cfg or PipelineConfig()
    if len(activities_per_mic) != wave.n_channels:
        raise InputError(
            f"need one activity set per microphone: got {len(activities_per_mic)} "
            f"for {wave.n_channels} channels"
        )
    n_chunks = activities_per_mic[0].n_chunks
    chunk_samples = int(round(cfg.chunk_len * wave.sample_rate))

    outputs: dict[tuple[int, int, int], np.ndarray] = {}
    for chunk in range(n_chunks):
        lo = chunk * chunk_samples
        hi = min(wave.n_samples, lo + chunk_samples)
        if hi - lo < cfg.stft.window_length:
            continue
        piece = WaveformSet(wave.channels[:, lo:hi], wave.sample_rate, list(wave.channel_ids))
        spec = stft(piece, cfg.stft)
        if cfg.wpe.enabled:
            spec = wpe_dereverberate(
                spec,
                taps=cfg.wpe.taps,
                delay=cfg.wpe.delay,
                iterations=cfg.wpe.iterations,
                regularization=cfg.wpe.regularization,
            )
        times = spec.frame_center_times()
        for mic, segmentation in enumerate(activities_per_mic):
            if segmentation.n_chunks != n_chunks:
                raise InputError("all microphones must carry the same chunk count")
            binary = segmentation.posteriors[chunk] >= threshold
            idx = np.clip(
                np.floor(times * segmentation.frame_rate).astype(int),
                0,
                segmentation.frames_per_chunk - 1,
            )
            activity = binary[:, idx].astype(float)
            keep = np.flatnonzero(activity.any(axis=1))
            if keep.size == 0:
                continue
            if wave.n_channels == 1:
                # single microphone: no spatial separation, emit the chunk
                for local in keep:
                    outputs[(mic, chunk, int(local))] = istft(
                        spec, length=hi - lo
                    ).channels[0]
                continue
            masks = GssMaskEstimator(iterations=cfg.gss.iterations).fit_predict(
                spec, activity[keep]
            )
            for pos, local in enumerate(keep):
                beamformer = MwfBeamformer(
                    kind=cfg.beamformer.kind,
                    gamma=cfg.beamformer.gamma,
                    ban=False,
                    mask_floor_db=None,  # no masking in this path
                )
                enhanced = beamformer.fit(spec, masks, target=pos).transform(spec)
                outputs[(mic, chunk, int(local))] = istft(
                    enhanced, length=hi - lo
                ).channels[0]
    return outputs


# ---------------------------------------------------------------------------
# Diarization assembly


def run_diarization_assembly(
    wave: WaveformSet,
    posteriors_per_mic: list[ChunkSegmentation],
    embeddings: EmbeddingSet,
    cfg: PipelineConfig | None = None,
    n_speakers: int | None = None,
    n_jobs: int = 1,
) -> tuple[list[list[Segment]], list[Segment], CountEstimate | None]:
    """Counting, per-microphone constrained clustering, stitching and fusion.

    ``embeddings`` holds both chunk-level rows (subchunk -1, used for
    clustering) and subchunk rows (>= 0, used for counting). Returns the
    per-microphone segment lists, the fused list and the count estimate
    (None when ``n_speakers`` overrides counting).
    """
    cfg = cfg or PipelineConfig()
    if len(posteriors_per_mic) != wave.n_channels:
        raise InputError(
            f"need one posterior set per microphone: got {len(posteriors_per_mic)} "
            f"for {wave.n_channels} channels"
        )

    subchunk_rows = np.array([entry[2] >= 0 for entry in embeddings.index])
    chunk_rows = ~subchunk_rows
    estimate = None
    if n_speakers is None:
        counting_set = embeddings.subset(subchunk_rows)
        if len(counting_set) == 0:
            raise InputError("no subchunk embeddings available for counting")
        estimate = count_speakers_session(
            wave,
            counting_set,
            t_min=cfg.counting.t_min,
            theta_mic=cfg.counting.theta_mic,
            t_corr=cfg.counting.t_corr,
        )
        n_speakers = estimate.session
    if n_speakers < 1:
        raise InputError("n_speakers must be >= 1")

    def assemble(mic: int) -> list[Segment]:
        segmentation = posteriors_per_mic[mic]
        rows = chunk_rows & (embeddings.mics() == mic)
        mic_set = embeddings.subset(rows)
        if len(mic_set) == 0:
            raise InputError(f"no chunk embeddings for microphone {mic}")
        clusters = min(n_speakers, len(mic_set))
        if clusters < n_speakers:
            logger.warning(
                "microphone %d has only %d embeddings; clustering into %d",
                mic,
                len(mic_set),
                clusters,
            )
        labels = ConstrainedSpectralClustering(
            n_clusters=clusters, random_state=cfg.seed
        ).fit_predict(
            mic_set.vectors, groups=np.array([e[1] for e in mic_set.index])
        )
        assignment = {
            (entry[1], entry[3]): int(label)
            for entry, label in zip(mic_set.index, labels)
        }
        global_activity = stitch(segmentation, assignment, n_speakers)
        return postprocess_median(
            global_activity,
            segmentation.frame_rate,
            threshold=cfg.postprocessing.smooth_threshold,
            kernel=cfg.postprocessing.smooth_kernel,
        )

    mics = list(range(wave.n_channels))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            per_mic = list(pool.map(assemble, mics))
    else:
        per_mic = [assemble(m) for m in mics]

    fused = fuse(per_mic)
    return per_mic, fused, estimate


def boundaries_for_output(
    segments: list[Segment], cfg: PipelineConfig
) -> list[Segment]:
    """Apply the output-profile post-processing to final segments.

    The recognizer-input profile pads boundaries and fills short pauses; the
    separation profile keeps thresholded boundaries untouched.
    """
    post = cfg.postprocessing
    if post.profile == "for-gss" or not segments:
        return segments
    out = pad_segments(segments, post.offset) if post.offset > 0 else segments
    return fill_short_gaps(out, post.merge) if post.merge > 0 else out


# ---------------------------------------------------------------------------
# Bundled synthetic session (for demos, smoke tests and determinism checks)


def make_speech_like(
    rng: np.random.Generator, n_samples: int, sample_rate: int, tilt: float = 0.0
) -> np.ndarray:
    """Syllabically modulated noise with an optional spectral tilt.

    Non-stationary enough for prediction-based dereverberation and mask
    estimation to behave as they would on speech.
    """
    from scipy.signal import lfilter

    carrier = rng.standard_normal(n_samples)
    if tilt > 0:  # emphasize lows: leaky integration
        carrier = lfilter([1.0], [1.0, -tilt], carrier)
    elif tilt < 0:  # emphasize highs: first difference
        carrier = np.diff(carrier, prepend=0.0)
    envelope = 0.55 + 0.45 * np.sin(
        2 * np.pi * 3.1 * np.arange(n_samples) / sample_rate + rng.uniform(0, 2 * np.pi)
    )
    x = carrier * envelope
    return x / np.max(np.abs(x))


def build_demo_session(
    directory, seed: int = 0, duration: float = 30.0, n_mics: int = 4
) -> Path:
    """Write a small synthetic multi-microphone session to ``directory``.

    Produces WAV channels, a manifest, per-(mic, chunk) activity posteriors,
    chunk- and subchunk-level embedding files, a clarity score file and a
    reference RTTM. Embedding vectors are planted unit-vector clusters (one
    per speaker), deterministic in the seed, so the counting and clustering
    paths behave the way real extractor output would. Returns the manifest
    path.
    """
    directory = Path(directory)
    (directory / "audio").mkdir(parents=True, exist_ok=True)
    (directory / "activities").mkdir(exist_ok=True)
    (directory / "embeddings").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    sample_rate = 16000
    n_samples = int(duration * sample_rate)
    frame_rate = 50.0

    unit = duration / 30.0
    reference = [
        Segment("alice", 1.0 * unit, 9.0 * unit),
        Segment("bob", 10.0 * unit, 18.0 * unit),
        Segment("alice", 19.0 * unit, 24.0 * unit),
        Segment("bob", 24.5 * unit, 29.0 * unit),
    ]
    speakers = speakers_of(reference)
    # both talkers low-passed so closely spaced mics stay correlated enough
    # for the signal-similarity grouping to pool them
    tilts = [0.92, 0.75]

    sources = np.zeros((len(speakers), n_samples))
    for seg in reference:
        row = speakers.index(seg.speaker)
        lo, hi = int(seg.start * sample_rate), int(seg.end * sample_rate)
        sources[row, lo:hi] = make_speech_like(rng, hi - lo, sample_rate, tilts[row % 2])

    delays = rng.integers(0, 3, size=(n_mics, len(speakers)))
    gains = rng.uniform(0.4, 1.0, size=(n_mics, len(speakers)))
    mixture = np.zeros((n_mics, n_samples))
    for m in range(n_mics):
        for s in range(len(speakers)):
            shifted = np.roll(sources[s], delays[m, s])
            shifted[: delays[m, s]] = 0.0
            mixture[m] += gains[m, s] * shifted
        mixture[m] += 0.01 * rng.standard_normal(n_samples)
    mixture *= 0.2 / np.max(np.abs(mixture))

    channel_ids = []
    for m in range(n_mics):
        write_wav(directory / "audio" / f"mic{m}.wav", mixture[m], sample_rate)
        channel_ids.append(f"mic{m}")

    # chunk-wise activity posteriors per microphone, 4 local speaker slots
    n_frames = int(duration * frame_rate)
    local_slots = 4
    truth = np.zeros((len(speakers), n_frames))
    centers = (np.arange(n_frames) + 0.5) / frame_rate
    for seg in reference:
        row = speakers.index(seg.speaker)
        active = (centers >= seg.start) & (centers < seg.end)
        truth[row, active] = 1.0
    for m in range(n_mics):
        post = np.full((local_slots, n_frames), 0.03)
        post[: len(speakers)] = np.where(truth > 0, 0.95, 0.03)
        write_dmx(directory / "activities" / f"act_m{m}_c0.dmx", post)

    # embeddings: one planted unit-vector cluster per speaker; chunk-level
    # rows (subchunk -1) feed clustering, subchunk rows feed counting
    dim = 64
    centroids = rng.standard_normal((len(speakers), dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    def embedding_for(speaker_row: int) -> np.ndarray:
        return centroids[speaker_row] + 0.05 * rng.standard_normal(dim)

    n_sub = 20
    sub_len = max(1.5, duration / n_sub)
    starts = np.linspace(0.0, duration - sub_len, n_sub)
    vectors, index = [], []
    for m in range(n_mics):
        for local, spk in enumerate(speakers):
            spans = [(s.start, s.end) for s in reference if s.speaker == spk]
            speech_dur = sum(b - a for a, b in spans)
            vectors.append(embedding_for(local))
            index.append((m, 0, -1, local, speech_dur))
            for sub, lo in enumerate(starts):
                hi = lo + sub_len
                overlap = sum(min(b, hi) - max(a, lo) for a, b in spans if b > lo and a < hi)
                if overlap <= 0:
                    continue
                vectors.append(embedding_for(local))
                index.append((m, 0, sub, local, overlap))
    write_embeddings(directory / "embeddings" / "embeddings", np.array(vectors), index)

    write_c50(
        directory / "c50.txt",
        {cid: float(5.0 - 0.5 * m) for m, cid in enumerate(channel_ids)},
    )
    write_rttm(directory / "reference.rttm", reference, "demo")

    manifest = directory / "session.yaml"
    manifest.write_text(
        yaml.safe_dump(
            {
                "name": "demo",
                "sample_rate": sample_rate,
                "channels": [f"audio/mic{m}.wav" for m in range(n_mics)],
                "activities_dir": "activities",
                "embeddings_dir": "embeddings",
                "c50_file": "c50.txt",
                "activity_frame_rate": frame_rate,
            },
            sort_keys=False,
        )
    )
    return manifest
