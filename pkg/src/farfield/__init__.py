"""farfield: guided multichannel enhancement and multi-microphone diarization
assembly for distributed far-field recordings."""

from .beamforming import (
    BeamformerBank,
    CovariancePair,
    MwfBeamformer,
    apply_beamformer,
    ban_postfilter,
    compute_beamformer,
    covariances_from_masks,
    estimate_covariances,
    estimate_rtf,
    select_reference_mic,
    tf_mask_postfilter,
)
from .counting import (
    CountEstimate,
    EmbeddingSet,
    MicGroups,
    aggregate_counts,
    count_speakers_session,
    filter_embeddings,
    group_microphones,
    logmel_embedding,
    mic_similarity,
    nme_count,
    split_subchunks,
)
from .diarization import (
    ChunkSegmentation,
    ConstrainedSpectralClustering,
    postprocess_median,
    postprocess_merge,
    single_speaker_mask,
    stitch,
)
from .errors import FarfieldError, InputError, NumericalError
from .fusion import FrameGrid, align_speakers, fuse, majority_vote
from .gss import (
    ActivityMatrix,
    GssMaskEstimator,
    TfMaskSet,
    align_activity_to_frames,
    expand_segment,
    gss_estimate_masks,
)
from .io import read_rttm, read_session, write_rttm
from .metrics import CountReport, DerReport, count_metrics, der
from .micsel import (
    MicrophoneSelector,
    envelope_variance,
    select_mics_ev_c50,
    select_topk_ev,
)
from .pipeline import (
    PipelineConfig,
    build_demo_session,
    enhance_chunkwise,
    enhance_utterance,
    run_diarization_assembly,
)
from .segments import Segment
from .stft import Spectrogram, StftConfig, WaveformSet, istft, stft
from .wpe import WpeDereverberator, wpe_dereverberate

__version__ = "0.1.0"
