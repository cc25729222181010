import numpy as np
import pytest

from conftest import two_speaker_scene
from farfield.errors import InputError
from farfield.gss import (
    ActivityMatrix,
    GssMaskEstimator,
    TfMaskSet,
    align_activity_to_frames,
    expand_segment,
    gss_estimate_masks,
)
from farfield.stft import StftConfig, WaveformSet, stft

CFG = StftConfig()


def scene_with_activity(seed=0, **kwargs):
    wave, images, segments = two_speaker_scene(seed=seed, **kwargs)
    spec = stft(wave, CFG)
    times = spec.frame_center_times()
    activity = np.zeros((2, spec.n_frames))
    for s, seg in enumerate(segments):
        activity[s, (times >= seg.start) & (times < seg.end)] = 1.0
    return wave, images, segments, spec, activity


class TestExpandSegment:
    def test_paper_default_context(self):
        assert expand_segment((30.0, 35.0), 15.0, 3600.0) == (15.0, 50.0)

    def test_clamped_at_session_start(self):
        assert expand_segment((5.0, 10.0), 15.0, 3600.0) == (0.0, 25.0)

    def test_zero_context_is_identity(self):
        assert expand_segment((12.5, 20.0), 0.0, 100.0) == (12.5, 20.0)

    def test_clamped_at_session_end(self):
        assert expand_segment((3590.0, 3599.0), 15.0, 3600.0) == (3575.0, 3600.0)

    def test_inverted_bounds_raise(self):
        with pytest.raises(InputError, match="inverted"):
            expand_segment((10.0, 5.0), 15.0, 100.0)


class TestActivityAlignment:
    def test_nearest_frame_mapping(self):
        act = ActivityMatrix(np.array([[0.0, 1.0, 0.0, 1.0]]), frame_rate=2.0)
        rng = np.random.default_rng(0)
        spec = stft(WaveformSet(rng.standard_normal((2, 2 * 16000)) * 0.1, 16000), CFG)
        aligned = align_activity_to_frames(act, spec)
        times = spec.frame_center_times()
        expected = act.values[0, np.clip(np.floor(times * 2.0).astype(int), 0, 3)]
        np.testing.assert_array_equal(aligned[0], expected)

    def test_binary_flag_validation(self):
        with pytest.raises(InputError):
            ActivityMatrix(np.array([[0.5]]), frame_rate=1.0, binary=True)


class TestMaskInvariants:
    def test_masks_sum_to_one(self):
        _, _, _, spec, activity = scene_with_activity()
        masks = GssMaskEstimator(iterations=5).fit_predict(spec, activity)
        np.testing.assert_allclose(masks.masks.sum(axis=0), 1.0, atol=1e-6)

    def test_inactive_source_mask_is_zero(self):
        _, _, _, spec, activity = scene_with_activity()
        masks = GssMaskEstimator(iterations=5).fit_predict(spec, activity)
        inactive = activity[0] == 0
        assert np.all(masks.source(0)[:, inactive] == 0.0)

    def test_all_zero_source_keeps_zero_mask(self):
        _, _, _, spec, activity = scene_with_activity()
        activity = np.vstack([activity, np.zeros(activity.shape[1])])
        masks = GssMaskEstimator(iterations=3).fit_predict(spec, activity)
        assert np.all(masks.source(2) == 0.0)

    def test_noise_class_is_last_and_everywhere_allowed(self):
        _, _, _, spec, activity = scene_with_activity()
        masks = GssMaskEstimator(iterations=3).fit_predict(spec, activity)
        assert masks.n_sources == 2
        assert masks.noise.shape == (spec.n_bins, spec.n_frames)


class TestMaskQuality:
    def test_disjoint_speakers_capture_their_regions(self):
        _, _, _, spec, activity = scene_with_activity(seed=1)
        masks = GssMaskEstimator(iterations=20).fit_predict(spec, activity)
        energy = np.mean(np.abs(spec.data) ** 2, axis=2)
        for s in range(2):
            region = activity[s] > 0
            mass = np.sum(masks.source(s)[:, region] * energy[:, region])
            total = np.sum(energy[:, region])
            assert mass / total >= 0.9

    def test_nll_monotone_non_increasing(self):
        _, _, _, spec, activity = scene_with_activity(seed=2, overlap=True)
        est = GssMaskEstimator(iterations=15).fit(spec, activity)
        diffs = np.diff(est.nll_curve_)
        assert np.all(diffs <= 1e-8)

    def test_source_permutation_permutes_masks(self):
        _, _, _, spec, activity = scene_with_activity(seed=3)
        masks = GssMaskEstimator(iterations=8).fit_predict(spec, activity)
        swapped = GssMaskEstimator(iterations=8).fit_predict(spec, activity[::-1])
        np.testing.assert_allclose(swapped.source(0), masks.source(1), atol=1e-12)
        np.testing.assert_allclose(swapped.source(1), masks.source(0), atol=1e-12)
        np.testing.assert_allclose(swapped.noise, masks.noise, atol=1e-12)


class TestErrors:
    def test_single_channel_rejected(self):
        rng = np.random.default_rng(4)
        spec = stft(WaveformSet(rng.standard_normal((1, 2 * 16000)) * 0.1, 16000), CFG)
        with pytest.raises(InputError, match="2 channels"):
            GssMaskEstimator().fit(spec, np.ones((1, spec.n_frames)))

    def test_all_zero_activity_rejected(self):
        rng = np.random.default_rng(5)
        spec = stft(WaveformSet(rng.standard_normal((2, 2 * 16000)) * 0.1, 16000), CFG)
        with pytest.raises(InputError, match="nothing to separate"):
            GssMaskEstimator().fit(spec, np.zeros((2, spec.n_frames)))

    def test_misaligned_activity_rejected(self):
        rng = np.random.default_rng(6)
        spec = stft(WaveformSet(rng.standard_normal((2, 2 * 16000)) * 0.1, 16000), CFG)
        with pytest.raises(InputError, match="does not match"):
            GssMaskEstimator().fit(spec, np.ones((2, spec.n_frames + 5)))


class TestFunctionWrapper:
    def test_gss_estimate_masks_resamples_and_fits(self):
        wave, _, segments, spec, _ = scene_with_activity(seed=7)
        frame_rate = 50.0
        n_act = int(wave.duration * frame_rate)
        centers = (np.arange(n_act) + 0.5) / frame_rate
        values = np.zeros((2, n_act))
        for s, seg in enumerate(segments):
            values[s, (centers >= seg.start) & (centers < seg.end)] = 1.0
        masks = gss_estimate_masks(
            spec, ActivityMatrix(values, frame_rate, binary=True), iterations=5
        )
        assert isinstance(masks, TfMaskSet)
        assert masks.masks.shape == (3, spec.n_bins, spec.n_frames)
