"""Tests for the scikit-learn style estimator wrapper."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from voxdiff.datapipe import MixSpec, synth_corpus
from voxdiff.estimator import DiffusionEnhancer
from voxdiff.spectro import Waveform
from voxdiff.validation import as_waveform_list, check_paired_clips

TINY_KW = dict(
    n_train_steps=2,
    batch_size=2,
    latent_width=32,
    n_sampling_steps=2,
    corrector_steps=0,
    seed=4,
)


@pytest.fixture(scope="module")
def clips():
    pairs = synth_corpus(2, seed=8, spec=MixSpec(segment_seconds=1.0), sample_rate=16000)
    X = np.stack([p.mixture.samples for p in pairs])
    y = np.stack([p.clean.samples for p in pairs])
    return X, y


@pytest.fixture(scope="module")
def fitted(clips):
    X, y = clips
    return DiffusionEnhancer(**TINY_KW).fit(X, y)


class TestSklearnProtocol:
    def test_get_params_roundtrip(self):
        est = DiffusionEnhancer(task="speech", n_train_steps=7)
        params = est.get_params()
        assert params["task"] == "speech"
        assert params["n_train_steps"] == 7
        est2 = DiffusionEnhancer(**params)
        assert est2.get_params() == params

    def test_set_params_returns_self(self):
        est = DiffusionEnhancer()
        assert est.set_params(lr=3e-4) is est
        assert est.lr == 3e-4

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError):
            DiffusionEnhancer().set_params(momentum=0.9)

    def test_clone_preserves_params(self):
        est = DiffusionEnhancer(fusion="transformer_block", seed=11)
        assert clone(est).get_params() == est.get_params()

    def test_transform_requires_fit(self, clips):
        X, _ = clips
        with pytest.raises(NotFittedError):
            DiffusionEnhancer(**TINY_KW).transform(X)


class TestFitTransform:
    def test_fit_sets_fitted_attributes(self, fitted, clips):
        X, _ = clips
        assert hasattr(fitted, "checkpoint_")
        assert hasattr(fitted, "sampler_config_")
        assert fitted.n_features_in_ == X.shape[1]
        assert fitted.checkpoint_.spec.latent_width == 32

    def test_transform_shape(self, fitted, clips):
        X, _ = clips
        out = fitted.transform(X)
        assert isinstance(out, np.ndarray)
        assert out.shape == X.shape
        assert np.all(np.isfinite(out))

    def test_predict_is_transform(self, fitted, clips):
        X, _ = clips
        assert np.array_equal(fitted.predict(X), fitted.transform(X))

    def test_transform_deterministic(self, fitted, clips):
        X, _ = clips
        assert np.array_equal(fitted.transform(X), fitted.transform(X))

    def test_score_returns_float(self, fitted, clips):
        X, y = clips
        value = fitted.score(X, y)
        assert isinstance(value, float)
        assert np.isfinite(value)

    def test_ragged_input_returns_list(self, fitted):
        rng = np.random.Generator(np.random.Philox(key=1))
        xs = [0.1 * rng.standard_normal(8000), 0.1 * rng.standard_normal(9000)]
        out = fitted.transform(xs)
        assert isinstance(out, list)
        assert [o.shape[0] for o in out] == [8000, 9000]

    def test_sampler_config_from_params(self, fitted):
        assert fitted.sampler_config_.n_steps == 2
        assert fitted.sampler_config_.corrector_steps == 0
        assert fitted.sampler_config_.seed == 4

    def test_mismatched_pairs_rejected(self, clips):
        X, y = clips
        with pytest.raises(ValueError, match="count mismatch"):
            DiffusionEnhancer(**TINY_KW).fit(X, y[:1])

    def test_bad_task_rejected(self, clips):
        X, y = clips
        with pytest.raises(ValueError):
            DiffusionEnhancer(task="music", **TINY_KW).fit(X, y)


class TestValidationHelpers:
    def test_2d_array(self):
        clips = as_waveform_list(np.zeros((3, 100)), 16000)
        assert len(clips) == 3
        assert clips[0].sample_rate == 16000

    def test_1d_array_promoted(self):
        clips = as_waveform_list(np.zeros(50), 8000)
        assert len(clips) == 1
        assert clips[0].samples.shape == (50,)

    def test_3d_rejected(self):
        with pytest.raises(ValueError, match="2-D"):
            as_waveform_list(np.zeros((2, 3, 4)), 16000)

    def test_waveform_passthrough(self):
        w = Waveform(samples=np.zeros(10), sample_rate=16000)
        assert as_waveform_list(w, 16000) == [w]

    def test_waveform_rate_mismatch(self):
        w = Waveform(samples=np.zeros(10), sample_rate=8000)
        with pytest.raises(ValueError, match="sample rate"):
            as_waveform_list([w], 16000)

    def test_ragged_list(self):
        clips = as_waveform_list([np.zeros(10), np.zeros(20)], 16000)
        assert [c.samples.shape[0] for c in clips] == [10, 20]

    def test_non_1d_item_rejected(self):
        with pytest.raises(ValueError, match="1-D"):
            as_waveform_list([np.zeros((2, 2))], 16000)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no clips"):
            as_waveform_list([], 16000)

    def test_paired_length_check(self):
        a = [Waveform(samples=np.zeros(10), sample_rate=16000)]
        b = [Waveform(samples=np.zeros(12), sample_rate=16000)]
        with pytest.raises(ValueError, match="pair 0"):
            check_paired_clips(a, b)
