import numpy as np
import pytest

from hop_gesture.data import SyntheticCorpusSpec, synthesize_corpus
from hop_gesture.metrics import (ExtractorConfig, FeatureExtractor, MetricError, audio_beats,
                                 beat_alignment, beat_consistency, diversity, fgd, fit_feature_extractor,
                                 frechet_distance, frechet_from_latents, gaussian_summary, kinematic_beats,
                                 matrix_sqrt_psd, mean_beat_consistency)


@pytest.fixture(scope="module")
def corpus():
    return synthesize_corpus(SyntheticCorpusSpec(seed=7, clips=64))


# -- matrix square root -----------------------------------------------------

def test_sqrt_identity_and_diagonal():
    np.testing.assert_allclose(matrix_sqrt_psd(np.eye(4)), np.eye(4), atol=1e-15)
    np.testing.assert_allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)


def test_sqrt_reconstruction_trials():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, int(rng.integers(1, 9))))
        s = a @ a.T
        r = matrix_sqrt_psd(s)
        assert np.max(np.abs(r @ r - s)) <= 1e-6 * max(1.0, np.abs(s).max())
        np.testing.assert_array_equal(r, r.T)


def test_sqrt_rejects_asymmetric():
    with pytest.raises(MetricError):
        matrix_sqrt_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))


# -- Frechet distance -------------------------------------------------------

def test_frechet_identical_sets_zero():
    x = np.random.default_rng(1).standard_normal((200, 5))
    assert frechet_from_latents(x, x) == pytest.approx(0.0, abs=1e-6)


def test_frechet_unit_gaussians():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(10000)
    b = 1.0 + rng.standard_normal(10000)
    assert frechet_from_latents(a, b) == pytest.approx(1.0, abs=0.05)


def test_frechet_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g1 = gaussian_summary(rng.standard_normal((50, 4)) @ rng.standard_normal((4, 4)))
        g2 = gaussian_summary(rng.standard_normal((60, 4)) * 2 + 1)
        assert abs(frechet_distance(g1, g2) - frechet_distance(g2, g1)) <= 1e-9


def test_frechet_closed_form_diagonal():
    # diag covariances: ||dm||^2 + sum (sqrt(a) - sqrt(b))^2
    from hop_gesture.metrics import GaussianSummary
    g1 = GaussianSummary(np.array([0.0, 1.0]), np.diag([1.0, 4.0]))
    g2 = GaussianSummary(np.array([1.0, 1.0]), np.diag([9.0, 1.0]))
    assert frechet_distance(g1, g2) == pytest.approx(1.0 + 4.0 + 1.0, abs=1e-12)


def test_summary_needs_two_samples():
    with pytest.raises(MetricError):
        gaussian_summary(np.zeros((1, 3)))


# -- feature extractor and FGD ----------------------------------------------

def test_extractor_loss_decreases(corpus):
    _, hist = fit_feature_extractor([c.poses for c in corpus.clips], ExtractorConfig(epochs=10))
    assert all(b < a for a, b in zip(hist, hist[1:]))


def test_extractor_persistence(tmp_path, corpus):
    poses = [c.poses for c in corpus.clips[:8]]
    fx, _ = fit_feature_extractor(poses, ExtractorConfig(epochs=3))
    h1 = fx.save(tmp_path / "fx")
    back = FeatureExtractor.load(tmp_path / "fx")
    assert back.encode(np.stack(poses)).tobytes() == fx.encode(np.stack(poses)).tobytes()
    assert fx.save(tmp_path / "fx2") == h1


def test_extractor_minimal_latent(corpus):
    fx, _ = fit_feature_extractor([c.poses for c in corpus.clips[:4]], ExtractorConfig(latent=2, hidden=4, epochs=2))
    assert fx.encode(corpus.clips[0].poses).shape == (1, 2)
    with pytest.raises(MetricError):
        FeatureExtractor(ExtractorConfig(latent=1))


def test_fgd_same_set_and_symmetry(corpus):
    real = [c.poses for c in corpus.clips[:32]]
    other = [c.poses for c in corpus.clips[32:]]
    fx, _ = fit_feature_extractor(real, ExtractorConfig(epochs=5))
    assert fgd(real, real, fx) == pytest.approx(0.0, abs=1e-6)
    assert abs(fgd(real, other, fx) - fgd(other, real, fx)) <= 1e-9


# -- beat consistency -------------------------------------------------------

def test_alignment_kernel():
    assert beat_alignment(np.array([1.0]), np.array([1.0]), 0.1) == 1.0
    assert beat_alignment(np.array([1.0]), np.array([1.3]), 0.1) == pytest.approx(np.exp(-4.5))
    assert beat_alignment(np.zeros(0), np.array([1.0]), 0.1) == 0.0


def test_bc_aligned_clips(corpus):
    bc = mean_beat_consistency([c.waveform for c in corpus.clips[:16]], [c.poses for c in corpus.clips[:16]])
    assert bc >= 0.99


def test_bc_offset_clips():
    spec = SyntheticCorpusSpec(seed=7, clips=16, beat_period=30, click_shift=0.3, words_per_clip=(1, 1))
    shifted = synthesize_corpus(spec)
    bc = mean_beat_consistency([c.waveform for c in shifted.clips], [c.poses for c in shifted.clips])
    assert bc <= np.exp(-4.5) + 0.01


def test_kinematic_beats_match_construction(corpus):
    for c in corpus.clips[:8]:
        kin = kinematic_beats(c.poses, c.fps)
        truth = corpus.beats[c.id]
        inner = truth[(truth > 1.5 / c.fps) & (truth < (c.n_frames - 2.5) / c.fps)]
        assert np.all(np.min(np.abs(inner[:, None] - kin[None]), axis=1) < 1e-9)


def test_audio_beats_match_clicks(corpus):
    for c in corpus.clips[:8]:
        aud = audio_beats(c.waveform)
        truth = corpus.beats[c.id]
        truth = truth[truth > 0.1]      # onset strength needs a previous frame
        assert np.all(np.min(np.abs(truth[:, None] - aud[None]), axis=1) < 0.03)


def test_bc_constant_pose_is_zero(corpus):
    still = np.broadcast_to(corpus.clips[0].poses[0], (34, 9, 3))
    assert beat_consistency(corpus.clips[0].waveform, still) == 0.0


def test_bc_in_unit_interval(corpus):
    rng = np.random.default_rng(4)
    for c in corpus.clips[:5]:
        noise = rng.standard_normal(c.poses.shape)
        v = beat_consistency(c.waveform, noise / np.linalg.norm(noise, axis=-1, keepdims=True))
        assert 0.0 <= v <= 1.0


# -- diversity --------------------------------------------------------------

def test_diversity_identical_zero():
    x = np.random.default_rng(5).standard_normal((34, 9, 3))
    assert diversity([x, x, x]) == 0.0


def test_diversity_constructed_difference():
    a = np.zeros((34, 9, 3))
    assert diversity([a, a + 1.0]) == 918.0


def test_diversity_seeded():
    gens = list(np.random.default_rng(6).standard_normal((10, 34, 9, 3)))
    assert diversity(gens, 100, seed=3) == diversity(gens, 100, seed=3)
    with pytest.raises(MetricError):
        diversity(gens[:1])


def test_fgd_non_negative(corpus):
    real = [c.poses for c in corpus.clips[:16]]
    fx, _ = fit_feature_extractor(real, ExtractorConfig(epochs=3))
    rng = np.random.default_rng(7)
    for _ in range(10):
        gen = list(rng.standard_normal((16, 34, 9, 3)))
        assert fgd(real, gen, fx) >= 0.0


def test_bc_invariant_to_common_time_shift(corpus):
    for c in corpus.clips[:5]:
        base = beat_consistency(c.waveform, c.poses)
        moved = beat_consistency(c.waveform, c.poses, audio_start=12.5, pose_start=12.5)
        assert moved == pytest.approx(base, abs=1e-9)


def test_diversity_scales_linearly():
    gens = list(np.random.default_rng(8).standard_normal((6, 34, 9, 3)))
    base = diversity(gens, 50, seed=1)
    assert base > 0
    assert diversity([2.5 * g for g in gens], 50, seed=1) == pytest.approx(2.5 * base, rel=1e-12)
