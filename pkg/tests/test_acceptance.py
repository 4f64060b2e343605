"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary (see conftest.py) and, when run
with ``-s``, as each test finishes.  Criteria 4 and 5 share one 200-epoch run.
"""
import time
import zlib
from pathlib import Path

import numpy as np
import pytest

import op_cases
from hop_gesture import tensor as T
from hop_gesture.checkpoint import load_tensors, save_tensors
from hop_gesture.data import SyntheticCorpusSpec, synthesize_corpus
from hop_gesture.gradcheck import grad_check, grad_check_params
from hop_gesture.graph import adaptive_adjacency
from hop_gesture.losses import LossWeights, gan_losses, huber_loss, kld_loss, style_diversity_loss, total_loss
from hop_gesture.metrics import (ExtractorConfig, diversity, fgd, fit_feature_extractor, frechet_from_latents,
                                 matrix_sqrt_psd, mean_beat_consistency)
from hop_gesture.model import HOPModel, batch_arrays, build_vocabulary, clip_features, preset
from hop_gesture.tensor import Tensor
from hop_gesture.train import TrainingConfig, alignment_score, generate_clips, load_checkpoint, prepare_features, train

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def composed_loss_case(rng):
    """Full generator objective at J=3, T=8, d_m=4, D=6, V'=5, 2 heads, two speakers."""
    cfg = preset("grad-toy")
    model = HOPModel(cfg, build_vocabulary(cfg), ["a", "b"], rng)
    b = 2
    mel = Tensor(rng.standard_normal((b, cfg.frames, cfg.n_mels)), requires_grad=True)
    words = [rng.standard_normal((3, cfg.text_dim)), rng.standard_normal((2, cfg.text_dim))]
    nodes = rng.standard_normal((b, cfg.graph_steps, cfg.joints, cfg.audio_feat))
    seed = unit(rng.standard_normal((b, cfg.seed_frames, cfg.joints, 3)))
    real = unit(rng.standard_normal((b, cfg.frames, cfg.joints, 3)))
    noise_a, noise_b = rng.standard_normal((2, b, cfg.style_dim))

    def loss():
        z_a = model.style.sample(["a", "b"], noise_a)
        z_b = model.style.sample(["b", "a"], noise_b)
        out = model.generate(T.concat([mel, mel], axis=0), words + words, np.concatenate([nodes, nodes]),
                             np.concatenate([seed, seed]), T.concat([z_a, z_b], axis=0))
        g_a, g_b = out[:b], out[b:]
        _, loss_g = gan_losses(T.ones((b,)) * 0.5, model.discriminator(g_a))
        parts = {"huber": huber_loss(real, g_a), "style": style_diversity_loss(g_a, g_b, 1.0, z_a, z_b),
                 "kld": kld_loss(model.style.mu, model.style.logvar), "gan": loss_g}
        return total_loss(parts, LossWeights())

    return loss, dict(model.parameters(), mel=mel)


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst_op = 0.0
    for name in sorted(T.OPS):
        rng = np.random.default_rng(zlib.crc32(name.encode()) + 1)
        for _ in range(10):
            fn, arrays = op_cases.build(name, rng)
            leaves = [Tensor(a, requires_grad=True) for a in arrays]
            w = rng.standard_normal(fn(*[Tensor(a) for a in arrays]).shape)
            worst_op = max(worst_op, grad_check(lambda *xs: T.tsum(fn(*xs) * w), leaves, eps=1e-6).max_rel_error)
    loss, params = composed_loss_case(np.random.default_rng(11))
    rep = grad_check_params(loss, params, eps=1e-6)
    elapsed = time.perf_counter() - t0
    ok = worst_op <= 1e-4 and rep.max_rel_error <= 1e-4 and elapsed < 120
    record(1, ok, f"ops max rel err {worst_op:.2e} over {len(T.OPS)} ops; composed loss {rep.max_rel_error:.2e} "
                  f"over {rep.n_checked} coords ({len(rep.excluded)} kinks); {elapsed:.1f}s")
    assert rep.n_checked > 0.95 * sum(p.size for p in params.values())
    assert ok


# ---------------------------------------------------------------------------
# 2. shape conformance
# ---------------------------------------------------------------------------

def test_criterion_2_golden_shapes():
    from hop_gesture.audio import window_audio
    from hop_gesture.graph import pose_to_graph
    cfg = preset("paper")
    vocab = build_vocabulary(cfg)
    model = HOPModel(cfg, vocab, ["speaker0", "speaker1"], np.random.default_rng(0))
    clips = synthesize_corpus(SyntheticCorpusSpec(seed=7, clips=4)).clips
    feats = [clip_features(c, cfg, vocab) for c in clips]
    mel, words, nodes, seed = batch_arrays(feats)
    shapes = {}
    with T.no_grad():
        proto = model.prototypes()
        shapes["mel"] = mel.shape[1:]
        shapes["Q"] = model.reprogram.query(mel).shape[1:]
        shapes["K"] = model.reprogram.key(proto).shape
        shapes["V"] = model.reprogram.value(proto).shape
        shapes["reprogram out"] = model.reprogrammed(mel).shape[1:]
        shapes["audio samples"] = (len(clips[0].waveform),)
        shapes["windows"] = (window_audio(clips[0].waveform, cfg.window_len, cfg.window_stride).windows.shape[0],)
        shapes["audio graph"] = nodes.shape[1:]
        action = np.stack([c.poses for c in clips]).reshape(4, 34, 27)
        shapes["action"] = pose_to_graph(action, 16).shape[1:]
        shapes["encoder out"] = model.graph_features(nodes, seed).shape[1:]
        z = model.style.sample(["speaker0"] * 4, np.zeros((4, cfg.style_dim)))
        shapes["poses"] = model.generate(mel, words, nodes, seed, z).shape[1:]
    want = {"mel": (34, 128), "Q": (34, 1024), "K": (1500, 1024), "V": (1500, 1024), "reprogram out": (34, 768),
            "audio samples": (36267,), "windows": (16,), "audio graph": (16, 9, 170), "action": (16, 9, 3),
            "encoder out": (173, 9, 4), "poses": (34, 9, 3)}
    bad = {k: shapes[k] for k in want if tuple(shapes[k]) != want[k]}
    record(2, not bad and mel.shape[0] == 4, f"batch 4, {len(want)} golden shapes" + (f"; mismatched {bad}" if bad else ""))
    assert not bad


# ---------------------------------------------------------------------------
# 3. metric oracles
# ---------------------------------------------------------------------------

def test_criterion_3_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    corpus = synthesize_corpus(SyntheticCorpusSpec(seed=7, clips=16))
    poses = [c.poses for c in corpus.clips]
    fx, _ = fit_feature_extractor(poses, ExtractorConfig(epochs=10))
    checks = {}
    checks["fgd(X,X)"] = (fgd(poses, poses, fx), lambda v: abs(v) <= 1e-6)
    d2 = frechet_from_latents(rng.standard_normal(10000), 1.0 + rng.standard_normal(10000))
    checks["1-D d2"] = (d2, lambda v: abs(v - 1.0) <= 0.05)
    checks["div identical"] = (diversity([poses[0]] * 3), lambda v: v == 0.0)
    checks["div constructed"] = (diversity([np.zeros((34, 9, 3)), np.ones((34, 9, 3))]), lambda v: v == 918.0)
    bc = mean_beat_consistency([c.waveform for c in corpus.clips], poses)
    checks["BC aligned"] = (bc, lambda v: v >= 0.99)
    shifted = synthesize_corpus(SyntheticCorpusSpec(seed=7, clips=16, beat_period=30, click_shift=0.3,
                                                    words_per_clip=(1, 1)))
    bc_off = mean_beat_consistency([c.waveform for c in shifted.clips], [c.poses for c in shifted.clips])
    checks["BC 3-sigma offset"] = (bc_off, lambda v: v <= np.exp(-4.5) + 0.01)
    elapsed = time.perf_counter() - t0
    failed = [k for k, (v, ok) in checks.items() if not ok(v)]
    ok = not failed and elapsed < 60
    record(3, ok, "; ".join(f"{k} {v:.6g}" for k, (v, _) in checks.items()) + f"; {elapsed:.1f}s"
           + (f"; failed {failed}" if failed else ""))
    assert ok


# ---------------------------------------------------------------------------
# 4 + 5. desk-scale training and the alignment trend
# ---------------------------------------------------------------------------

EPOCHS = 200


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_run")
    corpus = synthesize_corpus(SyntheticCorpusSpec(seed=7, clips=64))
    cfg = TrainingConfig(epochs=EPOCHS, batch_size=4, lr=1e-3, seed=0, inference_seed="ground_truth")
    t0 = time.perf_counter()
    result = train(preset("toy"), cfg, corpus.clips, out)
    return corpus, result, time.perf_counter() - t0


def test_criterion_4_training(trained):
    corpus, result, elapsed = trained
    means = result.summary["epoch_means"]
    ratio = means[-1]["huber"] / means[0]["huber"]
    real = [c.poses for c in corpus.clips]
    fx, _ = fit_feature_extractor(real, ExtractorConfig())
    root = result.checkpoints[-1].parent
    scores = {}
    for epoch in (0, 1, EPOCHS):
        model, meta, _ = load_checkpoint(root / f"epoch_{epoch:04d}")
        feats = prepare_features(corpus.clips, model.cfg, model.vocab)
        gen = generate_clips(model, feats, seed=0, mode=meta["training"]["inference_seed"])
        scores[epoch] = (fgd(real, gen, fx), mean_beat_consistency([c.waveform for c in corpus.clips], gen))
    ok_time = elapsed < 600
    ok_huber = ratio <= 0.1
    ok_fgd = scores[EPOCHS][0] < scores[1][0]
    ok_bc = scores[EPOCHS][1] >= scores[0][1]
    record(4, ok_time and ok_huber and ok_fgd and ok_bc,
           f"{EPOCHS} epochs in {elapsed:.0f}s; huber final/epoch1 {ratio:.4f}; "
           f"FGD epoch1 {scores[1][0]:.4f} -> final {scores[EPOCHS][0]:.4f}; "
           f"BC untrained {scores[0][1]:.4f} -> trained {scores[EPOCHS][1]:.4f}")
    assert ok_time and ok_huber and ok_fgd and ok_bc


def test_criterion_5_alignment(trained):
    _, result, _ = trained
    held = synthesize_corpus(SyntheticCorpusSpec(seed=7, clips=80)).clips[64:]
    root = result.checkpoints[-1].parent
    score = {}
    for epoch in (0, EPOCHS):
        model, _, _ = load_checkpoint(root / f"epoch_{epoch:04d}")
        score[epoch] = alignment_score(model, prepare_features(held, model.cfg, model.vocab))
    ok = score[EPOCHS] > score[0]
    record(5, ok, f"held-out mean cosine {score[0]:.4f} at init -> {score[EPOCHS]:.4f} after training "
                  f"({len(held)} clips)")
    assert ok


# ---------------------------------------------------------------------------
# 6. property suites
# ---------------------------------------------------------------------------

def test_criterion_6_properties(tmp_path):
    rng = np.random.default_rng(6)
    props = {}

    bad = 0
    for _ in range(1000):
        n, k, d = int(rng.integers(2, 12)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x, f = rng.standard_normal(n), rng.standard_normal(k)
        t = int(rng.integers(0, n - 1))
        x2 = x.copy()
        x2[t + 1:] += rng.standard_normal(n - t - 1)
        bad += not np.array_equal(T.dilated_causal_conv1d(x, f, d).data[:t + 1],
                                  T.dilated_causal_conv1d(x2, f, d).data[:t + 1])
    props["causality (1000 trials)"] = bad == 0

    worst = 0.0
    for _ in range(1000):
        j, k = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        a = adaptive_adjacency(3 * rng.standard_normal((j, k)), 3 * rng.standard_normal((j, k))).data
        worst = max(worst, np.abs(a.sum(axis=1) - 1).max(), -a.min())
    props["adjacency rows (1000 draws)"] = worst <= 1e-9

    worst = 0.0
    for _ in range(1000):
        x = 20 * rng.standard_normal(tuple(int(d) for d in rng.integers(1, 6, size=2)))
        worst = max(worst, np.abs(T.softmax(x, axis=-1).data.sum(axis=-1) - 1).max())
    props["softmax normalization"] = worst <= 1e-12

    kld_min = min(kld_loss(*rng.uniform(-5, 5, (2, 3, 4))).item() for _ in range(1000))
    props["KLD non-negative, zero at N(0,I)"] = kld_min >= 0 and kld_loss(np.zeros(4), np.zeros(4)).item() == 0.0

    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, int(rng.integers(1, 9))))
        s = a @ a.T
        r = matrix_sqrt_psd(s)
        worst = max(worst, np.abs(r @ r - s).max() / max(1.0, np.abs(s).max()))
    props["matrix sqrt (1000 PSD draws)"] = worst <= 1e-6

    tensors = {"a": rng.standard_normal((3, 4)), "b": np.array([np.pi, -0.0, 1e-308, 5e-324])}
    save_tensors(tmp_path / "ck", tensors, {"k": 1})
    back, meta = load_tensors(tmp_path / "ck")
    props["checkpoint bit-exact"] = all(back[k].tobytes() == v.tobytes() for k, v in tensors.items())

    clips = synthesize_corpus(SyntheticCorpusSpec(seed=7, clips=8)).clips
    cfg = TrainingConfig(epochs=2, batch_size=4, lr=1e-3, seed=3)
    r1 = train(preset("toy"), cfg, clips, tmp_path / "r1")
    r2 = train(preset("toy"), cfg, clips, tmp_path / "r2")
    same = all((r1.checkpoints[-1] / f).read_bytes() == (r2.checkpoints[-1] / f).read_bytes()
               for f in ("tensors.bin", "manifest.json"))
    same &= (tmp_path / "r1/loss_history.csv").read_bytes() == (tmp_path / "r2/loss_history.csv").read_bytes()
    props["two seeded runs byte-identical"] = same

    failed = [k for k, v in props.items() if not v]
    record(6, not failed, f"{len(props) - len(failed)}/{len(props)} properties hold"
           + (f"; failed {failed}" if failed else "") + "; full suites in the per-module tests")
    assert not failed


# ---------------------------------------------------------------------------
# 7. non-reproduced benchmark numbers, stated explicitly
# ---------------------------------------------------------------------------

def test_criterion_7_statement():
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    stated = all(s in readme for s in ("1.406", "0.762", "108.176", "not reproduced"))
    record(7, stated, "full-scale TED numbers (FGD 1.406, BC 0.762, Diversity 108.176) are not reproduced "
                      "at desk scale; acceptance rests on criteria 1-6 (statement present in README)")
    assert stated
