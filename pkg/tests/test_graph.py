import numpy as np
import pytest

from hop_gesture import tensor as T
from hop_gesture.gradcheck import grad_check_params
from hop_gesture.graph import (GraphEncoder, GraphEncoderConfig, GraphLayer, SkeletonTopology, TopologyError,
                               adaptive_adjacency, diffusion_graph_conv, encode_audio_action, pose_to_graph,
                               skeleton_preset, tcn_block, transition_matrices)
from hop_gesture.tensor import ShapeError, Tensor


# -- topology ---------------------------------------------------------------

def test_ted_presets():
    assert skeleton_preset("ted").n_joints == 9
    assert skeleton_preset("ted_expressive").n_joints == 42
    assert skeleton_preset("chain5").n_joints == 5


def test_topology_validation():
    with pytest.raises(TopologyError):
        SkeletonTopology(["a", "b"], [-1, -1])
    with pytest.raises(TopologyError):
        SkeletonTopology(["a", "b", "c"], [-1, 2, 1])
    with pytest.raises(TopologyError):
        SkeletonTopology(["a", "b"], [-1, 5])
    with pytest.raises(TopologyError):
        skeleton_preset("octopus")


def test_topology_round_trip():
    topo = skeleton_preset("ted")
    back = SkeletonTopology.from_dict(topo.to_dict())
    assert back.names == topo.names and back.parents == topo.parents
    np.testing.assert_allclose(back.rest_directions, topo.rest_directions, rtol=0, atol=1e-15)


def test_transition_matrices_row_stochastic():
    pf, pb = transition_matrices(skeleton_preset("ted_expressive").adjacency())
    np.testing.assert_allclose(pf.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(pb.sum(axis=1), 1.0, atol=1e-12)


# -- pose_to_graph ----------------------------------------------------------

def test_pose_to_graph_full_scale_shape():
    poses = np.random.default_rng(0).standard_normal((34, 27))
    assert pose_to_graph(poses, 16).shape == (16, 9, 3)


def test_pose_to_graph_identity_and_constant():
    poses = np.random.default_rng(1).standard_normal((16, 9, 3))
    np.testing.assert_array_equal(pose_to_graph(poses, 16), poses)
    const = np.broadcast_to(poses[0], (34, 9, 3))
    np.testing.assert_array_equal(pose_to_graph(const, 16), np.broadcast_to(poses[0], (16, 9, 3)))


def test_pose_to_graph_too_short():
    with pytest.raises(ShapeError):
        pose_to_graph(np.zeros((8, 9, 3)), 16)


# -- adaptive adjacency -----------------------------------------------------

def test_adaptive_adjacency_zero_embeddings_uniform():
    a = adaptive_adjacency(np.zeros((5, 3)), np.zeros((5, 3))).data
    np.testing.assert_allclose(a, 0.2, atol=1e-15)


def test_adaptive_adjacency_closed_form():
    e1 = np.array([[np.log(2.0), 0.0], [0.0, 0.0]])
    e2 = np.array([[1.0, 0.0], [0.0, 0.0]])
    a = adaptive_adjacency(e1, e2).data
    np.testing.assert_allclose(a, [[2 / 3, 1 / 3], [0.5, 0.5]], atol=1e-15)


def test_adaptive_adjacency_rows_stochastic_trials():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        j, d = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        a = adaptive_adjacency(rng.standard_normal((j, d)) * 3, rng.standard_normal((j, d)) * 3).data
        assert np.all(a >= 0)
        assert np.max(np.abs(a.sum(axis=1) - 1.0)) <= 1e-9


# -- diffusion graph convolution ---------------------------------------------

def test_diffusion_identity_order_zero():
    x = np.random.default_rng(3).standard_normal((2, 4, 5, 3))
    pf, pb = transition_matrices(skeleton_preset("chain5").adjacency())
    eye = np.eye(3)
    z = diffusion_graph_conv(x, pf, pb, np.full((5, 5), 0.2), [[eye, eye, eye]]).data
    np.testing.assert_allclose(z, 3 * x, atol=1e-14)


def test_diffusion_zero_input():
    pf, pb = transition_matrices(np.ones((3, 3)))
    w = [[np.ones((2, 2))] * 3] * 3
    assert not diffusion_graph_conv(np.zeros((3, 2)), pf, pb, np.eye(3), w).data.any()


def test_diffusion_line_graph_brute_force():
    pf, pb = transition_matrices(np.array([[1.0, 1.0], [1.0, 1.0]]))
    aad = np.array([[0.7, 0.3], [0.4, 0.6]])
    w = [[np.array([[0.5]]), np.array([[1.5]]), np.array([[-1.0]])],
         [np.array([[2.0]]), np.array([[0.25]]), np.array([[3.0]])]]
    z = diffusion_graph_conv(np.array([[2.0], [-1.0]]), pf, pb, aad, w).data
    np.testing.assert_allclose(z.ravel(), [6.425, 0.725], atol=1e-12)


def test_diffusion_weight_mismatch():
    with pytest.raises(ShapeError):
        diffusion_graph_conv(np.zeros((3, 2)), np.eye(3), np.eye(3), np.eye(3), [[np.eye(3)] * 3])


# -- temporal block ---------------------------------------------------------

def test_tcn_near_identity():
    x = 1e-3 * np.random.default_rng(4).standard_normal((1, 6, 2, 3))
    eye = np.eye(3)[None]
    out = tcn_block(x, eye, np.zeros((1, 3, 3)), 1, 1, None, np.full(3, 40.0)).data
    assert np.all(np.abs(out - x) <= np.abs(x) ** 3 / 3 + 1e-15)     # tanh(x) = x - x^3/3 + ...


def test_tcn_causality():
    rng = np.random.default_rng(5)
    wf, wg = rng.standard_normal((2, 3, 3)), rng.standard_normal((2, 3, 3))
    for _ in range(50):
        x = rng.standard_normal((1, 10, 2, 3))
        t = int(rng.integers(0, 9))
        x2 = x.copy()
        x2[:, t + 1:] += rng.standard_normal(x2[:, t + 1:].shape)
        a = tcn_block(x, wf, wg, 2).data
        b = tcn_block(x2, wf, wg, 2).data
        np.testing.assert_array_equal(a[:, :t + 1], b[:, :t + 1])


def test_two_block_receptive_field():
    rng = np.random.default_rng(6)
    layers = [(rng.uniform(0.2, 1, (2, 1, 1)), rng.uniform(0.2, 1, (2, 1, 1)), d) for d in (1, 2)]

    def run(x):
        h = x
        for wf, wg, d in layers:
            h = tcn_block(h, wf, wg, d)
        return h.data[0, -1, 0, 0]
    x = rng.standard_normal((1, 12, 1, 1))
    base = run(x)
    deps = []
    for j in range(12):
        x2 = x.copy()
        x2[0, j] += 0.5
        deps.append(run(x2) != base)
    assert deps == [False] * 8 + [True] * 4


# -- encoder ----------------------------------------------------------------

def test_encoder_full_scale_shape():
    rng = np.random.default_rng(7)
    enc = GraphEncoder(skeleton_preset("ted"), 173, GraphEncoderConfig(), rng)
    audio = rng.standard_normal((4, 16, 9, 170))
    action = rng.standard_normal((4, 16, 9, 3))
    z = encode_audio_action(audio, action, enc)
    assert z.shape == (4, 173, 9, 4)
    assert enc.output_steps(16) == 4


def test_encoder_zero_input_zero_output():
    rng = np.random.default_rng(8)
    enc = GraphEncoder(skeleton_preset("ted"), 5, GraphEncoderConfig(bias=False), rng)
    z = encode_audio_action(np.zeros((1, 16, 9, 2)), np.zeros((1, 16, 9, 3)), enc)
    assert not z.data.any()


def test_layer_composition_identity_graph_weights():
    rng = np.random.default_rng(9)
    cfg = GraphEncoderConfig(diffusion_order=0, bias=False, residual=False, layers=[{"dilation": 1, "stride": 1}])
    layer = GraphLayer(4, cfg, 1, 1, rng)
    for w in layer.graph_weights:
        w.data[...] = np.eye(4)
    x = rng.standard_normal((2, 8, 3, 4))
    pf, pb = transition_matrices(skeleton_preset("chain3").adjacency())
    out = layer(x, pf, pb, T.softmax(rng.standard_normal((3, 3)), axis=1)).data
    h = tcn_block(x, layer.w_filter, layer.w_gate, 1, 1).data
    np.testing.assert_allclose(out, 3 * h, atol=1e-13)


def test_encoder_mismatched_graphs():
    enc = GraphEncoder(skeleton_preset("chain3"), 5, GraphEncoderConfig(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        encode_audio_action(np.zeros((1, 16, 3, 2)), np.zeros((1, 16, 4, 3)), enc)


def test_encoder_adjacency_rows():
    enc = GraphEncoder(skeleton_preset("ted"), 5, GraphEncoderConfig(), np.random.default_rng(1))
    np.testing.assert_allclose(enc.adjacency().data.sum(axis=1), 1.0, atol=1e-12)


def test_encoder_gradients():
    rng = np.random.default_rng(10)
    enc = GraphEncoder(skeleton_preset("chain3"), 3, GraphEncoderConfig(embed_dim=2, diffusion_order=1), rng)
    x = Tensor(rng.standard_normal((1, 8, 3, 3)), requires_grad=True)
    w = rng.standard_normal((1, 2, 3, 3))
    params = dict(enc.parameters(), x=x)
    rep = grad_check_params(lambda: T.tsum(enc(x) * w), params)
    assert rep.max_rel_error < 1e-6


def test_diffusion_linear_in_input():
    rng = np.random.default_rng(11)
    pf, pb = transition_matrices(skeleton_preset("ted").adjacency())
    aad = adaptive_adjacency(rng.standard_normal((9, 4)), rng.standard_normal((9, 4))).data
    w = [[rng.standard_normal((3, 5)) for _ in range(3)] for _ in range(3)]
    x1, x2 = rng.standard_normal((2, 2, 6, 9, 3))
    f = lambda x: diffusion_graph_conv(x, pf, pb, aad, w).data
    np.testing.assert_allclose(f(1.5 * x1 - 0.7 * x2), 1.5 * f(x1) - 0.7 * f(x2), rtol=0, atol=1e-9)
