"""Audio/action spatio-temporal graph encoder.

Nodes are skeleton direction vectors.  Each node carries its 3-D direction
(action graph) and a slice of the windowed waveform (audio graph); the two are
channel-concatenated and passed through gated dilated-causal temporal blocks
alternating with diffusion graph convolutions over a fixed skeleton prior and
a learned adaptive adjacency.

Internal layout is channels-last, (B, T, J, C); ``encode_audio_action``
returns the (B, C, J, T) layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import Module, param, uniform
from .tensor import ShapeError, Tensor


class TopologyError(ValueError):
    pass


@dataclass
class SkeletonTopology:
    names: list[str]
    parents: list[int]
    rest_directions: np.ndarray = None

    def __post_init__(self):
        j = len(self.names)
        if j < 1 or len(self.parents) != j:
            raise TopologyError(f"{j} node names but {len(self.parents)} parent indices")
        roots = [i for i, p in enumerate(self.parents) if p == -1]
        if len(roots) != 1:
            raise TopologyError(f"skeleton needs exactly one root (parent -1), found {len(roots)}")
        for i, p in enumerate(self.parents):
            if p != -1 and not 0 <= p < j:
                raise TopologyError(f"node {self.names[i]!r}: parent index {p} out of range [0, {j})")
            if p == i:
                raise TopologyError(f"node {self.names[i]!r} is its own parent")
        for i in range(j):            # every chain must reach the root: connected and acyclic
            seen, k = set(), i
            while k != -1:
                if k in seen:
                    raise TopologyError(f"cycle through node {self.names[k]!r}")
                seen.add(k)
                k = self.parents[k]
        if self.rest_directions is None:
            rest = np.zeros((j, 3))
            rest[:, 1] = -1.0
        else:
            rest = np.asarray(self.rest_directions, dtype=np.float64).reshape(j, 3)
        norms = np.linalg.norm(rest, axis=1, keepdims=True)
        if np.any(norms < 1e-9):
            raise TopologyError("rest directions must be non-zero")
        self.rest_directions = rest / norms

    @property
    def n_joints(self) -> int:
        return len(self.names)

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 parent-child adjacency with self-loops."""
        j = self.n_joints
        a = np.eye(j)
        for i, p in enumerate(self.parents):
            if p >= 0:
                a[i, p] = a[p, i] = 1.0
        return a

    def to_dict(self) -> dict:
        return {"names": list(self.names), "parents": list(self.parents),
                "rest_directions": self.rest_directions.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        if "preset" in d:
            return skeleton_preset(d["preset"])
        try:
            return cls(list(d["names"]), [int(p) for p in d["parents"]], d.get("rest_directions"))
        except KeyError as exc:
            raise TopologyError(f"skeleton config missing key {exc}") from None


def _ted_nodes():
    # direction vectors between the 10 upper-body joints of the TED gesture data
    up, down = (0.0, 1.0, 0.0), (0.0, -1.0, 0.0)
    return [
        ("spine", -1, up), ("neck", 0, up), ("head", 1, (0.0, 0.9, 0.3)),
        ("r_collar", 0, (-1.0, 0.0, 0.0)), ("r_upper_arm", 3, (-0.3, -1.0, 0.0)), ("r_forearm", 4, (0.0, -0.7, 0.7)),
        ("l_collar", 0, (1.0, 0.0, 0.0)), ("l_upper_arm", 6, (0.3, -1.0, 0.0)), ("l_forearm", 7, (0.0, -0.7, 0.7)),
    ], down


def skeleton_preset(name: str) -> SkeletonTopology:
    """'ted' (9 direction vectors), 'ted_expressive' (42), or 'chain<J>'."""
    if name == "ted":
        nodes, _ = _ted_nodes()
    elif name == "ted_expressive":
        nodes, _ = _ted_nodes()
        nodes = nodes + [("nose", 2, (0.0, 0.2, 1.0)), ("r_eye", 2, (-0.4, 0.3, 0.8)), ("l_eye", 2, (0.4, 0.3, 0.8))]
        for side, wrist in (("r", 5), ("l", 8)):
            sx = -1.0 if side == "r" else 1.0
            for f, finger in enumerate(("thumb", "index", "middle", "ring", "pinky")):
                parent = wrist
                spread = (f - 2) * 0.25
                for seg in range(3):
                    nodes.append((f"{side}_{finger}{seg + 1}", parent, (sx * spread, -1.0, 0.3)))
                    parent = len(nodes) - 1
    elif name.startswith("chain"):
        j = int(name[5:])
        nodes = [(f"n{i}", i - 1, (np.sin(0.3 * i), -1.0, np.cos(0.3 * i))) for i in range(j)]
    else:
        raise TopologyError(f"unknown skeleton preset {name!r}")
    names, parents, rest = zip(*nodes)
    return SkeletonTopology(list(names), list(parents), np.array(rest, dtype=np.float64))


def transition_matrices(adjacency: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward A / rowsum(A) and backward A^T / rowsum(A^T) random-walk matrices."""
    a = np.asarray(adjacency, dtype=np.float64)
    at = a.T
    return a / a.sum(axis=1, keepdims=True), at / at.sum(axis=1, keepdims=True)


def pose_to_graph(poses, steps: int) -> np.ndarray:
    """Stride-sample a (..., T, J*3) or (..., T, J, 3) pose window to ``steps`` frames of (J, 3) nodes.

    stride = floor(T / steps); the first ``steps`` sampled frames are kept.
    """
    poses = np.asarray(poses, dtype=np.float64)
    if poses.shape[-1] != 3:
        poses = poses.reshape(poses.shape[:-1] + (-1, 3))
    n_frames = poses.shape[-3]
    if n_frames < steps:
        raise ShapeError(f"pose window of {n_frames} frames is shorter than {steps} graph steps")
    stride = n_frames // steps
    return np.take(poses, np.arange(steps) * stride, axis=-3)


def adaptive_adjacency(source, target) -> Tensor:
    """Row-stochastic softmax(relu(E1 @ E2^T))."""
    return T.softmax(T.relu(T.matmul(source, T.transpose(target))), axis=1)


def matrix_powers(m, order: int) -> list:
    """[I, M, M^2, ..., M^order]; M may be a Tensor (differentiable) or an ndarray."""
    n = m.shape[0]
    out = [np.eye(n)]
    for _ in range(order):
        out.append(m if len(out) == 1 else T.matmul(out[-1], m) if isinstance(m, Tensor) else out[-1] @ m)
    return out


def diffusion_graph_conv(x, p_forward, p_backward, a_adapt, weights: Sequence[Sequence], bias=None) -> Tensor:
    """sum_j P_f^j X W_j1 + P_b^j X W_j2 + A^j X W_j3 over j = 0..len(weights)-1.

    x is (..., J, C_in); node mixing acts on axis -2, weights on the channel axis.
    """
    x = T.as_tensor(x)
    order = len(weights) - 1
    if order < 0 or any(len(w) != 3 for w in weights):
        raise ShapeError(f"need 3 weight matrices per diffusion order, got {[len(w) for w in weights]}")
    j = x.shape[-2]
    for m in (p_forward, p_backward, a_adapt):
        if tuple(m.shape) != (j, j):
            raise ShapeError(f"transition matrix {tuple(m.shape)} does not match {j} nodes")
    total = None
    for k, mats in enumerate(zip(matrix_powers(p_forward, order), matrix_powers(p_backward, order),
                                 matrix_powers(a_adapt, order))):
        for power, w in zip(mats, weights[k]):
            w = T.as_tensor(w)
            if w.shape[0] != x.shape[-1]:
                raise ShapeError(f"weight {w.shape} does not match {x.shape[-1]} input channels")
            mixed = x if k == 0 else T.matmul(T.as_tensor(power), x)
            term = T.matmul(mixed, w)
            total = term if total is None else total + term
    return total + bias if bias is not None else total


def tcn_block(x, w_filter, w_gate, dilation: int = 1, stride: int = 1, b_filter=None, b_gate=None) -> Tensor:
    """Gated dilated causal convolution tanh(conv_f(x)) * sigmoid(conv_g(x)) along time (axis 1)."""
    f = T.causal_conv(x, w_filter, dilation, stride)
    g = T.causal_conv(x, w_gate, dilation, stride)
    if b_filter is not None:
        f = f + b_filter
    if b_gate is not None:
        g = g + b_gate
    return T.tanh(f) * T.sigmoid(g)


@dataclass
class GraphEncoderConfig:
    embed_dim: int = 10
    diffusion_order: int = 2
    kernel_size: int = 2
    layers: list = field(default_factory=lambda: [{"dilation": 1, "stride": 2}, {"dilation": 2, "stride": 2}])
    bias: bool = True
    residual: bool = True


class GraphLayer(Module):
    def __init__(self, channels: int, cfg: GraphEncoderConfig, dilation: int, stride: int, rng: np.random.Generator):
        k = cfg.kernel_size
        cb = 1.0 / np.sqrt(channels * k)
        self.w_filter = param(uniform(rng, (k, channels, channels), cb))
        self.w_gate = param(uniform(rng, (k, channels, channels), cb))
        gb = 1.0 / np.sqrt(channels * 3 * (cfg.diffusion_order + 1))
        self.graph_weights = [param(uniform(rng, (channels, channels), gb))
                              for _ in range(3 * (cfg.diffusion_order + 1))]
        if cfg.bias:
            self.b_filter = param(np.zeros(channels))
            self.b_gate = param(np.zeros(channels))
            self.b_graph = param(np.zeros(channels))
        else:
            self.b_filter = self.b_gate = self.b_graph = None
        self.dilation, self.stride, self.residual = dilation, stride, cfg.residual

    def __call__(self, x, p_forward, p_backward, a_adapt) -> Tensor:
        h = tcn_block(x, self.w_filter, self.w_gate, self.dilation, self.stride, self.b_filter, self.b_gate)
        ws = self.graph_weights
        grouped = [ws[i:i + 3] for i in range(0, len(ws), 3)]
        h = diffusion_graph_conv(h, p_forward, p_backward, a_adapt, grouped, self.b_graph)
        if self.residual:
            x = T.as_tensor(x)
            times = T.causal_output_times(x.shape[1], self.stride)
            h = h + x[:, times] if self.stride > 1 else h + x
        return h


class GraphEncoder(Module):
    def __init__(self, topology: SkeletonTopology, channels: int, cfg: GraphEncoderConfig, rng: np.random.Generator):
        j = topology.n_joints
        self.topology = topology
        self.cfg = cfg
        self.channels = channels
        self.p_forward, self.p_backward = transition_matrices(topology.adjacency())
        self.source_embed = param(rng.standard_normal((j, cfg.embed_dim)))
        self.target_embed = param(rng.standard_normal((j, cfg.embed_dim)))
        self.layers = [GraphLayer(channels, cfg, int(l["dilation"]), int(l.get("stride", 1)), rng) for l in cfg.layers]

    def adjacency(self) -> Tensor:
        return adaptive_adjacency(self.source_embed, self.target_embed)

    def output_steps(self, steps: int) -> int:
        for layer in self.layers:
            steps //= layer.stride
        return steps

    def __call__(self, x) -> Tensor:
        """(B, T_g, J, C) -> (B, T_out, J, C), channels last."""
        a = self.adjacency()
        h = T.as_tensor(x)
        for layer in self.layers:
            h = layer(h, self.p_forward, self.p_backward, a)
        return h


def encode_audio_action(audio_nodes, action_nodes, encoder: GraphEncoder) -> Tensor:
    """Channel-concatenate audio (F_a) and action (3) node features and encode.

    audio_nodes: (B, T_g, J, F_a); action_nodes: (B, T_g, J, 3).
    Returns Z of shape (B, F_a + 3, J, T_out).
    """
    audio_nodes, action_nodes = T.as_tensor(audio_nodes), T.as_tensor(action_nodes)
    if audio_nodes.shape[2] != action_nodes.shape[2]:
        raise ShapeError(f"audio graph has {audio_nodes.shape[2]} nodes, action graph {action_nodes.shape[2]}")
    if audio_nodes.shape[:2] != action_nodes.shape[:2]:
        raise ShapeError(f"audio {audio_nodes.shape[:2]} and action {action_nodes.shape[:2]} disagree on batch/time")
    x = T.concat([audio_nodes, action_nodes], axis=-1)
    if x.shape[-1] != encoder.channels:
        raise ShapeError(f"{x.shape[-1]} node channels, encoder expects {encoder.channels}")
    return T.transpose(encoder(x), (0, 3, 2, 1))
