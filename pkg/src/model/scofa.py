"""
Spatio-contextual feature aggregation: per-stream CRF refinement, then a
channel-attention branch and a four-direction IRNN branch.
"""
from typing import List, Tuple

import numpy as np

from autograd import Function, Module, Parameter, Tensor, ops
from utils.errors import ConfigError, ShapeError
from .layers import Conv2d, he_normal

DIRECTIONS = ("left_to_right", "right_to_left", "top_to_bottom", "bottom_to_top")


class CrfBlock(Module):
    """
    Damped mean-field refinement: F(t+1) = relu(F0 + gamma * pairwise(F(t))).

    The pairwise term is a bias-free 3x3 convolution; with a zero kernel every
    iterate is relu(F0), which equals the input when the input is nonnegative.
    """

    def __init__(self, channels: int, iterations: int, damping: float, rng: np.random.Generator):
        if iterations < 1:
            raise ConfigError(f"CRF needs at least one iteration, got {iterations}")
        if not 0.0 < damping <= 1.0:
            raise ConfigError(f"CRF damping must lie in (0, 1], got {damping}")
        self.iterations = iterations
        self.damping = damping
        self.pairwise = Conv2d(channels, channels, 3, rng, bias=False)
        self.pairwise.weight.data *= 0.1

    def forward(self, fmap: Tensor) -> Tensor:
        return crf_refine(fmap, self)


def crf_refine(fmap: Tensor, block: CrfBlock) -> Tensor:
    """Run the configured number of message-passing steps from the unary map."""
    state = fmap
    for _ in range(block.iterations):
        state = ops.relu(ops.add(fmap, ops.mul(block.pairwise(state), block.damping)))
    return state


class ChannelAttention(Module):
    """Sigmoid mask from a 1x1 convolution, multiplied back onto its input."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv = Conv2d(channels, channels, 1, rng)

    def forward(self, fmap: Tensor) -> Tensor:
        return channel_attention(fmap, self)


def channel_attention(fmap: Tensor, att: ChannelAttention) -> Tensor:
    if fmap.ndim != 4 or fmap.shape[1] != att.conv.weight.shape[1]:
        raise ShapeError(f"Channel attention over {att.conv.weight.shape[1]} channels got {fmap.shape}")
    return ops.mul(fmap, ops.sigmoid(att.conv(fmap)))


def _to_sequences(x: np.ndarray, direction: str) -> np.ndarray:
    """[N, C, H, W] -> [T, B, C] in sweep order."""
    n, c, h, w = x.shape
    if direction in ("left_to_right", "right_to_left"):
        seq = x.transpose(3, 0, 2, 1).reshape(w, n * h, c)
    else:
        seq = x.transpose(2, 0, 3, 1).reshape(h, n * w, c)
    if direction in ("right_to_left", "bottom_to_top"):
        seq = seq[::-1]
    return seq


def _from_sequences(seq: np.ndarray, shape: Tuple[int, ...], direction: str) -> np.ndarray:
    n, c, h, w = shape
    if direction in ("right_to_left", "bottom_to_top"):
        seq = seq[::-1]
    if direction in ("left_to_right", "right_to_left"):
        return np.ascontiguousarray(seq.reshape(w, n, h, c).transpose(1, 3, 2, 0))
    return np.ascontiguousarray(seq.reshape(h, n, w, c).transpose(1, 3, 0, 2))


class IrnnSweep(Function):
    """h_t = relu(V x_t + U h_(t-1) + b) along one direction, h_0 = 0."""

    def forward(self, x, u, v, b, direction):
        self.direction = direction
        seq = _to_sequences(x, direction)
        t_len, batch, c = seq.shape
        hidden = np.zeros((t_len, batch, u.shape[0]), dtype=x.dtype)
        prev = np.zeros((batch, u.shape[0]), dtype=x.dtype)
        for t in range(t_len):
            prev = np.maximum(seq[t] @ v.T + prev @ u.T + b, 0)
            hidden[t] = prev
        self.seq, self.hidden = seq, hidden
        return _from_sequences(hidden, (x.shape[0], u.shape[0], x.shape[2], x.shape[3]), direction)

    def backward(self, grad):
        x, u, v, b = self.inputs
        g_seq = _to_sequences(grad, self.direction)
        seq, hidden = self.seq, self.hidden
        du = np.zeros_like(u.data)
        dv = np.zeros_like(v.data)
        db = np.zeros_like(b.data)
        dseq = np.zeros_like(seq)
        carry = np.zeros_like(hidden[0])
        for t in range(seq.shape[0] - 1, -1, -1):
            dpre = (g_seq[t] + carry) * (hidden[t] > 0)
            prev = hidden[t - 1] if t > 0 else np.zeros_like(hidden[0])
            dv += dpre.T @ seq[t]
            du += dpre.T @ prev
            db += dpre.sum(axis=0)
            dseq[t] = dpre @ v.data
            carry = dpre @ u.data
        return _from_sequences(dseq, x.shape, self.direction), du, dv, db


class IrnnBlock(Module):
    """1x1 projection followed by four identity-initialised ReLU RNN sweeps."""

    def __init__(self, in_channels: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.project = Conv2d(in_channels, hidden, 1, rng)
        self.recurrent: List[Parameter] = [Parameter(np.eye(hidden, dtype=np.float32)) for _ in DIRECTIONS]
        self.input_weights: List[Parameter] = [
            Parameter(he_normal(rng, (hidden, hidden), hidden) * 0.5) for _ in DIRECTIONS]
        self.biases: List[Parameter] = [Parameter(np.zeros(hidden, dtype=np.float32)) for _ in DIRECTIONS]

    @property
    def out_channels(self) -> int:
        return 4 * self.hidden

    def sweep(self, x: Tensor, direction: str) -> Tensor:
        k = DIRECTIONS.index(direction)
        return IrnnSweep.apply(x, self.recurrent[k], self.input_weights[k], self.biases[k], direction=direction)

    def forward(self, fmap: Tensor) -> Tensor:
        return irnn_sweep(fmap, self)


def irnn_sweep(fmap: Tensor, block: IrnnBlock) -> Tensor:
    """Project, sweep in all four directions and concatenate along channels."""
    x = block.project(fmap)
    return ops.concat([block.sweep(x, d) for d in DIRECTIONS], axis=1)


class SCoFA(Module):
    """Two CRF blocks, stream concatenation, then the enabled branches."""

    def __init__(self, channels: int, rng: np.random.Generator, spatial: bool = True,
                 contextual: bool = True, crf_iterations: int = 3, crf_damping: float = 0.5,
                 irnn_channels: int = 32):
        if not (spatial or contextual):
            raise ConfigError("SCoFA needs at least one of the spatial and contextual branches")
        self.channels = channels
        self.crf_visible = CrfBlock(channels, crf_iterations, crf_damping, rng)
        self.crf_thermal = CrfBlock(channels, crf_iterations, crf_damping, rng)
        self.attention = ChannelAttention(2 * channels, rng) if spatial else None
        self.irnn = IrnnBlock(2 * channels, irnn_channels, rng) if contextual else None

    @property
    def out_channels(self) -> int:
        total = 2 * self.channels if self.attention is not None else 0
        if self.irnn is not None:
            total += self.irnn.out_channels
        return total

    def forward(self, fv: Tensor, ft: Tensor) -> Tensor:
        if fv.shape != ft.shape:
            raise ShapeError(f"SCoFA streams differ in shape: {fv.shape} vs {ft.shape}")
        refined = ops.concat([crf_refine(fv, self.crf_visible), crf_refine(ft, self.crf_thermal)], axis=1)
        branches = []
        if self.attention is not None:
            branches.append(channel_attention(refined, self.attention))
        if self.irnn is not None:
            branches.append(irnn_sweep(refined, self.irnn))
        return branches[0] if len(branches) == 1 else ops.concat(branches, axis=1)


def scofa_forward(fv: Tensor, ft: Tensor, scofa: SCoFA) -> Tensor:
    return scofa(fv, ft)
