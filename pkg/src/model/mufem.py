"""
Multimodal feature embedding: stacked units of per-stream grid graph
attention followed by a subtract-pool-tanh fusion unit.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from autograd import Module, Parameter, Tensor, ops
from utils.config import config
from utils.errors import ConfigError, ShapeError


@dataclass
class GridGraph:
    """
    Complete graph over the non-overlapping P x P patches of a feature map.

    Attributes:
        h: Node features [N_nodes, F], nodes in row-major patch order
        patch_size: Patch side P
        grid: Node layout (H/P, W/P)
    """
    h: Tensor
    patch_size: int
    grid: Tuple[int, int]

    @property
    def n_nodes(self) -> int:
        return self.h.shape[0]


def grid_to_graph(fmap: Tensor, patch_size: int) -> GridGraph:
    """
    Max-pool every P x P patch into one node feature vector.

    Args:
        fmap: Feature map [1, C, H, W]
        patch_size: Patch side P

    Returns:
        GridGraph with F = C

    Raises:
        ConfigError: If H or W is not divisible by P
    """
    if fmap.ndim != 4 or fmap.shape[0] != 1:
        raise ShapeError(f"grid_to_graph expects [1,C,H,W], got {fmap.shape}")
    _, c, h, w = fmap.shape
    if patch_size < 1 or h % patch_size or w % patch_size:
        raise ConfigError(f"Feature map {h}x{w} is not divisible into {patch_size}x{patch_size} patches")
    gh, gw = h // patch_size, w // patch_size
    pooled = ops.max_pool(fmap, patch_size, patch_size)
    nodes = ops.transpose(ops.reshape(pooled, (c, gh * gw)), (1, 0))
    return GridGraph(h=nodes, patch_size=patch_size, grid=(gh, gw))


class GatLayer(Module):
    """Single-head graph attention with a LeakyReLU scoring function."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 alpha: float = config.DEFAULT_LEAKY_SLOPE):
        self.alpha = alpha
        self.out_features = out_features
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.W = Parameter(rng.uniform(-limit, limit, (in_features, out_features)).astype(np.float32))
        a_limit = np.sqrt(6.0 / (2 * out_features + 1))
        self.a = Parameter(rng.uniform(-a_limit, a_limit, (2 * out_features,)).astype(np.float32))

    def forward(self, graph: GridGraph) -> GridGraph:
        return gat_forward(graph, self)


def attention_coefficients(graph: GridGraph, layer: GatLayer) -> Tuple[Tensor, Tensor]:
    """
    Compute Wh and the row-stochastic attention matrix over all node pairs.

    Returns:
        (Wh [N, F'], alpha [N, N]) where alpha[i, j] weighs node j for node i
    """
    n = graph.n_nodes
    if n == 0:
        raise ShapeError("Graph has no nodes")
    fp = layer.out_features
    wh = ops.matmul(graph.h, layer.W)
    a_src = ops.reshape(ops.index(layer.a, slice(0, fp)), (fp, 1))
    a_dst = ops.reshape(ops.index(layer.a, slice(fp, 2 * fp)), (fp, 1))
    ones = np.ones((1, n), dtype=wh.dtype)
    src = ops.matmul(ops.matmul(wh, a_src), ones)                      # e_ij source term, varies with i
    dst = ops.matmul(ones.T, ops.transpose(ops.matmul(wh, a_dst)))    # target term, varies with j
    e = ops.leaky_relu(ops.add(src, dst), layer.alpha)
    return wh, ops.softmax(e, axis=1)


def gat_forward(graph: GridGraph, layer: GatLayer) -> GridGraph:
    """
    One attention update: h'_i = tanh(sum_j alpha_ij W h_j).

    Args:
        graph: Input graph
        layer: Attention parameters

    Returns:
        Graph of the same geometry with F' features per node
    """
    wh, alpha = attention_coefficients(graph, layer)
    return GridGraph(h=ops.tanh(ops.matmul(alpha, wh)), patch_size=graph.patch_size, grid=graph.grid)


def graph_to_grid(graph: GridGraph, original: Tensor) -> Tensor:
    """
    Broadcast each node's vector over its patch and add it to the map.

    Raises:
        ShapeError: If the graph geometry or width does not match ``original``
    """
    _, c, h, w = original.shape
    gh, gw = graph.grid
    p = graph.patch_size
    if graph.h.shape != (gh * gw, c) or gh * p != h or gw * p != w:
        raise ShapeError(f"Graph {graph.h.shape} on grid {graph.grid} does not fit map {original.shape}")
    nodes = ops.reshape(ops.transpose(graph.h, (1, 0)), (1, c, gh, gw))
    return ops.add(original, ops.upsample_nearest(nodes, p))


def fusion_weights(f: Tensor, g: Tensor) -> Tensor:
    """Channel weights tanh(GAP(f - g)) as a [C] vector."""
    if f.shape != g.shape:
        raise ShapeError(f"Fusion streams differ in shape: {f.shape} vs {g.shape}")
    pooled = ops.global_avg_pool(ops.sub(f, g))
    return ops.reshape(ops.tanh(pooled), (f.shape[1],))


def fusion_unit(f: Tensor, g: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Recalibrate both streams by the shared weights w = tanh(GAP(f - g)).

    Args:
        f: Visible stream [1, C, H, W]
        g: Thermal stream [1, C, H, W]

    Returns:
        (f * w, g * w)
    """
    w = fusion_weights(f, g)
    return ops.mul(f, w), ops.mul(g, w)


class MuFEm(Module):
    """N fusion units, each with its own pair of per-stream attention layers."""

    def __init__(self, channels: int, n_units: int, patch_size: int, rng: np.random.Generator):
        if n_units < 1:
            raise ConfigError(f"MuFEm needs at least one fusion unit, got {n_units}")
        self.n_units = n_units
        self.patch_size = patch_size
        self.gat_visible: List[GatLayer] = [GatLayer(channels, channels, rng) for _ in range(n_units)]
        self.gat_thermal: List[GatLayer] = [GatLayer(channels, channels, rng) for _ in range(n_units)]

    def stream_update(self, fmap: Tensor, layer: GatLayer) -> Tensor:
        graph = grid_to_graph(fmap, self.patch_size)
        return graph_to_grid(gat_forward(graph, layer), fmap)

    def forward(self, fv: Tensor, ft: Tensor) -> Tuple[Tensor, Tensor]:
        if fv.shape != ft.shape:
            raise ShapeError(f"MuFEm streams differ in shape: {fv.shape} vs {ft.shape}")
        for unit in range(self.n_units):
            fv = self.stream_update(fv, self.gat_visible[unit])
            ft = self.stream_update(ft, self.gat_thermal[unit])
            fv, ft = fusion_unit(fv, ft)
        return fv, ft


def mufem_forward(fv: Tensor, ft: Tensor, mufem: MuFEm) -> Tuple[Tensor, Tensor]:
    """Apply every fusion unit in sequence; output shapes equal input shapes."""
    return mufem(fv, ft)
