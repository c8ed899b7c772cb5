"""
Tests for grid graphs, graph attention and the fusion units.
"""
import numpy as np
import pytest

from autograd import Tensor, grad_check, ops
from model.mufem import (GatLayer, GridGraph, MuFEm, attention_coefficients, fusion_unit, fusion_weights,
                         gat_forward, graph_to_grid, grid_to_graph, mufem_forward)
from utils.errors import ConfigError, ShapeError


def loop_gat(h, W, a, slope=0.2):
    """Direct double-loop evaluation of one attention update."""
    wh = h @ W
    fp = W.shape[1]
    n = h.shape[0]
    e = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            s = a[:fp] @ wh[i] + a[fp:] @ wh[j]
            e[i, j] = s if s > 0 else slope * s
    alpha = np.exp(e - e.max(axis=1, keepdims=True))
    alpha /= alpha.sum(axis=1, keepdims=True)
    out = np.zeros((n, fp))
    for i in range(n):
        for j in range(n):
            out[i] += alpha[i, j] * wh[j]
    return np.tanh(out), alpha


def graph(h, grid=None, p=1):
    h = Tensor(np.asarray(h, dtype=np.float64))
    return GridGraph(h=h, patch_size=p, grid=grid or (1, h.shape[0]))


class TestGridToGraph:
    def test_single_patch_is_channel_max(self, rng):
        fmap = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
        g = grid_to_graph(Tensor(fmap), 4)
        assert g.n_nodes == 1
        np.testing.assert_array_equal(g.h.data[0], fmap[0].max(axis=(1, 2)))

    def test_constant_map(self):
        g = grid_to_graph(Tensor(np.full((1, 2, 4, 6), 3.5, dtype=np.float32)), 2)
        assert g.grid == (2, 3)
        np.testing.assert_array_equal(g.h.data, 3.5)

    def test_quadrant_maxima(self):
        fmap = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        g = grid_to_graph(Tensor(fmap), 2)
        np.testing.assert_array_equal(g.h.data[:, 0], [5, 7, 13, 15])

    def test_indivisible_map(self):
        with pytest.raises(ConfigError):
            grid_to_graph(Tensor(np.zeros((1, 2, 5, 4))), 2)


class TestGatForward:
    def test_single_node(self, rng):
        layer = GatLayer(3, 3, rng)
        h = rng.standard_normal((1, 3))
        _, alpha = attention_coefficients(graph(h), layer)
        np.testing.assert_allclose(alpha.data, [[1.0]])
        out = gat_forward(graph(h), layer)
        np.testing.assert_allclose(out.h.data, np.tanh(h @ layer.W.data), atol=1e-6)

    def test_identical_nodes_attend_uniformly(self, rng):
        layer = GatLayer(3, 3, rng)
        h = np.tile(rng.standard_normal((1, 3)), (2, 1))
        _, alpha = attention_coefficients(graph(h), layer)
        np.testing.assert_allclose(alpha.data, 0.5, atol=1e-7)

    def test_matches_loop_oracle(self, rng):
        layer = GatLayer(4, 3, rng)
        h = rng.standard_normal((4, 4))
        expected, expected_alpha = loop_gat(h, layer.W.data.astype(np.float64), layer.a.data.astype(np.float64))
        _, alpha = attention_coefficients(graph(h, (2, 2)), layer)
        np.testing.assert_allclose(alpha.data, expected_alpha, atol=1e-6)
        np.testing.assert_allclose(gat_forward(graph(h, (2, 2)), layer).h.data, expected, atol=1e-6)

    def test_rows_are_stochastic(self):
        # graphs are complete, so each draw varies the node count, width, scale and weights
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            n = int(rng.integers(1, 17))
            f = int(rng.integers(1, 33))
            layer = GatLayer(f, int(rng.integers(1, 33)), rng)
            h = rng.standard_normal((n, f)) * rng.uniform(0.1, 10.0)
            _, alpha = attention_coefficients(graph(h), layer)
            assert alpha.shape == (n, n)
            assert np.all(alpha.data >= 0)
            np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-6)

    def test_node_permutation_equivariance(self, rng):
        layer = GatLayer(3, 3, rng)
        h = rng.standard_normal((6, 3))
        perm = rng.permutation(6)
        out = gat_forward(graph(h), layer).h.data
        permuted = gat_forward(graph(h[perm]), layer).h.data
        np.testing.assert_allclose(permuted, out[perm], atol=1e-6)

    def test_empty_graph(self, rng):
        with pytest.raises(ShapeError):
            gat_forward(graph(np.zeros((0, 3))), GatLayer(3, 3, rng))


class TestGraphToGrid:
    def test_zero_nodes_give_identity(self, rng):
        original = Tensor(rng.standard_normal((1, 2, 4, 4)))
        g = GridGraph(h=Tensor(np.zeros((4, 2))), patch_size=2, grid=(2, 2))
        np.testing.assert_array_equal(graph_to_grid(g, original).data, original.data)

    def test_single_node_broadcast(self):
        g = GridGraph(h=Tensor(np.array([[1.5, -2.0]])), patch_size=3, grid=(1, 1))
        out = graph_to_grid(g, Tensor(np.zeros((1, 2, 3, 3))))
        np.testing.assert_array_equal(out.data[0, 0], 1.5)
        np.testing.assert_array_equal(out.data[0, 1], -2.0)

    def test_two_nodes_patchwise(self):
        original = np.arange(8, dtype=np.float64).reshape(1, 1, 2, 4)
        g = GridGraph(h=Tensor(np.array([[10.0], [20.0]])), patch_size=2, grid=(1, 2))
        out = graph_to_grid(g, Tensor(original))
        np.testing.assert_array_equal(out.data[0, 0], [[10, 11, 22, 23], [14, 15, 26, 27]])

    def test_mismatched_width(self):
        g = GridGraph(h=Tensor(np.zeros((4, 3))), patch_size=2, grid=(2, 2))
        with pytest.raises(ShapeError):
            graph_to_grid(g, Tensor(np.zeros((1, 2, 4, 4))))


class TestFusionUnit:
    def test_equal_streams_vanish(self, rng):
        f = Tensor(rng.standard_normal((1, 3, 4, 4)))
        fo, go = fusion_unit(f, f)
        np.testing.assert_array_equal(fo.data, 0.0)
        np.testing.assert_array_equal(go.data, 0.0)

    def test_antisymmetry(self, rng):
        f = Tensor(rng.standard_normal((1, 4, 3, 3)).astype(np.float32))
        g = Tensor(rng.standard_normal((1, 4, 3, 3)).astype(np.float32))
        np.testing.assert_allclose(fusion_weights(f, g).data + fusion_weights(g, f).data, 0.0, atol=1e-6)
        fo, go = fusion_unit(g, f)
        w = fusion_weights(f, g).data
        np.testing.assert_allclose(fo.data, g.data * -w[None, :, None, None], atol=1e-6)
        np.testing.assert_allclose(go.data, f.data * -w[None, :, None, None], atol=1e-6)

    def test_channel_means(self):
        f = np.zeros((1, 2, 2, 2))
        f[0, 0] = 1.0
        f[0, 1] = -1.0
        w = fusion_weights(Tensor(f), Tensor(np.zeros_like(f)))
        np.testing.assert_allclose(w.data, [np.tanh(1.0), -np.tanh(1.0)])
        assert w.data[0] == pytest.approx(0.7616, abs=1e-4)

    def test_weights_bounded(self, rng):
        f = Tensor(rng.standard_normal((1, 5, 2, 2)) * 50)
        w = fusion_weights(f, Tensor(np.zeros((1, 5, 2, 2))))
        assert np.all(np.abs(w.data) <= 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fusion_unit(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 3, 2, 2))))


class TestMufemForward:
    def test_needs_a_unit(self, rng):
        with pytest.raises(ConfigError):
            MuFEm(4, 0, 2, rng)

    @pytest.mark.parametrize("units", [1, 2, 4])
    def test_shapes_preserved(self, rng, units):
        mufem = MuFEm(4, units, 2, rng)
        fv = Tensor(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
        ft = Tensor(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
        out_v, out_t = mufem_forward(fv, ft, mufem)
        assert out_v.shape == fv.shape and out_t.shape == ft.shape

    def test_single_unit_is_manual_composition(self, rng):
        mufem = MuFEm(3, 1, 2, rng)
        fv = Tensor(rng.standard_normal((1, 3, 4, 4)))
        ft = Tensor(rng.standard_normal((1, 3, 4, 4)))
        gv = graph_to_grid(gat_forward(grid_to_graph(fv, 2), mufem.gat_visible[0]), fv)
        gt = graph_to_grid(gat_forward(grid_to_graph(ft, 2), mufem.gat_thermal[0]), ft)
        ev, et = fusion_unit(gv, gt)
        out_v, out_t = mufem_forward(fv, ft, mufem)
        np.testing.assert_allclose(out_v.data, ev.data)
        np.testing.assert_allclose(out_t.data, et.data)

    def test_streams_use_separate_attention(self, rng):
        mufem = MuFEm(3, 2, 2, rng)
        assert len(mufem.parameters()) == 8
        assert not np.array_equal(mufem.gat_visible[0].W.data, mufem.gat_thermal[0].W.data)

    def test_gradients(self, rng):
        mufem = MuFEm(8, 2, 3, rng).astype(np.float64)
        fv = Tensor(rng.standard_normal((1, 8, 6, 6)))
        ft = Tensor(rng.standard_normal((1, 8, 6, 6)))
        params = mufem.parameters()
        err = grad_check(lambda a, b, *_: ops.concat(list(mufem_forward(a, b, mufem)), axis=1),
                         [fv, ft, *params], max_checks_per_input=16)
        assert err < 1e-4
