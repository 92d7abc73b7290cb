"""Graph mechanics: wiring validation, forward/backward plumbing, descriptor
serialization, and finite-difference checks on small mixed graphs."""

import numpy as np
import pytest

from terraseg.errors import GraphError, ShapeError
from terraseg.graph import (
    ActivationLayer,
    Add,
    BatchNorm2d,
    ConcatCrop,
    Conv2d,
    Dropout,
    MaxPool2d,
    NetworkGraph,
    Softmax,
    TransposeConv2d,
    UnpoolWithIndices,
    grad_check,
)
from terraseg.ops import RELU, TANH
from terraseg.tensor import SeededRng, Tensor

from conftest import rand_tensor


def one_hot(classes, num_classes):
    classes = np.asarray(classes)
    out = np.zeros((num_classes, *classes.shape))
    for c in range(num_classes):
        out[c][classes == c] = 1.0
    return Tensor(out)


def identity_graph(channels=2, hw=(4, 4)):
    g = NetworkGraph((channels, *hw))
    conv = Conv2d(channels, channels, kernel=1)
    conv.weight[...] = np.eye(channels).reshape(channels, channels, 1, 1)
    g.add("ident", conv, ["input"])
    return g


class TestWiring:
    def test_identity_forward(self):
        g = identity_graph()
        x = rand_tensor(1, (2, 4, 4))
        y, _ = g.forward(x)
        assert np.array_equal(y.data, x.data)

    def test_duplicate_name(self):
        g = identity_graph()
        with pytest.raises(GraphError, match="duplicate"):
            g.add("ident", ActivationLayer(RELU), ["ident"])

    def test_unknown_dependency(self):
        g = NetworkGraph((1, 4, 4))
        with pytest.raises(GraphError, match="unknown node"):
            g.add("a", ActivationLayer(RELU), ["ghost"])

    def test_shape_error_names_node(self):
        g = NetworkGraph((3, 4, 4))
        with pytest.raises(GraphError, match="bad_conv"):
            g.add("bad_conv", Conv2d(5, 2, 3, 1, 1), ["input"])

    def test_default_input_is_previous_node(self):
        g = NetworkGraph((1, 4, 4))
        g.add("act", ActivationLayer(RELU))
        assert g.nodes[-1].inputs == ["input"]

    def test_forward_shape_check(self):
        g = identity_graph()
        with pytest.raises(ShapeError):
            g.forward(rand_tensor(0, (2, 5, 5)))

    def test_unpool_requires_known_pool(self):
        g = NetworkGraph((1, 4, 4))
        with pytest.raises(GraphError, match="pairs with unknown pool"):
            g.add("up", UnpoolWithIndices("nope"), ["input"])

    def test_logits_name_requires_softmax_tail(self):
        g = identity_graph()
        with pytest.raises(GraphError):
            g.logits_name()
        g.add("probs", Softmax(), ["ident"])
        assert g.logits_name() == "ident"

    def test_same_input_twice_is_deterministic(self):
        g = NetworkGraph((2, 8, 8))
        g.add("conv", Conv2d(2, 3, 3, 1, 1, rng=SeededRng(5)), ["input"])
        g.add("act", ActivationLayer(TANH), ["conv"])
        x = rand_tensor(9, (2, 8, 8))
        y1, _ = g.forward(x)
        y2, _ = g.forward(x)
        assert np.array_equal(y1.data, y2.data)


class TestBackward:
    def test_zero_seed_means_zero_grads(self):
        g = NetworkGraph((2, 4, 4))
        g.add("conv", Conv2d(2, 3, 3, 1, 1, rng=SeededRng(3)), ["input"])
        x = rand_tensor(4, (2, 4, 4))
        _, cache = g.forward(x)
        grads = g.backward(cache, {"conv": Tensor(np.zeros((3, 4, 4)))})
        assert all(np.all(v == 0) for v in grads.values())

    def test_fanout_gradients_sum(self):
        # both Add branches consume the same conv, so its weight gradient
        # must be exactly double the single-consumer case
        def conv_graph():
            g = NetworkGraph((2, 4, 4))
            conv = Conv2d(2, 2, 3, 1, 1)
            conv.weight[...] = SeededRng(50).uniform(-0.5, 0.5, conv.weight.shape)
            g.add("conv", conv, ["input"])
            return g

        x = rand_tensor(5, (2, 4, 4))
        seed = rand_tensor(6, (2, 4, 4))
        g2 = conv_graph()
        g2.add("out", Add(), ["conv", "conv"])
        _, cache2 = g2.forward(x)
        double_grads = g2.backward(cache2, {"out": seed})

        g1 = conv_graph()
        _, cache1 = g1.forward(x)
        single_grads = g1.backward(cache1, {"conv": seed})
        assert np.allclose(double_grads["conv.weight"],
                           2.0 * single_grads["conv.weight"])

    def test_residual_skip_passes_gradient_when_main_path_dead(self):
        g = NetworkGraph((2, 4, 4))
        conv = Conv2d(2, 2, 3, 1, 1)  # zero-initialized without an rng
        g.add("conv", conv, ["input"])
        g.add("res", Add(), ["conv", "input"])
        x = rand_tensor(7, (2, 4, 4), low=0.1, high=1.0)
        y, cache = g.forward(x)
        assert np.array_equal(y.data, x.data)  # zero conv contributes nothing
        seed = rand_tensor(8, (2, 4, 4))
        grads = g.backward(cache, {"res": seed})
        # conv still learns: its weight gradient comes from the main branch
        assert np.any(grads["conv.weight"] != 0)

    def test_bad_seed_shape(self):
        g = identity_graph()
        _, cache = g.forward(rand_tensor(0, (2, 4, 4)))
        with pytest.raises(ShapeError):
            g.backward(cache, {"ident": Tensor(np.zeros((2, 3, 3)))})


class TestDescriptor:
    def build_mixed(self):
        g = NetworkGraph((2, 8, 8))
        rng = SeededRng(11)
        g.add("c1", Conv2d(2, 4, 3, 1, 1, rng=rng.spawn("c1")), ["input"])
        g.add("bn", BatchNorm2d(4), ["c1"])
        g.add("act", ActivationLayer(RELU), ["bn"])
        g.add("pool", MaxPool2d(2, 2), ["act"])
        g.add("drop", Dropout(0.25), ["pool"])
        g.add("up", UnpoolWithIndices("pool"), ["drop"])
        g.add("cat", ConcatCrop(), ["up", "act"])
        g.add("head", Conv2d(8, 3, 1, 1, 0, rng=rng.spawn("head")), ["cat"])
        g.add("probs", Softmax(), ["head"])
        return g

    def test_round_trip_preserves_structure(self):
        g = self.build_mixed()
        desc = g.descriptor()
        rebuilt = NetworkGraph.from_descriptor(desc)
        assert rebuilt.descriptor() == desc
        assert [n.name for n in rebuilt.nodes] == [n.name for n in g.nodes]
        assert set(rebuilt.parameters()) == set(g.parameters())
        for k, v in g.parameters().items():
            assert rebuilt.parameters()[k].shape == v.shape

    def test_round_trip_forward_after_param_copy(self):
        g = self.build_mixed()
        rebuilt = NetworkGraph.from_descriptor(g.descriptor())
        dst = rebuilt.parameters()
        for k, v in g.parameters().items():
            dst[k][...] = v
        x = rand_tensor(12, (2, 8, 8))
        ya, _ = g.forward(x, training=False)
        yb, _ = rebuilt.forward(x, training=False)
        assert np.array_equal(ya.data, yb.data)

    def test_descriptor_rejects_missing_input(self):
        with pytest.raises(GraphError):
            NetworkGraph.from_descriptor({"nodes": [{"kind": "conv2d"}]})


class TestGradCheck:
    def test_linear_conv_graph_tight(self):
        g = NetworkGraph((1, 3, 3))
        g.add("head", Conv2d(1, 2, 1, 1, 0, rng=SeededRng(21)), ["input"])
        g.add("probs", Softmax(), ["head"])
        x = rand_tensor(22, (1, 3, 3))
        t = one_hot(SeededRng(23).integers(0, 2, (3, 3)), 2)
        assert grad_check(g, x, t) <= 1e-6

    def test_mixed_graph(self):
        g = TestDescriptor().build_mixed()
        x = Tensor(SeededRng(24).uniform(0.1, 1.0, (2, 8, 8)))
        t = one_hot(SeededRng(25).integers(0, 3, (8, 8)), 3)
        assert grad_check(g, x, t) <= 1e-4

    def test_with_ignore_mask(self):
        g = NetworkGraph((1, 4, 4))
        g.add("head", Conv2d(1, 2, 3, 1, 1, rng=SeededRng(26)), ["input"])
        g.add("probs", Softmax(), ["head"])
        x = rand_tensor(27, (1, 4, 4))
        t = one_hot(SeededRng(28).integers(0, 2, (4, 4)), 2)
        mask = np.zeros((4, 4))
        mask[0, :] = 1
        assert grad_check(g, x, t, ignore_mask=mask) <= 1e-4

    def test_parameter_cap(self):
        g = NetworkGraph((8, 32, 32))
        g.add("big", Conv2d(8, 64, 5, 1, 2, rng=SeededRng(29)), ["input"])
        g.add("probs", Softmax(), ["big"])
        with pytest.raises(Exception, match="cap"):
            grad_check(g, rand_tensor(0, (8, 32, 32)),
                       one_hot(np.zeros((32, 32), dtype=int), 64))
