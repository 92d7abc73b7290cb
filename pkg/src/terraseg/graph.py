"""Layer graph: a DAG of named nodes evaluated in insertion (topological) order.

Skip connections are plain extra edges; when two consumers read one producer,
their gradients sum at the producer during backprop. Graphs are built
programmatically (see topologies.py) and are acyclic by construction: a node
may only consume nodes added before it.

The graph owns the only mutable numeric state in the package: layer parameter
buffers (exposed via :meth:`NetworkGraph.parameters`) and batch-norm running
statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import GraphError, ParameterError, ShapeError
from .ops import ActivationKind, PoolIndices, RunningStats
from .tensor import SeededRng, Tensor, crop_center

__all__ = [
    "Layer",
    "Input",
    "Conv2d",
    "TransposeConv2d",
    "MaxPool2d",
    "UnpoolWithIndices",
    "BatchNorm2d",
    "Dropout",
    "ActivationLayer",
    "Softmax",
    "ConcatCrop",
    "Add",
    "NetworkGraph",
    "GraphCache",
    "layer_from_spec",
    "grad_check",
]


def _glorot(rng: SeededRng | None, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    if rng is None:
        return np.zeros(shape)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


class Layer:
    """Base layer: stateless unless it overrides params()/state()."""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def state(self) -> dict[str, np.ndarray]:
        """Non-learnable arrays that still belong in a checkpoint."""
        return {}

    def out_shape(self, shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, xs: list[Tensor], training: bool, rng: SeededRng | None):
        raise NotImplementedError

    def backward(self, g: Tensor, ctx) -> tuple[list[Tensor], dict[str, Tensor]]:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Input(Layer):
    def __init__(self, shape: tuple[int, ...]):
        self.shape = tuple(int(e) for e in shape)

    def out_shape(self, shapes):
        return self.shape

    def forward(self, xs, training, rng):
        return xs[0], None

    def spec(self):
        return {"kind": "input", "shape": list(self.shape)}


class Conv2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 padding: int = 0, rng: SeededRng | None = None):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = _glorot(rng, (out_ch, in_ch, kernel, kernel), *fan)
        self.bias = np.zeros(out_ch)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, shapes):
        c, h, w = shapes[0]
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} channels, got {c}")
        oh, ow = ops.conv_output_hw(h, w, self.kernel, self.kernel, self.stride, self.padding)
        return (self.out_ch, oh, ow)

    def forward(self, xs, training, rng):
        y = ops.conv2d(xs[0], Tensor(self.weight), Tensor(self.bias),
                       self.stride, self.padding)
        return y, xs[0]

    def backward(self, g, ctx):
        dx, dw, db = ops.conv2d_backward(g, ctx, Tensor(self.weight),
                                         self.stride, self.padding)
        return [dx], {"weight": dw, "bias": db}

    def spec(self):
        return {"kind": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}


class TransposeConv2d(Layer):
    """Upsampling by the adjoint of a strided conv; no bias."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 2, stride: int = 2,
                 rng: SeededRng | None = None):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride
        fan = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = _glorot(rng, (in_ch, out_ch, kernel, kernel), *fan)

    def params(self):
        return {"weight": self.weight}

    def out_shape(self, shapes):
        c, h, w = shapes[0]
        if c != self.in_ch:
            raise ShapeError(f"transpose conv expects {self.in_ch} channels, got {c}")
        return (self.out_ch, (h - 1) * self.stride + self.kernel,
                (w - 1) * self.stride + self.kernel)

    def forward(self, xs, training, rng):
        return ops.conv2d_transpose(xs[0], Tensor(self.weight), self.stride), xs[0]

    def backward(self, g, ctx):
        dx, dw = ops.conv2d_transpose_backward(g, ctx, Tensor(self.weight), self.stride)
        return [dx], {"weight": dw}

    def spec(self):
        return {"kind": "transpose_conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": self.kernel, "stride": self.stride}


class MaxPool2d(Layer):
    def __init__(self, window: int = 2, stride: int = 2):
        self.window, self.stride = window, stride

    def out_shape(self, shapes):
        c, h, w = shapes[0]
        if self.window > h or self.window > w or (h - self.window) % self.stride \
                or (w - self.window) % self.stride:
            raise ShapeError(f"pool {self.window}/{self.stride} does not tile {h}x{w}")
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)

    def forward(self, xs, training, rng):
        y, idx = ops.max_pool2d(xs[0], self.window, self.stride)
        return y, idx

    def backward(self, g, ctx: PoolIndices):
        return [ops.max_pool2d_backward(g, ctx)], {}

    def spec(self):
        return {"kind": "max_pool2d", "window": self.window, "stride": self.stride}


class UnpoolWithIndices(Layer):
    """Scatter features back to the argmax positions of a paired pool node."""

    def __init__(self, pool: str):
        self.pool = pool  # name of the MaxPool2d node whose indices we reuse

    def out_shape(self, shapes):
        # shapes[1] is the paired pool node's *input* shape (graph supplies it)
        c, _, _ = shapes[0]
        pc, ph, pw = shapes[1]
        if c != pc:
            raise ShapeError(f"unpool channels {c} != pooled channels {pc}")
        return (c, ph, pw)

    def forward_with_indices(self, x: Tensor, indices: PoolIndices):
        return ops.unpool_with_indices(x, indices), indices

    def backward(self, g, ctx: PoolIndices):
        return [ops.unpool_backward(g, ctx)], {}

    def spec(self):
        return {"kind": "unpool", "pool": self.pool}


class BatchNorm2d(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.stats = RunningStats.zeros(channels)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def state(self):
        return {"running_mean": self.stats.mean, "running_var": self.stats.var}

    def out_shape(self, shapes):
        if shapes[0][0] != self.channels:
            raise ShapeError(f"batch norm expects {self.channels} channels, got {shapes[0][0]}")
        return shapes[0]

    def forward(self, xs, training, rng):
        return ops.batch_norm(xs[0], Tensor(self.gamma), Tensor(self.beta),
                              self.stats, self.eps, self.momentum, training)

    def backward(self, g, ctx):
        dx, dgamma, dbeta = ops.batch_norm_backward(g, ctx)
        return [dx], {"gamma": dgamma, "beta": dbeta}

    def spec(self):
        return {"kind": "batch_norm2d", "channels": self.channels,
                "eps": self.eps, "momentum": self.momentum}


class Dropout(Layer):
    def __init__(self, rate: float):
        if not (0.0 <= rate < 1.0):
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def out_shape(self, shapes):
        return shapes[0]

    def forward(self, xs, training, rng):
        y, mask = ops.dropout(xs[0], self.rate, rng, training)
        return y, mask

    def backward(self, g, ctx):
        return [ops.dropout_backward(g, ctx, self.rate)], {}

    def spec(self):
        return {"kind": "dropout", "rate": self.rate}


class ActivationLayer(Layer):
    def __init__(self, kind: ActivationKind):
        self.kind = kind

    def out_shape(self, shapes):
        return shapes[0]

    def forward(self, xs, training, rng):
        return ops.activate(self.kind, xs[0]), xs[0]

    def backward(self, g, ctx):
        return [Tensor(g.data * ops.activate_grad(self.kind, ctx).data)], {}

    def spec(self):
        return {"kind": "activation", "fn": self.kind.name, "alpha": self.kind.alpha}


class Softmax(Layer):
    def out_shape(self, shapes):
        return shapes[0]

    def forward(self, xs, training, rng):
        y = ops.softmax(xs[0], axis=0)
        return y, y

    def backward(self, g, ctx):
        return [ops.softmax_backward(g, ctx, axis=0)], {}

    def spec(self):
        return {"kind": "softmax"}


class ConcatCrop(Layer):
    """Channel-concat [main, skip] after center-cropping skip to main's size."""

    def out_shape(self, shapes):
        (c0, h0, w0), (c1, h1, w1) = shapes
        if h1 < h0 or w1 < w0:
            raise ShapeError(f"skip {h1}x{w1} smaller than main path {h0}x{w0}")
        return (c0 + c1, h0, w0)

    def forward(self, xs, training, rng):
        main, skip = xs
        _, h, w = main.shape
        cropped = crop_center(skip, h, w)
        out = np.concatenate([main.data, cropped.data], axis=0)
        return Tensor(out), (main.shape, skip.shape)

    def backward(self, g, ctx):
        (c0, h0, w0), (c1, h1, w1) = ctx
        gm = g.data[:c0]
        gs = np.zeros((c1, h1, w1))
        oy, ox = (h1 - h0) // 2, (w1 - w0) // 2
        gs[:, oy : oy + h0, ox : ox + w0] = g.data[c0:]
        return [Tensor(gm.copy()), Tensor(gs)], {}

    def spec(self):
        return {"kind": "concat_crop"}


class Add(Layer):
    """Elementwise sum of two equal-shape inputs (residual junction)."""

    def out_shape(self, shapes):
        if shapes[0] != shapes[1]:
            raise ShapeError(f"add needs equal shapes, got {shapes[0]} vs {shapes[1]}")
        return shapes[0]

    def forward(self, xs, training, rng):
        return Tensor(xs[0].data + xs[1].data), None

    def backward(self, g, ctx):
        return [g, Tensor(g.data.copy())], {}

    def spec(self):
        return {"kind": "add"}


_LAYER_KINDS = {
    "input": lambda d: Input(tuple(d["shape"])),
    "conv2d": lambda d: Conv2d(d["in_ch"], d["out_ch"], d["kernel"], d["stride"], d["padding"]),
    "transpose_conv2d": lambda d: TransposeConv2d(d["in_ch"], d["out_ch"], d["kernel"], d["stride"]),
    "max_pool2d": lambda d: MaxPool2d(d["window"], d["stride"]),
    "unpool": lambda d: UnpoolWithIndices(d["pool"]),
    "batch_norm2d": lambda d: BatchNorm2d(d["channels"], d["eps"], d["momentum"]),
    "dropout": lambda d: Dropout(d["rate"]),
    "activation": lambda d: ActivationLayer(ActivationKind(d["fn"], d["alpha"])),
    "softmax": lambda d: Softmax(),
    "concat_crop": lambda d: ConcatCrop(),
    "add": lambda d: Add(),
}


def layer_from_spec(d: dict) -> Layer:
    try:
        build = _LAYER_KINDS[d["kind"]]
    except KeyError:
        raise GraphError(f"unknown layer kind {d.get('kind')!r}") from None
    return build(d)


@dataclass
class _Node:
    name: str
    layer: Layer
    inputs: list[str]


@dataclass
class GraphCache:
    """Per-forward intermediate values keyed by node position."""

    outs: list[Tensor]
    ctxs: list[object]
    training: bool


class NetworkGraph:
    """Feed-forward DAG with a single input node named "input"."""

    def __init__(self, input_shape: tuple[int, ...]):
        self.nodes: list[_Node] = []
        self._index: dict[str, int] = {}
        self._shapes: dict[str, tuple[int, ...]] = {}
        self.add("input", Input(input_shape), [])

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self._shapes["input"]

    @property
    def output_name(self) -> str:
        return self.nodes[-1].name

    def add(self, name: str, layer: Layer, inputs: list[str] | None = None) -> str:
        """Append a node consuming already-added nodes; validates shapes now."""
        if name in self._index:
            raise GraphError(f"duplicate node name {name!r}")
        if inputs is None:
            inputs = [self.nodes[-1].name]
        for dep in inputs:
            if dep not in self._index:
                raise GraphError(f"node {name!r} consumes unknown node {dep!r}")
        shapes = [self._shapes[dep] for dep in inputs]
        if isinstance(layer, UnpoolWithIndices):
            pool_idx = self._index.get(layer.pool)
            if pool_idx is None or not isinstance(self.nodes[pool_idx].layer, MaxPool2d):
                raise GraphError(f"unpool node {name!r} pairs with unknown pool {layer.pool!r}")
            pool_in = self.nodes[pool_idx].inputs[0]
            shapes = shapes + [self._shapes[pool_in]]
        try:
            out = layer.out_shape(shapes)
        except ShapeError as e:
            raise GraphError(f"node {name!r}: {e}") from e
        self._index[name] = len(self.nodes)
        self.nodes.append(_Node(name, layer, list(inputs)))
        self._shapes[name] = out
        return name

    def shape_of(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def logits_name(self) -> str:
        """Name of the node feeding the final softmax."""
        last = self.nodes[-1]
        if not isinstance(last.layer, Softmax):
            raise GraphError("graph does not end in a softmax node")
        return last.inputs[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Learnable buffers, keyed "<node>.<param>", in insertion order."""
        out = {}
        for node in self.nodes:
            for key, arr in node.layer.params().items():
                out[f"{node.name}.{key}"] = arr
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for node in self.nodes:
            for key, arr in node.layer.state().items():
                out[f"{node.name}.{key}"] = arr
        return out

    def count_parameters(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def forward(self, x: Tensor, training: bool = False,
                rng: SeededRng | None = None) -> tuple[Tensor, GraphCache]:
        if x.shape != self.input_shape:
            raise ShapeError(f"input shape {x.shape} != graph input {self.input_shape}")
        outs: list[Tensor] = [None] * len(self.nodes)
        ctxs: list[object] = [None] * len(self.nodes)
        for i, node in enumerate(self.nodes):
            xs = [x] if i == 0 else [outs[self._index[d]] for d in node.inputs]
            if isinstance(node.layer, UnpoolWithIndices):
                indices = ctxs[self._index[node.layer.pool]]
                out, ctx = node.layer.forward_with_indices(xs[0], indices)
            else:
                node_rng = rng.spawn(node.name) if rng is not None else None
                out, ctx = node.layer.forward(xs, training, node_rng)
            outs[i], ctxs[i] = out, ctx
        return outs[-1], GraphCache(outs, ctxs, training)

    def backward(self, cache: GraphCache, seeds: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Backprop from the seeded nodes; returns grads keyed like parameters().

        ``seeds`` maps node name -> gradient of the scalar loss w.r.t. that
        node's output. Fan-out gradients sum where paths rejoin.
        """
        grad_at: list[np.ndarray | None] = [None] * len(self.nodes)
        for name, g in seeds.items():
            i = self._index[name]
            if g.shape != self._shapes[name]:
                raise ShapeError(f"seed for {name!r} has shape {g.shape}, "
                                 f"node produces {self._shapes[name]}")
            grad_at[i] = g.data.copy()
        param_grads: dict[str, np.ndarray] = {}
        for i in range(len(self.nodes) - 1, -1, -1):
            g = grad_at[i]
            node = self.nodes[i]
            if g is None or isinstance(node.layer, Input):
                continue
            in_grads, p_grads = node.layer.backward(Tensor(g), cache.ctxs[i])
            for dep, ig in zip(node.inputs, in_grads):
                j = self._index[dep]
                if grad_at[j] is None:
                    grad_at[j] = ig.data.copy()
                else:
                    grad_at[j] = grad_at[j] + ig.data
            for key, pg in p_grads.items():
                param_grads[f"{node.name}.{key}"] = pg.data
        return param_grads

    def descriptor(self) -> dict:
        """JSON-serializable topology (no parameter values)."""
        return {
            "input_shape": list(self.input_shape),
            "nodes": [
                {"name": n.name, "inputs": list(n.inputs), **n.layer.spec()}
                for n in self.nodes
            ],
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "NetworkGraph":
        nodes = desc["nodes"]
        if not nodes or nodes[0].get("kind") != "input":
            raise GraphError("descriptor must start with the input node")
        graph = cls(tuple(nodes[0]["shape"]))
        for nd in nodes[1:]:
            graph.add(nd["name"], layer_from_spec(nd), list(nd["inputs"]))
        return graph


def grad_check(graph: NetworkGraph, x: Tensor, target: Tensor,
               ignore_mask: np.ndarray | None = None, step: float = 1e-5,
               max_params: int = 10_000) -> float:
    """Compare analytic parameter gradients against central finite differences.

    The loss is the categorical cross-entropy of the graph's softmax output
    against ``target``. Returns the maximum relative error
    |a - n| / max(|a|, |n|, 1e-6) over every parameter element. Keep the
    graph small: the cost is two forwards per parameter.
    """
    n_params = graph.count_parameters()
    if n_params > max_params:
        raise ParameterError(f"graph has {n_params} parameters, grad_check cap is {max_params}")
    logits = graph.logits_name()

    def loss_of() -> float:
        rng = SeededRng(0xD0)  # fixed so dropout masks repeat across evals
        probs, _ = graph.forward(x, training=True, rng=rng)
        loss, _ = ops.categorical_cross_entropy(probs, target, ignore_mask)
        return loss

    rng = SeededRng(0xD0)
    probs, cache = graph.forward(x, training=True, rng=rng)
    _, glogits = ops.categorical_cross_entropy(probs, target, ignore_mask)
    analytic = graph.backward(cache, {logits: glogits})

    worst = 0.0
    for name, arr in graph.parameters().items():
        a_arr = analytic.get(name)
        flat = arr.reshape(-1)
        a_flat = np.zeros_like(flat) if a_arr is None else a_arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_of()
            flat[i] = orig - step
            lm = loss_of()
            flat[i] = orig
            num = (lp - lm) / (2.0 * step)
            rel = abs(a_flat[i] - num) / max(abs(a_flat[i]), abs(num), 1e-6)
            worst = max(worst, rel)
    return worst
