"""Dense reverse-mode automatic differentiation over a static node list.

A :class:`Graph` is built once per model and evaluated many times against a
:class:`ParamStore`. Every value is a float64 numpy array; elementwise ops
broadcast with numpy rules and gradients are summed back to operand shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from kinn import kernels

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class GraphError(ValueError):
    """Raised when a node cannot be evaluated; carries the offending node id."""

    def __init__(self, node_id: int, kind: str, message: str):
        super().__init__(f"node {node_id} ({kind}): {message}")
        self.node_id = node_id
        self.kind = kind


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    inputs: tuple[int, ...] = ()
    attrs: dict = field(default_factory=dict)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


_UNARY = {
    "neg": np.negative,
    "tanh": np.tanh,
    "sigmoid": _sigmoid,
    "relu": lambda a: np.maximum(a, 0.0),
    "exp": np.exp,
    "square": np.square,
}

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


class Graph:
    """Topologically ordered list of operation records.

    Builder methods append a node and return its integer id. Because a node
    can only reference ids that already exist, the order is a valid
    topological order by construction.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.output: int | None = None
        self._ancestors: dict[int, list[int]] = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, kind: str, inputs=(), **attrs) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"{kind}: unknown input node {i}")
        node = Node(len(self.nodes), kind, tuple(inputs), attrs)
        self.nodes.append(node)
        self._ancestors.clear()
        return node.id

    # leaves
    def input(self, name: str) -> int:
        return self._push("input", name=name)

    def param(self, name: str) -> int:
        return self._push("param", name=name)

    def const(self, value) -> int:
        return self._push("const", value=np.asarray(value, dtype=np.float64))

    # linear algebra
    def matmul(self, a: int, b: int) -> int:
        return self._push("matmul", (a, b))

    def add_bias(self, a: int, bias: int) -> int:
        """``a + bias`` with a 1-D bias broadcast over every leading axis."""
        return self._push("add_bias", (a, bias))

    def linear(self, x: int, weight: int, bias: int) -> int:
        return self.add_bias(self.matmul(x, weight), bias)

    # elementwise
    def add(self, a: int, b: int) -> int:
        return self._push("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self._push("sub", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self._push("mul", (a, b))

    def div(self, a: int, b: int) -> int:
        return self._push("div", (a, b))

    def scale(self, a: int, factor: float) -> int:
        return self._push("scale", (a,), factor=float(factor))

    def div_scalar(self, a: int, divisor: float) -> int:
        if divisor == 0:
            raise ValueError("division by zero")
        return self._push("scale", (a,), factor=1.0 / float(divisor))

    def neg(self, a: int) -> int:
        return self._push("neg", (a,))

    def tanh(self, a: int) -> int:
        return self._push("tanh", (a,))

    def sigmoid(self, a: int) -> int:
        return self._push("sigmoid", (a,))

    def relu(self, a: int) -> int:
        return self._push("relu", (a,))

    def exp(self, a: int) -> int:
        return self._push("exp", (a,))

    def square(self, a: int) -> int:
        return self._push("square", (a,))

    # reductions
    def softmax(self, a: int, axis: int = -1) -> int:
        return self._push("softmax", (a,), axis=axis)

    def sum(self, a: int, axis=None, keepdims: bool = False) -> int:
        return self._push("sum", (a,), axis=axis, keepdims=keepdims)

    def mean(self, a: int, axis=None, keepdims: bool = False) -> int:
        return self._push("mean", (a,), axis=axis, keepdims=keepdims)

    # shape plumbing
    def slice(self, a: int, start: int, stop: int) -> int:
        """Columns ``start:stop`` of the last axis."""
        return self._push("slice", (a,), start=start, stop=stop)

    def take(self, a: int, indices) -> int:
        idx = np.asarray(indices, dtype=np.intp)
        return self._push("take", (a,), indices=idx)

    def concat(self, parts, axis: int = -1) -> int:
        return self._push("concat", tuple(parts), axis=axis)

    def reshape(self, a: int, shape) -> int:
        return self._push("reshape", (a,), shape=tuple(shape))

    def expand(self, a: int, axis: int) -> int:
        return self._push("expand", (a,), axis=axis)

    def transpose(self, a: int) -> int:
        """Swap the last two axes."""
        return self._push("transpose", (a,))

    # fused loss
    def kinematic_penalty(self, pred: int, target: int, t_f: int,
                          weight: float = 1.0, velocity_supervision: bool = False) -> int:
        return self._push("kinloss", (pred, target), t_f=int(t_f), weight=float(weight),
                          velocity_supervision=bool(velocity_supervision))

    def set_output(self, node_id: int) -> int:
        if not 0 <= node_id < len(self.nodes):
            raise ValueError(f"unknown node {node_id}")
        self.output = node_id
        return node_id

    def ancestors(self, node_id: int) -> list[int]:
        """Ids needed to compute ``node_id``, in topological order."""
        if node_id not in self._ancestors:
            need = {node_id}
            for node in reversed(self.nodes[: node_id + 1]):
                if node.id in need:
                    need.update(node.inputs)
            self._ancestors[node_id] = sorted(need)
        return self._ancestors[node_id]

    def input_names(self) -> list[str]:
        return [n.attrs["name"] for n in self.nodes if n.kind == "input"]

    def param_names(self) -> list[str]:
        return [n.attrs["name"] for n in self.nodes if n.kind == "param"]


class ParamStore:
    """Named float64 parameters plus adam moments and the shared step count."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.values[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def init_uniform(self, name: str, shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def set(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self.values[name].shape:
            raise ValueError(f"{name}: shape {arr.shape} != {self.values[name].shape}")
        self.values[name][...] = arr

    def count(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name in self.values:
            out.values[name] = self.values[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        out.t = self.t
        return out

    def flat(self) -> np.ndarray:
        if not self.values:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.values.values()])

    def set_flat(self, vector) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        pos = 0
        for arr in self.values.values():
            arr.ravel()[...] = vector[pos : pos + arr.size]
            pos += arr.size
        if pos != vector.size:
            raise ValueError("flat vector length does not match parameter count")


def _forward_node(node: Node, args: list[np.ndarray]) -> np.ndarray:
    kind = node.kind
    if kind in _UNARY:
        return _UNARY[kind](args[0])
    if kind in _BINARY:
        return _BINARY[kind](args[0], args[1])
    if kind == "matmul":
        a, b = args
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
        return np.matmul(a, b)
    if kind == "add_bias":
        a, b = args
        if b.ndim != 1 or a.shape[-1] != b.shape[0]:
            raise ValueError(f"bias shape {b.shape} does not match {a.shape}")
        return a + b
    if kind == "scale":
        return args[0] * node.attrs["factor"]
    if kind == "softmax":
        a = args[0]
        shifted = a - a.max(axis=node.attrs["axis"], keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=node.attrs["axis"], keepdims=True)
    if kind == "sum":
        return np.sum(args[0], axis=node.attrs["axis"], keepdims=node.attrs["keepdims"])
    if kind == "mean":
        return np.mean(args[0], axis=node.attrs["axis"], keepdims=node.attrs["keepdims"])
    if kind == "slice":
        a = args[0]
        start, stop = node.attrs["start"], node.attrs["stop"]
        if not 0 <= start < stop <= a.shape[-1]:
            raise ValueError(f"slice [{start}:{stop}] out of range for {a.shape}")
        return a[..., start:stop]
    if kind == "take":
        return np.take(args[0], node.attrs["indices"], axis=-1)
    if kind == "concat":
        return np.concatenate(args, axis=node.attrs["axis"])
    if kind == "reshape":
        return args[0].reshape(node.attrs["shape"])
    if kind == "expand":
        return np.expand_dims(args[0], node.attrs["axis"])
    if kind == "transpose":
        return np.swapaxes(args[0], -1, -2)
    if kind == "kinloss":
        loss, _ = kernels.kinloss(args[0], args[1], node.attrs["t_f"], node.attrs["weight"],
                                  node.attrs["velocity_supervision"], False)
        return np.asarray(loss)
    raise ValueError(f"unknown op kind {kind!r}")


def _forward(graph: Graph, inputs: Mapping[str, np.ndarray], params: ParamStore,
             output: int) -> dict[int, np.ndarray]:
    values: dict[int, np.ndarray] = {}
    for nid in graph.ancestors(output):
        node = graph.nodes[nid]
        if node.kind == "input":
            name = node.attrs["name"]
            if name not in inputs:
                raise GraphError(nid, node.kind, f"input {name!r} is not bound")
            values[nid] = np.asarray(inputs[name], dtype=np.float64)
            continue
        if node.kind == "param":
            name = node.attrs["name"]
            if name not in params:
                raise GraphError(nid, node.kind, f"parameter {name!r} missing from store")
            values[nid] = params[name]
            continue
        if node.kind == "const":
            values[nid] = node.attrs["value"]
            continue
        try:
            with np.errstate(all="ignore"):
                out = _forward_node(node, [values[i] for i in node.inputs])
        except ValueError as exc:
            raise GraphError(nid, node.kind, str(exc)) from None
        if not np.all(np.isfinite(out)):
            raise GraphError(nid, node.kind, "non-finite value produced")
        values[nid] = out
    return values


def evaluate(graph: Graph, inputs: Mapping[str, np.ndarray], params: ParamStore,
             output: int | None = None) -> np.ndarray:
    """Forward pass; returns the value of ``output`` (default: the graph output)."""
    out = graph.output if output is None else output
    if out is None:
        raise ValueError("graph has no designated output")
    return _forward(graph, inputs, params, out)[out]


def _backward_node(node: Node, args, out, g):
    """Vector-Jacobian products for each input of ``node``."""
    kind = node.kind
    if kind == "add":
        return [_unbroadcast(g, args[0].shape), _unbroadcast(g, args[1].shape)]
    if kind == "sub":
        return [_unbroadcast(g, args[0].shape), _unbroadcast(-g, args[1].shape)]
    if kind == "mul":
        a, b = args
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    if kind == "div":
        a, b = args
        return [_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)]
    if kind == "matmul":
        a, b = args
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]
    if kind == "add_bias":
        return [g, g.reshape(-1, g.shape[-1]).sum(axis=0)]
    if kind == "scale":
        return [g * node.attrs["factor"]]
    if kind == "neg":
        return [-g]
    if kind == "tanh":
        return [g * (1.0 - out * out)]
    if kind == "sigmoid":
        return [g * out * (1.0 - out)]
    if kind == "relu":
        return [g * (args[0] > 0)]
    if kind == "exp":
        return [g * out]
    if kind == "square":
        return [2.0 * g * args[0]]
    if kind == "softmax":
        axis = node.attrs["axis"]
        return [out * (g - np.sum(g * out, axis=axis, keepdims=True))]
    if kind in ("sum", "mean"):
        a = args[0]
        axis, keepdims = node.attrs["axis"], node.attrs["keepdims"]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.broadcast_to(g, a.shape)
        if kind == "mean":
            grad = grad * (out.size / a.size)
        return [np.array(grad)]
    if kind == "slice":
        grad = np.zeros_like(args[0])
        grad[..., node.attrs["start"]:node.attrs["stop"]] = g
        return [grad]
    if kind == "take":
        a = args[0]
        grad = np.zeros_like(a)
        moved = np.moveaxis(grad, -1, 0)
        np.add.at(moved, node.attrs["indices"], np.moveaxis(g, -1, 0))
        return [grad]
    if kind == "concat":
        axis = node.attrs["axis"]
        bounds = np.cumsum([a.shape[axis] for a in args])[:-1]
        return np.split(g, bounds, axis=axis)
    if kind == "reshape":
        return [g.reshape(args[0].shape)]
    if kind == "expand":
        return [np.squeeze(g, axis=node.attrs["axis"])]
    if kind == "transpose":
        return [np.swapaxes(g, -1, -2)]
    if kind == "kinloss":
        _, grad = kernels.kinloss(args[0], args[1], node.attrs["t_f"], node.attrs["weight"],
                                  node.attrs["velocity_supervision"], True)
        return [g * grad, np.zeros_like(args[1])]
    raise ValueError(f"no gradient rule for {kind!r}")


def value_and_gradients(graph: Graph, inputs: Mapping[str, np.ndarray], params: ParamStore,
                        output: int | None = None) -> tuple[float, dict[str, np.ndarray]]:
    out_id = graph.output if output is None else output
    if out_id is None:
        raise ValueError("graph has no designated output")
    values = _forward(graph, inputs, params, out_id)
    result = values[out_id]
    if result.size != 1:
        raise GraphError(out_id, graph.nodes[out_id].kind,
                         f"gradients need a scalar output, got shape {result.shape}")

    adj: dict[int, np.ndarray] = {out_id: np.ones_like(result)}
    grads = {name: np.zeros_like(params[name]) for name in params}
    for nid in reversed(graph.ancestors(out_id)):
        g = adj.pop(nid, None)
        if g is None:
            continue
        node = graph.nodes[nid]
        if node.kind == "param":
            grads[node.attrs["name"]] += g
            continue
        if node.kind in ("input", "const"):
            continue
        args = [values[i] for i in node.inputs]
        with np.errstate(all="ignore"):
            parts = _backward_node(node, args, values[nid], g)
        for i, part in zip(node.inputs, parts):
            if i in adj:
                adj[i] = adj[i] + part
            else:
                adj[i] = part
    return float(result.reshape(())), grads


def gradients(graph: Graph, inputs: Mapping[str, np.ndarray], params: ParamStore,
              output: int | None = None) -> dict[str, np.ndarray]:
    """d(output)/d(param) for every parameter in the store.

    Parameters the output does not depend on get zero arrays.
    """
    return value_and_gradients(graph, inputs, params, output)[1]


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray], lr: float = 0.01,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> ParamStore:
    """One bias-corrected adam update, in place. Missing gradients count as zero."""
    for name, g in grads.items():
        if name in params and np.shape(g) != params[name].shape:
            raise ValueError(f"gradient for {name!r} has shape {np.shape(g)}, "
                             f"expected {params[name].shape}")
    params.t += 1
    for name, value in params.values.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        kernels.adam_update(value, np.ascontiguousarray(g, dtype=np.float64),
                            params.m[name], params.v[name], lr, beta1, beta2, eps, params.t)
    return params


def numeric_gradients(graph: Graph, inputs: Mapping[str, np.ndarray], params: ParamStore,
                      output: int | None = None, eps: float = 1e-6) -> dict[str, np.ndarray]:
    """Central finite differences, one parameter entry at a time."""
    out = {}
    for name in params:
        arr = params[name]
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(evaluate(graph, inputs, params, output).reshape(()))
            flat[i] = orig - eps
            lo = float(evaluate(graph, inputs, params, output).reshape(()))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        out[name] = grad
    return out
