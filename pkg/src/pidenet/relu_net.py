"""Feedforward ReLU networks and the calculus used to assemble them.

A network is a chain of affine maps ``x -> A x + b`` with the ReLU applied
between consecutive maps (never after the last one).  Size is the number of
nonzero entries across all weights and biases; depth is the number of affine
maps plus one.

Weights are held as CSR matrices.  Approximators built from thousands of
chained steps are extremely sparse, and dense storage would be quadratic in
their width.  Every construction writes literal zeros only, and stored
zeros are dropped, so ``size`` is an exact nonzero count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, LoadError

FORMAT_NAME = "pidenet.relu_network"
FORMAT_VERSION = 1


def _as_csr(weights) -> sp.csr_matrix:
    if sp.issparse(weights):
        mat = sp.csr_matrix(weights, dtype=np.float64, copy=True)
    else:
        arr = np.asarray(weights, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidArgument(f"weight matrix must be 2-D, got shape {arr.shape}")
        mat = sp.csr_matrix(arr)
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def _as_bias(bias, rows: int) -> np.ndarray:
    vec = np.array(bias, dtype=np.float64).reshape(-1)
    if vec.shape != (rows,):
        raise InvalidArgument(f"bias length {vec.size} does not match {rows} rows")
    return vec


@dataclass(frozen=True, eq=False)
class Layer:
    weights: sp.csr_matrix
    bias: np.ndarray

    @staticmethod
    def make(weights, bias) -> "Layer":
        w = _as_csr(weights)
        return Layer(w, _as_bias(bias, w.shape[0]))

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @cached_property
    def nnz(self) -> int:
        return int(self.weights.nnz) + int(np.count_nonzero(self.bias))


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Immutable ReLU network; safe to evaluate from many threads."""

    layers: tuple
    input_dim: int = field(init=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidArgument("a network needs at least one affine map")
        for i, layer in enumerate(layers[1:], start=1):
            if layer.cols != layers[i - 1].rows:
                raise InvalidArgument(
                    f"layer {i} expects {layer.cols} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].rows}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_dim", layers[0].cols)

    @staticmethod
    def from_arrays(pairs: Iterable) -> "ReluNetwork":
        return ReluNetwork(tuple(Layer.make(w, b) for w, b in pairs))

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def n_affine(self) -> int:
        return len(self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers) + 1

    @cached_property
    def size(self) -> int:
        return sum(layer.nnz for layer in self.layers)

    @property
    def size_out(self) -> int:
        return self.layers[-1].nnz

    @property
    def widths(self) -> list:
        return [self.input_dim] + [layer.rows for layer in self.layers]

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x) -> np.ndarray:
        """Evaluate at one point (shape ``(n,)``) or a batch (shape ``(B, n)``)."""
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        batch = arr.reshape(1, -1) if single else arr
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise InvalidArgument(
                f"expected input of length {self.input_dim}, got shape {arr.shape}")
        # Work column-major: the CSR product W @ H keeps each layer one sparse matmul.
        h = np.ascontiguousarray(batch.T)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer.weights @ h
            h += layer.bias[:, None]
            if i < last:
                np.maximum(h, 0.0, out=h)
        out = h.T
        return out[0].copy() if single else np.ascontiguousarray(out)

    def dense_layers(self) -> list:
        return [(layer.weights.toarray(), layer.bias.copy()) for layer in self.layers]

    def to_dict(self, encoding: str = "dense", metadata: dict | None = None) -> dict:
        if encoding not in ("dense", "sparse"):
            raise InvalidArgument(f"unknown layer encoding {encoding!r}")
        layers = []
        for layer in self.layers:
            entry = {"rows": layer.rows, "cols": layer.cols}
            if encoding == "dense":
                entry["weights"] = layer.weights.toarray().ravel().tolist()
            else:
                entry["encoding"] = "csr"
                entry["indptr"] = layer.weights.indptr.tolist()
                entry["indices"] = layer.weights.indices.tolist()
                entry["data"] = layer.weights.data.tolist()
            entry["bias"] = layer.bias.tolist()
            layers.append(entry)
        out = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
               "input_dim": self.input_dim, "layers": layers}
        if metadata is not None:
            out["metadata"] = metadata
        return out

    @staticmethod
    def from_dict(obj: dict) -> "ReluNetwork":
        if not isinstance(obj, dict) or obj.get("format") != FORMAT_NAME:
            raise LoadError("not a serialized ReLU network")
        if obj.get("version") != FORMAT_VERSION:
            raise LoadError(f"unsupported network format version {obj.get('version')!r}")
        try:
            layers = []
            for entry in obj["layers"]:
                rows, cols = int(entry["rows"]), int(entry["cols"])
                if entry.get("encoding", "dense") == "csr":
                    w = sp.csr_matrix((np.asarray(entry["data"], dtype=np.float64),
                                       np.asarray(entry["indices"], dtype=np.int64),
                                       np.asarray(entry["indptr"], dtype=np.int64)),
                                      shape=(rows, cols))
                else:
                    w = np.asarray(entry["weights"], dtype=np.float64).reshape(rows, cols)
                layers.append(Layer.make(w, entry["bias"]))
            net = ReluNetwork(tuple(layers))
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"malformed network record: {exc}") from exc
        if net.input_dim != int(obj["input_dim"]):
            raise LoadError("input_dim does not match the first layer")
        return net


def dumps_json(obj) -> str:
    return json.dumps(obj, allow_nan=False, separators=(",", ":"))


def loads_json(text: str):
    """Parse JSON, converting parser failures into a LoadError with offset."""
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg}", offset=exc.pos) from exc


def save_network(net: ReluNetwork, path, metadata: dict | None = None,
                 encoding: str = "dense") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(net.to_dict(encoding=encoding, metadata=metadata)))


def load_network(path, with_metadata: bool = False):
    with open(path, "r", encoding="utf-8") as fh:
        obj = loads_json(fh.read())
    net = ReluNetwork.from_dict(obj)
    return (net, obj.get("metadata")) if with_metadata else net


# Constructions ---------------------------------------------------------------

def _identity_layers(d: int, n_maps: int) -> list:
    eye = sp.identity(d, format="csr")
    if n_maps == 1:
        return [Layer.make(eye, np.zeros(d))]
    split = sp.vstack([eye, -eye])
    merge = sp.hstack([eye, -eye])
    layers = [Layer.make(split, np.zeros(2 * d))]
    layers += [Layer.make(sp.identity(2 * d), np.zeros(2 * d)) for _ in range(n_maps - 2)]
    layers.append(Layer.make(merge, np.zeros(d)))
    return layers


def identity_net(d: int, ell: int) -> ReluNetwork:
    """Identity on R^d with ``ell`` affine maps via x = relu(x) - relu(-x); size 2*d*ell."""
    if d < 1:
        raise InvalidArgument("dimension must be positive")
    if ell < 2:
        raise InvalidArgument(f"identity network needs ell >= 2, got {ell}")
    return ReluNetwork(tuple(_identity_layers(d, ell)))


def affine_net(matrix, offset) -> ReluNetwork:
    """Exact two-map network for x -> A x + b.

    Only input coordinates with a nonzero column get an identity channel,
    so a constant map costs nothing beyond its bias.
    """
    a = np.asarray(matrix, dtype=np.float64)
    b = np.asarray(offset, dtype=np.float64).reshape(-1)
    m, n = a.shape
    used = np.flatnonzero(np.any(a != 0.0, axis=0))
    if used.size == 0:
        first = np.zeros((1, n))
        return ReluNetwork.from_arrays([(first, np.zeros(1)), (np.zeros((m, 1)), b)])
    k = used.size
    first = np.zeros((2 * k, n))
    first[np.arange(k), used] = 1.0
    first[k + np.arange(k), used] = -1.0
    second = np.hstack([a[:, used], -a[:, used]])
    return ReluNetwork.from_arrays([(first, np.zeros(2 * k)), (second, b)])


def constant_net(input_dim: int, value, depth: int = 3) -> ReluNetwork:
    value = np.asarray(value, dtype=np.float64).reshape(-1)
    if depth < 2:
        raise InvalidArgument("depth must be at least 2")
    if depth == 2:
        return ReluNetwork((Layer.make(sp.csr_matrix((value.size, input_dim)), value),))
    layers = [Layer.make(sp.csr_matrix((1, input_dim)), np.zeros(1))]
    layers += [Layer.make(sp.csr_matrix((1, 1)), np.zeros(1)) for _ in range(depth - 3)]
    layers.append(Layer.make(sp.csr_matrix((value.size, 1)), value))
    return ReluNetwork(tuple(layers))


def compose(outer: ReluNetwork, inner: ReluNetwork) -> ReluNetwork:
    """Network for ``outer(inner(x))`` with ``n_affine(outer) + n_affine(inner)`` maps.

    The inner output y passes through the ReLU as (relu(y), relu(-y)) and the
    outer first map reads it back with weights [A, -A].  That costs
    size(outer) + nnz(A1_outer) + size(inner) + size_out(inner), which is at
    most 2*size(outer) + size_out(inner) + size(inner).
    """
    if outer.input_dim != inner.output_dim:
        raise InvalidArgument(
            f"cannot compose: outer expects {outer.input_dim} inputs, "
            f"inner produces {inner.output_dim}")
    last = inner.layers[-1]
    first = outer.layers[0]
    split = Layer.make(sp.vstack([last.weights, -last.weights]),
                       np.concatenate([last.bias, -last.bias]))
    merge = Layer.make(sp.hstack([first.weights, -first.weights]), first.bias)
    return ReluNetwork(inner.layers[:-1] + (split, merge) + outer.layers[1:])


def _check_equal_depth(nets: Sequence[ReluNetwork]) -> None:
    depths = {net.depth for net in nets}
    if len(depths) != 1:
        raise InvalidArgument(
            f"networks must share a depth (got {sorted(depths)}); lift them first")


def parallelize(nets: Sequence[ReluNetwork], distinct_inputs: bool) -> ReluNetwork:
    """Stack equal-depth networks side by side; outputs are concatenated."""
    nets = list(nets)
    if not nets:
        raise InvalidArgument("nothing to parallelize")
    _check_equal_depth(nets)
    if len(nets) == 1:
        return nets[0]
    if not distinct_inputs and len({net.input_dim for net in nets}) != 1:
        raise InvalidArgument("shared-input parallelization needs a common input_dim")
    layers = []
    for depth_index in range(nets[0].n_affine):
        parts = [net.layers[depth_index] for net in nets]
        bias = np.concatenate([p.bias for p in parts])
        if depth_index == 0 and not distinct_inputs:
            weights = sp.vstack([p.weights for p in parts], format="csr")
        else:
            weights = sp.block_diag([p.weights for p in parts], format="csr")
        layers.append(Layer.make(weights, bias))
    return ReluNetwork(tuple(layers))


def affine_combine(nets: Sequence[ReluNetwork], weights: Sequence[float],
                   bias=None) -> ReluNetwork:
    """Network for ``bias + sum_i weights[i] * nets[i](x)`` at the common depth.

    Terms with an exactly zero weight are dropped before stacking.
    """
    nets = list(nets)
    weights = [float(w) for w in weights]
    if not nets or len(nets) != len(weights):
        raise InvalidArgument("need one weight per network")
    _check_equal_depth(nets)
    in_dims = {net.input_dim for net in nets}
    out_dims = {net.output_dim for net in nets}
    if len(in_dims) != 1 or len(out_dims) != 1:
        raise InvalidArgument("combined networks must share input and output dimensions")
    out_dim = out_dims.pop()
    bias = np.zeros(out_dim) if bias is None else np.broadcast_to(
        np.asarray(bias, dtype=np.float64), (out_dim,)).copy()
    kept = [(net, w) for net, w in zip(nets, weights) if w != 0.0]
    if not kept:
        return constant_net(in_dims.pop(), bias, depth=nets[0].depth)
    if nets[0].n_affine == 1:
        total = sum((w * net.layers[0].weights for net, w in kept), sp.csr_matrix((out_dim, nets[0].input_dim)))
        b = bias + sum(w * net.layers[0].bias for net, w in kept)
        return ReluNetwork((Layer.make(total, b),))
    body = parallelize([ReluNetwork(net.layers[:-1]) for net, _ in kept], distinct_inputs=False)
    return attach_output(body, [net.layers[-1] for net, _ in kept], [w for _, w in kept], bias)


def attach_output(body: ReluNetwork, last_layers: Sequence[Layer],
                  weights: Sequence[float], bias) -> ReluNetwork:
    """Append the weighted, horizontally stacked output maps to a stacked body."""
    stacked = sp.hstack([w * layer.weights for layer, w in zip(last_layers, weights)],
                        format="csr")
    b = np.array(bias, dtype=np.float64)
    for layer, w in zip(last_layers, weights):
        b = b + w * layer.bias
    return ReluNetwork(body.layers + (Layer.make(stacked, b),))


def lift_to_depth(net: ReluNetwork, target_depth: int, side: str = "input") -> ReluNetwork:
    """Same function at ``target_depth`` by composing with an identity network.

    ``side="input"`` computes net(I(x)); ``side="output"`` computes I(net(x)).
    A lift by a single map uses the plain identity matrix as the extra map.
    """
    extra = target_depth - net.depth
    if extra < 0:
        raise InvalidArgument(f"cannot lift depth {net.depth} down to {target_depth}")
    if extra == 0:
        return net
    if side == "input":
        return compose(net, ReluNetwork(tuple(_identity_layers(net.input_dim, extra))))
    if side == "output":
        return compose(ReluNetwork(tuple(_identity_layers(net.output_dim, extra))), net)
    raise InvalidArgument(f"side must be 'input' or 'output', got {side!r}")


def scale_output(net: ReluNetwork, factor: float) -> ReluNetwork:
    last = net.layers[-1]
    return ReluNetwork(net.layers[:-1] + (Layer.make(factor * last.weights, factor * last.bias),))


def freeze_inputs(net: ReluNetwork, positions: Sequence[int], values) -> ReluNetwork:
    """Fix some input coordinates to constants, folding them into the first bias."""
    positions = np.asarray(positions, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if positions.size != values.size:
        raise InvalidArgument("one value per frozen position is required")
    first = net.layers[0]
    keep = np.setdiff1d(np.arange(net.input_dim), positions)
    frozen_part = first.weights[:, positions] @ values
    bias = first.bias + frozen_part
    new_first = Layer.make(first.weights[:, keep], bias)
    return ReluNetwork((new_first,) + net.layers[1:])


def relu_max_net(n: int) -> ReluNetwork:
    """Exact network for max(x_1, ..., x_n) via pairwise max(a,b) = relu(a-b) + relu(b) - relu(-b)."""
    if n < 1:
        raise InvalidArgument("need at least one input")
    layers = []
    pre = np.eye(n)  # linear map feeding the next hidden layer
    width = n
    while True:
        pairs = width // 2
        odd = width % 2
        if width == 1:
            hidden = np.vstack([pre, -pre])
            layers.append((hidden, np.zeros(2)))
            return ReluNetwork.from_arrays(layers + [(np.array([[1.0, -1.0]]), np.zeros(1))])
        rows = []
        for p in range(pairs):
            a, b = pre[2 * p], pre[2 * p + 1]
            rows += [a - b, b, -b]
        if odd:
            rows += [pre[-1], -pre[-1]]
        hidden = np.array(rows)
        layers.append((hidden, np.zeros(hidden.shape[0])))
        new_width = pairs + odd
        out = np.zeros((new_width, hidden.shape[0]))
        for p in range(pairs):
            out[p, 3 * p:3 * p + 3] = (1.0, 1.0, -1.0)
        if odd:
            out[-1, -2:] = (1.0, -1.0)
        if new_width == 1:
            return ReluNetwork.from_arrays(layers + [(out, np.zeros(1))])
        pre = out
        width = new_width
