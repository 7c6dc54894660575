"""Execution contexts: eager evaluation and the reverse-mode tape.

Model code is written against the shared operator surface (`conv2d`,
`relu`, ...) and runs unchanged under either context:

- ``Eager`` computes immediately and returns Tensors; nothing is retained.
- ``Tape`` records every op as a ``TapeNode`` (inputs, saved forward values,
  output) and returns ``Node`` handles; ``backward`` then walks the tape in
  reverse and accumulates gradients.

The tape keeps all forward values alive for the backward pass; at the
problem sizes this engine targets, recomputation is not worth the code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, require_same_shape


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    value: Tensor
    saved: tuple


class Node:
    """Handle to one tape position; carries the forward value."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> Tensor:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.index}: {self.tape.nodes[self.index].op}, {self.shape})"


class _Context:
    """Shared operator surface; subclasses decide what happens to results."""

    def _val(self, x) -> Tensor:
        raise NotImplementedError

    def _emit(self, op, value, inputs, saved) -> object:
        raise NotImplementedError

    def leaf(self, tensor: Tensor):
        raise NotImplementedError

    def conv2d(self, x, w, b=None, *, stride=1, padding=0, groups=1):
        """2D cross-correlation with zero padding and optional channel groups.

        `w` has shape (ch_o, ch_i/groups, fh, fw); `b`, when present, is a
        channel vector shaped (1, ch_o, 1, 1).
        """
        xv, wv = self._val(x), self._val(w)
        bv = self._val(b) if b is not None else None
        if bv is not None and bv.size != wv.shape[0]:
            raise ShapeError(
                f"conv2d: bias has {bv.size} entries, expected ch_o={wv.shape[0]}"
            )
        barr = bv.data.reshape(-1) if bv is not None else None
        out = kernels.conv2d_forward(xv.data, wv.data, barr, stride, padding, groups)
        inputs = (x, w) if b is None else (x, w, b)
        return self._emit(
            "conv2d", Tensor(out), inputs, (stride, padding, groups, b is not None)
        )

    def relu(self, x):
        xv = self._val(x)
        return self._emit("relu", Tensor(kernels.relu_forward(xv.data)), (x,), ())

    def sigmoid(self, x):
        xv = self._val(x)
        return self._emit("sigmoid", Tensor(kernels.sigmoid_forward(xv.data)), (x,), ())

    def add(self, a, b):
        av, bv = self._val(a), self._val(b)
        require_same_shape(av, bv, "add")
        return self._emit("add", Tensor(kernels.add_forward(av.data, bv.data)), (a, b), ())

    def affine_gate(self, x, gamma, beta):
        """Elementwise (gamma + 1) * x + beta; all operands same shape."""
        xv, gv, bv = self._val(x), self._val(gamma), self._val(beta)
        require_same_shape(xv, gv, "affine_gate")
        require_same_shape(xv, bv, "affine_gate")
        out = kernels.affine_gate_forward(xv.data, gv.data, bv.data)
        return self._emit("affine_gate", Tensor(out), (x, gamma, beta), ())

    def concat_channels(self, parts):
        parts = list(parts)
        if not parts:
            raise ShapeError("concat_channels: need at least one part")
        vals = [self._val(p) for p in parts]
        ref = vals[0]
        for i, v in enumerate(vals[1:], start=1):
            if (v.shape[0], v.shape[2], v.shape[3]) != (ref.shape[0], ref.shape[2], ref.shape[3]):
                raise ShapeError(
                    f"concat_channels: part {i} has shape {v.shape}, "
                    f"incompatible with part 0 shape {ref.shape}"
                )
        out = kernels.concat_channels_forward([v.data for v in vals])
        counts = tuple(v.shape[1] for v in vals)
        return self._emit("concat", Tensor(out), tuple(parts), (counts,))

    def pixel_shuffle(self, x, r: int):
        """Rearrange (n, c, h, w) -> (n, c/r^2, r*h, r*w)."""
        xv = self._val(x)
        out = kernels.pixel_shuffle_forward(xv.data, r)
        return self._emit("pixel_shuffle", Tensor(out), (x,), (r,))

    def mean(self, x):
        """Mean over all elements, as a (1,1,1,1) tensor."""
        xv = self._val(x)
        return self._emit("mean", Tensor(kernels.mean_forward(xv.data)), (x,), ())

    def l1_loss(self, pred, target):
        """Mean absolute difference, as a (1,1,1,1) tensor."""
        pv, tv = self._val(pred), self._val(target)
        require_same_shape(pv, tv, "l1_loss")
        out = kernels.l1_forward(pv.data, tv.data)
        return self._emit("l1", Tensor(out), (pred, target), ())


class Eager(_Context):
    """Direct evaluation on Tensors; no graph is built."""

    def _val(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            raise TypeError(f"eager ops take Tensors, got {type(x).__name__}")
        return x

    def _emit(self, op, value, inputs, saved):
        return value

    def leaf(self, tensor: Tensor) -> Tensor:
        return self._val(tensor)


class Tape(_Context):
    """Records ops as an acyclic list of nodes in execution order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def _val(self, x) -> Tensor:
        if not isinstance(x, Node) or x.tape is not self:
            raise TypeError("taped ops take Nodes created on this tape")
        return x.value

    def _emit(self, op, value, inputs, saved):
        idxs = tuple(p.index for p in inputs)
        self.nodes.append(TapeNode(op, idxs, value, saved))
        return Node(self, len(self.nodes) - 1)

    def leaf(self, tensor: Tensor) -> Node:
        if not isinstance(tensor, Tensor):
            raise TypeError(f"leaf takes a Tensor, got {type(tensor).__name__}")
        self.nodes.append(TapeNode("leaf", (), tensor, ()))
        return Node(self, len(self.nodes) - 1)


class Gradients:
    """Per-node gradients from one backward pass.

    Indexing by a Node returns an array shaped like that node's value;
    nodes with no path to the loss yield zeros.
    """

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, node: Node) -> np.ndarray:
        if node.tape is not self._tape:
            raise ValueError("node belongs to a different tape")
        g = self._grads[node.index]
        if g is None:
            v = node.value
            return np.zeros(v.shape, dtype=v.dtype)
        return g


def backward(tape: Tape, loss: Node) -> Gradients:
    """Reverse-mode sweep from a scalar loss node over the whole tape."""
    if loss.tape is not tape:
        raise ValueError("loss node belongs to a different tape")
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")

    grads: list = [None] * len(tape.nodes)
    grads[loss.index] = np.ones(loss.value.shape, dtype=loss.value.dtype)

    for i in range(loss.index, -1, -1):
        node = tape.nodes[i]
        g = grads[i]
        if g is None or node.op == "leaf":
            continue
        ins = [tape.nodes[j].value for j in node.inputs]
        parts = _OP_BACKWARD[node.op](g, node, ins)
        for j, gj in zip(node.inputs, parts):
            if gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj
    return Gradients(tape, grads)


def _bw_conv2d(g, node, ins):
    stride, padding, groups, has_bias = node.saved
    x, w = ins[0], ins[1]
    dx, dw, db = kernels.conv2d_backward(
        g, x.data, w.data, has_bias, stride, padding, groups
    )
    out = [dx, dw]
    if has_bias:
        out.append(db.reshape(ins[2].shape))
    return out


_OP_BACKWARD = {
    "conv2d": _bw_conv2d,
    "relu": lambda g, node, ins: [kernels.relu_backward(g, ins[0].data)],
    "sigmoid": lambda g, node, ins: [kernels.sigmoid_backward(g, node.value.data)],
    "add": lambda g, node, ins: [g, g],
    "affine_gate": lambda g, node, ins: list(
        kernels.affine_gate_backward(g, ins[0].data, ins[1].data)
    ),
    "concat": lambda g, node, ins: kernels.concat_channels_backward(g, node.saved[0]),
    "pixel_shuffle": lambda g, node, ins: [
        kernels.pixel_unshuffle_forward(g, node.saved[0])
    ],
    "mean": lambda g, node, ins: [
        kernels.mean_backward(g, ins[0].shape, ins[0].dtype)
    ],
    "l1": lambda g, node, ins: list(kernels.l1_backward(g, ins[0].data, ins[1].data)),
}
