"""Reverse-mode automatic differentiation over a recorded tape.

Covers exactly the primitives the scoring network, the probabilistic head and
the smooth loss terms need. Values are float64 numpy arrays; a Tape owns the
nodes it created and is confined to one logical thread. Gradients come out of
`backward` keyed by parameter name.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

LN_EPS = 1e-5

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Node:
    """One tape entry: forward value plus the local vector-Jacobian product."""

    __slots__ = ("tape", "nid", "kind", "value", "parents", "vjp", "name")

    def __init__(self, tape, nid, kind, value, parents, vjp, name=None):
        self.tape = tape
        self.nid = nid
        self.kind = kind
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"<Node {self.nid} {self.kind} {self.value.shape}>"


class Tape:
    """Append-only record of a computation; node inputs always precede outputs."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, kind, value, parents, vjp, name=None) -> Node:
        node = Node(self, len(self.nodes), kind, value, parents, vjp, name)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._record("const", np.asarray(value, dtype=np.float64), (), None)

    def param(self, name: str, value) -> Node:
        return self._record("param", np.asarray(value, dtype=np.float64), (), None, name=name)


def scalar_value(node: Node) -> float:
    """Extract the float from a size-1 node."""
    if node.value.size != 1:
        raise ValueError(f"node has {node.value.size} elements, expected 1")
    return float(node.value.reshape(-1)[0])


def lift_params(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Node]:
    """Register every parameter array on the tape, preserving dict order."""
    return {name: tape.param(name, value) for name, value in params.items()}


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] > 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.value.shape} with {b.value.shape}") from exc


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node, transpose_b: bool = False) -> Node:
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2:
        if transpose_b:
            if av.shape[1] != bv.shape[1]:
                raise ShapeError(f"matmul: {av.shape} @ {bv.shape}^T")
            out = av @ bv.T

            def vjp(g):
                return (g @ bv, g.T @ av)

        else:
            if av.shape[1] != bv.shape[0]:
                raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
            out = av @ bv

            def vjp(g):
                return (g @ bv.T, av.T @ g)

    elif av.ndim == 2 and bv.ndim == 1 and not transpose_b:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
        out = av @ bv

        def vjp(g):
            return (np.outer(g, bv), av.T @ g)

    else:
        raise ShapeError(f"matmul: unsupported operand ranks {av.shape} @ {bv.shape}")
    return tape._record("matmul", out, (a, b), vjp)


def add(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.value.shape, b.value.shape
    return tape._record(
        "add",
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def subtract(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_shape(a, b, "subtract")
    sa, sb = a.value.shape, b.value.shape
    return tape._record(
        "subtract",
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def multiply(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_shape(a, b, "multiply")
    av, bv = a.value, b.value
    return tape._record(
        "multiply",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def mean_over_sets(a: Node, sets: Sequence[Sequence[int]]) -> Node:
    """Mean of the rows (axis 0) selected by each index set; empty sets give zeros.

    A 1-D input yields a 1-D output of len(sets); a 2-D input yields
    len(sets) x C. This is the pooling primitive for segment tokenization and
    for full reductions (pass a single set covering every row).
    """
    sets = [tuple(int(i) for i in s) for s in sets]
    av = a.value
    if av.ndim not in (1, 2):
        raise ShapeError(f"mean-over-set: rank {av.ndim} input unsupported")
    out_shape = (len(sets),) if av.ndim == 1 else (len(sets), av.shape[1])
    out = np.zeros(out_shape, dtype=np.float64)
    for k, idx in enumerate(sets):
        if idx:
            out[k] = av[list(idx)].mean(axis=0)

    def vjp(g):
        da = np.zeros_like(av)
        for k, idx in enumerate(sets):
            if idx:
                np.add.at(da, list(idx), g[k] / len(idx))
        return (da,)

    return a.tape._record("mean-over-set", out, (a,), vjp)


def layer_norm(a: Node, eps: float = LN_EPS) -> Node:
    """Normalize along the last axis with an eps-stabilized population variance."""
    av = a.value
    mu = av.mean(axis=-1, keepdims=True)
    centered = av - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return a.tape._record("layer-norm", y, (a,), vjp)


def softmax_rows(a: Node) -> Node:
    av = a.value
    shifted = av - av.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return a.tape._record("softmax-rows", p, (a,), vjp)


def gelu(a: Node) -> Node:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    av = a.value
    cdf = 0.5 * (1.0 + erf(av * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * av * av)
    return a.tape._record("gelu", av * cdf, (a,), lambda g: (g * (cdf + av * pdf),))


def sigmoid(a: Node) -> Node:
    av = a.value
    s = np.empty_like(av)
    pos = av >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ev = np.exp(av[~pos])
    s[~pos] = ev / (1.0 + ev)
    return a.tape._record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a: Node) -> Node:
    ev = np.exp(a.value)
    return a.tape._record("exp", ev, (a,), lambda g: (g * ev,))


def log(a: Node) -> Node:
    av = a.value
    return a.tape._record("log", np.log(av), (a,), lambda g: (g / av,))


def square(a: Node) -> Node:
    av = a.value
    return a.tape._record("square", av * av, (a,), lambda g: (2.0 * g * av,))


def clip(a: Node, lo: float, hi: float) -> Node:
    """Clamp elementwise; the gradient is 1 on [lo, hi] and 0 outside."""
    if lo > hi:
        raise ValueError(f"clip: lower bound {lo} exceeds upper bound {hi}")
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return a.tape._record(
        "clip", np.clip(av, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),)
    )


def gather_rows(a: Node, indices: Sequence[int]) -> Node:
    idx = [int(i) for i in indices]
    av = a.value
    if any(i < 0 or i >= av.shape[0] for i in idx):
        raise ShapeError(f"gather-rows: index out of range for {av.shape[0]} rows")
    out = av[idx]

    def vjp(g):
        da = np.zeros_like(av)
        np.add.at(da, idx, g)
        return (da,)

    return a.tape._record("gather-rows", out, (a,), vjp)


def depthwise_conv1d(x: Node, w: Node) -> Node:
    """Per-channel temporal convolution with same-length zero padding.

    x is T x d, w is d x k with k odd. Channel c of the output mixes only
    channel c of the input.
    """
    tape = _same_tape(x, w)
    xv, wv = x.value, w.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ShapeError(f"depthwise-conv1d: {xv.shape} with kernel {wv.shape}")
    k = wv.shape[1]
    if k % 2 == 0:
        raise ValueError("depthwise-conv1d kernel width must be odd")
    t_len, off = xv.shape[0], k // 2
    padded = np.pad(xv, ((off, off), (0, 0)))
    out = np.zeros_like(xv)
    for j in range(k):
        out += padded[j : j + t_len] * wv[:, j]

    def vjp(g):
        dpad = np.zeros_like(padded)
        dw = np.zeros_like(wv)
        for j in range(k):
            dpad[j : j + t_len] += g * wv[:, j]
            dw[:, j] = (g * padded[j : j + t_len]).sum(axis=0)
        return (dpad[off : off + t_len], dw)

    return tape._record("depthwise-conv1d", out, (x, w), vjp)


def pointwise_conv1d(x: Node, w: Node, b: Node) -> Node:
    """1x1 channel mixing: x @ w + b applied at every timestep."""
    tape = _same_tape(x, w, b)
    xv, wv, bv = x.value, w.value, b.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0] or bv.shape != (wv.shape[1],):
        raise ShapeError(f"pointwise-conv1d: {xv.shape} @ {wv.shape} + {bv.shape}")
    out = xv @ wv + bv

    def vjp(g):
        return (g @ wv.T, xv.T @ g, g.sum(axis=0))

    return tape._record("pointwise-conv1d", out, (x, w, b), vjp)


def concat_last(nodes: Sequence[Node]) -> Node:
    nodes = list(nodes)
    tape = _same_tape(*nodes)
    lead = nodes[0].value.shape[:-1]
    if any(n.value.shape[:-1] != lead for n in nodes):
        raise ShapeError("concat-last-dim: leading dimensions differ")
    widths = [n.value.shape[-1] for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=-1)

    def vjp(g):
        pieces, start = [], 0
        for width in widths:
            pieces.append(g[..., start : start + width])
            start += width
        return tuple(pieces)

    return tape._record("concat-last-dim", out, tuple(nodes), vjp)


def scale(a: Node, s: float) -> Node:
    s = float(s)
    return a.tape._record("scalar-scale", a.value * s, (a,), lambda g: (g * s,))


PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "subtract": subtract,
    "elementwise-multiply": multiply,
    "mean-over-set": mean_over_sets,
    "layer-norm": layer_norm,
    "softmax-rows": softmax_rows,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "square": square,
    "clip": clip,
    "gather-rows": gather_rows,
    "depthwise-conv1d": depthwise_conv1d,
    "pointwise-conv1d": pointwise_conv1d,
    "concat-last-dim": concat_last,
    "scalar-scale": scale,
}


def primitive_forward(kind: str, *args, **kwargs) -> Node:
    """Dispatch a primitive by its catalog name."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive kind {kind!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(param) for every parameter node on the tape.

    Parameters the loss never touches get zero gradients of matching shape.
    The pass never mutates the tape, so repeated calls are bit-identical.
    """
    if loss.tape is not tape:
        raise ValueError("loss node does not belong to this tape")
    if loss.value.size != 1:
        raise ValueError("loss must be a scalar (size-1) node")
    if not np.all(np.isfinite(loss.value)):
        for node in tape.nodes[: loss.nid + 1]:
            if not np.all(np.isfinite(node.value)):
                raise NumericError(
                    f"non-finite forward value at node {node.nid} ({node.kind})",
                    node_id=node.nid,
                )
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.nid] = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.nid + 1]):
        g = grads[node.nid]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            if not np.all(np.isfinite(pg)):
                raise NumericError(
                    f"non-finite gradient produced by node {node.nid} ({node.kind})",
                    node_id=node.nid,
                )
            if grads[parent.nid] is None:
                grads[parent.nid] = pg
            else:
                grads[parent.nid] = grads[parent.nid] + pg
    out = {}
    for node in tape.nodes:
        if node.kind == "param":
            g = grads[node.nid]
            out[node.name] = np.zeros_like(node.value) if g is None else np.asarray(g)
    return out


def finite_difference_check(
    f: Callable[[dict[str, np.ndarray]], Node],
    params: dict[str, np.ndarray],
    step: float = 1e-4,
) -> float:
    """Compare backward() against central differences over every parameter entry.

    `f` builds a fresh tape from the parameter dict and returns the scalar
    loss node. Returns the worst relative error
    max_i |g_i - ghat_i| / max(1e-8, |g_i| + |ghat_i|). The caller keeps f
    smooth at the evaluation point (no active clamps or hinge kinks).
    """
    loss = f(params)
    analytic = backward(loss.tape, loss)
    worst = 0.0
    for name, theta in params.items():
        flat = theta.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = scalar_value(f(params))
            flat[i] = saved - step
            lo = scalar_value(f(params))
            flat[i] = saved
            numeric = (hi - lo) / (2.0 * step)
            err = abs(ga[i] - numeric) / max(1e-8, abs(ga[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
