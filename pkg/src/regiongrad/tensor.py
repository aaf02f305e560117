"""Dense n-dimensional tensors with tape-based reverse-mode autodiff.

The engine records operations on an explicit :class:`Tape`. Gradients are
computed by walking a tape backwards and applying per-input vector-Jacobian
products that are themselves built from the public ops, so a backward pass
executed while a tape is still recording is differentiable again. That
nested-once capability is what lets training objectives penalize input
gradients: the inner backward produces d(loss)/d(input) as tape-attached
tensors, and the outer backward differentiates through them.

Conventions:

* Tensors are value-like; their buffers are never mutated after creation.
* The default element type is 64-bit float. 32-bit mode exists for speed
  runs (`set_default_dtype`) but every numeric guarantee is stated for
  64-bit.
* relu's subgradient at 0 is 0, and its derivative mask is treated as a
  constant under re-differentiation (second derivative contributes 0), the
  usual double-backprop convention. softplus is provided as a smooth
  alternative so finite-difference checks of second-order quantities are
  well conditioned.
"""

from __future__ import annotations

import itertools
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "ShapeError",
    "set_default_dtype",
    "default_dtype",
    "active_tape",
    "tensor",
    "zeros",
    "ones",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "conv2d",
    "relu",
    "softplus",
    "exp",
    "log",
    "reciprocal",
    "square",
    "tsum",
    "amax",
    "reshape",
    "transpose",
    "broadcast_to",
    "pad",
    "stop_gradient",
    "forward_op",
    "backward",
]

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the element type used by every new tensor.

    Only float32 and float64 are supported. float32 is a speed mode; tests
    and oracles assume float64.
    """
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported element type {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " and ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    """A dense array plus optional links to differentiation tapes.

    ``requires_grad`` marks a leaf: every active tape tracks it, and
    :func:`backward` reports a gradient for it. Tensors produced by ops are
    tracked per tape via internal node handles; a tensor detached from all
    tapes behaves identically in forward arithmetic.
    """

    __slots__ = ("data", "requires_grad", "_tape_nodes")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self._tape_nodes: Optional[dict] = None  # tape id -> node index

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def __float__(self) -> float:
        return self.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """A constant twin: same values, attached to no tape."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; all graph building goes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int, keepdims: bool = False):
        return amax(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def square(self):
        return square(self)


class Node:
    """One recorded op: (operation id, input tensors, output, saved values)."""

    __slots__ = ("op", "inputs", "output", "ctx")

    def __init__(self, op: str, inputs: tuple, output: "Tensor", ctx):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


_TAPE_IDS = itertools.count(1)
_TAPE_STACK: list = []


class Tape:
    """Append-only record of ops in topological order.

    Used as a context manager; entering pushes the tape on the recording
    stack, so tapes nest. Inputs of every node precede it in ``nodes``, and
    a backward pass never mutates forward values, which is why a still-open
    tape can record its own backward pass for second-order gradients.
    """

    __slots__ = ("nodes", "_id", "_active")

    def __init__(self):
        self.nodes: list = []
        self._id = next(_TAPE_IDS)
        self._active = False

    def __enter__(self) -> "Tape":
        if self._active:
            raise RuntimeError("tape is already recording")
        _TAPE_STACK.append(self)
        self._active = True
        return self

    def __exit__(self, exc_type, exc, tb):
        top = _TAPE_STACK.pop()
        assert top is self, "tapes must exit in LIFO order"
        self._active = False
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def node_index(self, t: Tensor) -> Optional[int]:
        """Index of the node that produced ``t`` on this tape, if any."""
        if t._tape_nodes is None:
            return None
        return t._tape_nodes.get(self._id)


def active_tape() -> Optional[Tape]:
    """The innermost recording tape, or None."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _tracked(t: Tensor, tape_id: int) -> bool:
    return t.requires_grad or (t._tape_nodes is not None and tape_id in t._tape_nodes)


def _record(op: str, inputs: tuple, out: Tensor, ctx=None) -> Tensor:
    for tape in _TAPE_STACK:
        tid = tape._id
        for t in inputs:
            if _tracked(t, tid):
                if out._tape_nodes is None:
                    out._tape_nodes = {}
                out._tape_nodes[tid] = len(tape.nodes)
                tape.nodes.append(Node(op, inputs, out, ctx))
                break
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE))


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE))


def stop_gradient(x: Tensor) -> Tensor:
    """Constant view of ``x``: same values, no tape links."""
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# vector-Jacobian products
#
# _VJPS[op][i] maps (node, upstream grad) to the grad of input i, expressed
# with the public ops so it can itself be recorded and re-differentiated.
# An entry of None means input i never receives a gradient.
# ---------------------------------------------------------------------------

_VJPS: dict = {}


def _broadcast_shapes(op, a_shape, b_shape):
    try:
        return np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(op, a_shape, b_shape) from None


def _sum_to_shape(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back to ``shape`` (differentiably)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    elif extra < 0:  # cannot happen for numpy broadcasting
        raise AssertionError("gradient rank below input rank")
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes("add", a.shape, b.shape)
    return _record("add", (a, b), Tensor(np.add(a.data, b.data)))


_VJPS["add"] = (
    lambda node, g: _sum_to_shape(g, node.inputs[0].shape),
    lambda node, g: _sum_to_shape(g, node.inputs[1].shape),
)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes("sub", a.shape, b.shape)
    return _record("sub", (a, b), Tensor(np.subtract(a.data, b.data)))


_VJPS["sub"] = (
    lambda node, g: _sum_to_shape(g, node.inputs[0].shape),
    lambda node, g: _sum_to_shape(neg(g), node.inputs[1].shape),
)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes("mul", a.shape, b.shape)
    return _record("mul", (a, b), Tensor(np.multiply(a.data, b.data)))


_VJPS["mul"] = (
    lambda node, g: _sum_to_shape(mul(g, node.inputs[1]), node.inputs[0].shape),
    lambda node, g: _sum_to_shape(mul(g, node.inputs[0]), node.inputs[1].shape),
)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record("neg", (a,), Tensor(np.negative(a.data)))


_VJPS["neg"] = (lambda node, g: neg(g),)


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _record("square", (a,), Tensor(np.square(a.data)))


_VJPS["square"] = (lambda node, g: mul(g, mul(node.inputs[0], 2.0)),)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    return _record("exp", (a,), Tensor(np.exp(a.data)))


_VJPS["exp"] = (lambda node, g: mul(g, node.output),)


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _record("log", (a,), Tensor(np.log(a.data)))


_VJPS["log"] = (lambda node, g: mul(g, reciprocal(node.inputs[0])),)


def reciprocal(a) -> Tensor:
    a = _as_tensor(a)
    return _record("reciprocal", (a,), Tensor(np.reciprocal(a.data)))


_VJPS["reciprocal"] = (
    lambda node, g: neg(mul(g, square(node.output))),
)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    return _record("relu", (a,), Tensor(np.maximum(a.data, 0.0)))


def _relu_vjp(node, g):
    # subgradient 0 at 0; the mask is a constant under re-differentiation
    mask = (node.inputs[0].data > 0.0).astype(node.inputs[0].data.dtype)
    return mul(g, Tensor(mask))


_VJPS["relu"] = (_relu_vjp,)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _record("softplus", (a,), Tensor(out))


def _softplus_vjp(node, g):
    # sigmoid(x) = exp(x - softplus(x)); the exponent is <= 0 so this is stable
    return mul(g, exp(sub(node.inputs[0], node.output)))


_VJPS["softplus"] = (_softplus_vjp,)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, detail="expects (m,k) @ (k,n)")
    return _record("matmul", (a, b), Tensor(a.data @ b.data))


_VJPS["matmul"] = (
    lambda node, g: matmul(g, transpose(node.inputs[1], (1, 0))),
    lambda node, g: matmul(transpose(node.inputs[0], (1, 0)), g),
)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, detail=f"bad axes {axes}")
    # a strided view is enough: downstream kernels consume any layout, and
    # skipping the copy roughly halves the cost of the conv backward
    out = np.transpose(a.data, axes)
    return _record("transpose", (a,), Tensor(out), ctx=axes)


def _transpose_vjp(node, g):
    inverse = tuple(np.argsort(node.ctx))
    return transpose(g, inverse)


_VJPS["transpose"] = (_transpose_vjp,)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    try:
        out = np.reshape(a.data, shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, detail=f"target {shape}") from None
    return _record("reshape", (a,), Tensor(out), ctx=a.shape)


_VJPS["reshape"] = (lambda node, g: reshape(g, node.ctx),)


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, detail=f"target {shape}") from None
    return _record("broadcast_to", (a,), Tensor(out), ctx=a.shape)


_VJPS["broadcast_to"] = (lambda node, g: _sum_to_shape(g, node.ctx),)


def _normalize_axis(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, (int, np.integer)):
        axis = (int(axis),)
    axis = tuple(sorted(a + ndim if a < 0 else a for a in axis))
    for a in axis:
        if not 0 <= a < ndim:
            raise ValueError(f"axis {a} out of range for rank {ndim}")
    return axis


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    """Sum over the given axis (or all axes). Registered op name: "sum"."""
    a = _as_tensor(a)
    axis = _normalize_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _record("sum", (a,), Tensor(out), ctx=(axis, keepdims, a.shape))


def _sum_vjp(node, g):
    axis, keepdims, in_shape = node.ctx
    if not in_shape:  # summing a scalar
        return reshape(g, in_shape)
    if axis is None:
        g = reshape(g, (1,) * len(in_shape))
    elif not keepdims:
        kept = list(in_shape)
        for a in axis:
            kept[a] = 1
        g = reshape(g, tuple(kept))
    return broadcast_to(g, in_shape)


_VJPS["sum"] = (_sum_vjp,)


def amax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum over one axis. Registered op name: "max"."""
    a = _as_tensor(a)
    if not isinstance(axis, (int, np.integer)):
        raise TypeError("amax expects a single integer axis")
    axis = int(axis) + a.ndim if axis < 0 else int(axis)
    if not 0 <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for rank {a.ndim}")
    out = np.max(a.data, axis=axis, keepdims=keepdims)
    return _record("max", (a,), Tensor(out), ctx=(axis, keepdims, a.shape))


def _amax_vjp(node, g):
    axis, keepdims, in_shape = node.ctx
    x = node.inputs[0].data
    # first-occurrence argmax defines the subgradient; constant under
    # re-differentiation, like the relu mask
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)
    mask = np.zeros_like(x)
    np.put_along_axis(mask, idx, 1.0, axis)
    if not keepdims:
        kept = list(in_shape)
        kept[axis] = 1
        g = reshape(g, tuple(kept))
    return mul(broadcast_to(g, in_shape), Tensor(mask))


_VJPS["max"] = (_amax_vjp,)


def _check_basic_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if not isinstance(p, (int, np.integer, slice, type(Ellipsis))):
            raise TypeError(f"only basic indexing is supported, got {type(p).__name__}")


def _getitem(a: Tensor, key) -> Tensor:
    _check_basic_key(key)
    out = a.data[key]
    return _record("slice", (a,), Tensor(out), ctx=(key, a.shape))


def _slice_vjp(node, g):
    key, in_shape = node.ctx
    return _scatter(g, in_shape, key)


_VJPS["slice"] = (_slice_vjp,)


def _scatter(g: Tensor, shape: tuple, key) -> Tensor:
    """Zeros of ``shape`` with ``g`` placed at ``key`` (adjoint of slice)."""
    g = _as_tensor(g)
    out = np.zeros(shape, dtype=g.data.dtype)
    out[key] = g.data
    return _record("slice_grad", (g,), Tensor(out), ctx=key)


_VJPS["slice_grad"] = (lambda node, g: _getitem(g, node.ctx),)


def pad(a, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` is a per-axis (before, after) sequence."""
    a = _as_tensor(a)
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pad_width) != a.ndim:
        raise ShapeError("pad", a.shape, detail=f"pad_width rank {len(pad_width)}")
    out = np.pad(a.data, pad_width)
    return _record("pad", (a,), Tensor(out), ctx=(pad_width, a.shape))


def _pad_vjp(node, g):
    pad_width, in_shape = node.ctx
    key = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, in_shape))
    return _getitem(g, key)


_VJPS["pad"] = (_pad_vjp,)


# ---------------------------------------------------------------------------
# convolution (stride 1, optional symmetric zero padding)
# ---------------------------------------------------------------------------


def _conv_padding(padding, kh: int, kw: int):
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("'same' padding requires odd kernel sides")
        return (kh - 1) // 2, (kw - 1) // 2
    if isinstance(padding, (int, np.integer)):
        padding = (int(padding), int(padding))
    ph, pw = int(padding[0]), int(padding[1])
    if ph < 0 or pw < 0:
        raise ValueError("padding must be non-negative")
    return ph, pw


def _im2col(xp: np.ndarray, kh: int, kw: int):
    b, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d(x, kernel, padding: Union[int, tuple, str] = 0) -> Tensor:
    """2-D cross-correlation of (B,C,H,W) with (O,C,kh,kw), stride 1."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("conv2d", x.shape, kernel.shape, detail="expects 4-d input and kernel")
    co, ci, kh, kw = kernel.shape
    if x.shape[1] != ci:
        raise ShapeError("conv2d", x.shape, kernel.shape, detail="channel mismatch")
    ph, pw = _conv_padding(padding, kh, kw)
    xd = x.data
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if xd.shape[2] < kh or xd.shape[3] < kw:
        raise ShapeError("conv2d", x.shape, kernel.shape, detail="kernel larger than padded input")
    cols, ho, wo = _im2col(xd, kh, kw)
    out = cols @ kernel.data.reshape(co, -1).T
    # channels-first as a view; the next elementwise op absorbs the gather
    out = out.reshape(x.shape[0], ho, wo, co).transpose(0, 3, 1, 2)
    return _record("conv2d", (x, kernel), Tensor(out), ctx=(ph, pw))


def _conv2d_vjp_x(node, g):
    _, w = node.inputs
    ph, pw = node.ctx
    kh, kw = w.shape[2], w.shape[3]
    # full correlation with the flipped kernel, in/out channels swapped
    wf = transpose(w[:, :, ::-1, ::-1], (1, 0, 2, 3))
    return conv2d(g, wf, padding=(kh - 1 - ph, kw - 1 - pw))


def _conv2d_vjp_w(node, g):
    x, _ = node.inputs
    ph, pw = node.ctx
    if ph or pw:
        x = pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # correlate input with the upstream grad, batch acting as the channel
    gw = conv2d(transpose(x, (1, 0, 2, 3)), transpose(g, (1, 0, 2, 3)), padding=0)
    return transpose(gw, (1, 0, 2, 3))


_VJPS["conv2d"] = (_conv2d_vjp_x, _conv2d_vjp_w)


# ---------------------------------------------------------------------------
# dispatch by op name
# ---------------------------------------------------------------------------

_FORWARD_OPS: dict = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "reciprocal": reciprocal,
    "square": square,
    "sum": tsum,
    "max": amax,
    "reshape": reshape,
    "transpose": transpose,
    "broadcast_to": broadcast_to,
    "pad": pad,
    "slice": _getitem,
}


def forward_op(op_name: str, *inputs, **params) -> Tensor:
    """Apply an op by name; results record on active tapes like the ops do."""
    try:
        fn = _FORWARD_OPS[op_name]
    except KeyError:
        raise ValueError(f"unknown op {op_name!r}") from None
    return fn(*inputs, **params)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(tape: Tape, root: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> dict:
    """Gradients of a scalar ``root`` with respect to tape leaves.

    Returns a map {tensor -> gradient tensor}. Without ``wrt`` it covers
    every leaf marked ``requires_grad`` that ``root`` depends on; with
    ``wrt`` it is restricted to those tensors (and unrelated branches of
    the tape are skipped entirely). A leaf the root never touched is simply
    absent. The VJPs run through the public ops, so if any tape is still
    recording, the returned gradients are differentiable in turn.
    """
    if root.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    root_idx = tape.node_index(root)
    if root_idx is None:
        raise ValueError("backward root is not recorded on this tape")

    nodes = tape.nodes
    relevant = None
    if wrt is not None:
        relevant = {id(t) for t in wrt}
        for i in range(root_idx + 1):
            node = nodes[i]
            for inp in node.inputs:
                if id(inp) in relevant:
                    relevant.add(id(node.output))
                    break

    adjoints: dict = {id(root): Tensor(np.ones_like(root.data))}
    leaf_refs: dict = {}
    tid = tape._id

    for i in range(root_idx, -1, -1):
        node = nodes[i]
        out_id = id(node.output)
        g = adjoints.get(out_id)
        if g is None:
            continue
        if relevant is not None and out_id not in relevant:
            continue
        vjps = _VJPS[node.op]
        for pos, inp in enumerate(node.inputs):
            if not _tracked(inp, tid):
                continue
            iid = id(inp)
            if relevant is not None and iid not in relevant:
                continue
            gi = vjps[pos](node, g)
            prev = adjoints.get(iid)
            adjoints[iid] = gi if prev is None else add(prev, gi)
            if inp.requires_grad:
                leaf_refs[iid] = inp

    if wrt is not None:
        return {t: adjoints[id(t)] for t in wrt if id(t) in adjoints}
    return {leaf: adjoints[iid] for iid, leaf in leaf_refs.items()}
