"""Array-level reverse-mode differentiation on top of numpy.

Operations executed while a :class:`Tape` is active are recorded in execution
order; ``Tape.backward`` replays them in reverse, calling each recorded
node's backward closure exactly once.  Outside a tape nothing is recorded, so
inference runs at plain numpy speed.

Only the primitives the survival model needs are provided.  Every binary op
supports numpy broadcasting; gradients are summed back to operand shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "square",
    "sum",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "softmax",
    "cumsum",
    "forward_backward",
]

_ACTIVE_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        dims = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {dims}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    """A numpy array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")
    # make ndarray (op) Tensor defer to the Tensor reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Tape:
    """Ordered record of differentiable operations.

    Usage::

        with Tape() as tape:
            loss = model(batch)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(output)/d(leaf) into every reachable leaf's ``grad``.

        ``output`` must be a scalar unless an explicit ``seed`` cotangent is
        given.
        """
        if seed is None:
            if output.data.size != 1:
                raise ShapeError("backward", output.shape, detail="loss must be scalar")
            seed = np.ones_like(output.data)
        if not output.requires_grad:
            return
        output.grad = np.array(seed, dtype=output.dtype, copy=True)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            node._backward(g)
            # intermediate gradients are no longer needed once propagated
            node.grad = None
            node._backward = None
        self.nodes.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _operands(a, b) -> tuple[Tensor, Tensor]:
    # plain Python/numpy scalars take the tensor operand's dtype (no silent upcast)
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.ndim(b) == 0:
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.ndim(a) == 0:
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _recording() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    tape = _recording()
    if tape is None or not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._backward = backward
    tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# --- elementwise binary -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("add", a, b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("sub", a, b)

    def backward(g):
        _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g / b.data)
        if b.requires_grad:
            _accumulate(b, -g * out / b.data)

    return _result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: _accumulate(a, -g))


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands need at least two dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions must agree")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dimensions") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _result(a.data @ b.data, (a, b), backward)


# --- elementwise unary --------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: _accumulate(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: _accumulate(a, g * (1 - out * out)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form is overflow-free for large |x|
    out = 0.5 * (1 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: _accumulate(a, g * out * (1 - out)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    active = a.data > 0
    out = np.where(active, a.data, 0).astype(a.dtype, copy=False)
    return _result(out, (a,), lambda g: _accumulate(a, g * active))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: _accumulate(a, 2 * g * a.data))


# --- reductions and shape ops -------------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _result(np.asarray(out), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _result(out, (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _result(out, (a,), lambda g: _accumulate(a, np.transpose(g, inverse)))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        _accumulate(a, full)

    return _result(np.asarray(out), (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _accumulate(t, piece)

    return _result(out, tensors, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(t.shape for t in tensors)) from None

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accumulate(t, np.take(g, i, axis=axis))

    return _result(out, tensors, backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (a,), backward)


def cumsum(a, axis: int = -1, reverse: bool = False) -> Tensor:
    """Inclusive prefix sum; ``reverse=True`` gives inclusive suffix sums."""
    a = as_tensor(a)

    def _scan(x, rev):
        if rev:
            return np.flip(np.cumsum(np.flip(x, axis), axis=axis), axis)
        return np.cumsum(x, axis=axis)

    out = _scan(a.data, reverse)
    return _result(out, (a,), lambda g: _accumulate(a, _scan(g, not reverse)))


# --- attention ---------------------------------------------------------------


class AttentionMemory:
    """Encoder sequence attended by many queries (one per decoder step).

    The per-query gradient w.r.t. the memory is a rank-one update per subject;
    instead of materializing it at every step, the factors are queued and
    reduced in a single batched product when the tape reaches the memory
    node, which is recorded before any query.
    """

    def __init__(self, H, mask_add: np.ndarray | None = None):
        self.H = as_tensor(H)  # (B, S, Hd)
        self.mask_add = mask_add  # (B, S) additive score mask or None
        self._pending: list[tuple[np.ndarray, np.ndarray]] = []
        self.node = _result(self.H.data, (self.H,), self._flush)

    def _flush(self, _g) -> None:
        if not self._pending:
            return
        A = np.stack([a for a, _ in self._pending])  # (N, K, B, S)
        Q = np.stack([q for _, q in self._pending])  # (N, K, B, Hd)
        N, K, B, S = A.shape
        A = A.transpose(2, 3, 0, 1).reshape(B, S, N * K)
        Q = Q.transpose(2, 0, 1, 3).reshape(B, N * K, Q.shape[-1])
        self._pending.clear()
        _accumulate(self.H, A @ Q)

    def attend(self, query) -> tuple[Tensor, np.ndarray]:
        """Dot-product attention of ``query`` (K, B, Hd) -> (context (K, B, Hd), weights (K, B, S))."""
        q = as_tensor(query)
        if q.ndim != 3 or q.shape[1:] != (self.H.shape[0], self.H.shape[2]):
            raise ShapeError("attend", q.shape, self.H.shape)
        Hd = self.H.data
        scores = (Hd[None] @ q.data[..., None])[..., 0]
        if self.mask_add is not None:
            scores = scores + self.mask_add
        scores = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        w = e / e.sum(axis=-1, keepdims=True)
        ctx = (w[..., None, :] @ Hd[None])[..., 0, :]
        node = self.node

        def backward(g):
            dw = (Hd[None] @ g[..., None])[..., 0]
            ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
            if q.requires_grad:
                _accumulate(q, (ds[..., None, :] @ Hd[None])[..., 0, :])
            if self.H.requires_grad:
                self._pending.append((w, g))
                self._pending.append((ds, q.data))
                if node.grad is None:
                    # any non-None grad makes the tape replay the memory node
                    node.grad = np.zeros((), dtype=Hd.dtype)

        return _result(ctx, (q, node), backward), w


# --- driver -------------------------------------------------------------------


def forward_backward(
    fn: Callable[[], Tensor], params: Mapping[str, Tensor]
) -> tuple[Tensor, dict[str, np.ndarray]]:
    """Evaluate a scalar ``fn`` and its gradient w.r.t. every named parameter.

    Parameters that do not influence the output receive zero gradients.
    """
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        out = fn()
    if out.data.size != 1:
        raise ShapeError("forward_backward", out.shape, detail="loss must be scalar")
    tape.backward(out)
    grads = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    for p in params.values():
        p.grad = None
    return out, grads


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
