"""Minimal reverse-mode autodiff over float64 NumPy buffers.

Only the operations the toy segmentation network needs are provided. Forward
ops record themselves on the active :class:`Tape`; :meth:`Tape.backward`
replays the records in reverse order.

    >>> with Tape() as tape:
    ...     y = relu(x)
    ...     loss = total(y)
    >>> tape.backward(loss)
"""
import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent; names the offending dimension."""

    def __init__(self, op, dim, expected, got):
        self.op, self.dim, self.expected, self.got = op, dim, expected, got
        super().__init__(f"{op}: dimension {dim!r} expected {expected}, got {got}")


class TapeError(RuntimeError):
    pass


class Tensor:
    """A float64 array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of forward operations.

    Entries are ``(op_name, inputs, output, backward_fn)``. Using the tape as a
    context manager makes it the target for op recording.
    """

    _active = []

    def __init__(self):
        self.records = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    @classmethod
    def current(cls):
        return cls._active[-1] if cls._active else None

    def record(self, op, inputs, output, backward_fn):
        self.records.append((op, inputs, output, backward_fn))

    def backward(self, loss, visit=None):
        """Propagate d(loss)/d(.) to every tensor reachable on the tape.

        ``visit`` is an optional callback receiving each op name in the order
        it is replayed.
        """
        if not self.records:
            raise TapeError("backward called before any forward operation was recorded")
        if loss.data.size != 1:
            raise ShapeError("backward", "loss", 1, loss.data.size)
        if not any(rec[2] is loss for rec in self.records):
            raise TapeError("loss tensor was not produced on this tape")
        # intermediate outputs get fresh gradient buffers
        for _, _, out, _ in self.records:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for op, inputs, out, fn in reversed(self.records):
            if visit is not None:
                visit(op)
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for t, g in zip(inputs, grads):
                if g is not None and t.requires_grad:
                    t._accumulate(g)


def _record(op, inputs, out, fn):
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, fn)
    return out


def conv2d(x, w, b, stride=1):
    """Zero-padded ("same") cross-correlation; ``kh`` and ``kw`` must be odd."""
    if x.data.ndim != 4:
        raise ShapeError("conv2d", "input rank", 4, x.data.ndim)
    if w.data.ndim != 4:
        raise ShapeError("conv2d", "kernel rank", 4, w.data.ndim)
    k, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ShapeError("conv2d", "C", c, x.shape[1])
    if b.shape != (k,):
        raise ShapeError("conv2d", "bias K", (k,), b.shape)
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d", "kernel size (odd)", "odd", (kh, kw))
    if kh != kw:
        raise ShapeError("conv2d", "kernel width", kh, kw)
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    pad = kh // 2
    out = Tensor(kernels.conv2d_forward(x.data, w.data, b.data, stride, pad))

    def backward(g):
        gx, gw, gb = kernels.conv2d_backward(x.data, w.data, np.ascontiguousarray(g), stride, pad)
        return gx, gw, gb

    return _record("conv2d", (x, w, b), out, backward)


def relu(x):
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record("relu", (x,), out, lambda g: (g * mask,))


def upsample(x, factor):
    """Bilinear upsampling by an integer factor (half-pixel centres, edge clamped)."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"upsample: factor must be a positive integer, got {factor!r}")
    if x.data.ndim != 4:
        raise ShapeError("upsample", "input rank", 4, x.data.ndim)
    if factor == 1:
        out = Tensor(x.data.copy())
        return _record("upsample", (x,), out, lambda g: (g,))
    out = Tensor(kernels.upsample_forward(x.data, int(factor)))
    return _record("upsample", (x,), out,
                   lambda g: (kernels.upsample_backward(np.ascontiguousarray(g), int(factor)),))


def softmax(x):
    """Softmax over the channel axis (axis 1) of an ``[N, n, H, W]`` tensor."""
    if x.data.ndim != 4:
        raise ShapeError("softmax", "input rank", 4, x.data.ndim)
    if x.shape[1] < 2:
        raise ShapeError("softmax", "n (channels >= 2)", ">= 2", x.shape[1])
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _record("softmax", (x,), out, backward)


def total(x):
    """Sum of all elements, as a 1-element tensor."""
    out = Tensor(np.array([x.data.sum()]))
    return _record("sum", (x,), out, lambda g: (np.broadcast_to(g[0], x.shape),))


def scale(x, c):
    out = Tensor(x.data * c)
    return _record("scale", (x,), out, lambda g: (g * c,))


def add(*xs):
    """Elementwise sum of same-shape tensors."""
    shape = xs[0].shape
    for t in xs[1:]:
        if t.shape != shape:
            raise ShapeError("add", "shape", shape, t.shape)
    out = Tensor(np.sum([t.data for t in xs], axis=0) if len(xs) > 1 else xs[0].data.copy())
    return _record("add", tuple(xs), out, lambda g: tuple(g for _ in xs))


def sum_squares(xs, coef):
    """``coef * sum(||x||^2)`` over a list of tensors, as a 1-element tensor."""
    val = coef * sum(float(np.dot(t.data.ravel(), t.data.ravel())) for t in xs)
    out = Tensor(np.array([val]))
    return _record("sum_squares", tuple(xs), out,
                   lambda g: tuple(2.0 * coef * g[0] * t.data for t in xs))
