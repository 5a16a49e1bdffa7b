"""Dense arrays with exact reverse-mode gradients.

A closed set of primitives (affine maps, transposed convolution, batch
normalization, relu/tanh/exp, reductions and elementwise arithmetic) is
enough to express the decoder, the training losses and every inversion
objective. Each primitive records a hand-written backward closure on the
output node; :meth:`Tensor.backward` walks the graph in reverse
topological order.

Two precision classes are used: ``"standard"`` (float32) for optimization
and ``"extended"`` (float64) for gradient verification. The dtype of the
leaf arrays decides which one a graph runs in.
"""

import numpy as np

from .errors import NumericError, ShapeError

PRECISIONS = {"standard": np.float32, "extended": np.float64}


def dtype_for(precision):
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}") from None


def _check(values, primitive):
    if not np.all(np.isfinite(values)):
        raise NumericError(primitive)
    return values


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- construction of interior nodes ---------------------------------
    @classmethod
    def _make(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = _check(data, op)
        out.grad = None
        out.name = None
        out._op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    # -- elementwise arithmetic -----------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), backward, "sub")

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return self * (1.0 / np.asarray(other, dtype=self.dtype))

    def square(self):
        x = self

        def backward(g):
            return (2.0 * g * x.data,)

        return Tensor._make(x.data * x.data, (x,), backward, "square")

    # -- shape and reductions -------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {old} to {shape}") from exc
        return Tensor._make(data, (self,), lambda g: (g.reshape(old),), "reshape")

    @property
    def T(self):
        if self.ndim != 2:
            raise ShapeError("transpose is defined for 2-D tensors only")
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,), "transpose")

    def sum(self, axis=None, keepdims=False):
        x = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return Tensor._make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) / count

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reverse pass ---------------------------------------------------
    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(seed, dtype=self.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                _check(pg, f"{node._op} (backward)")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# -- primitives -----------------------------------------------------------


def matmul(a, b):
    """Affine building block: ``a @ b`` for 2-D operands (or batched ``a``)."""
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._make(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward, "relu")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._make(out, (x,), backward, "tanh")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):  # overflow is reported as NumericError below
        out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return Tensor._make(out, (x,), backward, "exp")


def pointwise(kind, x):
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


def _check_conv(x, w, stride, padding):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"expected 4-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernel expects {w.shape[0]} "
            f"(kernel shape {w.shape})"
        )
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be square, got {w.shape[2:]}")
    if stride not in (1, 2) or padding not in (0, 1):
        raise ShapeError(f"unsupported stride/padding {stride}/{padding}")


def _scatter_cols(cols, k, h, w, stride, padding):
    # cols: (B, Cout, K, K, H, W) -> cropped output (B, Cout, H', W')
    b, cout = cols.shape[:2]
    hf = (h - 1) * stride + k
    wf = (w - 1) * stride + k
    full = np.zeros((b, cout, hf, wf), dtype=cols.dtype)
    hspan = (h - 1) * stride + 1
    wspan = (w - 1) * stride + 1
    for kh in range(k):
        for kw in range(k):
            full[:, :, kh:kh + hspan:stride, kw:kw + wspan:stride] += cols[:, :, kh, kw]
    return full[:, :, padding:hf - padding, padding:wf - padding]


def _gather_cols(y, k, h, w, stride, padding):
    # adjoint of _scatter_cols: (B, Cout, H', W') -> (B, Cout, K, K, H, W)
    b, cout = y.shape[:2]
    hf = (h - 1) * stride + k
    wf = (w - 1) * stride + k
    if padding:
        full = np.zeros((b, cout, hf, wf), dtype=y.dtype)
        full[:, :, padding:hf - padding, padding:wf - padding] = y
    else:
        full = y
    hspan = (h - 1) * stride + 1
    wspan = (w - 1) * stride + 1
    cols = np.empty((b, cout, k, k, h, w), dtype=y.dtype)
    for kh in range(k):
        for kw in range(k):
            cols[:, :, kh, kw] = full[:, :, kh:kh + hspan:stride, kw:kw + wspan:stride]
    return cols


def conv2d(y, kernel, stride, padding):
    """Strided convolution; the linear adjoint of :func:`conv_transpose2d`.

    ``y`` is (B, C_out, H', W'), ``kernel`` is (C_in, C_out, K, K) and the
    result is (B, C_in, H, W). Plain numpy, no gradient tracking.
    """
    y = np.asarray(y)
    kernel = np.asarray(kernel)
    cin, cout, k, _ = kernel.shape
    if y.shape[1] != cout:
        raise ShapeError(f"input has {y.shape[1]} channels, kernel expects {cout}")
    h = (y.shape[2] + 2 * padding - k) // stride + 1
    w = (y.shape[3] + 2 * padding - k) // stride + 1
    cols = _gather_cols(y, k, h, w, stride, padding).reshape(y.shape[0], cout * k * k, h * w)
    out = kernel.reshape(cin, cout * k * k) @ cols
    return out.reshape(y.shape[0], cin, h, w)


def conv_transpose2d(x, kernel, stride=2, padding=1):
    """Transposed convolution of a (B, C_in, H, W) batch.

    ``kernel`` has shape (C_in, C_out, K, K); the output is
    (B, C_out, (H-1)*stride - 2*padding + K, ...). A 3-D input is treated as
    a batch of one and returned 3-D.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel, dtype=x.dtype)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    _check_conv(x, kernel, stride, padding)
    b, cin, h, w = x.shape
    _, cout, k, _ = kernel.shape
    w2 = kernel.data.reshape(cin, cout * k * k)
    x2 = x.data.reshape(b, cin, h * w)
    cols = (w2.T @ x2).reshape(b, cout, k, k, h, w)
    out = _scatter_cols(cols, k, h, w, stride, padding)

    def backward(g):
        gcols = _gather_cols(g, k, h, w, stride, padding).reshape(b, cout * k * k, h * w)
        gx = (w2 @ gcols).reshape(x.shape) if x.requires_grad else None
        gw = None
        if kernel.requires_grad:
            xs = x2.transpose(1, 0, 2).reshape(cin, b * h * w)
            gs = gcols.transpose(1, 0, 2).reshape(cout * k * k, b * h * w)
            gw = (xs @ gs.T).reshape(kernel.shape)
        return gx, gw

    result = Tensor._make(np.ascontiguousarray(out), (x, kernel), backward, "conv_transpose2d")
    if squeeze:
        result = result.reshape(result.shape[1:])
    return result


def batch_norm(x, gamma, beta, epsilon=1e-5, per_sample=False):
    """Normalize a (B, C, H, W) batch per channel, then scale and shift.

    Statistics are taken over (B, H, W). With ``per_sample=True`` they are
    taken over (H, W) separately for every batch entry, so a batch gives
    the same result as evaluating its members one at a time.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma, dtype=x.dtype)
    beta = as_tensor(beta, dtype=x.dtype)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects (B, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},), got {gamma.shape}, {beta.shape}")
    axes = (2, 3) if per_sample else (0, 2, 3)
    count = int(np.prod([x.shape[a] for a in axes]))
    mean = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv_std
    g4 = gamma.data.reshape(1, c, 1, 1)
    out = g4 * xhat + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * g4
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            gx = (inv_std / count) * (count * dxhat - s1 - xhat * s2)
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward, "batch_norm")


# -- gradient driver -------------------------------------------------------


def value_and_grad(objective, point, wrt=None):
    """Evaluate ``objective`` and its gradient at ``point``.

    ``point`` maps names to arrays; ``objective`` receives the same names
    mapped to :class:`Tensor` leaves and must return a scalar Tensor.
    Gradients are returned for every name in ``wrt`` (default: all).
    """
    wrt = set(point) if wrt is None else set(wrt)
    leaves = {
        name: Tensor(arr, requires_grad=name in wrt, name=name)
        for name, arr in point.items()
    }
    for name, leaf in leaves.items():
        _check(leaf.data, f"input {name}")
    value = objective(leaves)
    if value.data.size != 1:
        raise ShapeError(f"objective must be scalar, got shape {value.shape}")
    if value.requires_grad:
        value.backward()
    grads = {}
    for name in point:
        if name not in wrt:
            continue
        g = leaves[name].grad
        grads[name] = np.zeros_like(leaves[name].data) if g is None else g
    return float(value.data), grads
