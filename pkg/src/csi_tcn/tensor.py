"""Dense float64 arrays with recorded operations and reverse-mode gradients.

Covers exactly the primitives the classifier needs: dilated causal 1-D
convolution, affine maps, row softmax, lower-triangular masking, ReLU,
elementwise arithmetic, axis reductions, inverted dropout, and cross-entropy.
Graphs are built eagerly; calling `backward()` on a scalar root accumulates
gradients into every reachable tensor that requires them.

Conventions: time is the trailing axis for convolution inputs (C, T) and the
second-to-last for attention inputs (T, F); matmul requires >= 2-D operands
and broadcasts leading batch axes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "reshape",
    "index",
    "relu",
    "softmax_rows",
    "lower_triangular_mask",
    "causal_conv1d",
    "linear",
    "mean_over_axis",
    "sum_over",
    "dropout_layer",
    "cross_entropy",
    "cross_entropy_mean",
    "backward",
    "grad_check",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # Operator sugar used by the model and the tests.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, _wrap(1.0 / float(other)))

    def __pow__(self, exponent):
        return power(self, float(exponent))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, idx):
        return index(self, idx)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    out.op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise and structural primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward_fn, "mul")


def power(a: Tensor, exponent: float) -> Tensor:
    data = a.data**exponent

    def backward_fn(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward_fn, "pow")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward_fn(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(data, (a,), backward_fn, "relu")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)

    def backward_fn(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(data, (a,), backward_fn, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward_fn(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward_fn, "reshape")


def index(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing with gradient scatter."""
    data = a.data[idx]

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        _accumulate(a, ga)

    return _make(np.array(data), (a,), backward_fn, "index")


def sum_over(a: Tensor, axis: Optional[int] = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(data, (a,), backward_fn, "sum")


def mean_over_axis(a: Tensor, axis: Optional[int] = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis)

    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / n, a.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy())

    return _make(data, (a,), backward_fn, "mean")


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    data = np.matmul(a.data, b.data)

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward_fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the trailing axis: y[..., o] = sum_i x[..., i] w[o, i] + b[o]."""
    if w.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} != weight fan-in {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} != ({w.shape[0]},)")
    data = x.data @ w.data.T
    if b is not None:
        data = data + b.data

    def backward_fn(g):
        g2 = g.reshape(-1, w.shape[0])
        x2 = x.data.reshape(-1, w.shape[1])
        _accumulate(x, (g2 @ w.data).reshape(x.shape))
        _accumulate(w, g2.T @ x2)
        if b is not None:
            _accumulate(b, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, backward_fn, "linear")


def causal_conv1d(
    x: Tensor, w: Tensor, bias: Optional[Tensor] = None, dilation: int = 1
) -> Tensor:
    """Dilated causal convolution along the trailing time axis.

    x: (C_in, T) or (N, C_in, T); w: (C_out, C_in, k); bias: (C_out,).
    The input is left-padded with (k-1)*dilation zeros, so the output keeps
    length T and y[..., t] = bias + sum_{c,kk} w[:, c, kk] * x_pad[c, t + kk*d],
    i.e. tap kk = k-1 reads the current sample and earlier taps reach back in
    strides of `dilation`.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if w.ndim != 3:
        raise ValueError(f"kernel must be 3-D (C_out, C_in, k), got {w.shape}")
    squeeze = x.ndim == 2
    if x.ndim not in (2, 3):
        raise ValueError(f"input must be (C_in, T) or (N, C_in, T), got {x.shape}")
    xd = x.data[None] if squeeze else x.data
    n, c_in, t_len = xd.shape
    c_out, c_in_w, k = w.shape
    if c_in_w != c_in:
        raise ValueError(f"kernel expects {c_in_w} input channels, input has {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    pad = (k - 1) * dilation
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, 0)))
    data = np.zeros((n, c_out, t_len))
    for kk in range(k):
        data += np.matmul(w.data[:, :, kk], xp[:, :, kk * dilation : kk * dilation + t_len])
    if bias is not None:
        data += bias.data[:, None]

    def backward_fn(g):
        g3 = g[None] if squeeze else g
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for kk in range(k):
                gxp[:, :, kk * dilation : kk * dilation + t_len] += np.matmul(
                    w.data[:, :, kk].T, g3
                )
            gx = gxp[:, :, pad:]
            _accumulate(x, gx[0] if squeeze else gx)
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for kk in range(k):
                sl = xp[:, :, kk * dilation : kk * dilation + t_len]
                gw[:, :, kk] = np.matmul(g3, sl.swapaxes(1, 2)).sum(axis=0)
            _accumulate(w, gw)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g3.sum(axis=(0, 2)))

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(data[0] if squeeze else data, parents, backward_fn, "causal_conv1d")


# ---------------------------------------------------------------------------
# Attention pieces


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the trailing axis; -inf entries get probability 0."""
    row_max = np.max(a.data, axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise ValueError("softmax row is entirely -inf")
    e = np.exp(a.data - row_max)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = np.sum(g * data, axis=-1, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), backward_fn, "softmax_rows")


def lower_triangular_mask(s: Tensor, mode: str = "neg_inf") -> Tensor:
    """Suppress entries above the main diagonal of the trailing T x T block.

    "neg_inf" (default) replaces them with -inf so a following softmax assigns
    them zero weight; "zero_literal" writes 0.0 instead, reproducing the
    figure-literal variant (which still leaks weight e^0 through softmax).
    """
    if s.ndim < 2 or s.shape[-1] != s.shape[-2]:
        raise ValueError(f"mask input must end in a square block, got {s.shape}")
    if mode not in ("neg_inf", "zero_literal"):
        raise ValueError(f"unknown mask mode {mode!r}")
    t = s.shape[-1]
    above = np.triu(np.ones((t, t), dtype=bool), k=1)
    fill = -np.inf if mode == "neg_inf" else 0.0
    data = np.where(above, fill, s.data)

    def backward_fn(g):
        _accumulate(s, np.where(above, 0.0, g))

    return _make(data, (s,), backward_fn, "lower_triangular_mask")


# ---------------------------------------------------------------------------
# Regularization and loss


def dropout_layer(
    x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Inverted dropout: survivors scale by 1/(1-p); evaluation is identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate {p} outside [0, 1)")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    data = x.data * scale

    def backward_fn(g):
        _accumulate(x, g * scale)

    return _make(data, (x,), backward_fn, "dropout")


_PROB_CLAMP = 1e-12


def _check_distribution(p: np.ndarray) -> None:
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(p < -1e-6):
        raise ValueError("input is not a probability distribution (within 1e-6)")


def cross_entropy(probabilities: Tensor, label: int) -> Tensor:
    """-log p[label] with p clamped to >= 1e-12. Expects a distribution."""
    if probabilities.ndim != 1:
        raise ValueError(f"expected a probability vector, got shape {probabilities.shape}")
    _check_distribution(probabilities.data)
    p = probabilities.data[label]
    clamped = max(p, _PROB_CLAMP)
    data = -np.log(clamped)

    def backward_fn(g):
        gp = np.zeros_like(probabilities.data)
        if p > _PROB_CLAMP:
            gp[label] = -float(g) / p
        _accumulate(probabilities, gp)

    return _make(np.asarray(data), (probabilities,), backward_fn, "cross_entropy")


def cross_entropy_mean(probabilities: Tensor, labels: np.ndarray) -> Tensor:
    """Mean of -log p[b, labels[b]] over the batch axis."""
    if probabilities.ndim != 2:
        raise ValueError(f"expected (batch, classes), got shape {probabilities.shape}")
    labels = np.asarray(labels)
    _check_distribution(probabilities.data)
    batch = probabilities.shape[0]
    rows = np.arange(batch)
    p = probabilities.data[rows, labels]
    clamped = np.maximum(p, _PROB_CLAMP)
    data = -np.log(clamped).mean()

    def backward_fn(g):
        gp = np.zeros_like(probabilities.data)
        live = p > _PROB_CLAMP
        gp[rows[live], labels[live]] = -float(g) / (batch * p[live])
        _accumulate(probabilities, gp)

    return _make(np.asarray(data), (probabilities,), backward_fn, "cross_entropy_mean")


# ---------------------------------------------------------------------------
# Reverse-mode driver


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate gradients of the scalar `root` into all recorded tensors."""
    if root.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward root does not require grad")
    order = _topological_order(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    `f(*tensors)` must rebuild the (deterministic) graph and return a scalar.
    The error per coordinate is |a - n| / max(|a|, |n|, 1), i.e. absolute
    error for small gradients and relative error for large ones.
    """
    tensors = [x] if isinstance(x, Tensor) else list(x)
    for t in tensors:
        t.grad = None
    out = f(*tensors)
    if out.size != 1:
        raise ValueError("grad_check target must return a scalar")
    out.backward()
    analytic = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors
    ]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat_a = a.ravel()
        for i in range(t.data.size):
            orig = t.data.flat[i]
            t.data.flat[i] = orig + eps
            f_plus = float(f(*tensors).data)
            t.data.flat[i] = orig - eps
            f_minus = float(f(*tensors).data)
            t.data.flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(flat_a[i] - numeric) / max(abs(flat_a[i]), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
