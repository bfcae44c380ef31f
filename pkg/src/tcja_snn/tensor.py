"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays; the computation graph is a web of parent
links and backward closures built as ops execute, and walked in reverse
topological order by ``Tensor.backward()``. Gradients accumulate
additively across fan-out. Each forward pass builds a fresh graph, so
there is no tape to reset between iterations.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense real tensor that records how it was produced.

    `data` is a row-major numpy array. `grad` stays None until a
    backward pass deposits into it. Ops attach a `_backward` closure and
    parent references; leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _node(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], None],
    ) -> "Tensor":
        """Build a graph node; records the closure only if a parent needs grad."""
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, contribution: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += contribution

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph control ---------------------------------------------------------

    def detach(self) -> "Tensor":
        """A view of the same values cut loose from the graph."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-mode pass from a scalar; fills grads of every reachable leaf."""
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        order = self._topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _topo_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    # -- elementwise arithmetic -------------------------------------------------

    def _binary(self, other, fwd, vjp_a, vjp_b) -> "Tensor":
        other = self._coerce(other)
        try:
            data = fwd(self.data, other.data)
        except ValueError:
            raise ShapeError(
                f"operands not broadcastable: {self.shape} vs {other.shape}"
            ) from None
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(vjp_a(g, a.data, b.data), a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(vjp_b(g, a.data, b.data), b.shape))

        return Tensor._node(data, (a, b), backward)

    def __add__(self, other) -> "Tensor":
        return self._binary(
            other,
            lambda x, y: x + y,
            lambda g, x, y: g,
            lambda g, x, y: g,
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return self._binary(
            other,
            lambda x, y: x - y,
            lambda g, x, y: g,
            lambda g, x, y: -g,
        )

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        return self._binary(
            other,
            lambda x, y: x * y,
            lambda g, x, y: g * y,
            lambda g, x, y: g * x,
        )

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def sigmoid(self) -> "Tensor":
        x = self.data
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        src = self

        def backward(g: np.ndarray) -> None:
            src._accumulate(g * s * (1.0 - s))

        return Tensor._node(s, (src,), backward)

    # -- reductions and reshaping -------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        src = self
        axes = _normalize_axes(axis, self.ndim)

        def backward(g: np.ndarray) -> None:
            src._accumulate(_spread(g, src.shape, axes, keepdims))

        return Tensor._node(np.asarray(data), (src,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        axes = _normalize_axes(axis, self.ndim)
        count = 1
        for ax in axes:
            count *= self.shape[ax]
        data = self.data.mean(axis=axis, keepdims=keepdims)
        src = self

        def backward(g: np.ndarray) -> None:
            src._accumulate(_spread(g, src.shape, axes, keepdims) / count)

        return Tensor._node(np.asarray(data), (src,), backward)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)
        src = self

        def backward(g: np.ndarray) -> None:
            src._accumulate(g.reshape(src.shape))

        return Tensor._node(data, (src,), backward)

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            perm = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            perm = tuple(axes[0])
        else:
            perm = tuple(axes)
        data = self.data.transpose(perm)
        src = self
        inverse = tuple(np.argsort(perm))

        def backward(g: np.ndarray) -> None:
            src._accumulate(g.transpose(inverse))

        return Tensor._node(data, (src,), backward)

    def take0(self, index: int) -> "Tensor":
        """Select one slice along the leading axis."""
        data = self.data[index]
        src = self

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(src.data)
            full[index] = g
            src._accumulate(full)

        return Tensor._node(data, (src,), backward)

    # -- linear algebra -------------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = self._coerce(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(
                f"matmul expects 2-D operands, got {self.shape} and {other.shape}"
            )
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"inner dimensions differ: {self.shape} vs {other.shape}"
            )
        a, b = self, other
        data = a.data @ b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor._node(data, (a, b), backward)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _spread(
    g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool
) -> np.ndarray:
    """Broadcast a reduced gradient back over the reduced axes."""
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not tensors:
        raise ShapeError("cannot stack an empty sequence")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise ShapeError(f"stack shape mismatch: {first} vs {t.shape}")
    data = np.stack([t.data for t in tensors])
    parents = tuple(tensors)

    def backward(g: np.ndarray) -> None:
        for i, t in enumerate(parents):
            if t.requires_grad:
                t._accumulate(g[i])

    return Tensor._node(data, parents, backward)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 2-D cross-correlation.

    `x` is (B, Cin, H, W), `kernel` is (Cout, Cin, k, k). Output spatial
    size is floor((H + 2p - k) / stride) + 1 per side.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}"
        )
    batch, c_in, height, width = x.shape
    c_out, kc_in, k_h, k_w = kernel.shape
    if kc_in != c_in:
        raise ShapeError(
            f"kernel channel mismatch: input {x.shape} vs kernel {kernel.shape}"
        )
    if k_h != k_w:
        raise ShapeError(f"square kernels only, got {kernel.shape}")
    k = k_h
    if k > height + 2 * padding or k > width + 2 * padding:
        raise ShapeError(
            f"kernel {k} exceeds padded input {height + 2 * padding}x{width + 2 * padding}"
        )
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"conv2d output dimension underflow: {out_h}x{out_w} from {x.shape}"
        )

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (B, Cin, out_h, out_w, k, k)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, c_in * k * k)
    kmat = kernel.data.reshape(c_out, -1)
    out = (cols @ kmat.T).reshape(batch, out_h, out_w, c_out).transpose(0, 3, 1, 2)
    xt, kt = x, kernel

    def backward(g: np.ndarray) -> None:
        gmat = g.transpose(0, 2, 3, 1).reshape(batch * out_h * out_w, c_out)
        if kt.requires_grad:
            kt._accumulate((gmat.T @ cols).reshape(kt.shape))
        if xt.requires_grad:
            dcols = (gmat @ kmat).reshape(batch, out_h, out_w, c_in, k, k)
            dpadded = np.zeros_like(padded)
            for di in range(k):
                for dj in range(k):
                    dpadded[
                        :,
                        :,
                        di : di + out_h * stride : stride,
                        dj : dj + out_w * stride : stride,
                    ] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            if padding:
                dpadded = dpadded[:, :, padding:-padding, padding:-padding]
            xt._accumulate(dpadded)

    return Tensor._node(np.ascontiguousarray(out), (xt, kt), backward)


def conv1d_multichannel(
    x: Tensor, kernel: Tensor, padding_right: int | None = None
) -> Tensor:
    """Multichannel 1-D cross-correlation with right zero-padding, no bias.

    `x` is (Cin, L), `kernel` is (Cout, Cin, K). Output is (Cout, L) with
    out[i, j] = sum_n sum_m kernel[i, n, m] * padded[n, j + m]; reads past
    the padded buffer contribute zero.
    """
    if x.ndim != 2 or kernel.ndim != 3:
        raise ShapeError(
            f"conv1d expects 2-D input and 3-D kernel, got {x.shape} and {kernel.shape}"
        )
    c_in, length = x.shape
    c_out, kc_in, ksize = kernel.shape
    if kc_in != c_in:
        raise ShapeError(
            f"kernel channel mismatch: input {x.shape} vs kernel {kernel.shape}"
        )
    if padding_right is None:
        padding_right = ksize - 1
    if ksize > length + padding_right:
        raise ShapeError(
            f"kernel length {ksize} exceeds padded length {length + padding_right}"
        )

    padded = np.pad(x.data, ((0, 0), (0, padding_right)))
    plen = length + padding_right
    out = np.zeros((c_out, length), dtype=x.data.dtype)
    for m in range(ksize):
        upper = min(length, plen - m)
        out[:, :upper] += kernel.data[:, :, m] @ padded[:, m : m + upper]
    xt, kt = x, kernel

    def backward(g: np.ndarray) -> None:
        dpadded = np.zeros_like(padded) if xt.requires_grad else None
        dkernel = np.zeros_like(kt.data) if kt.requires_grad else None
        for m in range(ksize):
            upper = min(length, plen - m)
            if dkernel is not None:
                dkernel[:, :, m] = g[:, :upper] @ padded[:, m : m + upper].T
            if dpadded is not None:
                dpadded[:, m : m + upper] += kt.data[:, :, m].T @ g[:, :upper]
        if dkernel is not None:
            kt._accumulate(dkernel)
        if dpadded is not None:
            xt._accumulate(dpadded[:, :length])

    return Tensor._node(out, (xt, kt), backward)


def pool2d(x: Tensor, kind: str, k: int) -> Tensor:
    """Non-overlapping pooling over the two trailing axes.

    Max pooling routes its gradient to the window argmax, ties broken by
    the first element in row-major scan order.
    """
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pooling kind {kind!r}")
    if x.ndim < 2:
        raise ShapeError(f"pool2d needs at least 2 dims, got {x.shape}")
    *lead, height, width = x.shape
    if height % k or width % k:
        raise ShapeError(
            f"spatial dims {height}x{width} not divisible by pooling size {k}"
        )
    out_h, out_w = height // k, width // k
    n_lead = len(lead)
    blocked = x.data.reshape(*lead, out_h, k, out_w, k)
    perm = tuple(range(n_lead)) + (n_lead, n_lead + 2, n_lead + 1, n_lead + 3)
    windows = blocked.transpose(perm)  # (*lead, out_h, out_w, k, k)
    flat = windows.reshape(*lead, out_h, out_w, k * k)
    src = x

    if kind == "avg":
        out = flat.mean(axis=-1)

        def backward(g: np.ndarray) -> None:
            dflat = np.broadcast_to(
                (g / (k * k))[..., None], (*lead, out_h, out_w, k * k)
            )
            dwin = dflat.reshape(*lead, out_h, out_w, k, k).transpose(perm)
            src._accumulate(dwin.reshape(src.shape))

    else:
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def backward(g: np.ndarray) -> None:
            dflat = np.zeros((*lead, out_h, out_w, k * k), dtype=g.dtype)
            np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
            dwin = dflat.reshape(*lead, out_h, out_w, k, k).transpose(perm)
            src._accumulate(dwin.reshape(src.shape))

    return Tensor._node(np.ascontiguousarray(out), (src,), backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: (B, F) @ (F, G) + (G,)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(
            f"fully_connected expects 2-D input/weight, got {x.shape} and {weight.shape}"
        )
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: input {x.shape} vs weight {weight.shape}"
        )
    if bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"bias shape {bias.shape} does not match output width {weight.shape[1]}"
        )
    data = x.data @ weight.data + bias.data
    xt, wt, bt = x, weight, bias

    def backward(g: np.ndarray) -> None:
        if xt.requires_grad:
            xt._accumulate(g @ wt.data.T)
        if wt.requires_grad:
            wt._accumulate(xt.data.T @ g)
        if bt.requires_grad:
            bt._accumulate(g.sum(axis=0))

    return Tensor._node(data, (xt, wt, bt), backward)
