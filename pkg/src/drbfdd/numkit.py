"""Dense float64 layer kernels with hand-written backward passes.

Tensors are plain C-ordered ``np.float64`` arrays. Every forward op is a pure
function; the matching ``*_backward`` takes whatever the forward needs to be
replayed and returns a :class:`LayerGrad`.

Convolutions are cross-correlations (no kernel flip), the usual deep learning
convention. Pooling is non-overlapping (stride == window).

The small ``Layer`` classes at the bottom wrap the functional kernels with a
saved forward context so that a feature extractor can be expressed as a list
of layers and differentiated by walking it backwards.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from drbfdd.errors import MissingContextError, ShapeError

TANH_SCALE = 1.7159
TANH_SLOPE = 2.0 / 3.0


@dataclass
class LayerGrad:
    grad_input: np.ndarray
    grad_params: dict[str, np.ndarray] = field(default_factory=dict)


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# convolution


def _conv_geometry(x, w, b, stride, pad, nd):
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    if pad < 0:
        raise ShapeError(f"pad must be non-negative, got {pad}")
    if x.ndim != nd + 2:
        raise ShapeError(f"input must have {nd + 2} dims, got shape {x.shape}")
    if w.ndim != nd + 2:
        raise ShapeError(f"weights must have {nd + 2} dims, got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} != weight channels {w.shape[1]}"
        )
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} != ({w.shape[0]},)")
    out = []
    for axis in range(nd):
        size = x.shape[2 + axis] + 2 * pad
        k = w.shape[2 + axis]
        if k > size:
            raise ShapeError(
                f"kernel size {k} exceeds padded input size {size} on spatial axis {axis}"
            )
        if (size - k) % stride:
            raise ShapeError(
                f"output size not exact on spatial axis {axis}: "
                f"({size} - {k}) is not divisible by stride {stride}"
            )
        out.append((size - k) // stride + 1)
    return tuple(out)


def _windows(x, kshape, stride, pad, nd):
    xp = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * nd)
    win = sliding_window_view(xp, kshape, axis=tuple(range(2, 2 + nd)))
    return xp.shape, win[(slice(None), slice(None)) + (slice(None, None, stride),) * nd]


def _conv_forward(x, w, b, stride, pad, nd):
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _conv_geometry(x, w, b, stride, pad, nd)
    _, win = _windows(x, w.shape[2:], stride, pad, nd)
    # win: (N, C, *out, *k); contract C and kernel axes against w: (F, C, *k)
    kaxes = list(range(2 + nd, 2 + 2 * nd))
    out = np.tensordot(win, w, axes=([1] + kaxes, [1] + list(range(2, 2 + nd))))
    out = np.moveaxis(out, -1, 1)
    return np.ascontiguousarray(out + b.reshape((1, -1) + (1,) * nd))


def _conv_backward(x, w, stride, pad, grad_out, nd):
    x, w, grad_out = as_tensor(x), as_tensor(w), as_tensor(grad_out)
    out_shape = _conv_geometry(x, w, None, stride, pad, nd)
    expected = (x.shape[0], w.shape[0]) + out_shape
    if grad_out.shape != expected:
        raise ShapeError(f"upstream grad shape {grad_out.shape} != output shape {expected}")
    padded_shape, win = _windows(x, w.shape[2:], stride, pad, nd)
    oaxes = list(range(2, 2 + nd))
    grad_w = np.tensordot(grad_out, win, axes=([0] + oaxes, [0] + oaxes))
    grad_b = grad_out.sum(axis=tuple([0] + oaxes))

    grad_xp = np.zeros(padded_shape)
    for offset in itertools.product(*(range(k) for k in w.shape[2:])):
        tap = w[(slice(None), slice(None)) + offset]  # (F, C)
        contrib = np.moveaxis(np.tensordot(grad_out, tap, axes=([1], [0])), -1, 1)
        region = tuple(
            slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offset, out_shape)
        )
        grad_xp[(slice(None), slice(None)) + region] += contrib
    crop = tuple(slice(pad, s - pad) for s in padded_shape[2:])
    grad_x = np.ascontiguousarray(grad_xp[(slice(None), slice(None)) + crop])
    return LayerGrad(grad_x, {"weight": grad_w, "bias": grad_b})


def conv2d(x, weights, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (N, C, H, W) with ``weights`` (F, C, kH, kW)."""
    return _conv_forward(x, weights, bias, stride, pad, 2)


def conv2d_backward(x, weights, stride, pad, grad_out) -> LayerGrad:
    return _conv_backward(x, weights, stride, pad, grad_out, 2)


def conv1d(x, weights, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (N, C, L) with ``weights`` (F, C, k)."""
    return _conv_forward(x, weights, bias, stride, pad, 1)


def conv1d_backward(x, weights, stride, pad, grad_out) -> LayerGrad:
    return _conv_backward(x, weights, stride, pad, grad_out, 1)


# ---------------------------------------------------------------------------
# pooling


def maxpool(x, window: int, dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling over the trailing ``dims`` axes.

    Returns the pooled tensor and, for each output element, the flat
    (row-major) index of the winning input element. Ties go to the lowest
    flat index.
    """
    x = as_tensor(x)
    if dims not in (1, 2):
        raise ShapeError(f"dims must be 1 or 2, got {dims}")
    if window < 1:
        raise ShapeError(f"window must be positive, got {window}")
    if x.ndim < dims:
        raise ShapeError(f"input of shape {x.shape} has fewer than {dims} dims")
    lead = x.shape[: x.ndim - dims]
    spatial = x.shape[x.ndim - dims :]
    for axis, size in enumerate(spatial):
        if size % window:
            raise ShapeError(
                f"spatial size {size} on axis {axis} is not divisible by window {window}"
            )
    split = []
    for size in spatial:
        split += [size // window, window]
    # group window offsets last: (*lead, *blocks, *offsets)
    nl = len(lead)
    order = list(range(nl)) + [nl + 2 * i for i in range(dims)] + [nl + 2 * i + 1 for i in range(dims)]
    blocks = tuple(s // window for s in spatial)

    def regroup(a):
        a = a.reshape(lead + tuple(split)).transpose(order)
        return a.reshape(lead + blocks + (window**dims,))

    vals = regroup(x)
    local = np.argmax(vals, axis=-1)[..., None]  # argmax keeps the first maximum
    out = np.take_along_axis(vals, local, axis=-1)[..., 0]
    flat = np.take_along_axis(regroup(np.arange(x.size).reshape(x.shape)), local, axis=-1)[..., 0]
    return np.ascontiguousarray(out), flat


def maxpool_backward(input_shape, argmax, grad_out) -> LayerGrad:
    argmax = np.asarray(argmax)
    grad_out = as_tensor(grad_out)
    if argmax.shape != grad_out.shape:
        raise ShapeError(f"upstream grad shape {grad_out.shape} != pooled shape {argmax.shape}")
    grad = np.zeros(int(np.prod(input_shape)))
    grad[argmax.ravel()] = grad_out.ravel()
    return LayerGrad(grad.reshape(input_shape))


# ---------------------------------------------------------------------------
# dense and activation


def dense(x, weights, bias) -> np.ndarray:
    """Affine map of rows: ``x @ weights.T + bias``."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"dense expects 2-D input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f"input width {x.shape[1]} != weight input width {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def dense_backward(x, weights, grad_out) -> LayerGrad:
    x, weights, grad_out = as_tensor(x), as_tensor(weights), as_tensor(grad_out)
    if grad_out.shape != (x.shape[0], weights.shape[0]):
        raise ShapeError(
            f"upstream grad shape {grad_out.shape} != ({x.shape[0]}, {weights.shape[0]})"
        )
    return LayerGrad(
        grad_out @ weights,
        {"weight": grad_out.T @ x, "bias": grad_out.sum(axis=0)},
    )


def scaled_tanh(x) -> np.ndarray:
    """LeCun's ``1.7159 * tanh(2x/3)``."""
    return TANH_SCALE * np.tanh(TANH_SLOPE * as_tensor(x))


def scaled_tanh_grad(x) -> np.ndarray:
    """Elementwise derivative of :func:`scaled_tanh` at ``x``."""
    t = np.tanh(TANH_SLOPE * as_tensor(x))
    return TANH_SCALE * TANH_SLOPE * (1.0 - t * t)


def scaled_tanh_backward(x, grad_out) -> LayerGrad:
    x, grad_out = as_tensor(x), as_tensor(grad_out)
    if x.shape != grad_out.shape:
        raise ShapeError(f"upstream grad shape {grad_out.shape} != input shape {x.shape}")
    return LayerGrad(scaled_tanh_grad(x) * grad_out)


# ---------------------------------------------------------------------------
# stateful layer wrappers


class Layer:
    """One stage of a feature extractor.

    ``kind`` and ``config`` (a tuple of ints) fully describe the architecture;
    ``params`` maps parameter names to arrays. ``forward`` keeps the context
    that ``backward`` needs.
    """

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._ctx = None

    @property
    def config(self) -> tuple[int, ...]:
        return ()

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> LayerGrad:
        raise NotImplementedError

    def _saved(self):
        if self._ctx is None:
            raise MissingContextError(f"{self.kind}: backward called before forward")
        return self._ctx

    def clear(self):
        self._ctx = None


class Conv(Layer):
    def __init__(self, weight, bias, stride=1, pad=0):
        super().__init__()
        self.params = {"weight": as_tensor(weight), "bias": as_tensor(bias)}
        self.stride = int(stride)
        self.pad = int(pad)

    @property
    def nd(self) -> int:
        return self.params["weight"].ndim - 2

    @property
    def kind(self):
        return "conv2d" if self.nd == 2 else "conv1d"

    @property
    def config(self):
        return (self.stride, self.pad)

    def output_shape(self, input_shape):
        w = self.params["weight"]
        dummy = np.empty((1,) + tuple(input_shape))
        spatial = _conv_geometry(dummy, w, None, self.stride, self.pad, self.nd)
        return (w.shape[0],) + spatial

    def forward(self, x):
        p = self.params
        self._ctx = x
        return _conv_forward(x, p["weight"], p["bias"], self.stride, self.pad, self.nd)

    def backward(self, grad_out):
        x = self._saved()
        return _conv_backward(x, self.params["weight"], self.stride, self.pad, grad_out, self.nd)


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, window, dims):
        super().__init__()
        self.window = int(window)
        self.dims = int(dims)

    @property
    def config(self):
        return (self.window, self.dims)

    def output_shape(self, input_shape):
        head = tuple(input_shape[: len(input_shape) - self.dims])
        tail = input_shape[len(input_shape) - self.dims :]
        for size in tail:
            if size % self.window:
                raise ShapeError(f"spatial size {size} not divisible by window {self.window}")
        return head + tuple(s // self.window for s in tail)

    def forward(self, x):
        out, argmax = maxpool(x, self.window, self.dims)
        self._ctx = (x.shape, argmax)
        return out

    def backward(self, grad_out):
        shape, argmax = self._saved()
        return maxpool_backward(shape, argmax, grad_out)


class Dense(Layer):
    kind = "dense"

    def __init__(self, weight, bias):
        super().__init__()
        self.params = {"weight": as_tensor(weight), "bias": as_tensor(bias)}

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.params["weight"].shape[1],):
            raise ShapeError(
                f"dense input {tuple(input_shape)} != ({self.params['weight'].shape[1]},)"
            )
        return (self.params["weight"].shape[0],)

    def forward(self, x):
        self._ctx = x
        return dense(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        return dense_backward(self._saved(), self.params["weight"], grad_out)


class ScaledTanh(Layer):
    kind = "scaled_tanh"

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x):
        self._ctx = x
        return scaled_tanh(x)

    def backward(self, grad_out):
        return scaled_tanh_backward(self._saved(), grad_out)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        self._ctx = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return LayerGrad(np.asarray(grad_out).reshape(self._saved()))


class ZeroPad(Layer):
    """Right-pads the trailing spatial axes with zeros."""

    kind = "zeropad"

    def __init__(self, amounts):
        super().__init__()
        self.amounts = tuple(int(a) for a in amounts)

    @property
    def config(self):
        return self.amounts

    def output_shape(self, input_shape):
        head = tuple(input_shape[: len(input_shape) - len(self.amounts)])
        tail = input_shape[len(input_shape) - len(self.amounts) :]
        return head + tuple(s + a for s, a in zip(tail, self.amounts))

    def forward(self, x):
        self._ctx = x.shape
        widths = [(0, 0)] * (x.ndim - len(self.amounts)) + [(0, a) for a in self.amounts]
        return np.pad(x, widths)

    def backward(self, grad_out):
        shape = self._saved()
        return LayerGrad(np.ascontiguousarray(grad_out[tuple(slice(0, s) for s in shape)]))
