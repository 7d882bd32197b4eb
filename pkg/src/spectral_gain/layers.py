"""Layer forward maps and their projected backward maps.

Every backward function answers the same question: given the derivative
``p_out`` of some scalar objective with respect to the layer output, what is
the derivative of that scalar with respect to the layer input (and, for
parameterized layers, with respect to the weights and bias)?  Threading
``p_out`` through the layers in reverse order is what linearizes the whole
network around the operating point of a forward pass.

Conventions:
  - activations are (h, w, c) spatial or (d,) flat, with an optional trailing
    batch axis: (h, w, c, n) / (d, n);
  - "conv" is cross-correlation (no filter flip) on the forward path; the
    spatial flip appears in the backward data path;
  - relu's derivative at exactly 0 is 0, so finite-difference checks must
    skip coordinates sitting on the kink.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError

KINDS = ("conv", "relu", "maxpool", "avgpool", "fc", "softmax")

LOSS_FLOOR = 1e-15


@dataclass(frozen=True)
class LayerSpec:
    """One layer: its kind, hyperparameters, and (for conv/fc) parameters.

    conv weights are (kh, kw, cin, cout) with bias (cout,); fc weights are
    (din, dout) with bias (dout,).  Pools carry window/stride/pad only.
    """

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0
    window: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1 or self.pad < 0:
            raise ShapeError(f"stride must be >= 1 and pad >= 0 ({self})")
        if self.kind == "conv":
            if self.weights is None or self.weights.ndim != 4:
                raise ShapeError("conv needs (kh, kw, cin, cout) weights")
            if self.bias is None or self.bias.shape != (self.weights.shape[3],):
                raise ShapeError("conv bias must be (cout,)")
        elif self.kind == "fc":
            if self.weights is None or self.weights.ndim != 2:
                raise ShapeError("fc needs (din, dout) weights")
            if self.bias is None or self.bias.shape != (self.weights.shape[1],):
                raise ShapeError("fc bias must be (dout,)")
        elif self.kind in ("maxpool", "avgpool"):
            if self.window < 1:
                raise ShapeError("pool window must be >= 1")
            if self.weights is not None or self.bias is not None:
                raise ShapeError(f"{self.kind} carries no parameters")
        else:
            if self.weights is not None or self.bias is not None:
                raise ShapeError(f"{self.kind} carries no parameters")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "fc")


def conv(weights, bias=None, stride: int = 1, pad: int = 0) -> LayerSpec:
    w = np.asarray(weights, dtype=np.float64)
    b = np.zeros(w.shape[3]) if bias is None else np.asarray(bias, dtype=np.float64)
    return LayerSpec("conv", weights=w, bias=b, stride=stride, pad=pad)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(window: int, stride: int | None = None, pad: int = 0) -> LayerSpec:
    return LayerSpec("maxpool", window=window, stride=stride or window, pad=pad)


def avgpool(window: int, stride: int | None = None, pad: int = 0) -> LayerSpec:
    return LayerSpec("avgpool", window=window, stride=stride or window, pad=pad)


def fc(weights, bias=None) -> LayerSpec:
    w = np.asarray(weights, dtype=np.float64)
    b = np.zeros(w.shape[1]) if bias is None else np.asarray(bias, dtype=np.float64)
    return LayerSpec("fc", weights=w, bias=b)


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


@dataclass
class BackwardResult:
    """Projected derivatives produced by one layer's backward map."""

    input_derivative: np.ndarray
    weight_derivative: np.ndarray | None = None
    bias_derivative: np.ndarray | None = None


# ---------------------------------------------------------------------------
# shape plumbing


def _with_batch(x: np.ndarray, spatial: bool) -> tuple[np.ndarray, bool]:
    """Return (x with a batch axis, whether one was already present)."""
    want = 4 if spatial else 2
    if x.ndim == want:
        return x, True
    if x.ndim == want - 1:
        return x[..., np.newaxis], False
    raise ShapeError(f"expected rank {want - 1} or {want} input, got shape {x.shape}")


def _unbatch(y: np.ndarray, batched: bool) -> np.ndarray:
    return y if batched else y[..., 0]


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided read-only view (oh, ow, kh, kw, c, n) over a padded (hp, wp, c, n)."""
    hp, wp, c, n = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(oh, ow, kh, kw, c, n),
        strides=(s0 * stride, s1 * stride, s0, s1, s2, s3),
        writeable=False,
    )


def _out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _pad_spatial(x4: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x4
    return np.pad(x4, ((pad, pad), (pad, pad), (0, 0), (0, 0)), constant_values=value)


# ---------------------------------------------------------------------------
# conv


def conv_forward(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Cross-correlate x with each filter and add the bias.

    Output spatial extent per axis is floor((in + 2*pad - k)/stride) + 1.
    """
    x4, batched = _with_batch(x, spatial=True)
    kh, kw, cin, cout = spec.weights.shape
    if x4.shape[2] != cin:
        raise ShapeError(f"conv expects {cin} input channels, got {x4.shape[2]}")
    oh = _out_extent(x4.shape[0], kh, spec.stride, spec.pad)
    ow = _out_extent(x4.shape[1], kw, spec.stride, spec.pad)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv output extent ({oh}, {ow}) not positive for input {x4.shape[:2]}"
        )
    cols = _windows(_pad_spatial(x4, spec.pad), kh, kw, spec.stride)
    out = np.tensordot(cols, spec.weights, axes=([2, 3, 4], [0, 1, 2]))
    out = np.moveaxis(out, 3, 2)  # (oh, ow, n, cout) -> (oh, ow, cout, n)
    out += spec.bias[np.newaxis, np.newaxis, :, np.newaxis]
    return _unbatch(np.ascontiguousarray(out), batched)


def conv_backward(x: np.ndarray, p_out: np.ndarray, spec: LayerSpec) -> BackwardResult:
    """Backward map of conv.

    The input derivative is the transposed convolution of p_out with the
    spatially flipped filter; the weight derivative correlates the input
    windows with p_out; the bias derivative sums p_out per output channel.
    """
    x4, batched = _with_batch(x, spatial=True)
    p4, _ = _with_batch(p_out, spatial=True)
    kh, kw, cin, cout = spec.weights.shape
    oh = _out_extent(x4.shape[0], kh, spec.stride, spec.pad)
    ow = _out_extent(x4.shape[1], kw, spec.stride, spec.pad)
    if p4.shape != (oh, ow, cout, x4.shape[3]):
        raise ShapeError(f"p_out shape {p4.shape} != conv output {(oh, ow, cout, x4.shape[3])}")
    xp = _pad_spatial(x4, spec.pad)
    cols = _windows(xp, kh, kw, spec.stride)
    dw = np.tensordot(cols, p4, axes=([0, 1, 5], [0, 1, 3]))
    db = p4.sum(axis=(0, 1, 3))
    # One contraction over output channels, then kh*kw strided scatter-adds.
    grads = np.tensordot(p4, spec.weights, axes=([2], [3]))  # (oh, ow, n, kh, kw, c)
    grads = np.ascontiguousarray(np.transpose(grads, (3, 4, 0, 1, 5, 2)))
    dxp = np.zeros_like(xp)
    s = spec.stride
    for u in range(kh):
        for v in range(kw):
            dxp[u:u + s * oh:s, v:v + s * ow:s] += grads[u, v]
    if spec.pad:
        dxp = dxp[spec.pad:-spec.pad, spec.pad:-spec.pad]
    return BackwardResult(_unbatch(np.ascontiguousarray(dxp), batched), dw, db)


# ---------------------------------------------------------------------------
# relu


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, p_out: np.ndarray) -> BackwardResult:
    if x.shape != p_out.shape:
        raise ShapeError(f"relu shapes differ: {x.shape} vs {p_out.shape}")
    return BackwardResult(np.where(x > 0.0, p_out, 0.0))


# ---------------------------------------------------------------------------
# pooling


def _pool_check(x4: np.ndarray, spec: LayerSpec) -> tuple[int, int]:
    k = spec.window
    hp, wp = x4.shape[0] + 2 * spec.pad, x4.shape[1] + 2 * spec.pad
    if k > hp or k > wp:
        raise ShapeError(f"pool window {k} larger than padded input ({hp}, {wp})")
    return _out_extent(x4.shape[0], k, spec.stride, spec.pad), \
        _out_extent(x4.shape[1], k, spec.stride, spec.pad)


def maxpool_forward(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    x4, batched = _with_batch(x, spatial=True)
    _pool_check(x4, spec)
    xp = _pad_spatial(x4, spec.pad, value=-np.inf)
    cols = _windows(xp, spec.window, spec.window, spec.stride)
    return _unbatch(cols.max(axis=(2, 3)), batched)


def maxpool_backward(x: np.ndarray, p_out: np.ndarray, spec: LayerSpec) -> BackwardResult:
    """Route each p_out element to the argmax position of its window.

    Ties go to the first maximum in row-major window order; gradients from
    overlapping windows accumulate.  Zero padding is treated as -inf so a
    padded cell never wins.
    """
    x4, batched = _with_batch(x, spatial=True)
    p4, _ = _with_batch(p_out, spatial=True)
    oh, ow = _pool_check(x4, spec)
    k, s = spec.window, spec.stride
    if p4.shape != (oh, ow, x4.shape[2], x4.shape[3]):
        raise ShapeError(f"p_out shape {p4.shape} != pool output {(oh, ow, x4.shape[2], x4.shape[3])}")
    xp = _pad_spatial(x4, spec.pad, value=-np.inf)
    flat = _windows(xp, k, k, s).reshape(oh, ow, k * k, x4.shape[2], x4.shape[3])
    winner = flat.argmax(axis=2)  # first max in row-major window order
    dxp = np.zeros((xp.shape[0], xp.shape[1], x4.shape[2], x4.shape[3]))
    for m in range(k * k):
        u, v = divmod(m, k)
        dxp[u:u + s * oh:s, v:v + s * ow:s] += np.where(winner == m, p4, 0.0)
    if spec.pad:
        dxp = dxp[spec.pad:-spec.pad, spec.pad:-spec.pad]
    return BackwardResult(np.ascontiguousarray(_unbatch(dxp, batched)))


def avgpool_forward(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    x4, batched = _with_batch(x, spatial=True)
    _pool_check(x4, spec)
    xp = _pad_spatial(x4, spec.pad)
    cols = _windows(xp, spec.window, spec.window, spec.stride)
    return _unbatch(cols.sum(axis=(2, 3)) / (spec.window ** 2), batched)


def avgpool_backward(p_out: np.ndarray, spec: LayerSpec, input_shape) -> BackwardResult:
    """Spread each p_out element uniformly over its window (divide by area).

    input_shape is required because the floor in the output-extent rule makes
    several input extents map to the same output extent (for window 3 and
    stride 2, inputs 7 and 8 both pool to 3).
    """
    p4, batched = _with_batch(p_out, spatial=True)
    h, w = int(input_shape[0]), int(input_shape[1])
    k, s = spec.window, spec.stride
    oh = _out_extent(h, k, s, spec.pad)
    ow = _out_extent(w, k, s, spec.pad)
    if p4.shape[:2] != (oh, ow):
        raise ShapeError(f"p_out spatial shape {p4.shape[:2]} != pool output {(oh, ow)}")
    share = p4 / (k * k)
    dxp = np.zeros((h + 2 * spec.pad, w + 2 * spec.pad) + p4.shape[2:])
    for u in range(k):
        for v in range(k):
            dxp[u:u + s * oh:s, v:v + s * ow:s] += share
    if spec.pad:
        dxp = dxp[spec.pad:-spec.pad, spec.pad:-spec.pad]
    return BackwardResult(np.ascontiguousarray(_unbatch(dxp, batched)))


# ---------------------------------------------------------------------------
# fully connected


def _flatten_fc(x: np.ndarray, din: int) -> tuple[np.ndarray, tuple, bool]:
    """Reshape an fc input to (din, n), remembering the original shape."""
    if x.ndim in (3, 4):
        x2, batched = _with_batch(x, spatial=True)
        flat = x2.reshape(-1, x2.shape[3])
    elif x.ndim in (1, 2):
        x2, batched = _with_batch(x, spatial=False)
        flat = x2
    else:
        raise ShapeError(f"fc cannot take rank-{x.ndim} input")
    if flat.shape[0] != din:
        raise ShapeError(f"fc expects {din} inputs, got {flat.shape[0]} (shape {x.shape})")
    return flat, x.shape, batched


def fc_forward(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    flat, _, batched = _flatten_fc(x, spec.weights.shape[0])
    out = spec.weights.T @ flat + spec.bias[:, np.newaxis]
    return out if batched else out[:, 0]


def fc_backward(x: np.ndarray, p_out: np.ndarray, spec: LayerSpec) -> BackwardResult:
    din, dout = spec.weights.shape
    flat, orig_shape, batched = _flatten_fc(x, din)
    p2, _ = _with_batch(p_out, spatial=False)
    if p2.shape[0] != dout:
        raise ShapeError(f"p_out length {p2.shape[0]} != fc output length {dout}")
    dx = (spec.weights @ p2).reshape(orig_shape)
    dw = flat @ p2.T
    db = p2.sum(axis=1)
    return BackwardResult(dx, dw, db)


# ---------------------------------------------------------------------------
# softmax and log loss


def softmax_forward(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax with max subtraction, safe against overflow."""
    l2, batched = _with_batch(logits, spatial=False)
    z = np.exp(l2 - l2.max(axis=0, keepdims=True))
    z /= z.sum(axis=0, keepdims=True)
    return z if batched else z[:, 0]


def softmax_backward(z: np.ndarray, p_out: np.ndarray) -> BackwardResult:
    if z.shape != p_out.shape:
        raise ShapeError(f"softmax shapes differ: {z.shape} vs {p_out.shape}")
    z2, batched = _with_batch(z, spatial=False)
    p2, _ = _with_batch(p_out, spatial=False)
    mixed = (p2 * z2).sum(axis=0, keepdims=True)
    dl = z2 * (p2 - mixed)
    return BackwardResult(dl if batched else dl[:, 0])


def logloss_forward(z: np.ndarray, label: int) -> float:
    """Negative log probability of the true class, floored at 1e-15."""
    if not 0 <= label < z.shape[0]:
        raise ShapeError(f"label {label} out of range [0, {z.shape[0]})")
    return float(-np.log(max(float(z[label]), LOSS_FLOOR)))


def logloss_backward(z: np.ndarray, label: int) -> np.ndarray:
    if not 0 <= label < z.shape[0]:
        raise ShapeError(f"label {label} out of range [0, {z.shape[0]})")
    grad = np.zeros_like(z)
    zl = float(z[label])
    if zl >= LOSS_FLOOR:
        grad[label] = -1.0 / zl
    return grad


def logloss_batch(z: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example losses and the (N, n) gradient for a batch of probabilities."""
    n = z.shape[1]
    picked = z[labels, np.arange(n)]
    clamped = np.maximum(picked, LOSS_FLOOR)
    losses = -np.log(clamped)
    grad = np.zeros_like(z)
    live = picked >= LOSS_FLOOR
    grad[labels[live], np.arange(n)[live]] = -1.0 / clamped[live]
    return losses, grad


# ---------------------------------------------------------------------------
# dispatch used by the network composer


def layer_forward(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if spec.kind == "conv":
        return conv_forward(x, spec)
    if spec.kind == "relu":
        return relu_forward(x)
    if spec.kind == "maxpool":
        return maxpool_forward(x, spec)
    if spec.kind == "avgpool":
        return avgpool_forward(x, spec)
    if spec.kind == "fc":
        return fc_forward(x, spec)
    return softmax_forward(x)


def layer_backward(x: np.ndarray, y: np.ndarray, p_out: np.ndarray, spec: LayerSpec) -> BackwardResult:
    """Backward dispatch; x is the layer input, y its forward output."""
    if spec.kind == "conv":
        return conv_backward(x, p_out, spec)
    if spec.kind == "relu":
        return relu_backward(x, p_out)
    if spec.kind == "maxpool":
        return maxpool_backward(x, p_out, spec)
    if spec.kind == "avgpool":
        return avgpool_backward(p_out, spec, x.shape)
    if spec.kind == "fc":
        return fc_backward(x, p_out, spec)
    return softmax_backward(y, p_out)
