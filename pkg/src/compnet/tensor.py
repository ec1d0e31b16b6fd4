"""Dense 4D tensors and the standard NN primitives.

All activations and gradients are numpy arrays of shape (batch, channels,
height, width), float64 by default. A float32 mode is supported for training
speed; correctness tests run in float64.
"""

from dataclasses import dataclass

import numpy as np

Tensor4 = np.ndarray


class ShapeError(ValueError):
    """Operation inputs have incompatible shapes or invalid values."""


def as_tensor4(x, dtype=None) -> np.ndarray:
    """Validate and return x as a (n, c, h, w) array."""
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 4:
        raise ShapeError(f"expected 4D (n, c, h, w) tensor, got shape {x.shape}")
    return x


def check_finite(x, what="tensor"):
    if not np.isfinite(x).all():
        raise ShapeError(f"{what} contains NaN or Inf")


@dataclass
class DenseFilterBank:
    """Per-tap convolution weights: (features, channels, kh, kw) plus bias (features,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 4:
            raise ShapeError(f"weights must be 4D, got shape {self.weights.shape}")
        if self.kh < 1 or self.kw < 1:
            raise ShapeError(f"kernel dims must be >= 1, got {self.kh}x{self.kw}")
        if self.bias.shape != (self.f,):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.f} features"
            )

    @property
    def f(self):
        return self.weights.shape[0]

    @property
    def s(self):
        return self.weights.shape[1]

    @property
    def kh(self):
        return self.weights.shape[2]

    @property
    def kw(self):
        return self.weights.shape[3]


def _im2col(x, kh, kw):
    """Unfold valid windows of x into a (n*oh*ow, c*kh*kw) matrix."""
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * oh * ow, c * kh * kw), oh, ow


def _col2im(dcols, n, c, h, w, kh, kw):
    """Scatter-add column gradients back onto the (n, c, h, w) input grid."""
    oh, ow = h - kh + 1, w - kw + 1
    dwin = dcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros((n, c, h, w), dtype=dcols.dtype)
    for dy in range(kh):
        for dx_ in range(kw):
            dx[:, :, dy : dy + oh, dx_ : dx_ + ow] += dwin[:, :, dy, dx_]
    return dx


def conv2d_valid(x: Tensor4, bank: DenseFilterBank) -> Tensor4:
    """Valid (no padding) cross-correlation of x with a dense filter bank.

    out[n, i, y, x] = bias[i] + sum_s sum_{dy,dx} W[i, s, dy, dx] * in[n, s, y+dy, x+dx]
    """
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if c != bank.s:
        raise ShapeError(f"input has {c} channels, bank expects {bank.s}")
    if h < bank.kh or w < bank.kw:
        raise ShapeError(f"input {h}x{w} smaller than kernel {bank.kh}x{bank.kw}")
    cols, oh, ow = _im2col(x, bank.kh, bank.kw)
    wmat = bank.weights.reshape(bank.f, -1)
    out = cols @ wmat.T.astype(cols.dtype) + bank.bias.astype(cols.dtype)
    return np.ascontiguousarray(out.reshape(n, oh, ow, bank.f).transpose(0, 3, 1, 2))


def conv2d_weight_grads(x: Tensor4, grad_out: Tensor4, kh, kw):
    """Per-tap weight and bias gradients of conv2d_valid.

    Returns (d_weights (f, s, kh, kw), d_bias (f,)).
    """
    n, c, h, w = x.shape
    gn, f, oh, ow = grad_out.shape
    if gn != n or (oh, ow) != (h - kh + 1, w - kw + 1):
        raise ShapeError(
            f"grad shape {grad_out.shape} inconsistent with input {x.shape} "
            f"and kernel {kh}x{kw}"
        )
    cols, _, _ = _im2col(x, kh, kw)
    gmat = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
    d_w = (gmat.T @ cols).reshape(f, c, kh, kw)
    d_b = grad_out.sum(axis=(0, 2, 3))
    return d_w, d_b


def conv2d_input_grad(grad_out: Tensor4, bank: DenseFilterBank) -> Tensor4:
    """Input gradient of conv2d_valid: full correlation with the rotated bank."""
    n, f, oh, ow = grad_out.shape
    if f != bank.f:
        raise ShapeError(f"grad has {f} features, bank has {bank.f}")
    h, w = oh + bank.kh - 1, ow + bank.kw - 1
    gmat = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
    dcols = gmat @ bank.weights.reshape(bank.f, -1).astype(gmat.dtype)
    return _col2im(dcols, n, bank.s, h, w, bank.kh, bank.kw)


def relu(x: Tensor4) -> Tensor4:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: Tensor4, x: Tensor4) -> Tensor4:
    """Pass gradient where x > 0; the subgradient at exactly 0 is taken as 0."""
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad shape {grad_out.shape} != input shape {x.shape}")
    return grad_out * (x > 0)


def maxpool(x: Tensor4, k: int, stride: int):
    """Max-pooling with window k and the given stride.

    Returns (output, argmax) where argmax holds, per output cell, the flat
    index (y*w + x) of the first row-major maximum in its window.
    """
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"pool window {k} larger than input {h}x{w}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    out = np.full((n, c, oh, ow), -np.inf, dtype=x.dtype)
    arg = np.zeros((n, c, oh, ow), dtype=np.int64)
    ys = np.arange(oh) * stride
    xs = np.arange(ow) * stride
    for dy in range(k):
        for dx in range(k):
            plane = x[:, :, dy : dy + stride * oh : stride, dx : dx + stride * ow : stride]
            better = plane > out
            flat = ((ys + dy)[:, None] * w + (xs + dx)[None, :])[None, None]
            out = np.where(better, plane, out)
            arg = np.where(better, flat, arg)
    return out, arg


def maxpool_backward(grad_out: Tensor4, argmax, input_shape) -> Tensor4:
    """Route each output gradient to its recorded argmax position."""
    n, c, h, w = input_shape
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"grad shape {grad_out.shape} != argmax shape {argmax.shape}")
    dx = np.zeros((n, c, h * w), dtype=grad_out.dtype)
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (ni, ci, argmax), grad_out)
    return dx.reshape(n, c, h, w)


def fully_connected(x: Tensor4, weights, bias):
    """Flatten x and apply scores[n, j] = bias[j] + sum_i W[j, i] * flat(x)[n, i]."""
    n = x.shape[0]
    flat = x.reshape(n, -1)
    if weights.shape[1] != flat.shape[1]:
        raise ShapeError(
            f"weight columns {weights.shape[1]} != flattened input size {flat.shape[1]}"
        )
    return flat @ weights.T.astype(flat.dtype) + bias.astype(flat.dtype)


def fully_connected_backward(grad_scores, x: Tensor4, weights):
    """Gradients of fully_connected: (d_weights, d_bias, d_input)."""
    n = x.shape[0]
    flat = x.reshape(n, -1)
    if grad_scores.shape != (n, weights.shape[0]):
        raise ShapeError(
            f"grad shape {grad_scores.shape} != scores shape {(n, weights.shape[0])}"
        )
    d_w = grad_scores.T @ flat
    d_b = grad_scores.sum(axis=0)
    d_x = (grad_scores @ weights.astype(grad_scores.dtype)).reshape(x.shape)
    return d_w, d_b, d_x


def softmax(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(scores, labels):
    """Mean multinomial logistic loss and its gradient w.r.t. scores.

    loss = mean_n of -log softmax(scores)[n, labels[n]]
    grad = (softmax(scores) - onehot(labels)) / batch
    """
    labels = np.asarray(labels)
    n, m = scores.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= m:
        raise ShapeError(f"labels must lie in [0, {m})")
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), labels]))
    grad = softmax(scores)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad
