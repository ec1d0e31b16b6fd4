"""Layer objects and the feed-forward network container.

Each layer caches what its backward pass needs during forward. Layers with
parameters expose them as named arrays; the optimizer updates those arrays in
place, keyed by (layer index, name).
"""

import numpy as np

from . import layers, tensor
from .layers import CompFilterBank
from .tensor import DenseFilterBank, ShapeError


class ReluLayer:
    name = "relu"

    def forward(self, x):
        self._x = x
        return tensor.relu(x)

    def backward(self, grad):
        return tensor.relu_backward(grad, self._x)

    def out_shape(self, in_shape):
        return in_shape


class MaxPoolLayer:
    name = "maxpool"

    def __init__(self, window, stride):
        self.window = window
        self.stride = stride

    def forward(self, x):
        self._in_shape = x.shape
        out, self._argmax = tensor.maxpool(x, self.window, self.stride)
        return out

    def backward(self, grad):
        return tensor.maxpool_backward(grad, self._argmax, self._in_shape)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if self.window > h or self.window > w:
            raise ShapeError(f"pool window {self.window} larger than input {h}x{w}")
        return (
            c,
            (h - self.window) // self.stride + 1,
            (w - self.window) // self.stride + 1,
        )


class CompConvLayer:
    """Convolution whose filters are mixtures of Gaussian components."""

    name = "compconv"

    def __init__(self, bank: CompFilterBank, learn_geometry=True):
        self.bank = bank
        self.learn_geometry = learn_geometry

    def forward(self, x):
        self._x = x
        self._dense = self.bank.materialize()
        return tensor.conv2d_valid(x, self._dense)

    def backward(self, grad):
        g = layers.comp_backward_params(self._x, grad, self.bank)
        self._grads = {"w": g.d_w, "bias": g.d_bias}
        if self.learn_geometry:
            self._grads.update(
                {"mux": g.d_mux, "muy": g.d_muy, "sigma": g.d_sigma}
            )
        return tensor.conv2d_input_grad(grad, self._dense)

    def params(self):
        p = {"w": self.bank.w, "bias": self.bank.bias}
        if self.learn_geometry:
            p.update(
                {"mux": self.bank.mux, "muy": self.bank.muy, "sigma": self.bank.sigma}
            )
        return p

    def grads(self):
        return self._grads

    def project(self):
        layers.project_constraints(self.bank)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.bank.s:
            raise ShapeError(f"layer expects {self.bank.s} channels, got {c}")
        if h < self.bank.geom.kh or w < self.bank.geom.kw:
            raise ShapeError(
                f"input {h}x{w} smaller than kernel "
                f"{self.bank.geom.kh}x{self.bank.geom.kw}"
            )
        return (self.bank.f, h - self.bank.geom.kh + 1, w - self.bank.geom.kw + 1)


class DenseConvLayer:
    """Standard convolution with free per-tap weights (the baseline model)."""

    name = "denseconv"

    def __init__(self, bank: DenseFilterBank):
        self.bank = bank

    def forward(self, x):
        self._x = x
        return tensor.conv2d_valid(x, self.bank)

    def backward(self, grad):
        d_w, d_b = tensor.conv2d_weight_grads(self._x, grad, self.bank.kh, self.bank.kw)
        self._grads = {"weights": d_w, "bias": d_b}
        return tensor.conv2d_input_grad(grad, self.bank)

    def params(self):
        return {"weights": self.bank.weights, "bias": self.bank.bias}

    def grads(self):
        return self._grads

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.bank.s:
            raise ShapeError(f"layer expects {self.bank.s} channels, got {c}")
        if h < self.bank.kh or w < self.bank.kw:
            raise ShapeError(f"input {h}x{w} smaller than kernel")
        return (self.bank.f, h - self.bank.kh + 1, w - self.bank.kw + 1)


class FullyConnectedLayer:
    name = "fc"

    def __init__(self, weights, bias):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = np.asarray(bias, dtype=float)

    def forward(self, x):
        self._x = x
        return tensor.fully_connected(x, self.weights, self.bias)

    def backward(self, grad):
        d_w, d_b, d_x = tensor.fully_connected_backward(grad, self._x, self.weights)
        self._grads = {"weights": d_w, "bias": d_b}
        return d_x

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def grads(self):
        return self._grads

    def out_shape(self, in_shape):
        flat = int(np.prod(in_shape))
        if self.weights.shape[1] != flat:
            raise ShapeError(
                f"fc expects {self.weights.shape[1]} inputs, got {flat} "
                f"from shape {in_shape}"
            )
        return (self.weights.shape[0],)


class Network:
    """Ordered layer stack ending in a softmax + multinomial logistic loss."""

    def __init__(self, stack, in_shape):
        self.stack = list(stack)
        self.in_shape = tuple(in_shape)
        shape = self.in_shape
        for layer in self.stack:
            shape = layer.out_shape(shape)
        if len(shape) != 1:
            raise ShapeError("network must end in a fully-connected layer")
        self.n_classes = shape[0]

    def forward(self, x) -> np.ndarray:
        for layer in self.stack:
            x = layer.forward(x)
        return x

    def loss_and_backward(self, x, labels):
        """Forward, loss, and a full backward pass filling every layer's grads."""
        scores = self.forward(x)
        loss, grad = tensor.softmax_xent(scores, labels)
        for layer in reversed(self.stack):
            grad = layer.backward(grad)
        return loss, scores

    def loss(self, x, labels) -> float:
        loss, _ = tensor.softmax_xent(self.forward(x), labels)
        return loss

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.forward(x), axis=1)

    def param_layers(self):
        return [(i, l) for i, l in enumerate(self.stack) if hasattr(l, "params")]

    def comp_layers(self):
        return [l for l in self.stack if isinstance(l, CompConvLayer)]

    def project_constraints(self):
        for layer in self.stack:
            if hasattr(layer, "project"):
                layer.project()

    def validate_banks(self):
        for layer in self.comp_layers():
            layer.bank.validate()

    def astype(self, dtype):
        """Cast all parameter arrays to the given float dtype."""
        for _, layer in self.param_layers():
            if isinstance(layer, FullyConnectedLayer):
                layer.weights = layer.weights.astype(dtype)
                layer.bias = layer.bias.astype(dtype)
            elif isinstance(layer, DenseConvLayer):
                layer.bank.weights = layer.bank.weights.astype(dtype)
                layer.bank.bias = layer.bank.bias.astype(dtype)
            elif isinstance(layer, CompConvLayer):
                b = layer.bank
                for name in ("w", "mux", "muy", "sigma", "bias"):
                    setattr(b, name, getattr(b, name).astype(dtype))
        return self
