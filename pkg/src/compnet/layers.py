"""Compositional convolution layer math: forward, parameter/input gradients,
constraint projection, and the dense baseline equivalents.

Component parameters are stored as (features, channels, G) arrays so the whole
bank materializes and differentiates in vectorized form. Parameter gradients
are obtained by first computing the per-tap weight gradient of the equivalent
dense convolution and then contracting it with the analytic component kernels
(the two contractions commute, so this equals correlating the input with each
derivative filter directly).
"""

from dataclasses import dataclass, field

import numpy as np

from . import gaussian, tensor
from .gaussian import SIGMA_FLOOR, KernelGeometry
from .tensor import DenseFilterBank, ShapeError, Tensor4

SIGMA_PROJECT_EPS = 1e-3


@dataclass
class CompFilterBank:
    """All Gaussian components of one layer, plus per-feature biases.

    w, mux, muy, sigma have shape (features, channels, G). counts[i, s] gives
    the number of live components in slice (i, s); entries past the live count
    are inert padding with weight 0 (pruning produces these).
    """

    geom: KernelGeometry
    w: np.ndarray
    mux: np.ndarray
    muy: np.ndarray
    sigma: np.ndarray
    bias: np.ndarray
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("w", "mux", "muy", "sigma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape != self.w.shape or arr.ndim != 3:
                raise ShapeError(f"{name} must have shape (f, s, G) = {self.w.shape}")
        self.bias = np.asarray(self.bias, dtype=float)
        if self.bias.shape != (self.f,):
            raise ShapeError(f"bias must have shape ({self.f},)")
        if self.counts is None:
            self.counts = np.full((self.f, self.s), self.G, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.f, self.s):
            raise ShapeError(f"counts must have shape ({self.f}, {self.s})")

    @property
    def f(self):
        return self.w.shape[0]

    @property
    def s(self):
        return self.w.shape[1]

    @property
    def G(self):
        return self.w.shape[2]

    @classmethod
    def init_grid(cls, f, s, grid, geom: KernelGeometry, rng, weight_std=0.1):
        """Fresh bank with means on a uniform (gh x gw) grid inside the
        constraint box, sigma at half the grid spacing, weights ~ N(0, std)."""
        gh, gw = grid
        (xlo, xhi), (ylo, yhi) = geom.mu_box
        xs = xlo + (np.arange(gw) + 0.5) * (xhi - xlo) / gw
        ys = ylo + (np.arange(gh) + 0.5) * (yhi - ylo) / gh
        mux0, muy0 = np.meshgrid(xs, ys)
        g = gh * gw
        spacing = max((xhi - xlo) / gw, (yhi - ylo) / gh)
        sigma0 = max(spacing / 2.0, SIGMA_FLOOR + 1e-2)
        return cls(
            geom=geom,
            w=rng.normal(0.0, weight_std, size=(f, s, g)),
            mux=np.broadcast_to(mux0.ravel(), (f, s, g)).copy(),
            muy=np.broadcast_to(muy0.ravel(), (f, s, g)).copy(),
            sigma=np.full((f, s, g), sigma0),
            bias=np.zeros(f),
        )

    @classmethod
    def from_components(cls, comps, geom: KernelGeometry, bias):
        """Build from nested lists comps[feature][channel] of GaussianComponent,
        padding ragged groups with inert zero-weight components."""
        f = len(comps)
        s = len(comps[0])
        counts = np.array([[len(comps[i][j]) for j in range(s)] for i in range(f)])
        g = max(1, int(counts.max()))
        (xlo, xhi), (ylo, yhi) = geom.mu_box
        w = np.zeros((f, s, g))
        mux = np.full((f, s, g), (xlo + xhi) / 2.0)
        muy = np.full((f, s, g), (ylo + yhi) / 2.0)
        sigma = np.full((f, s, g), 1.0)
        for i in range(f):
            for j in range(s):
                for k, c in enumerate(comps[i][j]):
                    w[i, j, k] = c.w
                    mux[i, j, k], muy[i, j, k] = c.mu
                    sigma[i, j, k] = c.sigma
        return cls(geom, w, mux, muy, sigma, np.asarray(bias, dtype=float), counts)

    def to_components(self):
        """Nested lists comps[feature][channel] of the live GaussianComponents."""
        return [
            [
                [
                    gaussian.GaussianComponent(
                        w=float(self.w[i, j, k]),
                        mu=(float(self.mux[i, j, k]), float(self.muy[i, j, k])),
                        sigma=float(self.sigma[i, j, k]),
                    )
                    for k in range(self.counts[i, j])
                ]
                for j in range(self.s)
            ]
            for i in range(self.f)
        ]

    def live_component_count(self):
        return int(self.counts.sum())

    def validate(self):
        """Raise if any live component violates the mean/sigma constraints."""
        (xlo, xhi), (ylo, yhi) = self.geom.mu_box
        live = np.arange(self.G) < self.counts[..., None]
        ok = (
            (self.sigma > SIGMA_FLOOR)
            & (self.mux >= xlo)
            & (self.mux <= xhi)
            & (self.muy >= ylo)
            & (self.muy <= yhi)
        )
        if not ok[live].all():
            raise ShapeError("bank has components violating mean/sigma constraints")

    def materialize(self) -> DenseFilterBank:
        return gaussian.materialize_bank(
            self.w, self.mux, self.muy, self.sigma, self.bias, self.geom
        )


@dataclass
class CompLayerGrads:
    """Gradients per component parameter, congruent with the owning bank."""

    d_w: np.ndarray
    d_mux: np.ndarray
    d_muy: np.ndarray
    d_sigma: np.ndarray
    d_bias: np.ndarray


def comp_forward(x: Tensor4, bank: CompFilterBank) -> Tensor4:
    """Convolution with the materialized bank (definitionally the dense path)."""
    return tensor.conv2d_valid(x, bank.materialize())


def comp_backward_params(x: Tensor4, grad_z: Tensor4, bank: CompFilterBank) -> CompLayerGrads:
    """Gradients of sum(grad_z * comp_forward(x)) w.r.t. all bank parameters."""
    d_tap, d_bias = tensor.conv2d_weight_grads(x, grad_z, bank.geom.kh, bank.geom.kw)
    d_tap = d_tap.astype(float)
    kernels = gaussian.component_kernels(bank.mux, bank.muy, bank.sigma, bank.geom)
    d_w = np.einsum("fsgij,fsij->fsg", kernels, d_tap)
    dkx, dky, dks = gaussian.component_kernel_grads(
        bank.w, bank.mux, bank.muy, bank.sigma, bank.geom
    )
    d_mux = np.einsum("fsgij,fsij->fsg", dkx, d_tap)
    d_muy = np.einsum("fsgij,fsij->fsg", dky, d_tap)
    d_sigma = np.einsum("fsgij,fsij->fsg", dks, d_tap)
    return CompLayerGrads(d_w, d_mux, d_muy, d_sigma, d_bias.astype(float))


def comp_backward_input(grad_z: Tensor4, bank: CompFilterBank) -> Tensor4:
    """Input gradient: full correlation of grad_z with the 180-degree rotated bank."""
    return tensor.conv2d_input_grad(grad_z, bank.materialize())


def project_constraints(bank: CompFilterBank) -> CompFilterBank:
    """Clamp means into the constraint box and sigma above its floor, in place."""
    (xlo, xhi), (ylo, yhi) = bank.geom.mu_box
    np.clip(bank.mux, xlo, xhi, out=bank.mux)
    np.clip(bank.muy, ylo, yhi, out=bank.muy)
    np.maximum(bank.sigma, SIGMA_FLOOR + SIGMA_PROJECT_EPS, out=bank.sigma)
    return bank


def dense_forward(x: Tensor4, bank: DenseFilterBank) -> Tensor4:
    return tensor.conv2d_valid(x, bank)


def dense_backward_params(x: Tensor4, grad_z: Tensor4, bank: DenseFilterBank):
    return tensor.conv2d_weight_grads(x, grad_z, bank.kh, bank.kw)


def dense_backward_input(grad_z: Tensor4, bank: DenseFilterBank) -> Tensor4:
    return tensor.conv2d_input_grad(grad_z, bank)
