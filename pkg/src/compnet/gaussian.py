"""Math of the Gaussian filter component.

A component is a weighted, discretely normalized 2D Gaussian living on the
integer tap grid of a convolution kernel. Tap coordinates are (x, y) with x
the column in 0..kw-1 and y the row in 0..kh-1; kernel matrices are indexed
[y, x]. The normalizer is the sum of the unnormalized Gaussian over the tap
grid, so every materialized kernel sums exactly to its weight.

Because the Gaussian is axis-aligned, both the kernel and its normalizer
factorize over the two axes; the separable path and all derivative filters
exploit this.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DenseFilterBank, ShapeError

SIGMA_FLOOR = 0.5
MU_MARGIN = 1.5


@dataclass(frozen=True)
class KernelGeometry:
    """Kernel tap-grid dimensions (width, height)."""

    kw: int
    kh: int

    def __post_init__(self):
        if self.kw < 4 or self.kh < 4:
            raise ShapeError(
                f"kernel must be at least 4x4 so the mean constraint box is "
                f"non-empty, got {self.kw}x{self.kh}"
            )

    @property
    def mu_box(self):
        """((ux_lo, ux_hi), (uy_lo, uy_hi)) bounds for component means."""
        return (
            (MU_MARGIN, self.kw - 1 - MU_MARGIN),
            (MU_MARGIN, self.kh - 1 - MU_MARGIN),
        )


@dataclass
class GaussianComponent:
    """One filter component: weight w, mean (ux, uy) in tap units, isotropic sigma."""

    w: float
    mu: tuple
    sigma: float

    def validate(self, geom: KernelGeometry):
        (xlo, xhi), (ylo, yhi) = geom.mu_box
        ux, uy = self.mu
        if not (self.sigma > SIGMA_FLOOR):
            raise ShapeError(f"sigma must exceed {SIGMA_FLOOR}, got {self.sigma}")
        if not (xlo <= ux <= xhi and ylo <= uy <= yhi):
            raise ShapeError(f"mean {self.mu} outside constraint box of {geom}")


def g_unnorm(x, mu, sigma):
    """Unnormalized Gaussian exp(-||x - mu||^2 / (2 sigma^2)) at tap coordinate pair x."""
    dx = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    return np.exp(-(dx[..., 0] ** 2 + dx[..., 1] ** 2) / (2.0 * sigma**2))


def _axis_values(coords, mu, sigma):
    """1D unnormalized Gaussian over integer coordinates, broadcast over mu."""
    d = coords - np.asarray(mu)[..., None]
    return np.exp(-(d**2) / (2.0 * np.asarray(sigma)[..., None] ** 2))


def normalizer(geom: KernelGeometry, mu, sigma) -> float:
    """Sum of g_unnorm over all kw*kh taps; factorizes over axes."""
    gx = _axis_values(np.arange(geom.kw, dtype=float), mu[0], np.asarray(sigma))
    gy = _axis_values(np.arange(geom.kh, dtype=float), mu[1], np.asarray(sigma))
    return float(gx.sum() * gy.sum())


def materialize(comp: GaussianComponent, geom: KernelGeometry) -> np.ndarray:
    """Dense (kh, kw) kernel w * g(x) / N; entries sum to w up to round-off."""
    row, col, scale = separable_factors(comp, geom)
    return scale * np.outer(col, row)


def separable_factors(comp: GaussianComponent, geom: KernelGeometry):
    """Exact rank-1 factorization of the materialized kernel.

    Returns (row kernel of length kw, column kernel of length kh, scale) with
    scale * outer(col, row) == materialize(comp, geom).
    """
    gx = _axis_values(np.arange(geom.kw, dtype=float), comp.mu[0], comp.sigma)
    gy = _axis_values(np.arange(geom.kh, dtype=float), comp.mu[1], comp.sigma)
    scale = comp.w / (gx.sum() * gy.sum())
    return gx, gy, scale


def dG_dmu(comp: GaussianComponent, geom: KernelGeometry):
    """Analytic kernels d/dux and d/duy of the materialized (weighted) kernel."""
    k = _component_kernel_grads(
        np.asarray(comp.w, dtype=float),
        np.asarray(comp.mu[0], dtype=float),
        np.asarray(comp.mu[1], dtype=float),
        np.asarray(comp.sigma, dtype=float),
        geom,
    )
    return k[0], k[1]


def dG_dsigma(comp: GaussianComponent, geom: KernelGeometry) -> np.ndarray:
    """Analytic kernel d/dsigma of the materialized (weighted) kernel."""
    k = _component_kernel_grads(
        np.asarray(comp.w, dtype=float),
        np.asarray(comp.mu[0], dtype=float),
        np.asarray(comp.mu[1], dtype=float),
        np.asarray(comp.sigma, dtype=float),
        geom,
    )
    return k[2]


def component_kernels(mux, muy, sigma, geom: KernelGeometry) -> np.ndarray:
    """Unit-weight normalized kernels for arrays of component parameters.

    mux, muy, sigma broadcast together with any leading shape (...,); the
    result has shape (..., kh, kw) and each kernel sums to 1.
    """
    mux, muy, sigma = np.broadcast_arrays(mux, muy, sigma)
    gx = _axis_values(np.arange(geom.kw, dtype=float), mux, sigma)  # (..., kw)
    gy = _axis_values(np.arange(geom.kh, dtype=float), muy, sigma)  # (..., kh)
    n = gx.sum(-1) * gy.sum(-1)
    return gy[..., :, None] * gx[..., None, :] / n[..., None, None]


def _component_kernel_grads(w, mux, muy, sigma, geom: KernelGeometry):
    """Stacked (3, ..., kh, kw) kernels: d/dux, d/duy, d/dsigma of w * G(theta).

    Quotient rule over the discrete normalizer N = Nx * Ny:
      d(g/N) = (N * dg - g * dN) / N^2
    evaluated per axis for the means and jointly for sigma.
    """
    w, mux, muy, sigma = np.broadcast_arrays(w, mux, muy, sigma)
    xs = np.arange(geom.kw, dtype=float)
    ys = np.arange(geom.kh, dtype=float)
    gx = _axis_values(xs, mux, sigma)  # (..., kw)
    gy = _axis_values(ys, muy, sigma)  # (..., kh)
    dxs = xs - np.asarray(mux)[..., None]  # (..., kw)
    dys = ys - np.asarray(muy)[..., None]
    sig = np.asarray(sigma)[..., None]
    nx = gx.sum(-1)
    ny = gy.sum(-1)

    # d/du of the normalized 1D kernel, per axis
    dgx_du = gx * dxs / sig**2
    dgy_du = gy * dys / sig**2
    gx_hat = gx / nx[..., None]
    gy_hat = gy / ny[..., None]
    dgx_hat = (dgx_du * nx[..., None] - gx * dgx_du.sum(-1)[..., None]) / nx[..., None] ** 2
    dgy_hat = (dgy_du * ny[..., None] - gy * dgy_du.sum(-1)[..., None]) / ny[..., None] ** 2

    wb = np.asarray(w)[..., None, None]
    d_mux = wb * gy_hat[..., :, None] * dgx_hat[..., None, :]
    d_muy = wb * dgy_hat[..., :, None] * gx_hat[..., None, :]

    # sigma touches both axes: dg/dsigma = g * r^2 / sigma^3 with
    # r^2 = (x-ux)^2 + (y-uy)^2, and dN/dsigma = (Ax*Ny + Ay*Nx) / sigma^3
    # where Ax = sum gx*(x-ux)^2, Ay likewise.
    ax = (gx * dxs**2).sum(-1)
    ay = (gy * dys**2).sum(-1)
    n = nx * ny
    g2d = gy[..., :, None] * gx[..., None, :]
    r2 = dys[..., :, None] ** 2 + dxs[..., None, :] ** 2
    sig3 = np.asarray(sigma)[..., None, None] ** 3
    dg_dsig = g2d * r2 / sig3
    dn_dsig = ((ax * ny + ay * nx) / sigma**3)[..., None, None]
    d_sigma = wb * (dg_dsig * n[..., None, None] - g2d * dn_dsig) / n[..., None, None] ** 2

    return np.stack([d_mux, d_muy, d_sigma])


def component_kernel_grads(w, mux, muy, sigma, geom: KernelGeometry):
    """(d/dux, d/duy, d/dsigma) kernels of w * G(theta) for parameter arrays."""
    k = _component_kernel_grads(
        np.asarray(w, dtype=float),
        np.asarray(mux, dtype=float),
        np.asarray(muy, dtype=float),
        np.asarray(sigma, dtype=float),
        geom,
    )
    return k[0], k[1], k[2]


def materialize_bank(w, mux, muy, sigma, bias, geom: KernelGeometry) -> DenseFilterBank:
    """Sum per-slice component kernels into a dense bank.

    w, mux, muy, sigma have shape (features, channels, G); bias (features,).
    Slice (i, s) of the result is sum_k w[i, s, k] * G(theta[i, s, k]).
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 3:
        raise ShapeError(f"component arrays must be (f, s, G), got shape {w.shape}")
    kernels = component_kernels(mux, muy, sigma, geom)  # (f, s, G, kh, kw)
    weights = (w[..., None, None] * kernels).sum(axis=2)
    return DenseFilterBank(weights, np.asarray(bias, dtype=float))


def rotate180(bank: DenseFilterBank) -> DenseFilterBank:
    """Reverse every kernel slice in both spatial axes."""
    return DenseFilterBank(
        np.ascontiguousarray(bank.weights[:, :, ::-1, ::-1]), bank.bias.copy()
    )
