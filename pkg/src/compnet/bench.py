"""Timing harness: direct dense convolution against the separable path.

Every learned filter slice is a weighted sum of G rank-1 kernels, so the
convolution factorizes exactly into a horizontal pass (one batched GEMM over
all features' row factors) and a vertical shift-accumulate pass. Work per
output pixel scales with G*(kw+kh) instead of kw*kh, so the separable path
pulls ahead once kernels are large relative to the component count.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from threadpoolctl import threadpool_limits

from . import tensor
from .gaussian import KernelGeometry
from .layers import CompFilterBank
from .tensor import ShapeError


def _axis_factors(bank: CompFilterBank):
    """Per-component row/column factors of the bank's kernels.

    Returns (gx, gy): gx has shape (f, s, G, kw) with the component weight and
    normalizer folded in, gy has shape (f, s, G, kh) holding the raw vertical
    factor, so that outer(gy, gx) summed over G reproduces the dense kernels.
    """
    geom = bank.geom
    xs = np.arange(geom.kw, dtype=float)
    ys = np.arange(geom.kh, dtype=float)
    gx = np.exp(-((xs - bank.mux[..., None]) ** 2) / (2 * bank.sigma[..., None] ** 2))
    gy = np.exp(-((ys - bank.muy[..., None]) ** 2) / (2 * bank.sigma[..., None] ** 2))
    scale = bank.w / (gx.sum(-1) * gy.sum(-1))
    return gx * scale[..., None], gy


def separable_forward(x, bank: CompFilterBank):
    """Forward convolution evaluated as two rank-1 passes; exact up to
    round-off against materializing the bank and convolving directly."""
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(float)
    n, s, h, w = x.shape
    if s != bank.s:
        raise ShapeError(f"bank expects {bank.s} channels, got {s}")
    kw, kh = bank.geom.kw, bank.geom.kh
    if h < kh or w < kw:
        raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    f, g = bank.f, bank.G
    ow, oh = w - kw + 1, h - kh + 1
    m = n * h * ow
    gx, gy = _axis_factors(bank)
    gx = gx.astype(x.dtype, copy=False)
    gy = gy.astype(x.dtype, copy=False)

    # pass 1: rows. (s, f*g, kw) @ (s, kw, m) -> (s, f*g, m), m contiguous
    win = sliding_window_view(x, kw, axis=3)  # (n, s, h, ow, kw)
    lhs = np.ascontiguousarray(win.transpose(1, 4, 0, 2, 3).reshape(s, kw, m))
    wmat = np.ascontiguousarray(gx.transpose(1, 0, 2, 3).reshape(s, f * g, kw))
    tmp = np.matmul(wmat, lhs)

    # pass 2: columns, one feature at a time so each GEMM reads a
    # contiguous slab. (kh, s*g) @ (s*g, m), then shift-accumulate over kh.
    out = np.empty((n, f, oh, ow), dtype=x.dtype)
    acc = np.empty((n, oh, ow), dtype=x.dtype)
    for fi in range(f):
        t2 = np.ascontiguousarray(tmp[:, fi * g : (fi + 1) * g, :]).reshape(s * g, m)
        kmat = np.ascontiguousarray(gy[fi].transpose(2, 0, 1).reshape(kh, s * g))
        slab = (kmat @ t2).reshape(kh, n, h, ow)
        acc[:] = slab[0, :, 0:oh, :]
        for v in range(1, kh):
            acc += slab[v, :, v : v + oh, :]
        out[:, fi] = acc
    return out + bank.bias.astype(x.dtype, copy=False)[None, :, None, None]


@dataclass
class BenchRow:
    kernel: int
    components: int
    t_direct_ms: float
    t_separable_ms: float

    @property
    def speedup(self):
        return self.t_direct_ms / self.t_separable_ms


def _random_bank(f, s, g, k, rng):
    geom = KernelGeometry(k, k)
    (xlo, xhi), (ylo, yhi) = geom.mu_box
    return CompFilterBank(
        geom=geom,
        w=rng.normal(size=(f, s, g)),
        mux=rng.uniform(xlo, xhi, size=(f, s, g)),
        muy=rng.uniform(ylo, yhi, size=(f, s, g)),
        sigma=rng.uniform(0.6, max(0.7, k / 4.0), size=(f, s, g)),
        bias=rng.normal(size=f),
    )


def _median_time(fn, repeats):
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts)) * 1e3


def run_benchmark(
    kernels=(5, 9, 11, 15),
    components=(2, 3, 4, 5),
    repeats=7,
    map_size=64,
    batch=4,
    channels=8,
    features=8,
    seed=0,
):
    """Time both paths on matching inputs; results are only reported after the
    two implementations agree to 1e-10 relative, so a timing row can never
    describe a wrong convolution. Runs single-threaded for stable numbers."""
    rows = []
    rng = np.random.default_rng(seed)
    with threadpool_limits(limits=1):
        for k in kernels:
            for g in components:
                bank = _random_bank(features, channels, g, k, rng)
                x = rng.normal(size=(batch, channels, map_size, map_size))
                dense = bank.materialize()
                want = tensor.conv2d_valid(x, dense)
                got = separable_forward(x, bank)
                err = np.abs(got - want).max() / max(np.abs(want).max(), 1e-30)
                if err > 1e-10:
                    raise RuntimeError(
                        f"separable path disagrees with direct at k={k} G={g}: "
                        f"rel err {err:.3e}"
                    )
                rows.append(
                    BenchRow(
                        kernel=k,
                        components=g,
                        t_direct_ms=_median_time(
                            lambda: tensor.conv2d_valid(x, dense), repeats
                        ),
                        t_separable_ms=_median_time(
                            lambda: separable_forward(x, bank), repeats
                        ),
                    )
                )
    return rows


def write_bench_csv(rows, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["kernel", "components", "t_direct_ms", "t_separable_ms", "speedup"])
        for r in rows:
            out.writerow(
                [r.kernel, r.components, f"{r.t_direct_ms:.6f}",
                 f"{r.t_separable_ms:.6f}", f"{r.speedup:.4f}"]
            )


def format_rows(rows):
    lines = ["kernel  G  direct(ms)  separable(ms)  speedup"]
    for r in rows:
        lines.append(
            f"{r.kernel:3d}x{r.kernel:<2d} {r.components}  {r.t_direct_ms:10.2f}  "
            f"{r.t_separable_ms:13.2f}  {r.speedup:6.2f}x"
        )
    return "\n".join(lines)
