"""Finite-difference verification of the analytic layer gradients.

Each case builds a random compositional layer, pushes a fixed random
cotangent through backward(), and compares every gradient class (component
weights, means, widths, bias, input) against central differences of the
scalar sum(cotangent * forward(x)). The checker reports the worst relative
error per class across all cases.
"""

from dataclasses import dataclass, field

import numpy as np

from .gaussian import KernelGeometry
from .layers import CompFilterBank
from .network import CompConvLayer

PARAM_CLASSES = ("w", "mux", "muy", "sigma", "bias", "input")


def _rel(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def _fd_inplace(arr, loss, h):
    """Central differences of loss() w.r.t. every entry of arr, mutating and
    restoring entries in place so live views stay live."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        lp = loss()
        arr[idx] = orig - h
        lm = loss()
        arr[idx] = orig
        g[idx] = (lp - lm) / (2 * h)
    return g


def check_case(seed, n=2, s=2, hw=10, h=1e-4, perturb_scale=0.0):
    """One random layer configuration; returns {class: rel err}.

    perturb_scale is a negative-control hook: it corrupts the analytic
    gradients by the given relative amount, so any nonzero value must make
    the check fail if the checker is doing its job.
    """
    rng = np.random.default_rng(seed)
    k = int(rng.integers(5, 10))
    g = int(rng.choice([1, 4, 9]))
    f = int(rng.integers(2, 4))
    geom = KernelGeometry(k, k)
    (xlo, xhi), (ylo, yhi) = geom.mu_box
    bank = CompFilterBank(
        geom=geom,
        w=rng.normal(size=(f, s, g)),
        mux=rng.uniform(xlo, xhi, size=(f, s, g)),
        muy=rng.uniform(ylo, yhi, size=(f, s, g)),
        sigma=rng.uniform(0.6, 2.5, size=(f, s, g)),
        bias=rng.normal(size=f),
    )
    x = rng.normal(size=(n, s, hw, hw))
    layer = CompConvLayer(bank)
    cot = rng.normal(size=(n, f, hw - k + 1, hw - k + 1))

    layer.forward(x)
    d_input = layer.backward(cot)
    analytic = dict(layer.grads())
    analytic["input"] = d_input
    if perturb_scale:
        analytic = {k_: v * (1.0 + perturb_scale) for k_, v in analytic.items()}

    def loss():
        return float(np.sum(cot * layer.forward(x)))

    errs = {}
    for name in ("w", "mux", "muy", "sigma", "bias"):
        arr = layer.params()[name]
        errs[name] = _rel(analytic[name], _fd_inplace(arr, loss, h))
    errs["input"] = _rel(analytic["input"], _fd_inplace(x, loss, h))
    return errs


@dataclass
class GradCheckReport:
    cases: int
    tolerance: float
    h: float
    worst: dict = field(default_factory=dict)  # class -> max rel err

    @property
    def ok(self):
        return all(v <= self.tolerance for v in self.worst.values())

    def text(self):
        lines = [
            f"gradient check: {self.cases} configurations, "
            f"h={self.h:g}, tolerance={self.tolerance:g}"
        ]
        for name in PARAM_CLASSES:
            v = self.worst[name]
            mark = "ok" if v <= self.tolerance else "FAIL"
            lines.append(f"  {name:6s} max rel err {v:9.3e}   {mark}")
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def run_suite(cases=50, seed=0, h=1e-4, tolerance=1e-4, perturb_scale=0.0):
    worst = {name: 0.0 for name in PARAM_CLASSES}
    for i in range(cases):
        errs = check_case(seed + i, h=h, perturb_scale=perturb_scale)
        for name, v in errs.items():
            worst[name] = max(worst[name], v)
    return GradCheckReport(cases=cases, tolerance=tolerance, h=h, worst=worst)
