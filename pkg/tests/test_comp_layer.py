import numpy as np
import numpy.testing as npt
import pytest

from compnet import layers, tensor
from compnet.gaussian import GaussianComponent, KernelGeometry, materialize
from compnet.layers import CompFilterBank
from compnet.tensor import DenseFilterBank, ShapeError

from oracles import conv2d_loops, finite_diff, gauss_kernel_loops, rel_err


def random_bank(rng, f, s, g, geom, sigma_hi=2.5):
    (xlo, xhi), (ylo, yhi) = geom.mu_box
    return CompFilterBank(
        geom=geom,
        w=rng.normal(size=(f, s, g)),
        mux=rng.uniform(xlo, xhi, size=(f, s, g)),
        muy=rng.uniform(ylo, yhi, size=(f, s, g)),
        sigma=rng.uniform(0.6, sigma_hi, size=(f, s, g)),
        bias=rng.normal(size=f),
    )


def bank_loss(x, bank, r):
    """Scalar probe sum(forward * r); used as the finite-difference target."""
    return np.vdot(layers.comp_forward(x, bank), r)


# -------------------------------------------------------------------- forward


def test_comp_forward_zero_weights_gives_bias():
    geom = KernelGeometry(5, 5)
    bank = CompFilterBank(
        geom=geom,
        w=np.zeros((2, 1, 1)),
        mux=np.full((2, 1, 1), 2.0),
        muy=np.full((2, 1, 1), 2.0),
        sigma=np.ones((2, 1, 1)),
        bias=np.array([0.25, -1.0]),
    )
    out = layers.comp_forward(np.random.default_rng(0).normal(size=(3, 1, 8, 8)), bank)
    npt.assert_allclose(out[:, 0], 0.25)
    npt.assert_allclose(out[:, 1], -1.0)


def test_comp_forward_matches_independent_materialize_and_loops():
    """Oracle path: double-loop Gaussian kernels summed per slice, then
    brute-force convolution. Shares nothing with the layer code."""
    rng = np.random.default_rng(3)
    geom = KernelGeometry(5, 4)
    bank = random_bank(rng, 2, 2, 3, geom)
    x = rng.normal(size=(2, 2, 7, 8))

    w_dense = np.zeros((2, 2, geom.kh, geom.kw))
    for fi in range(2):
        for si in range(2):
            for k in range(3):
                w_dense[fi, si] += gauss_kernel_loops(
                    bank.w[fi, si, k],
                    bank.mux[fi, si, k],
                    bank.muy[fi, si, k],
                    bank.sigma[fi, si, k],
                    geom.kw,
                    geom.kh,
                )
    want = conv2d_loops(x, w_dense, bank.bias)
    assert rel_err(layers.comp_forward(x, bank), want) < 1e-12


def test_comp_forward_linearity_in_weights():
    rng = np.random.default_rng(5)
    geom = KernelGeometry(6, 6)
    bank = random_bank(rng, 2, 1, 2, geom)
    x = rng.normal(size=(1, 1, 9, 9))
    base = layers.comp_forward(x, bank) - bank.bias[None, :, None, None]
    bank.w *= 3.0
    scaled = layers.comp_forward(x, bank) - bank.bias[None, :, None, None]
    npt.assert_allclose(scaled, 3.0 * base, rtol=1e-12)


def test_comp_forward_rejects_channel_mismatch():
    rng = np.random.default_rng(0)
    bank = random_bank(rng, 2, 3, 2, KernelGeometry(5, 5))
    with pytest.raises(ShapeError):
        layers.comp_forward(rng.normal(size=(1, 2, 9, 9)), bank)


# ---------------------------------------------------------- parameter grads


def test_comp_backward_zero_grad_gives_zero():
    rng = np.random.default_rng(1)
    geom = KernelGeometry(5, 5)
    bank = random_bank(rng, 2, 2, 2, geom)
    x = rng.normal(size=(1, 2, 8, 8))
    g = layers.comp_backward_params(x, np.zeros((1, 2, 4, 4)), bank)
    for arr in (g.d_w, g.d_mux, g.d_muy, g.d_sigma, g.d_bias):
        npt.assert_array_equal(arr, np.zeros_like(arr))


def test_comp_backward_bias_is_grad_sum():
    rng = np.random.default_rng(2)
    geom = KernelGeometry(5, 5)
    bank = random_bank(rng, 3, 1, 2, geom)
    x = rng.normal(size=(2, 1, 9, 9))
    gz = rng.normal(size=(2, 3, 5, 5))
    g = layers.comp_backward_params(x, gz, bank)
    npt.assert_allclose(g.d_bias, gz.sum(axis=(0, 2, 3)), rtol=1e-12)


def test_comp_backward_delta_component_matches_dense_tap_grad():
    """A near-point component turns d_w into the dense per-tap weight
    gradient at its tap. Sigma sits far below the training floor on
    purpose -- the math is total for sigma > 0."""
    rng = np.random.default_rng(4)
    geom = KernelGeometry(7, 7)
    bank = CompFilterBank(
        geom=geom,
        w=rng.normal(size=(1, 1, 1)),
        mux=np.full((1, 1, 1), 3.0),
        muy=np.full((1, 1, 1), 2.0),
        sigma=np.full((1, 1, 1), 0.15),
        bias=np.zeros(1),
    )
    x = rng.normal(size=(2, 1, 10, 10))
    gz = rng.normal(size=(2, 1, 4, 4))
    g = layers.comp_backward_params(x, gz, bank)
    d_dense, _ = tensor.conv2d_weight_grads(x, gz, 7, 7)
    assert rel_err(g.d_w[0, 0, 0], d_dense[0, 0, 2, 3]) < 1e-8


def test_comp_backward_params_match_finite_differences():
    """Every analytic parameter gradient vs central differences of the probe
    loss, on the instance sizes the contract names, across many seeds."""
    h = 1e-4
    for seed in range(50):
        rng = np.random.default_rng(seed)
        geom = KernelGeometry(7, 7)
        bank = random_bank(rng, 2, 2, 4, geom)
        x = rng.normal(size=(2, 2, 10, 10))
        r = rng.normal(size=(2, 2, 4, 4))

        g = layers.comp_backward_params(x, r, bank)

        def probe(name, values):
            saved = getattr(bank, name)
            setattr(bank, name, values)
            out = bank_loss(x, bank, r)
            setattr(bank, name, saved)
            return out

        for name, analytic in (
            ("w", g.d_w),
            ("mux", g.d_mux),
            ("muy", g.d_muy),
            ("sigma", g.d_sigma),
        ):
            fd = finite_diff(lambda v, n=name: probe(n, v), getattr(bank, name), h=h)
            assert rel_err(analytic, fd) < 1e-4, (seed, name)
        fd_b = finite_diff(
            lambda v: np.vdot(
                layers.comp_forward(x, CompFilterBank(
                    geom, bank.w, bank.mux, bank.muy, bank.sigma, v)), r),
            bank.bias, h=h,
        )
        assert rel_err(g.d_bias, fd_b) < 1e-6


# ---------------------------------------------------------------- input grads


def test_comp_backward_input_zero_grad():
    rng = np.random.default_rng(6)
    bank = random_bank(rng, 2, 2, 2, KernelGeometry(5, 5))
    d_x = layers.comp_backward_input(np.zeros((1, 2, 4, 4)), bank)
    npt.assert_array_equal(d_x, np.zeros((1, 2, 8, 8)))


def test_comp_backward_input_impulse_stamps_kernel():
    rng = np.random.default_rng(7)
    geom = KernelGeometry(5, 5)
    bank = random_bank(rng, 1, 1, 2, geom)
    gz = np.zeros((1, 1, 3, 3))
    gz[0, 0, 1, 1] = 1.0
    d_x = layers.comp_backward_input(gz, bank)
    want = np.zeros((1, 1, 7, 7))
    want[0, 0, 1:6, 1:6] = bank.materialize().weights[0, 0]
    npt.assert_allclose(d_x, want, atol=1e-13)


def test_comp_backward_input_matches_finite_differences():
    rng = np.random.default_rng(8)
    geom = KernelGeometry(5, 4)
    bank = random_bank(rng, 2, 2, 3, geom)
    x = rng.normal(size=(1, 2, 7, 7))
    r = rng.normal(size=(1, 2, 4, 3))
    d_x = layers.comp_backward_input(r, bank)
    fd = finite_diff(lambda v: bank_loss(v, bank, r), x)
    assert rel_err(d_x, fd) < 1e-5


# ------------------------------------------------------------------ projection


def test_project_constraints_clamps():
    geom = KernelGeometry(9, 9)
    bank = CompFilterBank(
        geom=geom,
        w=np.ones((1, 1, 3)),
        mux=np.array([[[-3.0, 4.0, 99.0]]]),
        muy=np.array([[[99.0, 4.0, -3.0]]]),
        sigma=np.array([[[0.2, 1.0, 0.501]]]),
        bias=np.zeros(1),
    )
    layers.project_constraints(bank)
    npt.assert_allclose(bank.mux[0, 0], [1.5, 4.0, 6.5])
    npt.assert_allclose(bank.muy[0, 0], [6.5, 4.0, 1.5])
    npt.assert_allclose(bank.sigma[0, 0], [0.501, 1.0, 0.501])
    bank.validate()


def test_project_constraints_idempotent_and_preserves_weights():
    rng = np.random.default_rng(9)
    geom = KernelGeometry(7, 5)
    bank = random_bank(rng, 2, 2, 3, geom)
    bank.mux += rng.normal(scale=5.0, size=bank.mux.shape)
    bank.sigma -= 1.0
    w0, b0 = bank.w.copy(), bank.bias.copy()
    layers.project_constraints(bank)
    once = (bank.mux.copy(), bank.muy.copy(), bank.sigma.copy())
    layers.project_constraints(bank)
    npt.assert_array_equal(bank.mux, once[0])
    npt.assert_array_equal(bank.muy, once[1])
    npt.assert_array_equal(bank.sigma, once[2])
    npt.assert_array_equal(bank.w, w0)
    npt.assert_array_equal(bank.bias, b0)


# ------------------------------------------------------------------- the bank


def test_init_grid_means_and_sigma():
    rng = np.random.default_rng(10)
    geom = KernelGeometry(7, 7)
    bank = CompFilterBank.init_grid(4, 3, (2, 2), geom, rng)
    assert (bank.f, bank.s, bank.G) == (4, 3, 4)
    bank.validate()
    # 2x2 grid in [1.5, 4.5]: cell centers at 2.25 and 3.75
    npt.assert_allclose(sorted(set(bank.mux[0, 0])), [2.25, 3.75])
    npt.assert_allclose(sorted(set(bank.muy[0, 0])), [2.25, 3.75])
    # half the 1.5-tap spacing would sit below the sigma floor; init keeps clear
    assert np.all(bank.sigma > 0.5)
    assert np.all(bank.bias == 0)


def test_from_components_pads_ragged_groups():
    geom = KernelGeometry(5, 5)
    c = lambda w: GaussianComponent(w, (2.0, 2.0), 1.0)
    bank = CompFilterBank.from_components(
        [[[c(1.0), c(2.0)], [c(3.0)]]], geom, bias=[0.5]
    )
    assert (bank.f, bank.s, bank.G) == (1, 2, 2)
    npt.assert_array_equal(bank.counts, [[2, 1]])
    assert bank.live_component_count() == 3
    assert bank.w[0, 1, 1] == 0.0  # inert padding
    back = bank.to_components()
    assert [len(g) for g in back[0]] == [2, 1]
    assert back[0][0][1].w == 2.0


def test_padded_bank_materializes_like_ragged_sum():
    geom = KernelGeometry(5, 5)
    comps = [[[GaussianComponent(0.7, (2.5, 1.5), 0.9)],
              [GaussianComponent(-0.4, (2.0, 2.0), 1.3),
               GaussianComponent(0.2, (1.5, 2.5), 0.8)]]]
    bank = CompFilterBank.from_components(comps, geom, bias=[0.0])
    dense = bank.materialize()
    for si, group in enumerate(comps[0]):
        want = sum(materialize(c, geom) for c in group)
        npt.assert_allclose(dense.weights[0, si], want, atol=1e-14)


def test_validate_ignores_inert_padding_but_checks_live():
    geom = KernelGeometry(5, 5)
    bank = CompFilterBank.from_components(
        [[[GaussianComponent(1.0, (2.0, 2.0), 1.0)]]], geom, bias=[0.0]
    )
    bank.validate()
    bank.sigma[0, 0, 0] = 0.3  # live -> must trip
    with pytest.raises(ShapeError):
        bank.validate()


# ------------------------------------------------------------ dense baseline


def test_dense_layer_finite_differences():
    rng = np.random.default_rng(11)
    bank = DenseFilterBank(rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2))
    x = rng.normal(size=(2, 2, 6, 6))
    r = rng.normal(size=(2, 2, 4, 4))

    d_w, d_b = layers.dense_backward_params(x, r, bank)
    d_x = layers.dense_backward_input(r, bank)

    fd_w = finite_diff(lambda v: np.vdot(conv2d_loops(x, v, bank.bias), r), bank.weights)
    fd_b = finite_diff(lambda v: np.vdot(conv2d_loops(x, bank.weights, v), r), bank.bias)
    fd_x = finite_diff(lambda v: np.vdot(conv2d_loops(v, bank.weights, bank.bias), r), x)
    assert rel_err(d_w, fd_w) < 1e-8
    assert rel_err(d_b, fd_b) < 1e-8
    assert rel_err(d_x, fd_x) < 1e-8


def test_dense_one_by_one_kernel_is_pixel_linear_map():
    rng = np.random.default_rng(12)
    w = rng.normal(size=(3, 2, 1, 1))
    b = rng.normal(size=3)
    x = rng.normal(size=(2, 2, 5, 5))
    out = layers.dense_forward(x, DenseFilterBank(w, b))
    want = np.einsum("fs,nshw->nfhw", w[:, :, 0, 0], x) + b[None, :, None, None]
    npt.assert_allclose(out, want, rtol=1e-12)
