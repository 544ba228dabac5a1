import numpy as np
import pytest
from scipy.integrate import simpson

from simba import tensor as T
from simba.errors import DomainError, ShapeError
from simba.ssm import (
    IMambaBlock,
    ScanInputs,
    SsmParams,
    lti_conv,
    lti_kernel,
    selective_scan_parallel,
    selective_scan_sequential,
    zoh_discretize,
)
from simba.tensor import Tensor


def _random_scan_inputs(rng, n, t, dp, w):
    a = Tensor(0.05 + 0.9 * rng.random((n, t, dp, w)))
    b = Tensor(rng.normal(size=(n, t, dp, w)))
    c = Tensor(rng.normal(size=(n, t, w)))
    y = Tensor(rng.normal(size=(n, t, dp)))
    return ScanInputs(a, b, c), y


# ---------------------------------------------------------------------------
# zero-order hold
# ---------------------------------------------------------------------------

def test_zoh_scalar_closed_form():
    a = Tensor(np.full((1, 1), -1.0))
    b = Tensor(np.ones((1, 1, 1)))
    delta = Tensor(np.full((1, 1, 1), np.log(2.0)))
    a_bar, b_bar = zoh_discretize(a, b, delta)
    assert abs(a_bar.data.ravel()[0] - 0.5) <= 1e-12
    assert abs(b_bar.data.ravel()[0] - 0.5) <= 1e-12


def test_zoh_small_step_limit():
    a = Tensor(np.full((1, 1), -0.7))
    b = Tensor(np.full((1, 1, 1), 1.3))
    delta = Tensor(np.full((1, 1, 1), 1e-8))
    a_bar, b_bar = zoh_discretize(a, b, delta)
    assert abs(a_bar.data.ravel()[0] - 1.0) < 1e-7
    # first-order: b_bar/delta -> B
    assert abs(b_bar.data.ravel()[0] / 1e-8 - 1.3) / 1.3 < 1e-6


def test_zoh_matches_quadrature_oracle():
    # b_bar is the integral of exp(s*A)*B over one step
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        a_val = -np.exp(rng.uniform(-2.0, 1.0))
        d_val = np.exp(rng.uniform(-4.0, 0.0))
        b_val = rng.normal()
        s = np.linspace(0.0, d_val, 10_001)
        ref = simpson(np.exp(s * a_val) * b_val, x=s)
        a_bar, b_bar = zoh_discretize(
            Tensor(np.full((1, 1), a_val)),
            Tensor(np.full((1, 1, 1), b_val)),
            Tensor(np.full((1, 1, 1), d_val)))
        worst = max(worst, abs(b_bar.data.ravel()[0] - ref))
        assert abs(a_bar.data.ravel()[0] - np.exp(d_val * a_val)) <= 1e-12
    assert worst <= 1e-8


def test_zoh_rejects_invalid_domain():
    good_a = Tensor(np.full((1, 1), -1.0))
    good_b = Tensor(np.ones((1, 1, 1)))
    with pytest.raises(DomainError):
        zoh_discretize(good_a, good_b, Tensor(np.zeros((1, 1, 1))))
    with pytest.raises(DomainError):
        zoh_discretize(Tensor(np.full((1, 1), 0.5)), good_b, Tensor(np.ones((1, 1, 1))))


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------

def test_scan_hand_unroll():
    inputs = ScanInputs(Tensor(np.full((1, 3, 1, 1), 0.5)),
                        Tensor(np.full((1, 3, 1, 1), 0.5)),
                        Tensor(np.ones((1, 3, 1))))
    y = Tensor(np.ones((1, 3, 1)))
    out = selective_scan_sequential(inputs, y)
    np.testing.assert_allclose(out.data.ravel(), [0.5, 0.75, 0.875], atol=1e-15)


def test_scan_zero_readout_gives_zero():
    rng = np.random.default_rng(1)
    inputs, y = _random_scan_inputs(rng, 2, 6, 3, 4)
    inputs = ScanInputs(inputs.a_bar, inputs.b_bar, Tensor(np.zeros((2, 6, 4))))
    out = selective_scan_sequential(inputs, y)
    np.testing.assert_array_equal(out.data, 0.0)


def test_scan_single_step():
    rng = np.random.default_rng(2)
    inputs, y = _random_scan_inputs(rng, 1, 1, 2, 3)
    out = selective_scan_sequential(inputs, y)
    expected = np.einsum("w,dw->d", inputs.c.data[0, 0],
                         inputs.b_bar.data[0, 0] * y.data[0, 0][:, None])
    np.testing.assert_allclose(out.data[0, 0], expected, atol=1e-15)


@pytest.mark.parametrize("chunk", [1, 3, 16, 64])
def test_parallel_matches_sequential(chunk):
    rng = np.random.default_rng(chunk)
    inputs, y = _random_scan_inputs(rng, 2, 64, 3, 4)
    ref = selective_scan_sequential(inputs, y).data
    par = selective_scan_parallel(inputs, y, chunk).data
    assert np.max(np.abs(par - ref)) <= 1e-12


def test_parallel_chunk_covering_t_is_bit_identical():
    rng = np.random.default_rng(3)
    inputs, y = _random_scan_inputs(rng, 1, 17, 2, 3)
    ref = selective_scan_sequential(inputs, y).data
    for chunk in (17, 40):
        assert np.array_equal(selective_scan_parallel(inputs, y, chunk).data, ref)


def test_parallel_rejects_bad_chunk():
    rng = np.random.default_rng(4)
    inputs, y = _random_scan_inputs(rng, 1, 4, 1, 1)
    with pytest.raises(DomainError):
        selective_scan_parallel(inputs, y, 0)


def test_scan_shape_mismatch_rejected():
    rng = np.random.default_rng(5)
    inputs, _ = _random_scan_inputs(rng, 1, 4, 2, 3)
    with pytest.raises(ShapeError):
        selective_scan_sequential(inputs, Tensor(np.zeros((1, 4, 5))))
    with pytest.raises(ShapeError):
        ScanInputs(inputs.a_bar, inputs.b_bar, Tensor(np.zeros((1, 5, 3))))


def test_scan_stability_long_rollout():
    # 0 < a <= 1 keeps states bounded over a million steps
    rng = np.random.default_rng(6)
    n, t, dp, w = 1, 1_000_000, 1, 4
    inputs = ScanInputs(Tensor(rng.random((n, t, dp, w))),
                        Tensor(rng.normal(size=(n, t, dp, w))),
                        Tensor(rng.normal(size=(n, t, w))))
    y = Tensor(rng.normal(size=(n, t, dp)))
    with T.no_grad():
        out = selective_scan_parallel(inputs, y, 1024)
    assert np.all(np.isfinite(out.data))


# ---------------------------------------------------------------------------
# LTI kernel oracle
# ---------------------------------------------------------------------------

def test_lti_kernel_hand_case():
    # a_bar = 0.5, b_bar = 0.5, c = 1 -> kernel (0.5, 0.25)
    kernel = lti_kernel(np.array([-1.0]), np.array([1.0]), np.array([1.0]),
                        np.log(2.0), 2)
    np.testing.assert_allclose(kernel, [0.5, 0.25], atol=1e-12)
    np.testing.assert_allclose(lti_conv(np.array([1.0, 1.0]), kernel), [0.5, 0.75], atol=1e-12)


def test_lti_kernel_length_one():
    k = lti_kernel(np.array([-1.0]), np.array([1.0]), np.array([2.0]), np.log(2.0), 1)
    np.testing.assert_allclose(k, [1.0], atol=1e-12)  # c * b_bar


def test_lti_kernel_rejects_bad_length():
    with pytest.raises(DomainError):
        lti_kernel(np.array([-1.0]), np.array([1.0]), np.array([1.0]), 0.5, 0)


@pytest.mark.parametrize("seed", range(50))
def test_lti_conv_matches_recurrence(seed):
    rng = np.random.default_rng(100 + seed)
    w, m = 3, 32
    a = -np.exp(rng.uniform(-1.0, 1.0, size=w))
    b = rng.normal(size=w)
    c = rng.normal(size=w)
    delta = float(np.exp(rng.uniform(-3.0, 0.0)))
    y = rng.normal(size=m)

    kernel = lti_kernel(a, b, c, delta, m)
    conv_out = lti_conv(y, kernel)

    a_bar = np.exp(delta * a)
    b_bar = (a_bar - 1.0) / a * b
    inputs = ScanInputs(
        Tensor(np.broadcast_to(a_bar, (1, m, 1, w)).copy()),
        Tensor(np.broadcast_to(b_bar, (1, m, 1, w)).copy()),
        Tensor(np.broadcast_to(c, (1, m, w)).copy()))
    scan_out = selective_scan_sequential(inputs, Tensor(y.reshape(1, m, 1))).data.ravel()
    assert np.max(np.abs(conv_out - scan_out)) <= 1e-10


# ---------------------------------------------------------------------------
# the gated block
# ---------------------------------------------------------------------------

def test_imamba_zero_input_zero_biases_gives_zero():
    rng = np.random.default_rng(7)
    block = IMambaBlock(6, 3, rng)  # biases start at zero
    out = block(Tensor(np.zeros((2, 5, 6))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_imamba_shape_contract_full_width():
    rng = np.random.default_rng(8)
    block = IMambaBlock(500, 4, rng, scan_chunk=16)
    x = Tensor(rng.normal(size=(2, 64, 500)).astype(np.float64))
    assert block(x).shape == (2, 64, 500)


def test_imamba_dp_mismatch_rejected():
    rng = np.random.default_rng(9)
    block = IMambaBlock(6, 3, rng)
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((1, 4, 7))))


def test_imamba_residual_identity_when_projection_zeroed():
    rng = np.random.default_rng(10)
    block = IMambaBlock(6, 3, rng)
    block.out_proj.w.data[:] = 0.0
    x = Tensor(rng.normal(size=(2, 5, 6)))
    np.testing.assert_array_equal(block(x).data, x.data)


def test_imamba_causality():
    # outputs before t0 cannot see a perturbation at t0
    rng = np.random.default_rng(11)
    block = IMambaBlock(6, 3, rng)
    x = rng.normal(size=(1, 8, 6))
    t0 = 5
    x2 = x.copy()
    x2[0, t0] += rng.normal(size=6)
    out1 = block(Tensor(x)).data
    out2 = block(Tensor(x2)).data
    np.testing.assert_array_equal(out1[:, :t0], out2[:, :t0])
    assert np.max(np.abs(out1[:, t0:] - out2[:, t0:])) > 1e-8


def test_imamba_lti_mode_matches_kernel_convolution():
    # zero selection weights + fixed biases make every channel an LTI system
    rng = np.random.default_rng(12)
    dp, w, t = 4, 3, 24
    block = IMambaBlock(dp, w, rng)
    block.ssm.w_b.w.data[:] = 0.0
    block.ssm.w_c.w.data[:] = 0.0
    block.ssm.w_dt.w.data[:] = 0.0
    block.ssm.w_b.b.data[:] = rng.normal(size=w)
    block.ssm.w_c.b.data[:] = rng.normal(size=w)

    y = Tensor(rng.normal(size=(1, t, dp)))
    scan_out = block._scan(block.ssm.scan_inputs(y), y).data[0]

    a = -np.exp(block.ssm.a_log.data)
    deltas = np.log1p(np.exp(block.ssm.p.data))
    for d in range(dp):
        kernel = lti_kernel(a[d], block.ssm.w_b.b.data, block.ssm.w_c.b.data,
                            float(deltas[d]), t)
        ref = lti_conv(y.data[0, :, d], kernel)
        assert np.max(np.abs(scan_out[:, d] - ref)) <= 1e-10


def test_imamba_prenorm_variant_runs():
    rng = np.random.default_rng(13)
    block = IMambaBlock(6, 3, rng, norm_placement="pre")
    out = block(Tensor(rng.normal(size=(1, 4, 6))))
    assert out.shape == (1, 4, 6)
    with pytest.raises(DomainError):
        IMambaBlock(6, 3, rng, norm_placement="middle")


def test_ssm_params_invariants():
    rng = np.random.default_rng(14)
    params = SsmParams(5, 4, rng)
    assert np.all(params.a_cont().data < 0.0)
    x = Tensor(rng.normal(size=(2, 6, 5)) * 10)
    assert np.all(params.delta(x).data > 0.0)
    # delta bias init: softplus(p) log-uniform within [1e-3, 1e-1]
    sp = np.log1p(np.exp(params.p.data))
    assert np.all(sp >= 1e-3 - 1e-9) and np.all(sp <= 1e-1 + 1e-9)
