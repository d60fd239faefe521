import pytest
import torch

from recursive_lle import actnet
from recursive_lle.actnet import ACTNet, AAM, BrightnessBranch, GradientBranch, aam_forward, cdc_conv

from .conftest import autograd_grad, central_difference_grad, rel_error


def cdc_reference(f, w):
    """Loop form of the neighbour-minus-centre sum with replicated borders."""
    b, c, h, wd = f.shape
    out = torch.zeros(b, w.shape[0], h, wd, dtype=f.dtype)
    for i in range(h):
        for j in range(wd):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ii = min(max(i + di, 0), h - 1)
                    jj = min(max(j + dj, 0), wd - 1)
                    diff = f[:, :, ii, jj] - f[:, :, i, j]
                    out[:, :, i, j] += diff @ w[:, :, di + 1, dj + 1].T
    return out


def test_cdc_matches_loop_reference():
    f = torch.rand(2, 3, 6, 5, dtype=torch.float64)
    w = torch.randn(4, 3, 3, 3, dtype=torch.float64)
    torch.testing.assert_close(cdc_conv(f, w), cdc_reference(f, w), atol=1e-12, rtol=0)


def test_cdc_constant_input_is_zero():
    f = torch.full((1, 4, 8, 8), 0.7, dtype=torch.float64)
    w = torch.randn(5, 4, 3, 3, dtype=torch.float64)
    assert cdc_conv(f, w).abs().max() < 1e-6


def test_cdc_single_east_weight():
    f = torch.rand(1, 1, 5, 5, dtype=torch.float64)
    w = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    w[0, 0, 1, 2] = 2.5
    out = cdc_conv(f, w)
    expect = 2.5 * (f[..., :, 1:] - f[..., :, :-1])
    torch.testing.assert_close(out[..., :, :-1], expect)


def test_cdc_ones_kernel_on_ramp_interior_is_zero():
    ramp = torch.arange(6, dtype=torch.float64).expand(6, 6)[None, None]
    out = cdc_conv(ramp, torch.ones(1, 1, 3, 3, dtype=torch.float64))
    assert out[..., 1:-1, 1:-1].abs().max() < 1e-12


def test_cdc_offset_invariance():
    f = torch.rand(2, 4, 8, 8, dtype=torch.float64)
    w = torch.randn(4, 4, 3, 3, dtype=torch.float64)
    torch.testing.assert_close(cdc_conv(f + 3.3, w), cdc_conv(f, w), atol=1e-6, rtol=0)


def _aam_inputs(c=4, h=8, w=8):
    f = torch.rand(1, c, h, w, dtype=torch.float64)
    kc = torch.randn(c, c, 3, 3, dtype=torch.float64)
    kv = torch.randn(c, c, 3, 3, dtype=torch.float64)
    bias = torch.randn(c, dtype=torch.float64)
    alpha = torch.rand(1, c, dtype=torch.float64) + 0.5
    beta = torch.randn(1, c, dtype=torch.float64)
    return f, kc, kv, bias, alpha, beta


def test_aam_theta_limits_bitwise():
    f, kc, kv, bias, _, _ = _aam_inputs()
    ones = torch.ones(1, 4, dtype=torch.float64)
    zeros = torch.zeros(1, 4, dtype=torch.float64)
    theta0 = torch.zeros(1, 1, 8, 8, dtype=torch.float64)
    theta1 = torch.ones(1, 1, 8, 8, dtype=torch.float64)
    vanilla = torch.relu(torch.nn.functional.conv2d(f, kv, bias, padding=1))
    assert torch.equal(aam_forward(f, theta0, ones, zeros, kc, kv, bias), vanilla)
    cdc = torch.relu(cdc_conv(f, kc))
    assert torch.equal(aam_forward(f, theta1, ones, zeros, kc, kv, bias), cdc)


def test_aam_theta_one_constant_input_gives_beta():
    _, kc, kv, _, alpha, beta = _aam_inputs()
    f = torch.full((1, 4, 8, 8), 0.4, dtype=torch.float64)
    out = aam_forward(f, torch.ones(1, 1, 8, 8, dtype=torch.float64), alpha, beta, kc, kv, None)
    torch.testing.assert_close(out, beta[:, :, None, None].expand_as(out), atol=1e-6, rtol=0)


def test_aam_alpha_zero_gives_beta():
    f, kc, kv, bias, _, beta = _aam_inputs()
    theta = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    out = aam_forward(f, theta, torch.zeros(1, 4, dtype=torch.float64), beta, kc, kv, bias)
    torch.testing.assert_close(out, beta[:, :, None, None].expand_as(out))


def test_brightness_branch_identity_init_and_shape():
    branch = BrightnessBranch((64, 32)).double()
    hist = torch.softmax(torch.randn(3, 256, dtype=torch.float64), dim=1)
    outs = branch(hist)
    assert len(outs) == 2
    assert sum(a.shape[1] + b.shape[1] for a, b in outs) == 2 * (64 + 32)
    for a, b in outs:
        assert torch.equal(a, torch.ones_like(a))
        assert torch.equal(b, torch.zeros_like(b))


def test_brightness_branch_is_bin_position_sensitive():
    branch = BrightnessBranch((8,)).double()
    for head in list(branch.alpha_heads) + list(branch.beta_heads):
        torch.nn.init.normal_(head.weight)
    h1 = torch.zeros(1, 256, dtype=torch.float64)
    h2 = torch.zeros(1, 256, dtype=torch.float64)
    h1[0, [10, 200]] = 0.5
    h2[0, [30, 120]] = 0.5
    assert not torch.allclose(branch(h1)[0][0], branch(h2)[0][0])


def test_gradient_branch_zero_input_and_sizes():
    gb = GradientBranch().double()
    for m in gb.modules():
        if isinstance(m, torch.nn.Conv2d):
            torch.nn.init.zeros_(m.bias)
    thetas = gb(torch.zeros(2, 9, 8, 8, dtype=torch.float64), [(8, 8), (16, 16)])
    assert thetas[0].shape == (2, 1, 8, 8) and thetas[1].shape == (2, 1, 16, 16)
    for t in thetas:
        torch.testing.assert_close(t, torch.full_like(t, 0.5))
    rand = gb(torch.randn(2, 9, 8, 8, dtype=torch.float64) * 10, [(16, 16)])[0]
    assert rand.min() >= 0 and rand.max() <= 1


def test_act_forward_contract():
    net = ACTNet().double().eval()
    x = torch.rand(2, 3, 16, 24, dtype=torch.float64)
    m1, m2 = net(x), net(x)
    assert m1.shape == x.shape
    assert torch.equal(m1, m2)
    assert torch.isfinite(m1).all()
    assert m1.min() >= 0 and m1.max() <= 1


def test_act_forward_rejects_small_or_unaligned():
    net = ACTNet()
    with pytest.raises(ValueError):
        net(torch.rand(1, 3, 4, 8))
    with pytest.raises(ValueError):
        net(torch.rand(1, 3, 10, 12))


def test_act_output_in_unit_interval_random_draws():
    for k in range(100):
        torch.manual_seed(k)
        net = ACTNet()
        for p in net.parameters():
            p.data.mul_(1 + 3 * torch.rand(()))
        m = net(torch.rand(1, 3, 8, 8))
        assert torch.isfinite(m).all() and m.min() >= 0 and m.max() <= 1


def test_parameter_count_positive():
    assert actnet.parameter_count(ACTNet()) > 0


# gradient checks, float64, step 1e-5

def test_cdc_gradients():
    f = torch.rand(1, 4, 8, 8, dtype=torch.float64)
    w = torch.randn(4, 4, 3, 3, dtype=torch.float64)
    probe = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    fn_f = lambda t: (cdc_conv(t, w) * probe).sum()
    fn_w = lambda t: (cdc_conv(f, t) * probe).sum()
    assert rel_error(autograd_grad(fn_f, f), central_difference_grad(fn_f, f)) < 1e-3
    assert rel_error(autograd_grad(fn_w, w), central_difference_grad(fn_w, w)) < 1e-3


def test_aam_gradients():
    f, kc, kv, bias, alpha, beta = _aam_inputs()
    theta = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    probe = torch.randn(1, 4, 8, 8, dtype=torch.float64)

    def make(which):
        def fn(t):
            args = dict(f=f, theta=theta, alpha=alpha, beta=beta, cdc_weight=kc, conv_weight=kv, conv_bias=bias)
            args[which] = t
            return (aam_forward(**args) * probe).sum()
        return fn

    for name, val in [("f", f), ("theta", theta), ("alpha", alpha), ("beta", beta),
                      ("cdc_weight", kc), ("conv_weight", kv)]:
        fn = make(name)
        assert rel_error(autograd_grad(fn, val), central_difference_grad(fn, val)) < 1e-3, name


def test_act_forward_gradients():
    torch.manual_seed(3)
    net = ACTNet().double()
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64) * 0.5 + 0.25
    probe = torch.randn(1, 3, 8, 8, dtype=torch.float64)
    fn = lambda t: (net(t) * probe).sum()
    # the histogram is piecewise constant in x; keep probes inside one bin
    assert rel_error(autograd_grad(fn, x), central_difference_grad(fn, x, h=1e-7)) < 1e-3
    w = net.aam2.cdc_weight

    def fn_w(t):
        with torch.no_grad():
            saved = w.detach().clone()
            w.copy_(t)
        try:
            return (net(x) * probe).sum()
        finally:
            with torch.no_grad():
                w.copy_(saved)

    net.zero_grad()
    (net(x) * probe).sum().backward()
    analytic = w.grad.detach().clone()
    numeric = central_difference_grad(fn_w, w.detach())
    assert rel_error(analytic, numeric) < 1e-3
