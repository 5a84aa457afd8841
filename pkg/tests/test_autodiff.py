import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfold_pansharp import autodiff as ad
from unfold_pansharp.autodiff import Tensor, grad_check, grad_check_params
from unfold_pansharp.autodiff.nn import BatchNorm2d, Conv2d, ConvTranspose2d
from unfold_pansharp.autodiff.optim import AdamState, adam_step
from unfold_pansharp.errors import ContractViolation, DegenerateInputError, TrainingDivergenceError

TOL = 1e-4
RNG = np.random.default_rng(1234)


def rand(*shape, lo=-1.0, hi=1.0):
    return RNG.uniform(lo, hi, size=shape)


def weighted_sum(y, seed=0):
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return ad.sum(y * Tensor(w))


# each entry: (name, function of one tensor, point)
def primitive_cases():
    other = Tensor(rand(2, 3, 4))
    pos = rand(2, 3, 4, lo=0.5, hi=2.0)
    mat = Tensor(rand(4, 5))
    return [
        ("add", lambda x: weighted_sum(x + other), rand(2, 3, 4)),
        ("add_broadcast", lambda x: weighted_sum(other + x), rand(1, 3, 1)),
        ("sub", lambda x: weighted_sum(other - x), rand(2, 3, 4)),
        ("mul", lambda x: weighted_sum(x * other), rand(2, 3, 4)),
        ("div_num", lambda x: weighted_sum(x / Tensor(pos)), rand(2, 3, 4)),
        ("div_den", lambda x: weighted_sum(other / x), pos),
        ("maximum", lambda x: weighted_sum(ad.maximum(x, 0.1)), rand(2, 3, 4)),
        ("exp", lambda x: weighted_sum(ad.exp(x)), rand(2, 3, 4)),
        ("relu", lambda x: weighted_sum(ad.relu(x)), rand(2, 3, 4)),
        ("softplus", lambda x: weighted_sum(ad.softplus(x)), rand(2, 3, 4, lo=-3, hi=3)),
        ("clip_x", lambda x: weighted_sum(ad.clip_symmetric(x, 0.5)), rand(2, 3, 4)),
        ("clip_bound", lambda b: weighted_sum(ad.clip_symmetric(other * 2.0, b)), np.array([[[0.3]]])),
        ("matmul", lambda x: weighted_sum(x @ mat), rand(3, 4)),
        ("concat", lambda x: weighted_sum(ad.concat([x, other, x * 2.0], axis=1)), rand(2, 3, 4)),
        ("reshape", lambda x: weighted_sum(ad.reshape(x, (6, 4))), rand(2, 3, 4)),
        ("sum_axis", lambda x: weighted_sum(ad.sum(x, axis=1, keepdims=True)), rand(2, 3, 4)),
        ("mean", lambda x: weighted_sum(ad.mean(x, axis=(0, 2))), rand(2, 3, 4)),
        ("softmax", lambda x: weighted_sum(ad.softmax(x, axis=1)), rand(2, 3, 4, lo=-2, hi=2)),
        ("l1_loss", lambda x: ad.l1_loss(x, other), rand(2, 3, 4)),
        ("mse_loss", lambda x: ad.mse_loss(x, other), rand(2, 3, 4)),
        ("pad_zero", lambda x: weighted_sum(ad.pad(x, 2, "zero")), rand(1, 2, 4, 4)),
        ("pad_symmetric", lambda x: weighted_sum(ad.pad(x, 2, "symmetric")), rand(1, 2, 4, 4)),
    ]


@pytest.mark.parametrize("case", primitive_cases(), ids=lambda c: c[0])
def test_primitive_gradients(case):
    _, fn, point = case
    assert grad_check(fn, point) < TOL


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradients(stride, padding):
    w = Tensor(rand(3, 2, 3, 3), requires_grad=True)
    b = Tensor(rand(3), requires_grad=True)
    x = rand(2, 2, 6, 6)
    assert grad_check(lambda t: weighted_sum(ad.conv2d(t, w, b, stride, padding)), x) < TOL
    xt = Tensor(x)
    assert grad_check(lambda t: weighted_sum(ad.conv2d(xt, t, b, stride, padding)), w.data) < TOL
    assert grad_check(lambda t: weighted_sum(ad.conv2d(xt, w, t, stride, padding)), b.data) < TOL


@pytest.mark.parametrize("k,stride,padding", [(4, 2, 1), (5, 3, 1), (3, 1, 1)])
def test_conv_transpose_gradients(k, stride, padding):
    w = Tensor(rand(2, 3, k, k))
    x = rand(1, 2, 3, 3)
    assert grad_check(lambda t: weighted_sum(ad.conv_transpose2d(t, w, None, stride, padding)), x) < TOL
    xt = Tensor(x)
    assert grad_check(lambda t: weighted_sum(ad.conv_transpose2d(xt, t, None, stride, padding)), w.data) < TOL


def test_conv_transpose_is_adjoint_of_conv():
    # <conv_transpose(x), y> == <x, conv(y)> for matching stride/padding/kernel
    w = rand(2, 3, 4, 4)
    x = rand(1, 2, 4, 4)
    y = ad.conv_transpose2d(Tensor(x), Tensor(w), None, 2, 1).data
    z = rand(*y.shape)
    # conv weights (O=Cin, C=Cout): same array read as (Cin, Cout, k, k)
    cz = ad.conv2d(Tensor(z), Tensor(w), None, 2, 1).data
    assert np.isclose(np.sum(y * z), np.sum(x * cz), rtol=1e-12)


def test_conv_transpose_output_size():
    x = Tensor(np.zeros((1, 1, 5, 7)))
    for q in (2, 3, 5):
        out = ad.conv_transpose2d(x, Tensor(np.zeros((1, 1, q + 2, q + 2))), None, q, 1)
        assert out.shape[-2:] == (5 * q, 7 * q)


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(training):
    bn = BatchNorm2d(3, dtype=np.float64)
    bn.gamma.data = rand(3, lo=0.5, hi=1.5)
    bn.beta.data = rand(3)
    bn.buffers["running_var"][:] = rand(3, lo=0.5, hi=2)
    bn.train(training)
    x = rand(2, 3, 3, 3)
    assert grad_check(lambda t: weighted_sum(bn(t)), x) < TOL
    xt = Tensor(x)
    assert grad_check_params(lambda: weighted_sum(bn(xt)), [bn.gamma, bn.beta]) < TOL


def test_batch_norm_running_stats_update():
    bn = BatchNorm2d(2, momentum=0.5, dtype=np.float64)
    x = rand(4, 2, 3, 3)
    bn(Tensor(x))
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3), ddof=1)
    assert np.allclose(bn.buffers["running_mean"], 0.5 * mu)
    assert np.allclose(bn.buffers["running_var"], 0.5 + 0.5 * var)


@pytest.mark.parametrize("r", [0, 1, 2])
def test_window_attention_gradients(r):
    q = rand(1, 3, 5, 5)
    k = Tensor(rand(1, 3, 5, 5))
    v = Tensor(rand(1, 2, 5, 5))

    def via_q(t):
        return weighted_sum(ad.window_apply(ad.softmax(ad.window_logits(t, k, r), axis=1), v, r))

    def via_k(t):
        return weighted_sum(ad.window_apply(ad.softmax(ad.window_logits(Tensor(q), t, r), axis=1), v, r))

    def via_v(t):
        return weighted_sum(ad.window_apply(ad.softmax(ad.window_logits(Tensor(q), k, r), axis=1), t, r))

    assert grad_check(via_q, q) < TOL
    assert grad_check(via_k, k.data) < TOL
    assert grad_check(via_v, v.data) < TOL


def test_linear_map_gradient():
    m = rand(5, 4)
    fn = lambda t: weighted_sum(ad.linear_map(t, lambda a: a @ m.T, lambda g: g @ m))  # noqa: E731
    assert grad_check(fn, rand(3, 4)) < TOL


def test_layer_parameter_gradients():
    rng = np.random.default_rng(0)
    conv = Conv2d(2, 3, 3, rng, dtype=np.float64)
    tconv = ConvTranspose2d(3, 2, 4, 2, 1, rng, dtype=np.float64)
    x = Tensor(rand(1, 2, 4, 4))
    loss = lambda: weighted_sum(tconv(ad.relu(conv(x))))  # noqa: E731
    assert grad_check_params(loss, conv.parameters() + tconv.parameters()) < TOL


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = ad.sum(x * x + x * 3.0)
    y.backward()
    assert np.allclose(x.grad, 2 * x.data + 3.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractViolation):
        (x * 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_shape_errors_name_operation():
    with pytest.raises(ContractViolation, match="add"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 5)))
    with pytest.raises(ContractViolation, match="conv2d"):
        ad.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))


def test_div_guard():
    with pytest.raises(DegenerateInputError):
        Tensor(np.ones(2)) / Tensor(np.array([1.0, 0.0]))


def test_dtype_defaults_and_preservation():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.ones(2)).dtype == np.float64
    assert (Tensor(np.ones(2, np.float32)) * 2.0).dtype == np.float32


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_normalises(vals):
    out = ad.softmax(Tensor(np.array([vals])), axis=1).data
    assert np.isclose(out.sum(), 1.0) and np.all(out >= 0)


def test_softmax_handles_masked_entries():
    out = ad.softmax(Tensor(np.array([[0.0, -np.inf, 1.0]])), axis=1).data
    assert out[0, 1] == 0.0 and np.isclose(out.sum(), 1.0)


def test_adam_matches_closed_form_first_step():
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -0.1])]
    st_ = AdamState.for_params(p, lr=0.1)
    new = adam_step(p, g, st_)
    # first bias-corrected step moves each coordinate by lr * sign(g) (up to eps)
    assert np.allclose(new[0], p[0] - 0.1 * np.sign(g[0]), atol=1e-6)


def test_adam_default_lr():
    assert AdamState.for_params([np.zeros(1)]).lr == 5e-4


def test_adam_rejects_nonfinite_gradient():
    st_ = AdamState.for_params([np.zeros(2)], names=["w"])
    with pytest.raises(TrainingDivergenceError, match="w"):
        adam_step([np.zeros(2)], [np.array([np.nan, 0.0])], st_)


def test_adam_minimises_quadratic():
    x = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = ad.Adam([("x", x)], lr=0.1)
    for _ in range(300):
        loss = ad.sum(x * x)
        loss.backward()
        opt.step()
    assert np.linalg.norm(x.data) < 1e-2
