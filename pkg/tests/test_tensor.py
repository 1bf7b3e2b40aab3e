import numpy as np
import pytest

from microcrack import losses, tensor as T
from microcrack.optim import AdamState, adam_step
from microcrack.tensor import Tensor


def brute_conv2d(x, w, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
    Ho, Wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    out[b, o, i, j] = np.sum(xp[b, :, i:i + kh, j:j + kw] * w[o])
    return out


def test_add():
    np.testing.assert_array_equal((Tensor([1, 2]) + Tensor([3, 4])).data, [4, 6])


def test_conv2d_sliding_dot_product():
    x = np.ones((1, 1, 3, 1))
    w = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 3, 1)
    out = T.conv2d(x, w, padding=(1, 0)).data.reshape(-1)
    np.testing.assert_array_equal(out, brute_conv2d(x, w, (1, 0)).reshape(-1))
    # cross-correlation: the zero pad meets w[0] at the first output and w[2] at the last
    np.testing.assert_array_equal(out, [5.0, 6.0, 3.0])


def test_conv2d_matches_loops(rng):
    x = rng.standard_normal((2, 3, 7, 4))
    w = rng.standard_normal((5, 3, 3, 2))
    np.testing.assert_allclose(T.conv2d(x, w, padding=(1, 0)).data, brute_conv2d(x, w, (1, 0)), atol=1e-12)


def test_max_pool_window_max():
    x = np.arange(1.0, 9.0).reshape(1, 1, 8, 1)
    np.testing.assert_array_equal(T.max_pool2d(x, (4, 1)).data.reshape(-1), [4.0, 8.0])


def test_max_pool_tie_goes_to_first():
    x = Tensor(np.array([3.0, 3.0, 1.0, 0.0]).reshape(1, 1, 4, 1), requires_grad=True)
    T.max_pool2d(x, (4, 1)).sum().backward()
    np.testing.assert_array_equal(x.grad.reshape(-1), [1.0, 0.0, 0.0, 0.0])


def test_shape_errors_name_the_op():
    with pytest.raises(T.ShapeError, match="add"):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(T.ShapeError, match="matmul"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(T.ShapeError, match="conv2d"):
        T.conv2d(np.ones((1, 2, 5, 5)), np.ones((1, 3, 3, 3)))


def test_backward_sum_gives_ones(rng):
    x = Tensor(rng.standard_normal((3, 4, 2)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4, 2)))


def test_backward_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(T.ShapeError):
        (x * 2.0).backward()


def test_dice_of_sigmoid_matches_finite_differences():
    x = np.array([0.5, -1.0, 2.0, 0.3])
    y = np.array([1.0, 0.0, 1.0, 0.0])
    w = Tensor(np.array([0.7, -0.2, 0.4, 1.1]), requires_grad=True)
    err = T.grad_check(lambda w: losses.dice_loss(T.sigmoid(w * x), y), [w], eps=1e-5)
    assert err < 1e-6


def test_two_consumers_accumulate(rng):
    x = Tensor(rng.standard_normal(5), requires_grad=True)
    (T.exp(x).sum() + (x * 3.0).sum()).backward()
    np.testing.assert_allclose(x.grad, np.exp(x.data) + 3.0, rtol=1e-15)


def test_leaf_grads_accumulate_across_backward_calls():
    x = Tensor([1.0, -2.0], requires_grad=True)
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [4.0, -8.0])


def test_constants_never_collect_grad():
    c = Tensor([1.0, 2.0])
    x = Tensor([3.0, 4.0], requires_grad=True)
    (c * x).sum().backward()
    assert c.grad is None


def test_reshape_is_gradient_transparent(rng):
    x = Tensor(rng.standard_normal((2, 6)), requires_grad=True)
    g = rng.standard_normal((3, 4))
    (x.reshape(3, 4) * g).sum().backward()
    np.testing.assert_array_equal(x.grad, g.reshape(2, 6))


def test_graph_inputs_precede_consumers(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    y = T.sigmoid(x) * x + x
    nodes = T.graph_nodes(y.sum())
    for pos, (_, parents) in enumerate(nodes):
        assert all(p < pos for p in parents)
    assert nodes[0][0] == "leaf"


def test_forward_is_deterministic(rng):
    x = rng.standard_normal((2, 3, 9, 4))
    w = rng.standard_normal((4, 3, 3, 1))
    a = T.softmax(T.conv2d(x, w, padding=(1, 0)), axis=2).data
    b = T.softmax(T.conv2d(x, w, padding=(1, 0)), axis=2).data
    assert np.array_equal(a, b)


def test_no_grad_skips_recording():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# ------------------------------------------------------------ grad_check

def test_grad_check_linear():
    assert T.grad_check(lambda x: (x * 3.0).sum(), [Tensor([2.0])], eps=1e-5) < 1e-9


def test_grad_check_gelu():
    from microcrack.layers import gelu
    assert T.grad_check(lambda x: gelu(x).sum(), [Tensor([0.5])], eps=1e-5) < 1e-6


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        T.grad_check(lambda x: x.sum(), [Tensor([1.0])], eps=1e-2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_reports_non_finite():
    with pytest.raises(T.GradCheckError, match="element 0"):
        T.grad_check(lambda x: T.log(x).sum(), [Tensor([0.0])], eps=1e-5)


UNARY = {
    "exp": T.exp,
    "log": lambda x: T.log(x * x + 1.0),
    "sigmoid": T.sigmoid,
    "erf": T.erf,
    "softmax": lambda x: T.softmax(x, axis=-1) * np.arange(1.0, x.shape[-1] + 1),
    "pow": lambda x: (x * x + 0.5) ** 1.5,
    "mean": lambda x: x.mean(axis=1, keepdims=True) * x,
    "transpose": lambda x: x.transpose(1, 0) @ x,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_primitive_grad_check(name):
    f = UNARY[name]
    for seed in range(5):
        x = Tensor(np.random.default_rng(seed).uniform(-2, 2, (3, 4)))
        w = np.random.default_rng(seed + 100).standard_normal(f(x).shape)
        assert T.grad_check(lambda x: (f(x) * w).sum(), [x], eps=1e-5) < 1e-6


def test_broadcast_mul_div_grad_check(rng):
    a = Tensor(rng.uniform(-2, 2, (3, 1, 4)))
    b = Tensor(rng.uniform(0.5, 2, (5, 1)))
    assert T.grad_check(lambda a, b: (a * b / (b + a * a + 3.0)).sum(), [a, b], eps=1e-5) < 1e-6


def test_batched_matmul_grad_check(rng):
    a = Tensor(rng.standard_normal((2, 3, 4)))
    b = Tensor(rng.standard_normal((2, 4, 5)))
    c = Tensor(rng.standard_normal((4, 2)))
    assert T.grad_check(lambda a, b, c: ((a @ b).sum(axis=2) + (a @ c).sum(axis=2)).sum() ** 1.0,
                        [a, b, c], eps=1e-5) < 1e-6


# ---------------------------------------------------------------- Adam

def _param(value, grad):
    p = Tensor(np.array([value]), requires_grad=True)
    p.grad = np.array([grad])
    return p


def test_adam_first_step_is_lr_times_sign():
    p = _param(0.0, 1.0)
    adam_step([p], AdamState(lr=0.1))
    assert p.data[0] == pytest.approx(-0.1, abs=1e-7)


def test_adam_zero_gradient_is_fixed_point():
    p = _param(0.3, 0.0)
    adam_step([p], AdamState(lr=0.1))
    assert abs(p.data[0] - 0.3) < 1e-12


def test_adam_second_identical_step_not_larger():
    p = _param(1.0, 0.7)
    state = AdamState(lr=0.01)
    adam_step([p], state)
    d1 = 1.0 - p.data[0]
    before = p.data[0]
    adam_step([p], state)
    d2 = before - p.data[0]
    assert abs(d2) <= abs(d1) + 1e-12
    assert state.step == 2


def test_adam_requires_grads():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError, match="no gradient"):
        adam_step([p], AdamState())


def test_adam_leaves_grads_alone():
    p = _param(0.0, 2.0)
    adam_step([p], AdamState())
    assert p.grad[0] == 2.0
