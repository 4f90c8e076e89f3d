import math

import numpy as np
import pytest

from csihar import autodiff as ad
from csihar.autodiff import Tape, Tensor, backward, gradient_check
from csihar.errors import ContractError, DimensionError, NumericError


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    out = ad.matmul(Tensor(np.eye(3)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_relu_and_mean():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).values == [0.0, 0.0, 2.0]
    assert ad.mean(Tensor([1, 2, 3, 4, 5])).item() == 3.0


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError, match="add"):
        ad.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_tensor_invariants():
    t = Tensor(np.ones((2, 3)))
    assert len(t.values) == 6
    with pytest.raises(DimensionError):
        Tensor(np.ones((0, 3)))
    with pytest.raises(ValueError):
        t.data[0, 0] = 5.0


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(Tensor(np.zeros(4))).data, [0.25] * 4)
    out = ad.softmax(Tensor([math.log(1), math.log(3)])).data
    np.testing.assert_allclose(out, [0.25, 0.75], rtol=0, atol=1e-15)
    with pytest.raises(NumericError):
        ad.softmax(Tensor([0.0, np.inf]))
    with pytest.raises(NumericError):
        ad.softmax(Tensor([np.nan, 1.0]))


@pytest.mark.parametrize("seed", range(20))
def test_softmax_sum_and_shift(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=7) * 5
    s = ad.softmax(Tensor(v)).data
    assert abs(s.sum() - 1) <= 1e-12
    assert np.all(s > 0)
    shifted = ad.softmax(Tensor(v + rng.normal() * 10)).data
    np.testing.assert_allclose(shifted, s, rtol=1e-12, atol=0)
    # exactly representable inputs: max-subtraction absorbs the shift bit for bit
    grid = np.round(v * 8) / 8
    c = float(rng.integers(-100, 100))
    assert np.array_equal(ad.softmax(Tensor(grid + c)).data, ad.softmax(Tensor(grid)).data)


def test_product_rule():
    x = Tensor([2.0], requires_grad=True)
    y = Tensor([5.0], requires_grad=True)
    with Tape() as tape:
        loss = x * y
    gx, gy = backward(tape, loss, [x, y])
    assert gx.tolist() == [5.0] and gy.tolist() == [2.0]


def test_relu_sum_grad_and_untouched_param():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.relu(x))
    gx, gu = backward(tape, loss, [x, unused])
    assert gx.tolist() == [0.0, 1.0]
    assert gu.tolist() == [0.0, 0.0, 0.0]


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ad.scale(x, 2.0)
    with pytest.raises(ContractError):
        backward(tape, y, [x])


def test_backward_does_not_mutate_forward_values():
    x = Tensor([0.5, -1.5, 2.0], requires_grad=True)
    with Tape() as tape:
        h = ad.mul(x, x)
        loss = ad.sum(ad.relu(h))
    before = (x.data.copy(), h.data.copy(), loss.data.copy())
    backward(tape, loss, [x])
    assert np.array_equal(before[0], x.data)
    assert np.array_equal(before[1], h.data)
    assert np.array_equal(before[2], loss.data)


def test_fan_out_accumulates():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = x * x + x
    (g,) = backward(tape, loss, [x])
    assert g.tolist() == [7.0]
    assert x.grad.tolist() == [7.0]


def test_nodes_in_topological_order():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        ad.sum(ad.relu(ad.scale(x, 2.0)))
    seen = {id(x)}
    for node in tape.nodes:
        assert all(i in seen for i in node.input_ids)
        seen.add(node.output_id)


def test_gradient_check_quadratic():
    err = gradient_check(lambda x: ad.sum(x * x), [np.array([3.0])], eps=1e-5)
    assert err <= 1e-8


def test_gradient_check_eps_bounds():
    with pytest.raises(ContractError):
        gradient_check(lambda x: ad.sum(x), [np.ones(1)], eps=1e-2)


def test_two_layer_network_gradient_check():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 5)))
    target = np.eye(3)[[0, 1, 2, 0]]

    def f(w1, b1, w2):
        h = ad.relu(ad.add(ad.matmul(x, w1), b1))
        p = ad.softmax(ad.matmul(h, w2))
        d = ad.sub(p, Tensor(target))
        return ad.sum(ad.mul(d, d))

    err = gradient_check(
        f, [rng.normal(size=(5, 6)), rng.normal(size=6), rng.normal(size=(6, 3))], eps=1e-5
    )
    assert err <= 1e-4


def _op_cases(rng):
    """(name, fn, param arrays) for each exported differentiable op."""
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 3))
    c = rng.normal(size=(3, 2))
    img = rng.normal(size=(1, 2, 4, 4))
    ker = rng.normal(size=(3, 2, 3, 3))
    return [
        ("add", lambda x, y: ad.sum(ad.mul(ad.add(x, y), ad.add(x, y))), [a, b]),
        ("sub", lambda x, y: ad.sum(ad.mul(ad.sub(x, y), x)), [a, b]),
        ("mul", lambda x, y: ad.sum(ad.mul(x, y)), [a, b]),
        ("scale", lambda x: ad.sum(ad.mul(ad.scale(x, -1.7), x)), [a]),
        ("matmul", lambda x, y: ad.sum(ad.mul(ad.matmul(x, y), ad.matmul(x, y))), [a, c]),
        ("sum_axis", lambda x: ad.sum(ad.mul(ad.sum(x, axis=0), ad.sum(x, axis=0))), [a]),
        ("mean", lambda x: ad.mul(ad.mean(x), ad.mean(x)), [a]),
        ("relu", lambda x: ad.sum(ad.mul(ad.relu(x), x)), [a]),
        ("concat", lambda x, y: ad.sum(ad.mul(ad.concat([x, y], axis=1), ad.concat([y, x], axis=1))), [a, b]),
        ("softmax", lambda x, y: ad.sum(ad.mul(ad.softmax(x), y)), [a, b]),
        ("exp_log", lambda x: ad.sum(ad.log(ad.add(ad.exp(x), 1.0))), [a]),
        ("reshape_transpose", lambda x: ad.sum(ad.mul(ad.transpose(ad.reshape(x, (3, 2))), Tensor(b))), [a]),
        ("index", lambda x: ad.sum(ad.mul(x[:, 1:], x[:, :2])), [a]),
        ("stack", lambda x, y: ad.sum(ad.mul(ad.stack([x, y]), ad.stack([y, y]))), [a, b]),
        ("conv2d", lambda x, w: ad.sum(ad.mul(ad.conv2d(x, w), ad.conv2d(x, w))), [img, ker]),
        ("maxpool", lambda x: ad.sum(ad.mul(ad.maxpool2d(x, 2), ad.maxpool2d(x, 2))), [img]),
        ("spike_smooth", lambda x: ad.sum(ad.spike(x, 0.3, smooth=True)), [a]),
    ]


@pytest.mark.parametrize("seed", range(100))
def test_every_op_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, fn, params in _op_cases(rng):
        err = gradient_check(fn, params, eps=1e-6)
        assert err <= 1e-4, (name, err)


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(42)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(5, 4)))
        with Tape() as tape:
            loss = ad.sum(ad.softmax(ad.matmul(x, w)) * Tensor(rng.normal(size=(5, 3))))
        (g,) = backward(tape, loss, [w])
        return loss.data.copy(), g

    (l1, g1), (l2, g2) = run(), run()
    assert np.array_equal(l1, l2) and np.array_equal(g1, g2)


def test_hard_spike_uses_surrogate_backward():
    u = Tensor([0.0, 1.0, 1.0 + 1 / math.pi], requires_grad=True)
    with Tape() as tape:
        s = ad.spike(u, threshold=1.0)
        loss = ad.sum(s)
    assert s.values == [0.0, 0.0, 1.0]
    (g,) = backward(tape, loss, [u])
    np.testing.assert_allclose(g, [1 / (1 + math.pi**2), 1.0, 0.5])


def test_optimizers_lr_zero_is_noop():
    p = Tensor(np.ones(3), requires_grad=True)
    for opt in (ad.SGD([p], 0.0), ad.Adam([p], 0.0)):
        (q,) = opt.step([np.ones(3)])
        assert np.array_equal(q.data, p.data)
