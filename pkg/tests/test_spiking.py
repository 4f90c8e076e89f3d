import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csihar import autodiff as ad
from csihar.autodiff import Tape, Tensor, backward
from csihar.errors import ConfigError, NumericError
from csihar.spiking import LifConfig, Reset, lif_forward, lif_sequence, surrogate_grad


def hand_simulation(currents, beta, thr, reset):
    """Scalar oracle written independently of the vectorised code."""
    u, us, ss = 0.0, [], []
    for i in currents:
        u = beta * u + i
        s = 1 if u > thr else 0
        if s:
            u = 0.0 if reset == "zero" else u - thr
        us.append(u)
        ss.append(s)
    return us, ss


def test_no_input_no_spikes():
    st_ = lif_forward(np.zeros((50, 3)), LifConfig(beta=1.0, threshold=1.0))
    assert st_.spikes.sum() == 0 and np.all(st_.trace == 0)


def test_zero_reset_fixture():
    out = lif_forward([0.5] * 4, LifConfig(0.9, 1.0, Reset.ZERO))
    assert out.spikes.ravel().tolist() == [0, 0, 1, 0]
    us, _ = hand_simulation([0.5] * 4, 0.9, 1.0, "zero")
    assert out.trace.ravel().tolist() == us
    np.testing.assert_allclose(out.trace.ravel(), [0.5, 0.95, 0.0, 0.5], atol=1e-15)


def test_subtract_reset_fixture():
    out = lif_forward([0.5] * 4, LifConfig(0.9, 1.0, "subtract"))
    assert out.spikes.ravel().tolist() == [0, 0, 1, 0]
    us, _ = hand_simulation([0.5] * 4, 0.9, 1.0, "subtract")
    assert out.trace.ravel().tolist() == us
    np.testing.assert_allclose(out.trace.ravel(), [0.5, 0.95, 0.355, 0.8195], atol=1e-15)


def test_threshold_is_strict():
    assert lif_forward([1.0, 0.0], LifConfig(1.0, 1.0)).spikes.ravel().tolist() == [0, 0]


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-2, 3), min_size=1, max_size=40),
    st.floats(0.05, 1.0),
    st.floats(0.1, 2.0),
    st.sampled_from(["zero", "subtract"]),
)
def test_matches_scalar_oracle(currents, beta, thr, reset):
    out = lif_forward(currents, LifConfig(beta, thr, reset))
    us, ss = hand_simulation(currents, beta, thr, reset)
    assert out.trace.ravel().tolist() == us
    assert out.spikes.ravel().tolist() == ss


@pytest.mark.parametrize("seed", range(50))
def test_subthreshold_steady_state_never_spikes(seed):
    rng = np.random.default_rng(seed)
    beta = rng.uniform(0.05, 0.99)
    thr = rng.uniform(0.1, 3.0)
    current = rng.uniform(0, 1) * thr * (1 - beta)
    out = lif_forward(np.full((2000, 4), current), LifConfig(beta, thr, "subtract"))
    assert out.spikes.sum() == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.data(), st.sampled_from(["zero", "subtract"]))
def test_batch_decomposition(n, data, reset):
    cut = data.draw(st.integers(1, n - 1))
    seed = data.draw(st.integers(0, 10_000))
    cur = np.random.default_rng(seed).uniform(-0.5, 1.5, size=(n, 5))
    cfg = LifConfig(0.8, 1.0, reset)
    whole = lif_forward(cur, cfg)
    first = lif_forward(cur[:cut], cfg)
    second = lif_forward(cur[cut:], cfg, initial=first.potentials)
    assert np.array_equal(np.concatenate([first.spikes, second.spikes]), whole.spikes)
    assert np.array_equal(np.concatenate([first.trace, second.trace]), whole.trace)


def test_config_and_input_validation():
    with pytest.raises(ConfigError):
        LifConfig(beta=0.0)
    with pytest.raises(ConfigError):
        LifConfig(beta=1.5)
    with pytest.raises(ConfigError):
        LifConfig(threshold=0.0)
    with pytest.raises(ValueError):
        LifConfig(reset="halve")
    with pytest.raises(NumericError):
        lif_forward([0.1, np.nan], LifConfig())


def test_surrogate_values():
    assert surrogate_grad(0.0) == 1.0
    assert surrogate_grad(1 / math.pi) == pytest.approx(0.5, abs=1e-15)
    assert surrogate_grad(1e200) == 0.0 and surrogate_grad(-1e200) == 0.0


@pytest.mark.parametrize("reset", ["zero", "subtract"])
def test_tensor_path_matches_reference(reset):
    cfg = LifConfig(0.85, 0.7, reset)
    cur = np.random.default_rng(3).uniform(-0.2, 0.9, size=(30, 6))
    spikes, u = lif_sequence([Tensor(c) for c in cur], cfg)
    ref = lif_forward(cur, cfg)
    assert np.array_equal(np.stack([s.data for s in spikes]), ref.spikes)
    assert np.array_equal(u.data, ref.potentials)


def test_smooth_mode_gradient_check():
    cfg = LifConfig(0.9, 1.0, "zero")
    cur = np.random.default_rng(0).uniform(0.0, 0.8, size=(8, 3))

    def f(w):
        spikes, _ = lif_sequence([ad.mul(Tensor(c), w) for c in cur], cfg, smooth=True)
        return ad.sum(ad.stack(spikes))

    assert ad.gradient_check(f, [np.full(3, 1.1)], eps=1e-6) <= 1e-6


def test_toy_rate_coded_training_reduces_loss():
    rng = np.random.default_rng(11)
    n, feat, steps = 40, 6, 12
    y = rng.integers(0, 2, n)
    x = rng.uniform(0.0, 0.3, size=(n, feat))
    x[y == 0, :3] += 0.5
    x[y == 1, 3:] += 0.5
    target = Tensor(np.eye(2)[y])
    w = Tensor(rng.normal(0, 0.3, size=(feat, 2)), requires_grad=True)
    cfg = LifConfig(0.9, 1.0)
    opt = ad.SGD([w], lr=0.5)

    def loss_of(w):
        cur = ad.matmul(Tensor(x), w)
        spikes, _ = lif_sequence([cur] * steps, cfg)
        rate = ad.scale(ad.sum(ad.stack(spikes), axis=0), 1.0 / steps)
        probs = ad.stack([ad.softmax(ad.scale(rate[i], 4.0)) for i in range(n)])
        d = ad.sub(probs, target)
        return ad.scale(ad.sum(ad.mul(d, d)), 1.0 / n)

    history = []
    for _ in range(21):
        with Tape() as tape:
            loss = loss_of(w)
        history.append(loss.item())
        (g,) = backward(tape, loss, [w])
        (w,) = opt.step([g])
        w = Tensor(w.data, requires_grad=True)
    assert history[20] < history[0]
