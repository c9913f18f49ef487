"""
自动微分与网络结构测试
"""

import numpy as np
import pytest

from modules.antidote_generator import DiscriminatorNet, GanHyperparams, GeneratorNet
from modules.errors import ContractViolationError, NonFiniteError
from modules.fair_trainer import NNConfig, nn_spec
from modules.gmm_encoder import GMMEncoder
from modules.nn_core import (LayerSpec, NetSpec, Network, Tensor, adam_step, bce_with_logits, cross_entropy, div,
                             grad_check, gumbel_softmax, make_adam, make_sgd, matmul, mul, sgd_step, sum_)


def _weighted_sum(out, weights):
    return sum_(mul(out, weights))


def test_backward_simple_graph():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    b = Tensor(np.array([[0.5], [-1.0]]), requires_grad=True)
    loss = sum_(mul(matmul(a, b), matmul(a, b)))
    loss.backward()
    h = a.data @ b.data
    assert np.allclose(a.grad, 2 * h @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ (2 * h))


def test_shared_node_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x
    sum_(y).backward()
    assert np.allclose(x.grad, [5.0])


def test_matmul_shape_mismatch():
    with pytest.raises(ContractViolationError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_non_finite_detected():
    with np.errstate(divide='ignore'):
        with pytest.raises(NonFiniteError):
            div(Tensor(np.array([1.0])), Tensor(np.array([0.0])))


def test_gumbel_hard_is_one_hot():
    logits = Tensor(np.random.default_rng(0).normal(size=(32, 5)), requires_grad=True)
    out = gumbel_softmax(logits, 0.2, rng=np.random.default_rng(1))
    assert np.all(out.data.sum(axis=1) == 1.0)
    assert set(np.unique(out.data)) <= {0.0, 1.0}

    _weighted_sum(out, np.random.default_rng(2).normal(size=(32, 5))).backward()
    assert logits.grad is not None
    assert np.all(np.isfinite(logits.grad))


def test_gumbel_rejects_bad_temperature():
    with pytest.raises(ContractViolationError):
        gumbel_softmax(Tensor(np.zeros((2, 2))), 0.0, rng=np.random.default_rng(0))


def test_sgd_learning_rate_halves():
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = make_sgd(lr=0.1, halving_period=2)
    lrs = []
    for _ in range(5):
        lrs.append(state.current_lr())
        sgd_step({'p': p}, {'p': np.zeros(1)}, state)
    assert lrs == pytest.approx([0.1, 0.1, 0.05, 0.05, 0.025])


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    state = make_adam(lr=0.05)
    for _ in range(600):
        p.grad = None
        sum_(mul(p, p)).backward()
        adam_step({'p': p}, None, state)
    assert np.all(np.abs(p.data) < 0.1)


def test_unknown_layer_kind():
    with pytest.raises(ContractViolationError):
        Network(NetSpec(3, [LayerSpec('conv')]))


def test_forward_checks_input_width():
    net = Network(NetSpec(3, [LayerSpec('linear', {'out_dim': 2})]))
    with pytest.raises(ContractViolationError):
        net.forward(np.zeros((4, 5)))


def test_state_dict_round_trip():
    spec = NetSpec(4, [LayerSpec('linear', {'out_dim': 6}), LayerSpec('batchnorm1d'), LayerSpec('relu'),
                       LayerSpec('linear', {'out_dim': 1})])
    net = Network(spec, seed=0)
    x = np.random.default_rng(0).normal(size=(10, 4))
    net.forward(x, mode='train')
    other = Network(spec, seed=1).load_state_dict(net.state_dict())
    assert np.allclose(other.forward(x, mode='eval').data, net.forward(x, mode='eval').data)


def test_input_gradient_of_linear_net():
    net = Network(NetSpec(4, [LayerSpec('linear', {'out_dim': 1})]), seed=3)
    x = np.random.default_rng(0).normal(size=(5, 4))
    _, grad = net.input_gradient(x)
    weight = net.parameters()['0.linear.weight'].data[:, 0]
    assert np.allclose(grad.data, np.tile(weight, (5, 1)))


def test_input_gradient_matches_finite_difference():
    spec = NetSpec(3, [LayerSpec('linear', {'out_dim': 8}), LayerSpec('leakyrelu'),
                       LayerSpec('linear', {'out_dim': 1})])
    net = Network(spec, seed=4)
    x = np.random.default_rng(1).normal(size=(6, 3))
    _, grad = net.input_gradient(x, mode='eval')
    eps = 1e-6
    for k in range(3):
        step = np.zeros_like(x)
        step[:, k] = eps
        plus = net.forward(x + step, mode='eval').data[:, 0]
        minus = net.forward(x - step, mode='eval').data[:, 0]
        assert np.allclose(grad.data[:, k], (plus - minus) / (2 * eps), atol=1e-6)


def test_input_gradient_rejects_batchnorm():
    net = Network(NetSpec(3, [LayerSpec('linear', {'out_dim': 2}), LayerSpec('batchnorm1d')]))
    with pytest.raises(ContractViolationError):
        net.input_gradient(np.zeros((2, 3)))


# ========== 梯度校验 ==========

def _small_hp():
    return GanHyperparams(batch_size=16, epochs=1, noise_dim=3, hidden_dim=8, monitor_size=8)


def test_grad_check_generator(train_ds):
    encoder = GMMEncoder(max_modes=3, seed=0).fit(train_ds)
    gen = GeneratorNet(encoder, [3], _small_hp(), seed=0)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(16, encoder.width + 3 + 3))
    weights = rng.normal(size=(16, encoder.width))
    targets = rng.integers(0, 3, size=16)

    def loss_fn(out, extras):
        return _weighted_sum(out, weights) + cross_entropy(extras['sensitive:s0'], targets)

    assert grad_check(gen.network, loss_fn, x) < 1e-3


def test_grad_check_discriminator():
    disc = DiscriminatorNet(7, _small_hp(), seed=0)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(16, 21))
    weights = rng.normal(size=(16, 1))
    assert grad_check(disc.network, lambda out, _: _weighted_sum(out, weights), x) < 1e-4


def test_grad_check_classifier():
    net = Network(nn_spec(5, NNConfig(hidden=(6, 6))), seed=0)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(20, 5))
    y = rng.integers(0, 2, size=20)
    assert grad_check(net, lambda out, _: bce_with_logits(out, y), x) < 1e-4


def test_gumbel_confident_logits_pick_first_class():
    logits = Tensor(np.tile([50.0, -50.0], (100000, 1)))
    hard = gumbel_softmax(logits, 0.2, rng=np.random.default_rng(3))
    assert hard.data[:, 0].mean() > 0.999
    soft = gumbel_softmax(logits, 0.2, rng=np.random.default_rng(4), hard=False)
    assert np.mean(soft.data[:, 0] > 0.999) > 0.999


def test_gumbel_samples_follow_softmax():
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    logits = Tensor(np.tile(np.log(probs), (100000, 1)))
    out = gumbel_softmax(logits, 0.2, rng=np.random.default_rng(5))
    observed = out.data.mean(axis=0)
    assert 0.5 * np.abs(observed - probs).sum() < 0.02
