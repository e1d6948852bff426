import numpy as np
import pytest

from momentum_tsc.neural import (
    Adam, QNetwork, ShapeError, backward, copy_parameters, forward, load_network, loss_and_gradient,
    save_network, sgd_step,
)


def numeric_gradient(net, obs, actions, targets, h=1e-5):
    grad = np.zeros_like(net.params)
    for i in range(net.params.size):
        old = net.params[i]
        net.params[i] = old + h
        up = loss_and_gradient(net, obs, actions, targets)[0]
        net.params[i] = old - h
        down = loss_and_gradient(net, obs, actions, targets)[0]
        net.params[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def test_zero_network_outputs_zero():
    net = QNetwork()
    assert forward(net, np.ones(11)).tolist() == [0.0, 0.0]


def test_hand_computed_two_neuron_network():
    net = QNetwork((1, 2, 1))
    net.weights[0][:] = [[1.0, -1.0]]
    net.biases[0][:] = [0.5, 0.0]
    net.weights[1][:] = [[2.0], [3.0]]
    net.biases[1][:] = [0.25]
    # x = 2: hidden = relu([2.5, -2]) = [2.5, 0]; out = 5 + 0.25
    assert forward(net, [2.0]).tolist() == [5.25]
    # x = -2: hidden = relu([-1.5, 2]) = [0, 2]; out = 6 + 0.25
    assert forward(net, [-2.0]).tolist() == [6.25]


def test_negative_preactivation_is_gated():
    net = QNetwork((1, 1, 1))
    net.weights[0][:] = [[-1.0]]
    net.weights[1][:] = [[100.0]]
    assert forward(net, [3.0]).tolist() == [0.0]


def test_shape_errors():
    net = QNetwork(seed=0)
    with pytest.raises(ShapeError):
        forward(net, np.zeros(10))
    with pytest.raises(ShapeError):
        copy_parameters(net, QNetwork((11, 32, 2)))


def test_gradient_zero_at_target():
    net = QNetwork(seed=1)
    x = np.random.default_rng(0).random(11)
    q = forward(net, x)[1]
    assert not np.any(backward(net, x, 1, q))


def test_unselected_head_gets_no_gradient():
    net = QNetwork(seed=2)
    x = np.random.default_rng(1).random(11)
    g = backward(net, x, 0, 10.0)
    gw, gb = net.unflatten(g)
    assert gb[-1][1] == 0.0 and not np.any(gw[-1][:, 1])
    assert gb[-1][0] != 0.0


def test_gradient_matches_finite_differences_on_default_architecture():
    rng = np.random.default_rng(3)
    net = QNetwork(seed=3)
    obs = rng.random((4, 11))
    actions = rng.integers(0, 2, 4)
    targets = rng.normal(size=4)
    analytic = loss_and_gradient(net, obs, actions, targets)[1]
    numeric = numeric_gradient(net, obs, actions, targets)
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


def test_adam_single_scalar_step():
    # one parameter, gradient 0.5: m = 0.05, v = 0.00025, bias-corrected m = 0.5, v = 0.25
    net = QNetwork((1, 1))
    net.params[:] = [1.0, 0.0]
    opt = Adam(2, lr=0.001)
    opt.step(net, np.array([0.5, 0.0]))
    assert net.params[0] == pytest.approx(1.0 - 0.001 * 0.5 / (0.5 + 1e-8), abs=1e-15)
    assert net.params[1] == 0.0


def test_adam_zero_gradient_leaves_parameters():
    net = QNetwork(seed=4)
    before = net.params.copy()
    sgd_step(net, Adam(net.params.size), np.zeros_like(net.params))
    assert np.array_equal(before, net.params)


def test_adam_deterministic():
    g = np.random.default_rng(5).normal(size=QNetwork().params.size)
    a, b = QNetwork(seed=6), QNetwork(seed=6)
    oa, ob = Adam(a.params.size), Adam(b.params.size)
    for _ in range(3):
        oa.step(a, g)
        ob.step(b, g)
    assert np.array_equal(a.params, b.params)
    assert oa.state_dict()["m"].shape == a.params.shape


def test_copy_is_isolated():
    src, dst = QNetwork(seed=7), QNetwork(seed=8)
    x = np.random.default_rng(2).random(11)
    copy_parameters(src, dst)
    assert np.array_equal(forward(src, x), forward(dst, x))
    src.params += 1.0
    assert not np.array_equal(forward(src, x), forward(dst, x))
    before = dst.params.copy()
    copy_parameters(dst, dst)
    assert np.array_equal(before, dst.params)


def test_seeded_init_is_reproducible_and_bounded():
    a, b = QNetwork(seed=9), QNetwork(seed=9)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, QNetwork(seed=10).params)
    for w, bias in zip(a.weights, a.biases):
        assert np.all(np.abs(w) <= np.sqrt(6.0 / sum(w.shape)))
        assert not np.any(bias)


def test_forward_lipschitz_ceiling():
    rng = np.random.default_rng(11)
    net = QNetwork(seed=11)
    bound = np.prod([np.linalg.norm(w, 2) for w in net.weights])
    for _ in range(100):
        x, y = rng.normal(size=11), rng.normal(size=11)
        assert np.linalg.norm(forward(net, x) - forward(net, y)) <= bound * np.linalg.norm(x - y) + 1e-12


def test_save_and_load_round_trip(tmp_path):
    net = QNetwork(seed=12)
    save_network(net, tmp_path / "n.npz", {"reward": "mbrf"})
    loaded, meta = load_network(tmp_path / "n.npz")
    assert loaded.layer_sizes == net.layer_sizes
    assert np.array_equal(loaded.params, net.params)
    assert meta == {"reward": "mbrf"}


def test_load_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", params=np.zeros(3))
    with pytest.raises(Exception):
        load_network(tmp_path / "x.npz")
