import numpy as np
import pytest

from instances import perturbed_multiagent, scalar_plant
from sparselqr.errors import InitNotStabilizing, ParseError, ZeroReference
from sparselqr.objective import grad_J, lqr_gain
from sparselqr.solvers import ista_step
from sparselqr.sparsity import Regularizer, RegKind
from sparselqr.systems import LabeledExample
from sparselqr.unrolled import (W1_MIN, LayerParams, TrainOptions, UnrolledNet, forward, loss,
                                net_from_dict, net_to_dict, nmse, nmse_by_depth, train)


@pytest.fixture(scope="module")
def small_set():
    rng = np.random.default_rng(21)
    out = []
    for _ in range(3):
        plant = perturbed_multiagent(2, rng, sigma=0.3)
        K0 = lqr_gain(plant)
        out.append(LabeledExample(plant=plant, K0=K0 + 0.5 * rng.standard_normal(K0.shape),
                                  K_star=K0))
    return out


def test_initial_net_reproduces_fixed_step_ista(multiagent5):
    plant, K0 = multiagent5
    start = K0 + 0.2 * np.random.default_rng(4).standard_normal(K0.shape)
    net = UnrolledNet.initial(6, rho0=100.0, gamma=1.0)
    _, trace = forward(net, plant, start)
    K = start
    for rec in trace:
        K = ista_step(plant, K, 100.0, 1.0, Regularizer())
        assert not rec.fallback
        np.testing.assert_array_equal(rec.K, K)


def test_block_net_reproduces_block_ista(multiagent5):
    plant, K0 = multiagent5
    net = UnrolledNet.initial(3, rho0=50.0, gamma=2.0, sparsity_op="block")
    _, trace = forward(net, plant, K0)
    K = K0
    for rec in trace:
        K = ista_step(plant, K, 50.0, 2.0, Regularizer(RegKind.BLOCK_L1))
        np.testing.assert_array_equal(rec.K, K)


def test_zero_threshold_is_gradient_descent():
    plant = scalar_plant()
    net = UnrolledNet(layers=(LayerParams(w1=0.5, w2=0.0),) * 3)
    _, trace = forward(net, plant, np.array([[1.0]]))
    K = np.array([[1.0]])
    for rec in trace:
        K = K - 0.5 * grad_J(plant, K)
        np.testing.assert_allclose(rec.K, K, rtol=0, atol=1e-15)


def test_unstable_candidate_falls_back():
    plant = scalar_plant()
    # the first layer jumps to k = -9 (closed loop a - b k = 8): rejected
    net = UnrolledNet(layers=(LayerParams(w1=40.0, w2=0.0), LayerParams(w1=0.5, w2=0.0)))
    _, trace = forward(net, plant, np.array([[1.0]]))
    assert trace[0].fallback and not trace[1].fallback
    np.testing.assert_array_equal(trace[0].K, [[1.0]])
    assert all(r.abscissa < 0 for r in trace)


def test_forward_rejects_unstable_start():
    with pytest.raises(InitNotStabilizing):
        forward(UnrolledNet.initial(2), scalar_plant(), np.array([[-3.0]]))


def test_layer_params_validation():
    with pytest.raises(ValueError):
        LayerParams(w1=0.0, w2=0.0)
    with pytest.raises(ValueError):
        LayerParams(w1=1.0, w2=-0.1)
    with pytest.raises(ValueError):
        UnrolledNet(layers=())
    net = UnrolledNet.initial(2).with_vector([-1.0, -1.0, 0.3, 1.0, 0.5, 1.0])
    assert net.layers[0] == LayerParams(w1=W1_MIN, w2=0.0, w3=0.3)


def test_loss_examples():
    plant = scalar_plant()
    net = UnrolledNet.initial(1, rho0=1e300, gamma=0.0)
    K = np.array([[0.7]])
    out, _ = forward(net, plant, K)
    assert loss(net, [LabeledExample(plant=plant, K0=K, K_star=out.K)]) == 0.0
    assert loss(net, [LabeledExample(plant=plant, K0=K, K_star=out.K + 1.0)]) == pytest.approx(1.0)


def test_loss_matches_untuned_nmse_numerators(small_set):
    net = UnrolledNet.initial(4)
    outs = [forward(net, ex.plant, ex.K0)[0].K for ex in small_set]
    num = sum(float(np.sum((o - ex.K_star) ** 2)) for o, ex in zip(outs, small_set))
    assert loss(net, small_set) == pytest.approx(num, rel=1e-14)


@pytest.mark.parametrize("est, ref, expected", [
    ([np.eye(2)], [np.eye(2)], 0.0),
    ([2 * np.eye(2)], [np.eye(2)], 1.0),
    ([np.zeros((2, 2)), np.zeros((1, 3))], [np.eye(2), np.ones((1, 3))], 1.0),
])
def test_nmse_examples(est, ref, expected):
    assert nmse(est, ref) == pytest.approx(expected, abs=1e-15)


def test_nmse_errors():
    with pytest.raises(ZeroReference):
        nmse([np.eye(2)], [np.zeros((2, 2))])
    with pytest.raises(ValueError):
        nmse([np.eye(2)], [])


def test_nmse_by_depth_matches_truncated_nets(small_set):
    net = UnrolledNet.initial(5)
    curve = nmse_by_depth(net, small_set)
    refs = [ex.K_star for ex in small_set]
    for t in (1, 3, 5):
        outs = [forward(net.truncated(t), ex.plant, ex.K0)[0].K for ex in small_set]
        assert curve[t - 1] == pytest.approx(nmse(outs, refs), rel=1e-14)


def test_zero_epochs_returns_initial(small_set):
    net = UnrolledNet.initial(3)
    res = train(net, small_set, TrainOptions(epochs=0))
    assert res.net is net and res.final_loss == res.initial_loss


@pytest.mark.parametrize("method", ["spsa", "fd"])
def test_training_never_increases_loss(small_set, method):
    net = UnrolledNet.initial(3)
    res = train(net, small_set, TrainOptions(epochs=15, method=method, batch_size=2, seed=3))
    assert res.final_loss <= res.initial_loss
    assert loss(res.net, small_set) == res.final_loss
    assert all(p.w1 >= W1_MIN and p.w2 >= 0 for p in res.net.layers)


def test_training_is_deterministic(small_set):
    net = UnrolledNet.initial(3)
    opts = TrainOptions(epochs=10, seed=8, batch_size=2)
    a = train(net, small_set, opts)
    b = train(net, small_set, opts)
    np.testing.assert_array_equal(a.net.vector(), b.net.vector())


def test_recovers_generating_net():
    # targets are produced by a known 3-layer net; training starts 10% away
    rng = np.random.default_rng(0)
    truth = UnrolledNet(tuple(LayerParams(w1=rng.uniform(0.005, 0.02), w2=rng.uniform(0.01, 0.03),
                                          w3=rng.uniform(0.8, 1.2)) for _ in range(3)))
    data = []
    for _ in range(2):
        plant = perturbed_multiagent(2, rng, 0.3)
        K0 = lqr_gain(plant) + rng.standard_normal((4, 6))
        out, trace = forward(truth, plant, K0)
        assert not any(r.fallback for r in trace)
        data.append(LabeledExample(plant=plant, K0=K0, K_star=out.K))
    start = truth.with_vector(truth.vector() * (1 + 0.1 * rng.standard_normal(9)))
    res = train(start, data, TrainOptions(epochs=300, method="fd", step=0.05, spsa_perturb=1e-5))
    assert res.initial_loss > 1e-4
    assert res.final_loss <= 1e-6


def test_fd_depth_limit(small_set):
    with pytest.raises(ValueError):
        train(UnrolledNet.initial(11), small_set, TrainOptions(epochs=1, method="fd"))


def test_net_file_round_trip():
    net = UnrolledNet.initial(3, sparsity_op="block").with_vector(
        np.random.default_rng(2).uniform(0.1, 1, 9))
    assert net_from_dict(net_to_dict(net)) == net
    with pytest.raises(ParseError):
        net_from_dict({"l": 2, "layers": [{"w1": 1, "w2": 0, "w3": 1}]})
    with pytest.raises(ParseError):
        net_from_dict({"layers": []})
