import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamsim.nn import (ConfigError, Dataset, DegenerateDatasetError, HyperParams,
                       ShapeError, TrainConfig, UntrainedError, classification_errors,
                       cross_entropy, default_grid, forward, gradient_check, init_network,
                       load_network, network_from_dict, network_to_dict, save_network,
                       select_threshold, softmax, train, tune_hyperparameters)


def brute_threshold(scores, positive):
    """Independent oracle: loop over every midpoint in increasing order."""
    vals = sorted(set(float(s) for s in scores))
    if len(vals) == 1:
        return vals[0]
    best, best_t = None, None
    n_pos = sum(positive)
    n_neg = len(positive) - n_pos
    for lo, hi in zip(vals, vals[1:]):
        t = 0.5 * (lo + hi)
        md = sum(1 for s, p in zip(scores, positive) if p and s > t) / n_pos
        fa = sum(1 for s, p in zip(scores, positive) if not p and s <= t) / n_neg
        if best is None or max(md, fa) < best:
            best, best_t = max(md, fa), t
    return best_t


def toy_data(seed, n=200, k=10):
    rng = np.random.default_rng(seed)
    pos = rng.random(n) < 0.6
    X = rng.normal(size=(n, k)) + np.where(pos, 0.0, 1.5)[:, None]
    return Dataset(X, pos)


# -- init / forward ---------------------------------------------------------

def test_init_param_count_and_range():
    net = init_network([10, 100, 2], "sigmoid", np.random.default_rng(0))
    assert net.n_params == 1302
    assert max(np.abs(p).max() for p in net.param_arrays()) <= 1.0
    assert not net.normalizer_fitted


def test_init_deterministic():
    a = init_network([10, 30, 30, 2], "tanh", np.random.default_rng(4))
    b = init_network([10, 30, 30, 2], "tanh", np.random.default_rng(4))
    for p, q in zip(a.param_arrays(), b.param_arrays()):
        assert np.array_equal(p, q)


def test_init_rejects_bad_specs():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        init_network([], "tanh", rng)
    with pytest.raises(ConfigError):
        init_network([10, 2], "tanh", rng)
    with pytest.raises(ConfigError):
        init_network([10, 5, 2], "softsign", rng)


def test_zero_net_scores_half():
    net = init_network([3, 4, 2], "tanh", np.random.default_rng(0))
    for p in net.param_arrays():
        p[...] = 0.0
    assert forward(net, np.array([1.0, -2.0, 3.0])) == 0.5


def test_forward_shape_error():
    net = init_network([3, 4, 2], "tanh", np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(net, np.ones(4))


def test_hand_computed_two_two_two_net():
    net = init_network([2, 2, 2], "tanh", np.random.default_rng(0))
    W1 = np.array([[0.5, -0.3], [0.2, 0.8]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[1.0, -1.0], [0.4, 0.6]])
    b2 = np.array([0.05, -0.05])
    net.weights = [W1, W2]
    net.biases = [b1, b2]
    x = np.array([0.7, -1.2])
    # manual arithmetic, element by element
    h0 = np.tanh(0.7 * 0.5 + -1.2 * 0.2 + 0.1)
    h1 = np.tanh(0.7 * -0.3 + -1.2 * 0.8 - 0.2)
    z0 = h0 * 1.0 + h1 * 0.4 + 0.05
    z1 = h0 * -1.0 + h1 * 0.6 - 0.05
    p1 = np.exp(z1) / (np.exp(z0) + np.exp(z1))
    assert forward(net, x) == pytest.approx(p1, abs=1e-12)


def test_softmax_normalization_many_random_nets():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        net = init_network([10, int(rng.integers(1, 40)), 2],
                           str(rng.choice(["sigmoid", "tanh", "leaky_relu"])), rng)
        # inputs on the normalised scale stay strictly inside (0, 1); wilder
        # inputs may saturate a class to exactly 1.0 but must still sum to 1
        out, _ = net._forward(rng.normal(size=(50, 10)))
        assert np.all((out > 0) & (out < 1))
        wild, _ = net._forward(rng.normal(scale=20, size=(50, 10)))
        assert np.all((wild >= 0) & (wild <= 1))
        worst = max(worst, np.abs(out.sum(axis=1) - 1).max(), np.abs(wild.sum(axis=1) - 1).max())
    assert worst <= 1e-9


@given(st.lists(st.floats(-700, 700), min_size=2, max_size=2))
def test_softmax_extreme_logits(z):
    p = softmax(np.array([z]))
    assert abs(p.sum() - 1) <= 1e-9


# -- gradients --------------------------------------------------------------

@pytest.mark.parametrize("act", ["sigmoid", "tanh", "leaky_relu"])
@pytest.mark.parametrize("layers", [[10, 20, 2], [10, 12, 8, 2]])
def test_gradient_check_all_activations(act, layers):
    rng = np.random.default_rng(2)
    net = init_network(layers, act, rng)
    X = rng.normal(size=(200, 10))
    if act == "leaky_relu":
        # keep every pre-activation away from the kink
        a, near = X, np.zeros(len(X), bool)
        for W, b in zip(net.weights[:-1], net.biases[:-1]):
            z = a @ W + b
            near |= (np.abs(z) < 1e-3).any(axis=1)
            a = np.where(z > 0, z, net.leaky_slope * z)
        X = X[~near]
    X = X[:25]
    y = rng.integers(0, 2, len(X))
    assert gradient_check(net, X, y) < 1e-4


def test_gradient_check_batch_norm():
    rng = np.random.default_rng(3)
    net = init_network([10, 12, 9, 2], "tanh", rng, batch_norm=[True, True])
    X = rng.normal(size=(25, 10))
    y = rng.integers(0, 2, 25)
    assert gradient_check(net, X, y) < 1e-4


def test_gradient_check_zero_net():
    net = init_network([10, 20, 2], "sigmoid", np.random.default_rng(0))
    for p in net.param_arrays():
        p[...] = 0.0
    X = np.random.default_rng(1).normal(size=(25, 10))
    assert gradient_check(net, X, np.r_[np.zeros(12, int), np.ones(13, int)]) < 1e-4


def test_cross_entropy_value():
    out = np.array([[0.8, 0.2]])
    assert cross_entropy(out, np.array([0])) == pytest.approx(-2 * np.log(0.8))


# -- training ---------------------------------------------------------------

def test_xor_learned():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    pos = np.array([True, False, False, True])
    rng = np.random.default_rng(0)
    net = init_network([2, 8, 2], "tanh", rng)
    train(net, Dataset(X, pos), TrainConfig(minibatch_size=4), rng, epochs=2000)
    assert np.array_equal(net.scores(X) <= 0.5, pos)


def test_loss_decreases_on_separable_data():
    rng = np.random.default_rng(1)
    x = np.r_[rng.uniform(0, 1, 50), rng.uniform(2, 3, 50)][:, None]
    pos = np.r_[np.ones(50, bool), np.zeros(50, bool)]
    net = init_network([1, 10, 2], "sigmoid", rng)
    train(net, Dataset(x, pos), TrainConfig(), rng, epochs=50)
    assert net.loss_history[-1] < net.loss_history[0]


@pytest.mark.parametrize("act", ["sigmoid", "tanh"])
def test_compiled_and_numpy_paths_agree(act):
    data = toy_data(5)
    nets = []
    for backend in ("auto", "numpy"):
        rng = np.random.default_rng(9)
        net = init_network([10, 20, 20, 2], act, rng)
        train(net, data, TrainConfig(), rng, epochs=20, backend=backend)
        nets.append(net)
    for p, q in zip(nets[0].param_arrays(), nets[1].param_arrays()):
        assert np.allclose(p, q, rtol=0, atol=1e-8)


def test_train_is_deterministic():
    data = toy_data(6)
    params = []
    for _ in range(2):
        rng = np.random.default_rng(3)
        net = init_network([10, 30, 2], "tanh", rng)
        train(net, data, TrainConfig(), rng, epochs=15)
        params.append(net.param_arrays())
    for p, q in zip(*params):
        assert np.array_equal(p, q)


def test_adam_training_runs():
    data = toy_data(2)
    rng = np.random.default_rng(0)
    net = init_network([10, 20, 2], "tanh", rng)
    train(net, data, TrainConfig(optimizer="adam", learning_rate=1e-2), rng, epochs=30)
    assert net.loss_history[-1] < net.loss_history[0]


def test_normalizer_fitted_once():
    data = toy_data(3)
    rng = np.random.default_rng(0)
    net = init_network([10, 20, 2], "tanh", rng)
    train(net, data, TrainConfig(), rng, epochs=10)
    mean, scale = net.norm_mean.copy(), net.norm_scale.copy()
    shifted = Dataset(data.X * 3 + 7, data.positive)
    train(net, shifted, TrainConfig(), rng, epochs=10)
    assert np.array_equal(net.norm_mean, mean) and np.array_equal(net.norm_scale, scale)


def test_degenerate_training_data():
    rng = np.random.default_rng(0)
    net = init_network([2, 4, 2], "tanh", rng)
    with pytest.raises(DegenerateDatasetError):
        train(net, Dataset(np.ones((5, 2)), np.ones(5, bool)), TrainConfig(), rng)
    with pytest.raises(DegenerateDatasetError):
        train(net, Dataset(np.ones((0, 2)), np.ones(0, bool)), TrainConfig(), rng)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(minibatch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)


# -- thresholds -------------------------------------------------------------

def test_threshold_examples():
    assert select_threshold([0.1, 0.2, 0.6, 0.9], [True, True, False, False]) == pytest.approx(0.4)
    t = select_threshold([0.1, 0.2, 0.8, 0.9], [True, True, False, False])
    assert classification_errors([0.1, 0.2, 0.8, 0.9], [True, True, False, False], t) == (0, 0)
    with pytest.raises(DegenerateDatasetError):
        select_threshold([0.1, 0.2], [True, True])


def test_threshold_matches_oracle_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(100):
        n = int(rng.integers(4, 200))
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        pos = rng.random(n) < rng.uniform(0.2, 0.8)
        pos[0], pos[1] = True, False
        assert select_threshold(scores, pos) == brute_threshold(list(scores), list(pos))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=60))
def test_threshold_is_optimal(pairs):
    scores = [s for s, _ in pairs]
    pos = [p for _, p in pairs]
    if all(pos) or not any(pos):
        return
    t = select_threshold(scores, pos)
    best = max(classification_errors(scores, pos, t))
    for c in set(scores):
        assert best <= max(classification_errors(scores, pos, c)) + 1e-12


def test_untrained_predict_raises():
    net = init_network([2, 3, 2], "tanh", np.random.default_rng(0))
    with pytest.raises(UntrainedError):
        net.predict_positive(np.ones((1, 2)))


# -- tuning -----------------------------------------------------------------

def test_default_grid_shape():
    g = default_grid()
    assert len(g) == 2 * 9 * 2
    assert HyperParams(2, 50, "tanh") in g


def test_single_config_grid():
    tr, va = toy_data(1).split_half()
    net, hp, res = tune_hyperparameters(tr, va, [HyperParams(1, 20, "tanh")],
                                        np.random.default_rng(0))
    assert hp == HyperParams(1, 20, "tanh") and len(res) == 1


def test_injected_perfect_classifier_selected():
    rng = np.random.default_rng(0)
    tr, va = toy_data(2).split_half()
    oracle = init_network([10, 1, 2], "linear", rng)
    # scores 1 exactly on the validation negatives: perfect separation
    oracle.scores = lambda X, labels=None: np.isin(
        np.round(X[:, 0], 12), np.round(va.X[~va.positive, 0], 12)).astype(float)
    grid = [HyperParams(1, 20, "sigmoid"), oracle]
    net, hp, res = tune_hyperparameters(tr, va, grid, rng)
    assert hp is oracle
    assert res[1].max_error == 0


def test_tuning_picks_grid_minimum_and_is_order_independent():
    tr, va = toy_data(4).split_half()
    grid = [HyperParams(h, n, a) for h, n, a in
            itertools.product((1, 2), (20, 40), ("sigmoid", "tanh"))]
    net, hp, res = tune_hyperparameters(tr, va, grid, np.random.default_rng(7))
    best = min(r.max_error for r in res)
    assert max(classification_errors(net.scores(va.X), va.positive, net.threshold)) == best
    # candidates own their generators, so a rerun reproduces every result
    _, hp2, res2 = tune_hyperparameters(tr, va, grid, np.random.default_rng(7))
    assert hp2 == hp and [r.max_error for r in res2] == [r.max_error for r in res]


# -- persistence ------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    data = toy_data(8)
    rng = np.random.default_rng(0)
    net = init_network([10, 20, 2], "tanh", rng)
    train(net, data, TrainConfig(), rng, epochs=5)
    net.threshold = 0.25
    path = tmp_path / "net.json"
    save_network(net, path)
    back = load_network(path)
    assert np.array_equal(back.scores(data.X), net.scores(data.X))
    assert back.threshold == 0.25
    assert network_to_dict(network_from_dict(network_to_dict(net))) == network_to_dict(net)
