"""Small feedforward networks written directly on numpy.

Used for the transmitter's and jammer's classifiers (softmax output over two
classes) and for both halves of the conditional GAN (batch-normalised hidden
layers, sigmoid or linear output).

Score convention: a classifier's *score* is the softmax probability of class
1, the "negative" event (busy channel, no ACK).  A sample is predicted
positive (idle / ACK) when its score is at or below the decision threshold.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
ACTIVATIONS = ("sigmoid", "tanh", "leaky_relu", "relu", "linear")
OUTPUTS = ("softmax", "sigmoid", "linear")
BN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class DegenerateDatasetError(ValueError):
    pass


class UntrainedError(RuntimeError):
    pass


# -- activations ------------------------------------------------------------

def _act(name, z, slope):
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if name == "tanh":
        return np.tanh(z)
    if name == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a, slope):
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, slope)
    if name == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- data -------------------------------------------------------------------

@dataclass
class Dataset:
    """Feature matrix plus boolean ``positive`` labels (idle / ACK)."""

    X: np.ndarray
    positive: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.positive = np.asarray(self.positive, dtype=bool).reshape(-1)
        if len(self.X) != len(self.positive):
            raise ShapeError("features and labels differ in length")

    def __len__(self):
        return len(self.positive)

    @property
    def n_features(self):
        return self.X.shape[1]

    def split_half(self):
        h = len(self) // 2
        return Dataset(self.X[:h], self.positive[:h]), Dataset(self.X[h:], self.positive[h:])

    def subset(self, idx):
        return Dataset(self.X[idx], self.positive[idx])

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        return cls(np.vstack([p.X for p in parts]), np.concatenate([p.positive for p in parts]))


# -- network ----------------------------------------------------------------

@dataclass
class MlpNetwork:
    layer_sizes: list
    activations: list
    weights: list
    biases: list
    output: str = "softmax"
    batch_norm: list = field(default_factory=list)
    leaky_slope: float = 0.01
    bn_gamma: list = field(default_factory=list)
    bn_beta: list = field(default_factory=list)
    bn_mean: list = field(default_factory=list)
    bn_var: list = field(default_factory=list)
    norm_mean: np.ndarray | None = None
    norm_scale: np.ndarray | None = None
    threshold: float | None = None
    loss_history: list = field(default_factory=list)

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_params(self):
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    @property
    def normalizer_fitted(self):
        return self.norm_mean is not None

    def param_arrays(self):
        """Trainable arrays in a fixed order (shared with gradient lists)."""
        out = []
        for i in range(len(self.weights)):
            out += [self.weights[i], self.biases[i]]
        for g, b in zip(self.bn_gamma, self.bn_beta):
            out += [g, b]
        return out

    def fit_normalizer(self, X):
        self.norm_mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.norm_scale = np.where(std > 1e-12, std, 1.0)

    def normalize(self, X):
        if self.norm_mean is None:
            return X
        return (X - self.norm_mean) / self.norm_scale

    # forward / backward work on already-normalised input
    def _forward(self, X, train=False):
        a = X
        cache = []
        n_hidden = len(self.weights) - 1
        for i in range(n_hidden):
            z = a @ self.weights[i] + self.biases[i]
            bn = None
            if self.batch_norm[i]:
                k = sum(self.batch_norm[:i])
                if train:
                    mu, var = z.mean(axis=0), z.var(axis=0)
                else:
                    mu, var = self.bn_mean[k], self.bn_var[k]
                zhat = (z - mu) / np.sqrt(var + BN_EPS)
                bn = (k, zhat, var, mu)
                u = self.bn_gamma[k] * zhat + self.bn_beta[k]
            else:
                u = z
            h = _act(self.activations[i], u, self.leaky_slope)
            cache.append((a, u, h, bn))
            a = h
        z = a @ self.weights[-1] + self.biases[-1]
        if self.output == "softmax":
            out = softmax(z)
        elif self.output == "sigmoid":
            out = _act("sigmoid", z, 0.0)
        else:
            out = z
        cache.append((a, z, out, None))
        return out, cache

    def _backward(self, cache, dz_out):
        """Gradients of the loss given its gradient w.r.t. the output logits."""
        n_hidden = len(self.weights) - 1
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        gg = [None] * len(self.bn_gamma)
        gbeta = [None] * len(self.bn_beta)
        a_prev = cache[-1][0]
        gW[-1] = a_prev.T @ dz_out
        gb[-1] = dz_out.sum(axis=0)
        da = dz_out @ self.weights[-1].T
        for i in range(n_hidden - 1, -1, -1):
            a_in, u, h, bn = cache[i]
            du = da * _act_grad(self.activations[i], u, h, self.leaky_slope)
            if bn is not None:
                k, zhat, var, _ = bn
                gg[k] = (du * zhat).sum(axis=0)
                gbeta[k] = du.sum(axis=0)
                dzhat = du * self.bn_gamma[k]
                m = len(zhat)
                dz = (m * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0)) \
                    / (m * np.sqrt(var + BN_EPS))
            else:
                dz = du
            gW[i] = a_in.T @ dz
            gb[i] = dz.sum(axis=0)
            da = dz @ self.weights[i].T
        grads = []
        for i in range(len(self.weights)):
            grads += [gW[i], gb[i]]
        for g, b in zip(gg, gbeta):
            grads += [g, b]
        return grads, da

    def update_running_stats(self, X, momentum=0.9):
        """Refresh batch-norm running averages from a (normalised) batch."""
        _, cache = self._forward(X, train=True)
        for i, (_, _, _, bn) in enumerate(cache[:-1]):
            if bn is not None:
                k, _, var, mu = bn
                self.bn_mean[k] = momentum * self.bn_mean[k] + (1 - momentum) * mu
                self.bn_var[k] = momentum * self.bn_var[k] + (1 - momentum) * var

    def scores(self, X):
        """Class-1 probabilities for a batch of raw feature vectors."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_inputs:
            raise ShapeError(f"expected {self.n_inputs} features, got {X.shape[1]}")
        out, _ = self._forward(self.normalize(X))
        return out[:, 1] if self.output == "softmax" else out[:, 0]

    def predict_positive(self, X):
        if self.threshold is None:
            raise UntrainedError("classifier has no decision threshold")
        return self.scores(X) <= self.threshold


def init_network(layer_sizes, activations, rng, output="softmax", batch_norm=None,
                 leaky_slope=0.01, init_range=1.0):
    """Network with every weight and bias drawn uniformly from [-1, 1]."""
    layer_sizes = [int(s) for s in layer_sizes]
    if len(layer_sizes) < 3 or min(layer_sizes) < 1:
        raise ConfigError(f"need input, >=1 hidden and output layer, got {layer_sizes}")
    n_hidden = len(layer_sizes) - 2
    if isinstance(activations, str):
        activations = [activations] * n_hidden
    activations = list(activations)
    if len(activations) != n_hidden or any(a not in ACTIVATIONS for a in activations):
        raise ConfigError(f"bad activations {activations} for {n_hidden} hidden layers")
    if output not in OUTPUTS:
        raise ConfigError(f"unknown output {output!r}")
    if output == "softmax" and layer_sizes[-1] != 2:
        raise ConfigError("softmax classifiers have exactly two outputs")
    batch_norm = list(batch_norm) if batch_norm is not None else [False] * n_hidden
    if len(batch_norm) != n_hidden:
        raise ConfigError("batch_norm needs one flag per hidden layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.uniform(-init_range, init_range, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-init_range, init_range, size=fan_out))
    bn_widths = [w for w, on in zip(layer_sizes[1:-1], batch_norm) if on]
    return MlpNetwork(
        layer_sizes=layer_sizes, activations=activations, weights=weights, biases=biases,
        output=output, batch_norm=batch_norm, leaky_slope=leaky_slope,
        bn_gamma=[np.ones(w) for w in bn_widths], bn_beta=[np.zeros(w) for w in bn_widths],
        bn_mean=[np.zeros(w) for w in bn_widths], bn_var=[np.ones(w) for w in bn_widths],
    )


def forward(net: MlpNetwork, x):
    """Score of a single feature vector (or a batch) under ``net``."""
    x = np.asarray(x, dtype=float)
    s = net.scores(x)
    return float(s[0]) if x.ndim == 1 else s


# -- loss -------------------------------------------------------------------

def cross_entropy(out, target):
    """Summed per-output binary cross entropy, averaged over the batch."""
    Y = np.eye(out.shape[1])[target]
    a = np.clip(out, 1e-300, None)
    b = np.clip(1.0 - out, 1e-300, None)
    return float(-(Y * np.log(a) + (1 - Y) * np.log(b)).sum(axis=1).mean())


def _cross_entropy_logit_grad(out, target):
    Y = np.eye(out.shape[1])[target]
    da = (-Y / np.clip(out, 1e-300, None) + (1 - Y) / np.clip(1.0 - out, 1e-300, None)) / len(out)
    # softmax Jacobian-vector product
    return out * (da - (out * da).sum(axis=1, keepdims=True))


def loss_and_grads(net, Xn, target):
    out, cache = net._forward(Xn, train=any(net.batch_norm))
    grads, _ = net._backward(cache, _cross_entropy_logit_grad(out, target))
    return cross_entropy(out, target), grads


# -- optimisers -------------------------------------------------------------

@dataclass
class TrainConfig:
    minibatch_size: int = 25
    momentum: float = 0.9
    epochs_per_round: int = 10
    total_epochs: int = 200
    learning_rate: float = 0.1
    optimizer: str = "momentum"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class Momentum:
    def __init__(self, params, lr, mu):
        self.lr, self.mu = lr, mu
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, v in zip(params, grads, self.v):
            v *= self.mu
            v -= self.lr * g
            p += v


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(net, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(net.param_arrays(), cfg.learning_rate, cfg.adam_beta1,
                    cfg.adam_beta2, cfg.adam_eps)
    return Momentum(net.param_arrays(), cfg.learning_rate, cfg.momentum)


def _compiled_ok(net, cfg):
    return (cfg.optimizer == "momentum" and net.output == "softmax"
            and not any(net.batch_norm))


def train(net: MlpNetwork, data: Dataset, cfg: TrainConfig, rng, epochs=None,
          backend="auto"):
    """Minibatch backprop on the summed cross entropy.

    The input normaliser is fitted on the first call only; later calls
    (further rounds) keep it.  Per-epoch mean loss is appended to
    ``net.loss_history``.  Plain momentum-trained classifiers go through a
    compiled loop unless ``backend="numpy"``; both give the same updates.
    """
    if len(data) == 0:
        raise DegenerateDatasetError("empty training set")
    if data.positive.all() or not data.positive.any():
        raise DegenerateDatasetError("training data contains a single class")
    if data.n_features != net.n_inputs:
        raise ShapeError(f"expected {net.n_inputs} features, got {data.n_features}")
    if not net.normalizer_fitted:
        net.fit_normalizer(data.X)
    Xn = net.normalize(data.X)
    target = (~data.positive).astype(int)
    n = len(data)
    bs = cfg.minibatch_size
    epochs = cfg.total_epochs if epochs is None else epochs
    if backend == "auto" and _compiled_ok(net, cfg):
        from . import _fastnn
        perms = np.array([rng.permutation(n) for _ in range(epochs)], dtype=np.int64)
        perms = perms.reshape(epochs, n)
        losses = _fastnn.run(net, Xn, target, perms, bs, cfg.learning_rate, cfg.momentum)
        net.loss_history.extend(losses.tolist())
        return net
    opt = make_optimizer(net, cfg)
    params = net.param_arrays()
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = loss_and_grads(net, Xn[idx], target[idx])
            opt.step(params, grads)
            total += loss * len(idx)
        net.loss_history.append(total / n)
    return net


def gradient_check(net: MlpNetwork, X, target, eps=1e-5):
    """Largest relative gap between backprop and central finite differences.

    ``X`` is taken as already normalised; ``target`` holds class indices.
    """
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=int)
    _, analytic = loss_and_grads(net, X, target)
    worst = 0.0
    for p, g in zip(net.param_arrays(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            up = cross_entropy(net._forward(X, train=any(net.batch_norm))[0], target)
            flat[j] = old - eps
            down = cross_entropy(net._forward(X, train=any(net.batch_norm))[0], target)
            flat[j] = old
            num = (up - down) / (2 * eps)
            denom = max(abs(num), abs(gflat[j]), 1e-6)
            worst = max(worst, abs(num - gflat[j]) / denom)
    return worst


# -- thresholds and model selection -----------------------------------------

def classification_errors(scores, positive, threshold):
    """(e_MD, e_FA) when ``score <= threshold`` predicts the positive class."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    pred = scores <= threshold
    n_pos, n_neg = positive.sum(), (~positive).sum()
    e_md = float((positive & ~pred).sum() / n_pos) if n_pos else float("nan")
    e_fa = float((~positive & pred).sum() / n_neg) if n_neg else float("nan")
    return e_md, e_fa


def select_threshold(scores, positive):
    """Midpoint threshold minimising max(e_MD, e_FA); smallest one on ties."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDatasetError("threshold selection needs both classes")
    values = np.unique(scores)
    if len(values) == 1:
        return float(values[0])
    cands = 0.5 * (values[:-1] + values[1:])
    pos_sorted = np.sort(scores[positive])
    neg_sorted = np.sort(scores[~positive])
    # positives above the threshold are misses, negatives at/below are false alarms
    e_md = (n_pos - np.searchsorted(pos_sorted, cands, side="right")) / n_pos
    e_fa = np.searchsorted(neg_sorted, cands, side="right") / n_neg
    worst = np.maximum(e_md, e_fa)
    return float(cands[int(np.argmin(worst))])


@dataclass(frozen=True)
class HyperParams:
    hidden_layers: int
    neurons: int
    activation: str

    def layer_sizes(self, n_in):
        return [n_in] + [self.neurons] * self.hidden_layers + [2]

    def n_params(self, n_in):
        sizes = self.layer_sizes(n_in)
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def default_grid():
    return [HyperParams(h, n, a) for h, n, a in
            itertools.product((1, 2), range(20, 101, 10), ("sigmoid", "tanh"))]


@dataclass
class TuningResult:
    config: HyperParams
    max_error: float
    e_md: float
    e_fa: float
    threshold: float


def fit_classifier(hp: HyperParams, train_set: Dataset, cfg: TrainConfig, rng,
                   threshold_set: Dataset | None = None):
    """Train one candidate and set its threshold on ``threshold_set``."""
    net = init_network(hp.layer_sizes(train_set.n_features), hp.activation, rng)
    train(net, train_set, cfg, rng)
    tset = threshold_set if threshold_set is not None else train_set
    net.threshold = select_threshold(net.scores(tset.X), tset.positive)
    return net


def tune_hyperparameters(train_set: Dataset, val_set: Dataset, grid, rng,
                         cfg: TrainConfig | None = None):
    """Grid search on max(e_MD, e_FA) over the validation split.

    Returns ``(best_net, best_config, results)``.  Each candidate draws from
    its own child generator so results do not depend on evaluation order.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("empty hyperparameter grid")
    cfg = cfg or TrainConfig()
    children = rng.spawn(len(grid))
    best = None
    results = []
    for order, (hp, child) in enumerate(zip(grid, children)):
        if isinstance(hp, MlpNetwork):
            net = hp
            net.threshold = select_threshold(net.scores(val_set.X), val_set.positive)
            size = net.n_params
        else:
            net = fit_classifier(hp, train_set, cfg, child, val_set)
            size = hp.n_params(train_set.n_features)
        md, fa = classification_errors(net.scores(val_set.X), val_set.positive, net.threshold)
        worst = max(md, fa)
        results.append(TuningResult(hp, worst, md, fa, net.threshold))
        key = (worst, size, order)
        if best is None or key < best[0]:
            best = (key, net, hp)
    return best[1], best[2], results


# -- persistence ------------------------------------------------------------

def _list(a):
    return None if a is None else np.asarray(a, dtype=float).reshape(-1).tolist()


def network_to_dict(net: MlpNetwork):
    return {
        "format": "jamsim-mlp",
        "version": FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activations": net.activations,
        "output": net.output,
        "batch_norm": net.batch_norm,
        "leaky_slope": net.leaky_slope,
        "normalizer": None if net.norm_mean is None else
        {"mean": _list(net.norm_mean), "scale": _list(net.norm_scale)},
        "weights": [_list(w) for w in net.weights],
        "biases": [_list(b) for b in net.biases],
        "bn": {k: [_list(a) for a in getattr(net, f"bn_{k}")]
               for k in ("gamma", "beta", "mean", "var")},
        "threshold": net.threshold,
    }


def network_from_dict(d):
    if d.get("format") != "jamsim-mlp" or d.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported network file (format={d.get('format')}, "
                          f"version={d.get('version')})")
    sizes = d["layer_sizes"]
    weights = [np.array(w).reshape(a, b) for w, a, b in zip(d["weights"], sizes[:-1], sizes[1:])]
    net = MlpNetwork(
        layer_sizes=sizes, activations=d["activations"], weights=weights,
        biases=[np.array(b) for b in d["biases"]], output=d["output"],
        batch_norm=d["batch_norm"], leaky_slope=d["leaky_slope"],
        bn_gamma=[np.array(a) for a in d["bn"]["gamma"]],
        bn_beta=[np.array(a) for a in d["bn"]["beta"]],
        bn_mean=[np.array(a) for a in d["bn"]["mean"]],
        bn_var=[np.array(a) for a in d["bn"]["var"]],
        threshold=d["threshold"],
    )
    if d["normalizer"] is not None:
        net.norm_mean = np.array(d["normalizer"]["mean"])
        net.norm_scale = np.array(d["normalizer"]["scale"])
    return net


def save_network(net: MlpNetwork, path):
    with open(path, "w") as f:
        json.dump(network_to_dict(net), f, indent=1)
        f.write("\n")


def load_network(path):
    with open(path) as f:
        return network_from_dict(json.load(f))

