"""Conditional GAN for stretching a handful of labelled sensing windows."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .nn import Adam, Dataset, DegenerateDatasetError, ShapeError, init_network


@dataclass(frozen=True)
class CGanConfig:
    noise_dim: int = 16
    hidden: tuple = (128, 128)
    leaky_slope: float = 0.2
    epochs: int = 3500
    batch_size: int = 10
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    init_range: float = 0.1
    # G always batch-normalises its hidden layers; without it in D training is
    # steadier on ~10 samples but generated spread shrinks
    discriminator_batch_norm: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be >= 1")


@dataclass
class SyntheticSample:
    features: np.ndarray
    label: bool   # True = ACK
    origin: str = "synthetic"


@dataclass
class CGan:
    generator: object
    discriminator: object
    cfg: CGanConfig
    n_features: int
    mean: np.ndarray
    scale: np.ndarray
    d_loss: list
    g_loss: list

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "d_loss", "g_loss"])
        for i, (d, g) in enumerate(zip(self.d_loss, self.g_loss)):
            w.writerow([i + 1, repr(float(d)), repr(float(g))])
        return buf.getvalue()


def _onehot(labels):
    labels = np.asarray(labels, dtype=bool)
    return np.stack([labels, ~labels], axis=1).astype(float)


def _bce_logit_grad(out, target):
    # sigmoid + binary cross entropy, batch mean
    return (out - target) / len(out)


def _bce(out, target):
    out = np.clip(out, 1e-12, 1 - 1e-12)
    return float(-(target * np.log(out) + (1 - target) * np.log(1 - out)).mean())


def train_cgan(real: Dataset, cfg: CGanConfig, rng) -> CGan:
    """Alternate discriminator and generator updates on label-conditioned data.

    D sees ``(x, onehot(y))`` and is trained to call real pairs real and
    generated pairs fake; G maximises ``log D(G(z, y), y)``.  Features are
    z-scored with statistics of ``real``.
    """
    if real.positive.all() or not real.positive.any():
        raise DegenerateDatasetError("conditional GAN needs both labels in the real set")
    k = real.n_features
    mean = real.X.mean(axis=0)
    std = real.X.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)
    Xr = (real.X - mean) / scale
    Yr = _onehot(real.positive)

    nb = len(cfg.hidden)
    G = init_network([cfg.noise_dim + 2, *cfg.hidden, k], "leaky_relu", rng, output="linear",
                     batch_norm=[True] * nb, leaky_slope=cfg.leaky_slope,
                     init_range=cfg.init_range)
    D = init_network([k + 2, *cfg.hidden, 1], "leaky_relu", rng, output="sigmoid",
                     batch_norm=[cfg.discriminator_batch_norm] * nb, leaky_slope=cfg.leaky_slope,
                     init_range=cfg.init_range)
    opt_g = Adam(G.param_arrays(), cfg.learning_rate, cfg.beta1, cfg.beta2)
    opt_d = Adam(D.param_arrays(), cfg.learning_rate, cfg.beta1, cfg.beta2)
    n = len(real)
    bs = min(cfg.batch_size, n)
    d_trace, g_trace = [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        d_tot = g_tot = 0.0
        n_batches = 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            m = len(idx)
            if m < 2:
                continue
            y = Yr[idx]
            # discriminator: real pairs -> 1, generated pairs -> 0.  Real and
            # fake rows share one batch so that, with batch norm in D, its
            # statistics cannot separate them on their own.
            real_in = np.hstack([Xr[idx], y])
            z = rng.standard_normal((m, cfg.noise_dim))
            fake, _ = G._forward(np.hstack([z, y]), train=True)
            target = np.r_[np.ones((m, 1)), np.zeros((m, 1))]
            out_d, cache = D._forward(np.vstack([real_in, np.hstack([fake, y])]), train=True)
            grads_d, _ = D._backward(cache, 2 * _bce_logit_grad(out_d, target))
            opt_d.step(D.param_arrays(), grads_d)
            d_tot += 2 * _bce(out_d, target)
            # generator: non-saturating loss -log D(G(z, y), y) on the fake rows
            z = rng.standard_normal((m, cfg.noise_dim))
            g_in = np.hstack([z, y])
            fake, cache_g = G._forward(g_in, train=True)
            out, cache_d = D._forward(np.vstack([real_in, np.hstack([fake, y])]), train=True)
            dout = np.zeros_like(out)
            dout[m:] = _bce_logit_grad(out[m:], np.ones((m, 1)))
            _, dx = D._backward(cache_d, dout)
            grads_g, _ = G._backward(cache_g, dx[m:, :k])
            opt_g.step(G.param_arrays(), grads_g)
            G.update_running_stats(g_in)
            g_tot += _bce(out[m:], np.ones((m, 1)))
            n_batches += 1
        d_trace.append(d_tot / max(n_batches, 1))
        g_trace.append(g_tot / max(n_batches, 1))
    return CGan(G, D, cfg, k, mean, scale, d_trace, g_trace)


def generate_features(gan: CGan, label: bool, n: int, rng) -> np.ndarray:
    if n <= 0:
        return np.empty((0, gan.n_features))
    z = rng.standard_normal((n, gan.cfg.noise_dim))
    y = _onehot(np.full(n, bool(label)))
    out, _ = gan.generator._forward(np.hstack([z, y]), train=False)
    return np.maximum(out * gan.scale + gan.mean, 0.0)


def generate_synthetic(gan: CGan, label: bool, n: int, rng):
    """``n`` samples of class ``label`` on the RSSI scale, clamped at zero."""
    return [SyntheticSample(x, bool(label)) for x in generate_features(gan, label, n, rng)]


def synthesize_like(gan: CGan, real: Dataset, n: int, rng):
    """``n`` synthetic samples split between labels in the real ACK ratio."""
    n_ack = int(round(n * real.positive.mean()))
    return (generate_synthetic(gan, True, n_ack, rng)
            + generate_synthetic(gan, False, n - n_ack, rng))


def augment_dataset(real: Dataset, synthetic) -> Dataset:
    synthetic = list(synthetic)
    if not synthetic:
        return Dataset(real.X.copy(), real.positive.copy())
    X = np.array([s.features for s in synthetic], dtype=float)
    if X.shape[1] != real.n_features:
        raise ShapeError(f"synthetic samples have {X.shape[1]} features, real {real.n_features}")
    y = np.array([s.label for s in synthetic], dtype=bool)
    return Dataset.concat([real, Dataset(X, y)])
