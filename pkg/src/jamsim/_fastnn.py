"""Compiled momentum-SGD loop for plain softmax classifiers.

Mirrors ``nn.train`` step for step (same permutations, same update order) for
networks without batch norm.  Activation codes follow ``CODES``.
"""

import numpy as np
from numba import njit
from numba.typed import List

CODES = {"sigmoid": 0, "tanh": 1, "leaky_relu": 2, "relu": 3, "linear": 4}


@njit(cache=True)
def _act(code, z, slope):
    if code == 0:
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if code == 1:
        return np.tanh(z)
    if code == 2:
        return np.where(z > 0, z, slope * z)
    if code == 3:
        return np.maximum(z, 0.0)
    return z.copy()


@njit(cache=True)
def _act_grad(code, z, a, slope):
    if code == 0:
        return a * (1.0 - a)
    if code == 1:
        return 1.0 - a * a
    if code == 2:
        return np.where(z > 0, 1.0, slope)
    if code == 3:
        return np.where(z > 0, 1.0, 0.0)
    return np.ones_like(z)


@njit(cache=True)
def train_momentum(Ws, bs, codes, slope, Xn, target, perms, batch, lr, mu, losses):
    L = len(Ws)
    vW = List()
    vb = List()
    for i in range(L):
        vW.append(np.zeros_like(Ws[i]))
        vb.append(np.zeros_like(bs[i]))
    n = Xn.shape[0]
    for ep in range(perms.shape[0]):
        total = 0.0
        for start in range(0, n, batch):
            stop = min(start + batch, n)
            idx = perms[ep, start:stop]
            m = stop - start
            x = np.empty((m, Xn.shape[1]))
            for r in range(m):
                x[r] = Xn[idx[r]]
            acts = List()
            pre = List()
            acts.append(x)
            a = x
            for i in range(L - 1):
                z = a @ Ws[i] + bs[i]
                h = _act(codes[i], z, slope)
                pre.append(z)
                acts.append(h)
                a = h
            z = a @ Ws[L - 1] + bs[L - 1]
            zmax = np.empty(m)
            for r in range(m):
                zmax[r] = max(z[r, 0], z[r, 1])
            out = np.empty_like(z)
            for r in range(m):
                e0 = np.exp(z[r, 0] - zmax[r])
                e1 = np.exp(z[r, 1] - zmax[r])
                out[r, 0] = e0 / (e0 + e1)
                out[r, 1] = e1 / (e0 + e1)
            # summed binary cross entropy over both outputs, batch mean
            dz = np.empty_like(z)
            loss = 0.0
            for r in range(m):
                s = 0.0
                for k in range(2):
                    y = 1.0 if target[idx[r]] == k else 0.0
                    p = max(out[r, k], 1e-300)
                    q = max(1.0 - out[r, k], 1e-300)
                    loss -= y * np.log(p) + (1.0 - y) * np.log(q)
                    dz[r, k] = (-y / p + (1.0 - y) / q) / m
                    s += out[r, k] * dz[r, k]
                for k in range(2):
                    dz[r, k] = out[r, k] * (dz[r, k] - s)
            total += loss
            g = dz
            for i in range(L - 1, -1, -1):
                gW = acts[i].T @ g
                gb = np.sum(g, axis=0)
                if i > 0:
                    da = g @ Ws[i].T
                    g = da * _act_grad(codes[i - 1], pre[i - 1], acts[i], slope)
                vW[i] *= mu
                vW[i] -= lr * gW
                Ws[i] += vW[i]
                vb[i] *= mu
                vb[i] -= lr * gb
                bs[i] += vb[i]
        losses[ep] = total / n


def run(net, Xn, target, perms, batch, lr, mu):
    Ws = List([np.ascontiguousarray(w) for w in net.weights])
    bs = List([np.ascontiguousarray(b) for b in net.biases])
    codes = np.array([CODES[a] for a in net.activations], dtype=np.int64)
    losses = np.empty(perms.shape[0])
    train_momentum(Ws, bs, codes, float(net.leaky_slope), np.ascontiguousarray(Xn),
                   target.astype(np.int64), perms, int(batch), float(lr), float(mu), losses)
    for i in range(len(Ws)):
        net.weights[i][...] = Ws[i]
        net.biases[i][...] = bs[i]
    return losses
