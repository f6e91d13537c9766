"""Independent reference implementations used by the test suite.

Nothing here calls into the autodiff engine; models are read only through
their raw parameter arrays and mask indices.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

LD = np.longdouble


# ---------------------------------------------------------------------------
# extended-precision joint loss for pure-coupling models


def _dense_ld(ws, bs, h):
    """MLP over stacked parameter sets: ``h`` (K, B, n), weights (K, a, b)."""
    pre = []
    for w, b in zip(ws[:-1], bs[:-1]):
        a = h @ w + b[:, None, :]
        pre.append(a)
        h = np.where(a > 0, a, LD(0.01) * a)
    return h @ ws[-1] + bs[-1][:, None, :], pre


def _stacked_params(model, theta):
    """Split ``theta`` (K, n_params) into per-tensor stacks in ``model.parameters()`` order."""
    out, at = [], 0
    for p in model.parameters():
        shape = np.shape(p.value)
        size = int(np.prod(shape))
        out.append(theta[:, at:at + size].reshape((theta.shape[0],) + shape))
        at += size
    return out


def _loss_stack(model, packed, theta, lam):
    """Joint objective for each row of ``theta``; returns (losses (K,), min distance to a kink)."""
    stacks = iter(_stacked_params(model, theta))
    k = theta.shape[0]
    v = np.broadcast_to(np.asarray(packed, dtype=LD), (k,) + np.shape(packed)).copy()
    logdet = np.zeros(v.shape[:2], dtype=LD)
    pre = []
    for layer in model.couplings:
        nets = []
        for net in (layer.scale_net, layer.shift_net):
            wb = [next(stacks) for _ in range(2 * len(net.weights))]
            nets.append((wb[0::2], wb[1::2]))
        gain = next(stacks)
        i1, i2 = layer.mask.idx1, layer.mask.idx2
        raw, p1 = _dense_ld(*nets[0], v[..., i1])
        shift, p2 = _dense_ld(*nets[1], v[..., i1])
        s = gain.reshape(k, 1, 1) * np.tanh(raw)
        nxt = v.copy()
        nxt[..., i2] = np.exp(s) * v[..., i2] + shift
        v = nxt
        logdet += s.sum(axis=-1)
        pre += p1 + p2
    z = v[..., model.x_index]
    nll = np.mean(LD(0.5) * np.sum(z * z, axis=-1), axis=-1) + LD(0.5) * z.shape[-1] * np.log(LD(2) * LD(np.pi))
    gap = v[..., model.y_index] - np.asarray(packed, dtype=LD)[:, model.y_index]
    loss = nll + LD(lam) * np.mean(np.abs(gap), axis=(-2, -1)) - np.mean(logdet, axis=-1)
    kinks = min([float(np.abs(a).min()) for a in pre] + [float(np.abs(gap).min())])
    return loss, kinks


def flat_params_ld(model):
    return np.concatenate([np.asarray(p.value, dtype=LD).reshape(-1) for p in model.parameters()])


def joint_loss_ld(model, packed, lam=100.0):
    """Joint objective of a factor-free model in long double: prior NLL + lam * mean L1 + mean(-logdet).

    Also returns the smallest distance of any leaky-ReLU pre-activation or L1
    argument from its kink.
    """
    loss, kinks = _loss_stack(model, packed, flat_params_ld(model)[None], lam)
    return loss[0], kinks


def fd_gradient_ld(model, packed, lam=100.0, step=1e-4):
    """Central differences of ``joint_loss_ld`` over every parameter entry, flattened in order."""
    theta = flat_params_ld(model)
    n = theta.size
    shifts = np.eye(n, dtype=LD) * LD(step)
    stack = np.concatenate([theta + shifts, theta - shifts])
    loss, _ = _loss_stack(model, packed, stack, lam)
    return np.asarray((loss[:n] - loss[n:]) / (LD(2) * LD(step)), dtype=np.float64)


# ---------------------------------------------------------------------------
# numerical Jacobian log-determinant


def fd_logdet(fn, u, step=1e-6):
    """log|det| of a central-difference Jacobian of ``fn`` (vector -> vector) at ``u``."""
    u = np.asarray(u, dtype=np.float64)
    n = u.size
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        jac[:, j] = (fn(u + e) - fn(u - e)) / (2 * step)
    return np.linalg.slogdet(jac)[1]


# ---------------------------------------------------------------------------
# loop-based array transforms


def squeeze_loops(img):
    h, w, c = img.shape
    out = np.empty((h // 2, w // 2, 4 * c), dtype=img.dtype)
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                for di in range(2):
                    for dj in range(2):
                        out[i, j, 4 * ch + 2 * di + dj] = img[2 * i + di, 2 * j + dj, ch]
    return out


def avg_pool_loops(img, k):
    h, w, c = img.shape
    out = np.zeros((h // k, w // k, c))
    for i in range(h // k):
        for j in range(w // k):
            for ch in range(c):
                out[i, j, ch] = sum(img[i * k + a, j * k + b, ch] for a in range(k) for b in range(k)) / k**2
    return out


def checkerboard_loops(h, w, c, parity):
    return np.array([[[(i + j) % 2 == parity for _ in range(c)] for j in range(w)] for i in range(h)])


# ---------------------------------------------------------------------------
# statistics


def ks_scipy(samples):
    return stats.kstest(np.ravel(samples), "norm").statistic


def chi2_uniform_angles(x, bins=16):
    """Pearson statistic and 99% critical value for a uniform angular histogram."""
    ang = np.arctan2(x[:, 1], x[:, 0])
    counts, _ = np.histogram(ang, bins=bins, range=(-np.pi, np.pi))
    expected = x.shape[0] / bins
    return float(np.sum((counts - expected) ** 2 / expected)), float(stats.chi2.ppf(0.99, bins - 1))


def adam_reference(grads, lr, b1, b2, eps, theta0):
    """Plain-loop Adam on a scalar parameter; ``grads`` is a callable of theta."""
    theta, m, v = float(theta0), 0.0, 0.0
    trace = []
    for t in range(1, len(grads) + 1):
        g = grads[t - 1](theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1**t), v / (1 - b2**t)
        theta -= lr * mh / (np.sqrt(vh) + eps)
        trace.append(theta)
    return trace
