"""Projected gradient descent on the layer-peeled dot-regression problem.

Per feature: minimize 0.5 * (w_k . m - 1)^2 subject to |m| <= 1, starting
from a random point of norm 0.5. On the sphere the loss is
0.5 * (1 - cos t)^2 ~ t^4 / 8, so the angle only decays like 1/sqrt(lr * n);
this script prints the worst cross-class gap after 5000 steps per step size.
"""
import numpy as np

from accumulate_cosine_shift import etf


def solve(w, labels, lr, steps, rng):
    d = w.shape[0]
    m = rng.standard_normal((len(labels), d))
    m *= 0.5 / np.linalg.norm(m, axis=1, keepdims=True)
    for _ in range(steps):
        wk = w[:, labels].T
        resid = np.sum(wk * m, axis=1) - 1.0
        m -= lr * resid[:, None] * wk
        n = np.linalg.norm(m, axis=1, keepdims=True)
        m = np.where(n > 1.0, m / n, m)
    return m


def worst_cross_gap(w, labels, m):
    k = w.shape[1]
    z = m @ w
    mask = np.ones_like(z, dtype=bool)
    mask[np.arange(len(labels)), labels] = False
    return float(np.max(np.abs(z[mask] + 1.0 / (k - 1))))


if __name__ == "__main__":
    w = etf(16, 10, 0)
    labels = np.repeat(np.arange(10), [1, 3, 8, 2, 5, 4, 7, 1, 2, 6])
    for lr in (0.5, 5.0, 50.0, 1e3, 1e4):
        m = solve(w, labels, lr, 5000, np.random.default_rng(0))
        print(f"lr {lr:>8g}: worst cross gap {worst_cross_gap(w, labels, m):.3e}")
