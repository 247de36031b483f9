"""Accumulate-scope cross-class cosine of a perfectly collapsed fixed-ETF model.

Features sit exactly on their prototypes; only the set of seen classes grows
(6, then 8, then 10 of 10). The series still moves because the centering
mean is taken over the seen classes, not the whole label space.
"""
import numpy as np


def etf(d, k, seed):
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((d, k)))
    return np.sqrt(k / (k - 1)) * u @ (np.eye(k) - np.ones((k, k)) / k)


def cross_cosine(w, seen):
    means = w[:, seen]
    centered = means - means.mean(axis=1, keepdims=True)
    vals = []
    for i, k in enumerate(seen):
        for kp in seen:
            if kp == k:
                continue
            a, b = centered[:, i], w[:, kp]
            vals.append(a @ b / np.linalg.norm(a) / np.linalg.norm(b))
    return float(np.mean(vals))


if __name__ == "__main__":
    w = etf(16, 10, 0)
    series = [cross_cosine(w, list(range(n))) for n in (6, 8, 10)]
    print("series", series)
    print("range", max(series) - min(series))
