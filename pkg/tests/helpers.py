"""Independent reference implementations shared by the metric and acceptance tests.

These stay deliberately naive (loops, exhaustive enumeration) so they exercise
none of the production code paths they check.
"""
import itertools

import numpy as np


def chamfer_oracle(P, Q):
    fwd = np.mean([np.min(((p - Q) ** 2).sum(axis=1)) for p in P])
    bwd = np.mean([np.min(((q - P) ** 2).sum(axis=1)) for q in Q])
    return (fwd + bwd) / 2.0


def emd_oracle(P, Q):
    n = len(P)
    cost = np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=2))
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, cost[np.arange(n), perm].mean())
    return best


def gen_metrics_oracle(generated, reference, distance_fn):
    n_g, n_r = len(generated), len(reference)
    d_gr = np.array([[distance_fn(g, r) for r in reference] for g in generated])
    covered = {int(np.argmin(d_gr[i])) for i in range(n_g)}
    cov = 100.0 * len(covered) / n_r
    mmd = float(np.mean([d_gr[:, j].min() for j in range(n_r)]))
    pool = list(generated) + list(reference)
    labels = [1] * n_g + [0] * n_r
    correct = 0
    for i in range(len(pool)):
        dists = [distance_fn(pool[i], pool[j]) if j != i else np.inf for j in range(len(pool))]
        correct += labels[int(np.argmin(dists))] == labels[i]
    return cov, mmd, 100.0 * correct / len(pool)


def random_clouds(rng, count, n_points, spread=1.0):
    return [rng.uniform(-0.5, 0.5, size=(n_points, 3)) + rng.uniform(-spread, spread, 3) for _ in range(count)]
