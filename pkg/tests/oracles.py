"""Independent reference implementations used as test oracles.

These are deliberately naive (python loops, ``math``) and share no code
with the package paths they check.
"""
import itertools
import math

import numpy as np


def per_sample_loss(oracle, params, data):
    """Cross-entropy computed one sample at a time from explicit weights."""
    f, c, h = oracle.n_features, oracle.n_classes, oracle.hidden
    p = list(map(float, params))
    pos = 0

    def take(rows, cols):
        nonlocal pos
        m = [[p[pos + r * cols + k] for k in range(cols)] for r in range(rows)]
        pos += rows * cols
        return m

    def take_vec(n):
        nonlocal pos
        v = p[pos:pos + n]
        pos += n
        return v

    if oracle.model_kind == "softmax_regression":
        w, b = take(c, f), take_vec(c)
        layers = None
    else:
        w1, b1 = take(h, f), take_vec(h)
        w, b = take(c, h), take_vec(c)
        layers = (w1, b1)
    total = 0.0
    for x, y in zip(data.features.tolist(), data.labels.tolist()):
        if layers is not None:
            w1, b1 = layers
            x = [math.tanh(sum(w1[r][k] * x[k] for k in range(f)) + b1[r]) for r in range(h)]
        z = [sum(w[r][k] * x[k] for k in range(len(x))) + b[r] for r in range(c)]
        zmax = max(z)
        lse = zmax + math.log(sum(math.exp(v - zmax) for v in z))
        total += lse - z[y]
    value = total / len(data)
    if oracle.l2:
        value += 0.5 * oracle.l2 * sum(v * v for v in p)
    return value


def central_differences(fn, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (fn(up) - fn(down)) / (2 * h)
    return g


def reference_adam(grad_fn, x0, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam written out from the textbook update."""
    x, m, v = float(x0), 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1 ** t)
        vh = v / (1 - beta2 ** t)
        x = x - lr * mh / (math.sqrt(vh) + eps)
    return x


def brute_krum_scores(updates, f):
    """Score via exhaustive search over neighbour subsets of size N-f-2."""
    n = len(updates)
    k = n - f - 2
    vecs = [list(map(float, u)) for u in updates]
    scores = []
    for i in range(n):
        dists = {j: sum((a - b) ** 2 for a, b in zip(vecs[i], vecs[j])) for j in range(n) if j != i}
        best = math.inf
        for subset in itertools.combinations(dists, k):
            best = min(best, sum(dists[j] for j in subset))
        scores.append(best)
    return scores


def brute_prefix_scan(updates, f_s):
    """Rank by loss, form every prefix mean directly, return (first non-improving j, its loss, all losses)."""
    n = len(updates)
    v = [f_s(u) for u in updates]
    order = sorted(range(n), key=lambda i: (v[i], i))
    prefix_losses = []
    for j in range(1, n + 1):
        mean = np.sum([np.asarray(updates[order[i]], dtype=np.float64) for i in range(j)], axis=0) / j
        prefix_losses.append(f_s(mean))
    stop = n
    for j in range(1, n):
        if prefix_losses[j] >= prefix_losses[j - 1]:
            stop = j
            break
    return stop, prefix_losses[stop - 1], prefix_losses, order


def sorted_median(values):
    s = sorted(values)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2
