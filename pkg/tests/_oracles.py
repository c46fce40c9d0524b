"""Independent reference implementations used only by tests.

Everything here is deliberately written along a different code path than
the package (explicit per-sample loops, dense SVD, enumeration) so the
two sides can disagree when one is wrong.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def straight_line_forward(layer_sizes, activation, params, inputs):
    """Per-sample, per-layer loop re-implementation of the MLP forward pass."""
    outputs = []
    for row in inputs:
        h = [float(v) for v in row]
        offset = 0
        n_layers = len(layer_sizes) - 1
        for li in range(n_layers):
            fan_in, fan_out = layer_sizes[li], layer_sizes[li + 1]
            w = params[offset : offset + fan_in * fan_out]
            offset += fan_in * fan_out
            b = params[offset : offset + fan_out]
            offset += fan_out
            z = []
            for j in range(fan_out):
                acc = float(b[j])
                for i in range(fan_in):
                    acc += h[i] * float(w[i * fan_out + j])
                z.append(acc)
            if li < n_layers - 1:
                if activation == "relu":
                    h = [v if v > 0.0 else 0.0 for v in z]
                else:
                    h = [math.tanh(v) for v in z]
            else:
                h = z
        outputs.append(h)
    return np.array(outputs)


def per_sample_cross_entropy(logits, labels):
    """Hand-summed mean cross-entropy, one sample at a time."""
    total = 0.0
    for row, label in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[int(label)]
    return total / len(labels)


def per_sample_squared_error(preds, targets):
    total = 0.0
    targets = np.atleast_2d(np.asarray(targets, dtype=float).T).T
    for row, t in zip(preds, targets):
        total += sum((float(a) - float(b)) ** 2 for a, b in zip(row, np.atleast_1d(t)))
    return total / len(preds)


def fd_gradient(fun, x, h=1e-5):
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for j in range(x.shape[0]):
        xp = x.copy()
        xp[j] += h
        xm = x.copy()
        xm[j] -= h
        grad[j] = (fun(xp) - fun(xm)) / (2.0 * h)
    return grad


def dense_sigma_max(matrix):
    """Largest singular value via full SVD (and the Gram-eigen route)."""
    svd = float(np.linalg.svd(np.asarray(matrix), compute_uv=False)[0])
    gram = np.asarray(matrix) @ np.asarray(matrix).T
    eig = float(np.sqrt(max(np.linalg.eigvalsh(gram).max(), 0.0)))
    assert abs(svd - eig) <= 1e-8 * max(svd, 1.0)
    return svd


def simplex_grid(k, resolution):
    """All simplex points with coordinates i/resolution."""
    points = []
    for combo in itertools.combinations_with_replacement(range(k), resolution):
        counts = [0] * k
        for idx in combo:
            counts[idx] += 1
        points.append(np.array(counts, dtype=float) / resolution)
    return points


def grid_search_alpha(loss_at_alpha, k, resolution=20):
    """Enumerate the simplex grid; return (best_alpha, best_loss)."""
    best_alpha, best_loss = None, np.inf
    for alpha in simplex_grid(k, resolution):
        val = loss_at_alpha(alpha)
        if val < best_loss:
            best_loss = val
            best_alpha = alpha
    return best_alpha, best_loss


def tally_accuracy(logits, labels):
    """Manual argmax tally with first-index tie breaking."""
    hits = 0
    for row, label in zip(logits, labels):
        best_j, best_v = 0, row[0]
        for j, v in enumerate(row):
            if v > best_v:
                best_j, best_v = j, v
        hits += int(best_j == int(label))
    return hits / len(labels)
