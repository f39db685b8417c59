"""Brute-force reference implementations.

Plain Python loops over scalars, deliberately sharing no code with the
vectorized kernels they check. Inputs/outputs are numpy arrays.
"""

from __future__ import annotations

import math
from fractions import Fraction

import mpmath
import numpy as np


def conv1d_loops(x, kernel, bias=None, dilation=1, stride=1, padding="causal"):
    C, T = x.shape
    K, _, d_t = kernel.shape
    span = dilation * (d_t - 1) + 1
    if padding == "causal":
        before, after = span - 1, 0
    elif padding == "same":
        before, after = (span - 1) // 2, span - 1 - (span - 1) // 2
    else:
        before, after = 0, 0
    t_out = (T + before + after - span) // stride + 1
    out = np.zeros((K, t_out))
    for k in range(K):
        for t in range(t_out):
            acc = 0.0 if bias is None else float(bias[k])
            for c in range(C):
                for i in range(d_t):
                    src = t * stride + i * dilation - before
                    if 0 <= src < T:
                        acc += kernel[k, c, i] * x[c, src]
            out[k, t] = acc
    return out


def conv2d_loops(x, kernel, bias=None, stride=1, padding="valid"):
    C, H, W = x.shape
    K, _, kh, kw = kernel.shape
    p = (kh - 1) // 2 if padding == "same" else 0
    q = (kw - 1) // 2 if padding == "same" else 0
    h_out = (H + 2 * p - kh) // stride + 1
    w_out = (W + 2 * q - kw) // stride + 1
    out = np.zeros((K, h_out, w_out))
    for k in range(K):
        for r in range(h_out):
            for s in range(w_out):
                acc = 0.0 if bias is None else float(bias[k])
                for c in range(C):
                    for j in range(kh):
                        for m in range(kw):
                            y, z = r * stride + j - p, s * stride + m - q
                            if 0 <= y < H and 0 <= z < W:
                                acc += kernel[k, c, j, m] * x[c, y, z]
                out[k, r, s] = acc
    return out


def conv3d_loops(x, kernel):
    C, T, H, W = x.shape
    K, _, d, kh, kw = kernel.shape
    out = np.zeros((K, T - d + 1, H - kh + 1, W - kw + 1))
    for k in range(K):
        for t in range(out.shape[1]):
            for h in range(out.shape[2]):
                for w in range(out.shape[3]):
                    acc = 0.0
                    for c in range(C):
                        for i in range(d):
                            for j in range(kh):
                                for m in range(kw):
                                    acc += kernel[k, c, i, j, m] * x[c, t + i, h + j, w + m]
                    out[k, t, h, w] = acc
    return out


def linear_loops(x, weight, bias):
    return np.array([sum(float(weight[r, c]) * float(x[c]) for c in range(len(x))) + float(bias[r])
                     for r in range(weight.shape[0])])


def mean_flat(x):
    flat = [float(v) for v in np.ravel(x)]
    return math.fsum(flat) / len(flat)


def softmax_mp(x, dps=50):
    """Softmax in ``dps``-digit arithmetic, no max shift."""
    with mpmath.workdps(dps):
        e = [mpmath.exp(mpmath.mpf(float(v))) for v in x]
        total = mpmath.fsum(e)
        return np.array([float(v / total) for v in e])


def sigmoid_mp(x, dps=50):
    with mpmath.workdps(dps):
        return float(1 / (1 + mpmath.exp(-mpmath.mpf(float(x)))))


def average_precision_bruteforce(scores, labels):
    """Exact AP from the ranked list, using rational arithmetic.

    Ranking is by descending score with ties kept in input order.
    """
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            precisions.append(Fraction(hits, rank))
    if not precisions:
        raise ValueError("no positives")
    return float(sum(precisions) / len(precisions))


def sym_kl_sum(p, q, floor=1e-12):
    total = 0.0
    for a, b in zip(p, q):
        a, b = max(a, floor), max(b, floor)
        total += a * math.log(a / b) + b * math.log(b / a)
    return total


def population_variance(values):
    m = math.fsum(values) / len(values)
    return math.fsum((v - m) ** 2 for v in values) / len(values)
