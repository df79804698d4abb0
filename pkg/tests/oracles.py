"""Independent reference implementations used to cross-check the package.

Deliberately written as plain loops over scalars, not vectorized numpy, so
an agreement between package and oracle is evidence rather than tautology.
"""

import math

import numpy as np


def oracle_quantize(values, bits, lo, hi):
    """Scalar-at-a-time affine code mapping."""
    levels = 2 ** bits - 1
    out = []
    for v in values:
        v = min(max(v, lo), hi)
        if hi == lo:
            out.append(0)
            continue
        code = math.floor((v - lo) * levels / (hi - lo) + 0.5)
        out.append(min(max(code, 0), levels))
    return out


def oracle_attention(q, k, v, d_k, tau=1.0):
    """Row-by-row softmax and explicit weighted sums."""
    m, n = q.shape[0], k.shape[0]
    out = np.zeros((m, v.shape[1]))
    for i in range(m):
        scores = [
            sum(q[i, t] * k[j, t] for t in range(d_k)) / (tau * math.sqrt(d_k))
            for j in range(n)
        ]
        peak = max(scores)
        exps = [math.exp(s - peak) for s in scores]
        total = sum(exps)
        for j in range(n):
            w = exps[j] / total
            for c in range(v.shape[1]):
                out[i, c] += w * v[j, c]
    return out


def oracle_memory(values, scores, t, indices, position):
    """Explicit softmax-weighted slot sum with clamped positional offsets."""
    d_h = values.shape[1]
    scaled = [s / math.sqrt(d_h) for s in scores]
    peak = max(scaled)
    exps = [math.exp(s - peak) for s in scaled]
    total = sum(exps)
    out = np.zeros(d_h)
    for c, idx in enumerate(indices):
        if position:
            off = idx - t
            off = min(max(off, min(position)), max(position))
            if off not in position:
                off = min(position, key=lambda key: (abs(key - off), key))
            p = position[off]
        else:
            p = 0.0
        out += (exps[c] / total) * (values[c] + p)
    return out


def oracle_ratio(snippet, candidate, n=8):
    """Character n-gram set overlap on lowercased, space-collapsed text."""

    def norm(text):
        return " ".join(text.lower().split())

    def grams(text):
        text = norm(text)
        if len(text) < n:
            return {text}
        return {text[i : i + n] for i in range(len(text) - n + 1)}

    reference = grams(snippet)
    if not reference:
        return 0.0
    return len(reference & grams(candidate)) / len(reference)
