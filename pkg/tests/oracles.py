"""Independent reference implementations, written as plain loops over lists.

They deliberately share no code with the package so that agreement between
the two is evidence, not tautology.
"""

import math
from collections import Counter


def minmax_oracle(column, cost=False):
    lo, hi = min(column), max(column)
    if hi == lo:
        return [0.5 for _ in column]
    if cost:
        return [(hi - x) / (hi - lo) for x in column]
    return [(x - lo) / (hi - lo) for x in column]


def entropy_weights_oracle(v):
    """Entropy weights term by term; v is a list of rows."""
    n_rows, n_cols = len(v), len(v[0])
    if n_cols == 1:
        return [1.0]
    k = 1.0 / math.log(n_rows)
    divergence = []
    for d in range(n_cols):
        col = [v[i][d] for i in range(n_rows)]
        total = sum(col)
        if total == 0:
            divergence.append(0.0)
            continue
        h = 0.0
        for x in col:
            s = x / total
            if s > 0:
                h += s * math.log(s)
        e = -k * h
        if all(abs(x - col[0]) == 0 for x in col):
            e = 1.0
        divergence.append(max(0.0, 1.0 - e))
    total = sum(divergence)
    if total == 0:
        return [1.0 / n_cols] * n_cols
    return [g / total for g in divergence]


def topsis_oracle(v, w):
    out = []
    for row in v:
        d_minus = 0.0
        d_plus = 0.0
        for x, wd in zip(row, w):
            d_minus += wd * x * x
            d_plus += wd * (x - 1.0) * (x - 1.0)
        d_minus, d_plus = math.sqrt(d_minus), math.sqrt(d_plus)
        out.append(0.5 if d_minus + d_plus == 0 else d_minus / (d_minus + d_plus))
    return out


def rouge1_oracle(cand_tokens, ref_tokens):
    if not cand_tokens or not ref_tokens:
        return 0.0
    ref_left = Counter(ref_tokens)
    hit = 0
    for t in cand_tokens:
        if ref_left[t] > 0:
            ref_left[t] -= 1
            hit += 1
    p, r = hit / len(cand_tokens), hit / len(ref_tokens)
    return 0.0 if hit == 0 else 2 * p * r / (p + r)


def greedy_f1_oracle(cand_vecs, ref_vecs):
    def cos(a, b):
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    p = sum(max(cos(a, b) for b in ref_vecs) for a in cand_vecs) / len(cand_vecs)
    r = sum(max(cos(a, b) for a in cand_vecs) for b in ref_vecs) / len(ref_vecs)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)
