"""Independent straight-line reference implementations used as test oracles.

These deliberately avoid the package's helpers (no levels, no numpy tallies)
so agreement is meaningful.
"""

from __future__ import annotations

import itertools
import math


def copeland_oracle(values, weights, lower_is_better):
    """Exhaustive weighted Copeland over raw metric values.

    ``values[i][c]`` is voter i's raw value for candidate c.  Returns
    ``{candidate: wins + 0.5 * ties}``.
    """
    cands = sorted(values[0])
    score = {c: 0.0 for c in cands}
    for a, b in itertools.combinations(cands, 2):
        for_a = for_b = 0.0
        for vals, w, low in zip(values, weights, lower_is_better):
            va, vb = vals[a], vals[b]
            if va == vb:
                continue
            a_better = va < vb if low else va > vb
            if a_better:
                for_a += w
            else:
                for_b += w
        if abs(for_a - for_b) <= 1e-12:
            score[a] += 0.5
            score[b] += 0.5
        elif for_a > for_b:
            score[a] += 1
        else:
            score[b] += 1
    return score


def tau_b_oracle(x, y):
    """Kendall tau-b by enumerating pairs."""
    n = len(x)
    conc = disc = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0:
                ties_x += 1
            if dy == 0:
                ties_y += 1
            if dx == 0 or dy == 0:
                continue
            if (dx > 0) == (dy > 0):
                conc += 1
            else:
                disc += 1
    pairs = n * (n - 1) // 2
    denom = math.sqrt((pairs - ties_x) * (pairs - ties_y))
    return (conc - disc) / denom if denom else math.nan


def similarity_oracle(theta, mu, Q, K, head_weights):
    """sum_h w_h * (Q_h mu) . (K_h theta) / sqrt(d) with explicit loops."""
    d = len(theta)
    total = 0.0
    for h in range(len(head_weights)):
        q = [sum(Q[h][i][j] * mu[j] for j in range(len(mu))) for i in range(d)]
        k = [sum(K[h][i][j] * theta[j] for j in range(d)) for i in range(d)]
        total += head_weights[h] * sum(qi * ki for qi, ki in zip(q, k)) / math.sqrt(d)
    return total
