"""Independent reference computations used by the test suite."""
from fractions import Fraction

import numpy as np

from eereplay.logmodel import eligible_candidates


def recount_propensities(log, cfg, layout, chosen_buckets):
    """Replay the chosen-bucket history and recount pull shares from scratch.

    ``chosen_buckets[q]`` is -1 for queries that did not explore.  Returns
    the exact propensity per exploring query as a Fraction.
    """
    history = []
    out = {}
    for q, rec in enumerate(log):
        b = int(chosen_buckets[q])
        if b < 0:
            continue
        history.append(b)
        active = {layout.index(i.position, i.score) for i in eligible_candidates(rec, cfg)}
        total = sum(history.count(a) for a in active)
        out[q] = Fraction(history.count(b), total)
    return out


def weighted_ridge(X, y, w, lam):
    """Normal equations on the intercept-augmented design, intercept unpenalised."""
    A = np.hstack([np.ones((len(y), 1)), X])
    P = lam * np.eye(A.shape[1])
    P[0, 0] = 0.0
    W = np.diag(w)
    theta = np.linalg.solve(A.T @ W @ A + P, A.T @ W @ y)
    return theta[1:], theta[0]


def ridge_loss(coef, intercept, X, y, w, lam):
    r = y - intercept - X @ coef
    return float(w @ (r * r) + lam * coef @ coef)


def numeric_gradient(coef, intercept, X, y, w, lam, h=1e-6):
    theta = np.concatenate([[intercept], coef])
    g = np.zeros_like(theta)
    for j in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (ridge_loss(up[1:], up[0], X, y, w, lam)
                - ridge_loss(dn[1:], dn[0], X, y, w, lam)) / (2 * h)
    return g


def brute_force_ctr(model_scores, log, k):
    """Re-rank every query by sorting (score desc, logged position asc)."""
    hits = 0
    row = 0
    for rec in log:
        n = len(rec)
        s = model_scores[row:row + n]
        order = sorted(range(n), key=lambda j: (-s[j], j))
        hits += any(rec.impressions[j].label for j in order[:k])
        row += n
    return hits / len(log) if len(log) else 0.0
