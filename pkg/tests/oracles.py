"""Slow, loop-based reference implementations used only by the tests."""
import math


def pvalues_by_loop(cal, test):
    n = len(cal)
    return [(1 + sum(1 for c in cal if c >= t)) / (1 + n) for t in test]


def fdp_by_loop(t, cal, test, plus_one):
    n_rej = sum(1 for s in test if s >= t)
    if n_rej == 0:
        return math.inf
    n_cal_ge = sum(1 for s in cal if s >= t)
    if plus_one:
        return len(test) / (1 + len(cal)) * (1 + n_cal_ge) / n_rej
    return len(test) / len(cal) * n_cal_ge / n_rej


def threshold_by_enumeration(cal, test, alpha, plus_one):
    feasible = [t for t in list(cal) + list(test) if fdp_by_loop(t, cal, test, plus_one) <= alpha]
    return min(feasible) if feasible else math.inf


def textbook_bh(pvalues, alpha):
    """Largest k with #{p <= alpha*k/N} >= k; reject those p-values."""
    n = len(pvalues)
    for k in range(n, 0, -1):
        cut = alpha * k / n
        hits = [j for j, p in enumerate(pvalues) if p <= cut]
        if len(hits) >= k:
            return sorted(hits)
    return []


def ebh_by_cutoffs(evalues, alpha):
    """Try every observed value as a cutoff; keep the largest valid set."""
    n = len(evalues)
    best = []
    for c in set(evalues):
        chosen = [j for j, e in enumerate(evalues) if e >= c]
        if c > 0 and len(chosen) * c >= n / alpha and len(chosen) > len(best):
            best = chosen
    return sorted(best)


def pooled_t(group1, group2):
    n1, n2 = len(group1), len(group2)
    m1, m2 = sum(group1) / n1, sum(group2) / n2
    ss = sum((x - m1) ** 2 for x in group1) + sum((x - m2) ** 2 for x in group2)
    sp2 = ss / (n1 + n2 - 2)
    return (m1 - m2) / math.sqrt(sp2 * (1 / n1 + 1 / n2))


def soft_rank_by_loop(test_score, cal, r):
    pool = [test_score] + list(cal)
    lo, hi = min(pool), max(pool)
    if hi == lo:
        return 1.0
    L = [(s - lo) / (hi - lo) for s in pool]
    l_star = min(L)
    if r == 0:
        R = [x - l_star for x in L]
    else:
        R = [(math.exp(r * x) - math.exp(r * l_star)) / r for x in L]
    return (len(cal) + 1) * R[0] / sum(R)
