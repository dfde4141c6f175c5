"""Brute-force detection-metric oracles shared by the test modules.

Everything here recomputes error rates by direct comparison at every
candidate threshold, deliberately sharing no code with the package's
searchsorted-based sweep.
"""

import numpy as np


def oracle_points(tar, non):
    """(threshold, p_fa, p_miss) at every distinct score plus +-inf."""
    cands = np.concatenate([[-np.inf], np.unique(np.concatenate([tar, non])), [np.inf]])
    out = []
    for t in cands:  # accept iff score >= t (ties accept)
        p_miss = float(np.mean(tar < t))
        p_fa = float(np.mean(non >= t))
        out.append((float(t), p_fa, p_miss))
    return out


def oracle_min_dcf(tar, non, p, cm=1.0, cf=1.0):
    norm = min(cm * p, cf * (1 - p))
    best_v, best_t = np.inf, None
    for t, p_fa, p_miss in oracle_points(tar, non):  # ascending thresholds
        v = (cm * p * p_miss + cf * (1 - p) * p_fa) / norm
        if v < best_v:  # strict: ties keep the smallest threshold
            best_v, best_t = v, t
    return best_v, best_t


def oracle_eer(tar, non):
    pts = oracle_points(tar, non)
    for i in range(len(pts)):
        _, p_fa, p_miss = pts[i]
        if p_miss - p_fa >= 0:
            if p_miss == p_fa:
                return p_miss
            _, f0, m0 = pts[i - 1]
            _, f1, m1 = pts[i]
            t = (f0 - m0) / ((m1 - m0) - (f1 - f0))
            return m0 + t * (m1 - m0)
    raise AssertionError("no miss/false-alarm crossing")
