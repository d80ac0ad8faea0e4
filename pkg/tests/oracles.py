"""Independent brute-force references for the detection metrics.

Written directly from the definitions with plain loops, sharing no code with
the package implementation.
"""
import math


def rates_at(bona, spoof, thr):
    miss = sum(1 for s in bona if s < thr) / len(bona)
    fa = sum(1 for s in spoof if s >= thr) / len(spoof)
    return miss, fa


def candidate_thresholds(bona, spoof):
    thr = sorted(set(bona) | set(spoof))
    return thr + [math.nextafter(thr[-1], math.inf)]


def eer_bruteforce(bona, spoof):
    """O(n^2): evaluate both rates at every threshold, take the |miss-fa|
    minimizer, and interpolate linearly when the sign flips strictly between
    neighbouring thresholds."""
    thr = candidate_thresholds(bona, spoof)
    pts = [rates_at(bona, spoof, t) for t in thr]
    best = min(range(len(thr)), key=lambda i: abs(pts[i][0] - pts[i][1]))
    m, f = pts[best]
    if m == f:
        return m, thr[best]
    # the crossing lies between best and the neighbour on the other side
    j = best + 1 if m < f else best - 1
    lo, hi = sorted((best, j))
    (m0, f0), (m1, f1) = pts[lo], pts[hi]
    d0, d1 = m0 - f0, m1 - f1
    a = -d0 / (d1 - d0)
    return m0 + a * (m1 - m0), thr[lo] + a * (thr[hi] - thr[lo])


def min_tdcf_straight_line(bona, spoof, p_miss_asv, p_fa_asv, p_miss_spoof_asv,
                           p_tar=0.95 * 0.99, p_non=0.95 * 0.01, p_spoof=0.05,
                           c_miss_asv=1.0, c_fa_asv=10.0, c_miss_cm=1.0, c_fa_cm=10.0):
    c1 = p_tar * (c_miss_cm - c_miss_asv * p_miss_asv) - p_non * c_fa_asv * p_fa_asv
    c2 = c_fa_cm * p_spoof * (1 - p_miss_spoof_asv)
    best = None
    for t in candidate_thresholds(bona, spoof):
        miss, fa = rates_at(bona, spoof, t)
        value = (c1 * miss + c2 * fa) / min(c1, c2)
        if best is None or value < best[0]:
            best = (value, t)
    return best
