"""Independent reference computations used by the tests.

Nothing here imports the code under test. Shares are computed by explicitly
splitting a pool among all claimants with exact rationals and reading off
the requester's piece, instead of evaluating the closed forms.
"""
from fractions import Fraction
from math import comb


def split(pool, weights):
    """Proportional split of ``pool`` among ``weights`` (exact if inputs are)."""
    total = sum(weights)
    return [pool * w / total for w in weights]


def _q(v):
    return Fraction(v)


def shares(sbw_u, sbw_s, sbw_ustar, sbw_c, sbw_d, c_sd, c_stard, beta, rho):
    """All eight shares of one up-path, as exact Fractions."""
    u, s, us, c, d = map(_q, (sbw_u, sbw_s, sbw_ustar, sbw_c, sbw_d))
    csd, cst, b, r = map(_q, (c_sd, c_stard, beta, rho))
    out = {"eph_source": b * u}
    # the core path is split among all up-paths of the source core
    out["eph_core"] = split(b * c, [u, s - u])[0]
    out["steady_core"] = split(c, [u, us - u])[0]
    # the down-path is split first among source cores by contract, then among up-paths
    per_core = split(b * d, [csd, cst - csd])[0] if cst else None
    out["eph_dest"] = split(per_core, [u, s - u])[0]
    per_core_st = split(d, [csd, cst - csd])[0]
    out["steady_dest"] = split(per_core_st, [u, us - u])[0]
    local_pool, external_pool = split(d, [r, 1 - r])
    out["steady_local"] = split(local_pool, [u, us - u])[0]
    ext_core = split(external_pool, [csd, cst - csd])[0]
    out["steady_external"] = split(ext_core, [u, us - u])[0]
    out["eph_path"] = min(out["eph_source"], out["eph_core"], out["eph_dest"])
    return out


def binom_tail(n, p, k):
    """P(Binomial(n, p) >= k), exactly enough for small n."""
    p = Fraction(p)
    return float(sum(comb(n, i) * p ** i * (1 - p) ** (n - i) for i in range(k, n + 1)))


def detection_budget(per_packet, hits_needed, target, step=2):
    """Smallest even packet count (half of them old-reservation packets)
    whose detection probability reaches ``target``."""
    n = step
    while binom_tail(n // 2, per_packet, hits_needed) < target:
        n += step
    return n


def pearson(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / (sxx * syy) ** 0.5
