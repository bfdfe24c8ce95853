"""Pure-numpy double-word kernels.

A double-word number is an unevaluated sum ``hi + lo`` of two float64
values with ``|lo| <= ulp(hi)/2``. Every routine here is vectorized over
numpy arrays and performs the same floating-point operations, in the same
order, as its counterpart in ``_dw_numba`` so both backends agree bitwise.

Products use Dekker splitting rather than a fused multiply-add; numpy has
no FMA ufunc and the jitted path mirrors that choice.
"""

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1


def two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def fast_two_sum(a, b):
    s = a + b
    e = b - (s - a)
    return s, e


def split(a):
    c = _SPLITTER * a
    big = c - a
    hi = c - big
    return hi, a - hi


def two_prod(a, b):
    p = a * b
    ah, al = split(a)
    bh, bl = split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def dw_add(xh, xl, yh, yl):
    sh, sl = two_sum(xh, yh)
    th, tl = two_sum(xl, yl)
    c = sl + th
    vh, vl = fast_two_sum(sh, c)
    w = tl + vl
    return fast_two_sum(vh, w)


def dw_mul(xh, xl, yh, yl):
    ch, cl1 = two_prod(xh, yh)
    t = xh * yl + xl * yh
    cl2 = cl1 + t
    return fast_two_sum(ch, cl2)


def dw_div(xh, xl, yh, yl):
    th = xh / yh
    rh, rl = dw_mul(yh, yl, th, 0.0 * th)
    ph, pl = dw_add(xh, xl, -rh, -rl)
    d = ph / yh
    return fast_two_sum(th, d)


def _clean(hi, lo):
    # a non-finite hi poisons lo with nan; keep lo at zero instead
    bad = ~np.isfinite(hi)
    if np.any(bad):
        lo = np.where(bad, 0.0, lo)
    return hi, lo


def matvec(mh, ml, vh, vl):
    """Row-by-row double-word product ``M @ v`` accumulated in column order."""
    n_rows, n_cols = mh.shape
    ph, pl = dw_mul(mh, ml, vh[None, :], vl[None, :])
    acc_h = np.zeros(n_rows)
    acc_l = np.zeros(n_rows)
    for j in range(n_cols):
        acc_h, acc_l = dw_add(acc_h, acc_l, ph[:, j], pl[:, j])
    return _clean(acc_h, acc_l)


def lu_factor(ah, al):
    """In-place partial-pivoting LU on copies; returns (lu_h, lu_l, perm)."""
    lh = np.array(ah, dtype=np.float64, copy=True)
    ll = np.array(al, dtype=np.float64, copy=True)
    n = lh.shape[0]
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lh[k:, k])))
        if p != k:
            lh[[k, p]] = lh[[p, k]]
            ll[[k, p]] = ll[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        if lh[k, k] == 0.0 or k == n - 1:
            continue
        mh, ml = dw_div(lh[k + 1:, k], ll[k + 1:, k], lh[k, k], ll[k, k])
        lh[k + 1:, k] = mh
        ll[k + 1:, k] = ml
        prh, prl = dw_mul(mh[:, None], ml[:, None],
                          lh[k, k + 1:][None, :], ll[k, k + 1:][None, :])
        uh, ul = dw_add(lh[k + 1:, k + 1:], ll[k + 1:, k + 1:], -prh, -prl)
        lh[k + 1:, k + 1:] = uh
        ll[k + 1:, k + 1:] = ul
    return lh, ll, perm


def lu_solve(lh, ll, perm, bh, bl):
    """Solve with a factorization from :func:`lu_factor` (column-oriented sweeps)."""
    n = lh.shape[0]
    xh = np.array(bh[perm], dtype=np.float64)
    xl = np.array(bl[perm], dtype=np.float64)
    for j in range(n - 1):
        prh, prl = dw_mul(lh[j + 1:, j], ll[j + 1:, j], xh[j], xl[j])
        xh[j + 1:], xl[j + 1:] = dw_add(xh[j + 1:], xl[j + 1:], -prh, -prl)
    for j in range(n - 1, -1, -1):
        xh[j], xl[j] = dw_div(xh[j], xl[j], lh[j, j], ll[j, j])
        if j > 0:
            prh, prl = dw_mul(lh[:j, j], ll[:j, j], xh[j], xl[j])
            xh[:j], xl[:j] = dw_add(xh[:j], xl[:j], -prh, -prl)
    return _clean(xh, xl)
