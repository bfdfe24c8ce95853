"""Jitted double-word kernels; scalar-loop twins of ``_dw_numpy``."""

import numpy as np
from numba import njit

_SPLITTER = 134217729.0


@njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


@njit(cache=True, inline="always")
def _fast_two_sum(a, b):
    s = a + b
    e = b - (s - a)
    return s, e


@njit(cache=True, inline="always")
def _split(a):
    c = _SPLITTER * a
    big = c - a
    hi = c - big
    return hi, a - hi


@njit(cache=True, inline="always")
def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


@njit(cache=True, inline="always")
def _add(xh, xl, yh, yl):
    sh, sl = _two_sum(xh, yh)
    th, tl = _two_sum(xl, yl)
    c = sl + th
    vh, vl = _fast_two_sum(sh, c)
    w = tl + vl
    return _fast_two_sum(vh, w)


@njit(cache=True, inline="always")
def _mul(xh, xl, yh, yl):
    ch, cl1 = _two_prod(xh, yh)
    t = xh * yl + xl * yh
    cl2 = cl1 + t
    return _fast_two_sum(ch, cl2)


@njit(cache=True, inline="always")
def _div(xh, xl, yh, yl):
    th = xh / yh
    rh, rl = _mul(yh, yl, th, 0.0 * th)
    ph, pl = _add(xh, xl, -rh, -rl)
    d = ph / yh
    return _fast_two_sum(th, d)


@njit(cache=True)
def _clean(hi, lo):
    for i in range(hi.shape[0]):
        if not np.isfinite(hi[i]):
            lo[i] = 0.0


@njit(cache=True)
def matvec(mh, ml, vh, vl):
    n_rows, n_cols = mh.shape
    out_h = np.zeros(n_rows)
    out_l = np.zeros(n_rows)
    for i in range(n_rows):
        acc_h = 0.0
        acc_l = 0.0
        for j in range(n_cols):
            ph, pl = _mul(mh[i, j], ml[i, j], vh[j], vl[j])
            acc_h, acc_l = _add(acc_h, acc_l, ph, pl)
        out_h[i] = acc_h
        out_l[i] = acc_l
    _clean(out_h, out_l)
    return out_h, out_l


@njit(cache=True)
def lu_factor(ah, al):
    lh = ah.copy()
    ll = al.copy()
    n = lh.shape[0]
    perm = np.arange(n)
    for k in range(n):
        p = k
        best = abs(lh[k, k])
        for i in range(k + 1, n):
            if abs(lh[i, k]) > best:
                best = abs(lh[i, k])
                p = i
        if p != k:
            for j in range(n):
                tmp = lh[k, j]
                lh[k, j] = lh[p, j]
                lh[p, j] = tmp
                tmp = ll[k, j]
                ll[k, j] = ll[p, j]
                ll[p, j] = tmp
            itmp = perm[k]
            perm[k] = perm[p]
            perm[p] = itmp
        if lh[k, k] == 0.0 or k == n - 1:
            continue
        for i in range(k + 1, n):
            mh, ml = _div(lh[i, k], ll[i, k], lh[k, k], ll[k, k])
            lh[i, k] = mh
            ll[i, k] = ml
            for j in range(k + 1, n):
                prh, prl = _mul(mh, ml, lh[k, j], ll[k, j])
                uh, ul = _add(lh[i, j], ll[i, j], -prh, -prl)
                lh[i, j] = uh
                ll[i, j] = ul
    return lh, ll, perm


@njit(cache=True)
def lu_solve(lh, ll, perm, bh, bl):
    n = lh.shape[0]
    xh = np.empty(n)
    xl = np.empty(n)
    for i in range(n):
        xh[i] = bh[perm[i]]
        xl[i] = bl[perm[i]]
    for j in range(n - 1):
        for i in range(j + 1, n):
            prh, prl = _mul(lh[i, j], ll[i, j], xh[j], xl[j])
            xh[i], xl[i] = _add(xh[i], xl[i], -prh, -prl)
    for j in range(n - 1, -1, -1):
        xh[j], xl[j] = _div(xh[j], xl[j], lh[j, j], ll[j, j])
        for i in range(j):
            prh, prl = _mul(lh[i, j], ll[i, j], xh[j], xl[j])
            xh[i], xl[i] = _add(xh[i], xl[i], -prh, -prl)
    _clean(xh, xl)
    return xh, xl
