"""Compiled inner loops shared by the statistics and the permutation engine.

Every pair predicate here uses the form ``hi > lo + delta`` so the fast
paths and the brute-force references agree bit for bit at the delta margin.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def count_ascending_pairs(a):
    """Number of index pairs i < j with a[i] < a[j] (strict), by merge sort."""
    n = a.shape[0]
    src = a.copy()
    dst = np.empty_like(src)
    total = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                # ties go right first so equal left items are not counted
                if src[i] < src[j]:
                    dst[k] = src[i]
                    i += 1
                else:
                    total += i - lo
                    dst[k] = src[j]
                    j += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                total += mid - lo
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    return total


@njit(cache=True, nogil=True)
def count_dominating(real_p, real_s, virt_p, virt_s):
    """Count (real r, virtual v) with r.p > v.p and r.s > v.s, both strict.

    Items are laid out by primary key descending, virtual first on ties, and
    a bottom-up merge sort on the secondary key counts how many real items
    each virtual item is hopped over by.
    """
    n_real = real_p.shape[0]
    n = n_real + virt_p.shape[0]
    p = np.empty(n)
    s = np.empty(n)
    real = np.empty(n, dtype=np.bool_)
    p[:n_real] = real_p
    s[:n_real] = real_s
    real[:n_real] = True
    p[n_real:] = virt_p
    s[n_real:] = virt_s
    real[n_real:] = False

    # primary descending; on equal primary the virtual item comes first
    key = np.empty(n)
    for i in range(n):
        key[i] = -p[i]
    order = np.argsort(key, kind="mergesort")
    seq_s = np.empty(n)
    seq_real = np.empty(n, dtype=np.bool_)
    pos = 0
    i = 0
    while i < n:
        j = i
        while j < n and key[order[j]] == key[order[i]]:
            j += 1
        for t in range(i, j):
            if not real[order[t]]:
                seq_s[pos] = s[order[t]]
                seq_real[pos] = False
                pos += 1
        for t in range(i, j):
            if real[order[t]]:
                seq_s[pos] = s[order[t]]
                seq_real[pos] = True
                pos += 1
        i = j

    buf_s = np.empty(n)
    buf_real = np.empty(n, dtype=np.bool_)
    total = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            reals_taken = 0
            # descending merge; ties take the right item first
            while i < mid and j < hi:
                if seq_s[i] > seq_s[j]:
                    if seq_real[i]:
                        reals_taken += 1
                    buf_s[k] = seq_s[i]
                    buf_real[k] = seq_real[i]
                    i += 1
                else:
                    if not seq_real[j]:
                        total += reals_taken
                    buf_s[k] = seq_s[j]
                    buf_real[k] = seq_real[j]
                    j += 1
                k += 1
            while i < mid:
                buf_s[k] = seq_s[i]
                buf_real[k] = seq_real[i]
                i += 1
                k += 1
            while j < hi:
                if not seq_real[j]:
                    total += reals_taken
                buf_s[k] = seq_s[j]
                buf_real[k] = seq_real[j]
                j += 1
                k += 1
        seq_s, buf_s = buf_s, seq_s
        seq_real, buf_real = buf_real, seq_real
        width *= 2
    return total


@njit(cache=True, nogil=True)
def conc_disc_block(start, yp, delta_y):
    """Concordant / discordant valid pair counts for each row of ``yp``.

    ``yp`` holds permuted y values laid out in x-sorted order, and
    ``start[i]`` is the first sorted position whose x clears x_i + delta_x.
    """
    n_perm, n = yp.shape
    conc = np.zeros(n_perm, dtype=np.int64)
    disc = np.zeros(n_perm, dtype=np.int64)
    for b in range(n_perm):
        row = yp[b]
        c = 0
        d = 0
        for i in range(n - 1):
            yi = row[i]
            lo = yi + delta_y
            for j in range(start[i], n):
                yj = row[j]
                c += yj > lo
                d += yi > yj + delta_y
        conc[b] = c
        disc[b] = d
    return conc, disc


@njit(cache=True, nogil=True)
def weighted_conc_block(xs, wx, perms_sorted, y, wy):
    """Weighted concordant mass and total mass for each permutation row.

    ``xs``/``wx`` are x values and x-pair weights in x-sorted order;
    ``perms_sorted[b, i]`` is the y index paired with sorted position i.
    """
    n_perm, n = perms_sorted.shape
    num = np.zeros(n_perm)
    den = np.zeros(n_perm)
    yp = np.empty(n)
    for b in range(n_perm):
        idx = perms_sorted[b]
        for i in range(n):
            yp[i] = y[idx[i]]
        s_num = 0.0
        s_den = 0.0
        for i in range(n - 1):
            yi = yp[i]
            xi = xs[i]
            wrow = wy[idx[i]]
            for j in range(i + 1, n):
                w = wx[i, j] * wrow[idx[j]]
                s_den += w
                s_num += w * ((xs[j] > xi) & (yp[j] > yi))
        num[b] = s_num
        den[b] = s_den
    return num, den


@njit(cache=True, nogil=True)
def shuffle_block(u):
    """Fisher-Yates permutations of range(n), one per row of uniforms ``u``."""
    m, n = u.shape
    out = np.empty((m, n), dtype=np.int32)
    for r in range(m):
        row = out[r]
        for i in range(n):
            row[i] = i
        for i in range(n - 1, 0, -1):
            j = int(u[r, i] * (i + 1))
            if j > i:
                j = i
            t = row[i]
            row[i] = row[j]
            row[j] = t
    return out


@njit(cache=True, nogil=True)
def concordance_profile(x, y, delta_x, delta_y):
    """Per-observation concordant and discordant valid-pair counts (O(n^2))."""
    n = x.shape[0]
    ch = np.zeros(n)
    dh = np.zeros(n)
    for i in range(n - 1):
        for j in range(i + 1, n):
            xj_hi = x[j] > x[i] + delta_x
            xi_hi = x[i] > x[j] + delta_x
            if not (xj_hi or xi_hi):
                continue
            yj_hi = y[j] > y[i] + delta_y
            yi_hi = y[i] > y[j] + delta_y
            if not (yj_hi or yi_hi):
                continue
            if (xj_hi and yj_hi) or (xi_hi and yi_hi):
                ch[i] += 1.0
                ch[j] += 1.0
            else:
                dh[i] += 1.0
                dh[j] += 1.0
    return ch, dh


@njit(cache=True, nogil=True)
def concordance_profile_batch(x, y, delta_x, delta_y):
    """``concordance_profile`` applied to each row of 2-D ``x`` and ``y``."""
    m, n = x.shape
    ch = np.zeros((m, n))
    dh = np.zeros((m, n))
    for r in range(m):
        c, d = concordance_profile(x[r], y[r], delta_x, delta_y)
        ch[r] = c
        dh[r] = d
    return ch, dh


@njit(cache=True, nogil=True)
def inversions_batch(a):
    """Inversion counts (i < j, a[i] > a[j]) for each row of an integer matrix."""
    m, n = a.shape
    out = np.zeros(m, dtype=np.int64)
    tree = np.zeros(n + 1, dtype=np.int64)
    for r in range(m):
        tree[:] = 0
        inv = 0
        for i in range(n - 1, -1, -1):
            # a holds ranks 0..n-1; count smaller values already seen to the right
            v = a[r, i]
            k = v
            s = 0
            while k > 0:
                s += tree[k]
                k -= k & (-k)
            inv += s
            k = v + 1
            while k <= n:
                tree[k] += 1
                k += k & (-k)
        out[r] = inv
    return out
