"""Hot loops, each in a numba flavour and a pure-numpy flavour.

The public entry points at the bottom dispatch on ``_backend.use_numba()``.
Both flavours implement the same contracts:

* exact inner-product top-k with ties broken by ascending item index,
  dot products accumulated in float64 whatever the storage dtype;
* Precision_k for a batch of subsets, where the query is the subset's
  coordinate sum (ranking is scale invariant, and the sum is exact for
  integer-valued embeddings so mathematical ties stay ties);
* the p+ integrals of the analytic consistency formula, via adaptive
  Simpson over a fixed panel grid.

The numba kernels never depend on the thread count for their numeric
output: every score is computed by one thread with a fixed summation order.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from . import _backend

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

# reassociation lets LLVM vectorise the float64 reduction; no 'ninf'/'nnan'
# because the heaps rely on -inf sentinels comparing correctly.
_FASTMATH = {"reassoc", "contract", "arcp", "nsz"}
_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
TOPK_BLOCK_ROWS = 65536
_MC_CHUNK_BYTES = 256 * 1024 * 1024


# ==========================================================================
# numpy flavour
# ==========================================================================


def select_topk_np(scores, k):
    """Indices of the k best scores, ordered by (score desc, index asc)."""
    n = scores.size
    if k >= n:
        idx = np.arange(n)
    else:
        part = np.argpartition(-scores, k - 1)[:k]
        thr = scores[part].min()
        above = np.flatnonzero(scores > thr)
        ties = np.flatnonzero(scores == thr)[: k - above.size]
        idx = np.concatenate([above, ties])
    order = np.lexsort((idx, -scores[idx]))
    return idx[order]


def scores_np(X, q):
    q = np.asarray(q, dtype=np.float64)
    if X.dtype == np.float64:
        return X @ q
    out = np.empty(X.shape[0], dtype=np.float64)
    for start in range(0, X.shape[0], TOPK_BLOCK_ROWS):
        stop = min(X.shape[0], start + TOPK_BLOCK_ROWS)
        out[start:stop] = X[start:stop].astype(np.float64) @ q
    return out


def topk_np(X, q, k):
    s = scores_np(X, q)
    idx = select_topk_np(s, k)
    return idx, s[idx]


def subsets_from_offsets_np(n, offsets):
    """Partial Fisher-Yates: row t of ``offsets`` holds draws in [0, n - j)."""
    trials, k = offsets.shape
    out = np.empty((trials, k), dtype=np.int64)
    for t in range(trials):
        swaps = {}
        row = offsets[t]
        for j in range(k):
            r = j + int(row[j])
            vj = swaps.get(j, j)
            vr = swaps.get(r, r)
            swaps[r] = vj
            out[t, j] = vr
    out.sort(axis=1)
    return out


def precision_batch_np(X, subsets):
    trials, k = subsets.shape
    n = X.shape[0]
    Xd = X if X.dtype == np.float64 else X.astype(np.float64)
    out = np.empty(trials, dtype=np.float64)
    chunk = max(1, _MC_CHUNK_BYTES // (8 * n))
    for start in range(0, trials, chunk):
        stop = min(trials, start + chunk)
        sub = subsets[start:stop]
        Q = Xd[sub].sum(axis=1)
        S = Q @ Xd.T
        for r in range(stop - start):
            top = select_topk_np(S[r], k)
            out[start + r] = np.isin(top, sub[r], assume_unique=True).sum() / k
    return out


def adaptive_simpson_np(f, a, b, rel_tol=1e-8, max_depth=50, panels=64, abs_floor=1e-300):
    """Vectorised adaptive Simpson of ``f`` over [a, b].

    Intervals are refined breadth-first; every interval obeys the classic
    ``|S_l + S_r - S| <= 15 tol`` acceptance test, with the absolute budget
    set from a first composite-Simpson pass over ``panels`` panels.
    Returns ``(value, error_estimate, converged)``.
    """
    edges = np.linspace(a, b, panels + 1)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    fe = f(edges)
    flo, fhi = fe[:-1], fe[1:]
    fmid = f(mid)
    whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
    budget = max(rel_tol * abs(whole.sum()), abs_floor)
    tol = np.full(panels, budget / panels)
    depth = np.zeros(panels, dtype=np.int64)
    total = 0.0
    err = 0.0
    converged = True
    while lo.size:
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        fv = f(np.concatenate([lm, rm]))
        flm, frm = fv[: lo.size], fv[lo.size:]
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - whole
        ok = np.abs(delta) <= 15.0 * tol
        stuck = ~ok & (depth + 1 >= max_depth)
        if stuck.any():
            converged = False
        done = ok | stuck
        total += float(np.sum(left[done] + right[done] + delta[done] / 15.0))
        err += float(np.sum(np.abs(delta[done]))) / 15.0
        keep = ~done
        lo_k, mid_k, hi_k = lo[keep], mid[keep], hi[keep]
        lo = np.concatenate([lo_k, mid_k])
        hi = np.concatenate([mid_k, hi_k])
        flo_n = np.concatenate([flo[keep], fmid[keep]])
        fhi = np.concatenate([fmid[keep], fhi[keep]])
        fmid = np.concatenate([flm[keep], frm[keep]])
        flo = flo_n
        whole = np.concatenate([left[keep], right[keep]])
        tol = np.concatenate([tol[keep], tol[keep]]) * 0.5
        depth = np.concatenate([depth[keep], depth[keep]]) + 1
        mid = 0.5 * (lo + hi)
    return total, err, converged


def pplus_integrand_np(x, mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb):
    """f_in,(i)(x) * F_out,(k-i+1)(x), evaluated in log space."""
    z = (x - mu_in) / s_in
    log_f = (
        log_coef
        + (k - i) * special.log_ndtr(z)
        + (i - 1) * special.log_ndtr(-z)
        - 0.5 * z * z
        - _LOG_SQRT_2PI
        - math.log(s_in)
    )
    zo = x / s_out
    lp = special.log_ndtr(zo)[:, None]
    lq = special.log_ndtr(-zo)[:, None]
    j = np.arange(j0, m_out + 1, dtype=np.float64)[None, :]
    rest = m_out - j
    terms = lb[None, :] + j * lp + np.where(rest > 0, rest * lq, 0.0)
    top = terms.max(axis=1)
    log_F = top + np.log(np.exp(terms - top[:, None]).sum(axis=1))
    return np.exp(log_f + log_F)


def pplus_batch_np(jobs, lb_flat, rel_tol, max_depth, panels, half_width):
    n = jobs["mu_in"].size
    val = np.empty(n)
    err = np.empty(n)
    conv = np.empty(n, dtype=np.bool_)
    for t in range(n):
        mu_in = jobs["mu_in"][t]
        s_in = jobs["s_in"][t]
        lb = lb_flat[jobs["lb_start"][t]: jobs["lb_start"][t] + jobs["m_out"][t] - jobs["j0"][t] + 1]
        args = (mu_in, s_in, jobs["s_out"][t], jobs["log_coef"][t], jobs["k"][t], jobs["i"][t],
                jobs["m_out"][t], jobs["j0"][t], lb)
        val[t], err[t], conv[t] = adaptive_simpson_np(
            lambda x: pplus_integrand_np(x, *args),
            mu_in - half_width * s_in,
            mu_in + half_width * s_in,
            rel_tol=rel_tol,
            max_depth=max_depth,
            panels=panels,
        )
    return val, err, conv


# ==========================================================================
# numba flavour
# ==========================================================================

if HAVE_NUMBA:

    @njit(cache=True, fastmath=_FASTMATH)
    def _scores_into(X, q, start, stop, out):
        # a tight loop on its own vectorizes far better than one fused with the heap
        d = X.shape[1]
        for r in range(start, stop):
            row = X[r]
            acc = 0.0
            for c in range(d):
                acc += np.float64(row[c]) * q[c]
            out[r - start] = acc

    @njit(cache=True, inline="always")
    def _worse(sa, ia, sb, ib):
        return sa < sb or (sa == sb and ia > ib)

    @njit(cache=True)
    def _sift_down(hs, hi, size, pos):
        while True:
            child = 2 * pos + 1
            if child >= size:
                return
            right = child + 1
            if right < size and _worse(hs[right], hi[right], hs[child], hi[child]):
                child = right
            if _worse(hs[child], hi[child], hs[pos], hi[pos]):
                hs[child], hs[pos] = hs[pos], hs[child]
                hi[child], hi[pos] = hi[pos], hi[child]
                pos = child
            else:
                return

    @njit(cache=True)
    def _offer(hs, hi, size, s, r):
        # min-heap of the `size` best seen so far, worst at the root
        if _worse(hs[0], hi[0], s, r):
            hs[0] = s
            hi[0] = r
            _sift_down(hs, hi, size, 0)

    @njit(cache=True)
    def _heap_init(hs, hi, size, sentinel):
        for t in range(size):
            hs[t] = -np.inf
            hi[t] = sentinel + t

    @njit(cache=True, parallel=True)
    def topk_nb_kernel(X, q, k, block_rows):
        n = X.shape[0]
        nblocks = (n + block_rows - 1) // block_rows
        offs = np.zeros(nblocks + 1, dtype=np.int64)
        for b in range(nblocks):
            length = min(block_rows, n - b * block_rows)
            offs[b + 1] = offs[b] + min(k, length)
        cand_s = np.empty(offs[nblocks])
        cand_i = np.empty(offs[nblocks], dtype=np.int64)
        for b in prange(nblocks):
            start = b * block_rows
            stop = min(n, start + block_rows)
            size = offs[b + 1] - offs[b]
            hs = cand_s[offs[b]: offs[b + 1]]
            hi = cand_i[offs[b]: offs[b + 1]]
            _heap_init(hs, hi, size, n)
            buf = np.empty(stop - start)
            _scores_into(X, q, start, stop, buf)
            for r in range(stop - start):
                if buf[r] >= hs[0]:
                    _offer(hs, hi, size, buf[r], start + r)
        if nblocks == 1:
            return cand_i, cand_s
        hs = np.empty(k)
        hi = np.empty(k, dtype=np.int64)
        _heap_init(hs, hi, k, n)
        for t in range(cand_s.size):
            _offer(hs, hi, k, cand_s[t], cand_i[t])
        return hi, hs

    @njit(cache=True)
    def subsets_from_offsets_nb(n, offsets):
        trials, k = offsets.shape
        out = np.empty((trials, k), dtype=np.int64)
        pos = np.empty(k, dtype=np.int64)
        val = np.empty(k, dtype=np.int64)
        for t in range(trials):
            # sparse swap table: at most 2k touched slots, linear probe is fine
            used = 0
            for j in range(k):
                r = j + offsets[t, j]
                vj = j
                vr = r
                for u in range(used):
                    if pos[u] == j:
                        vj = val[u]
                    if pos[u] == r:
                        vr = val[u]
                found = False
                for u in range(used):
                    if pos[u] == r:
                        val[u] = vj
                        found = True
                        break
                if not found:
                    pos[used] = r
                    val[used] = vj
                    used += 1
                out[t, j] = vr
            out[t].sort()
        return out

    @njit(cache=True, parallel=True)
    def precision_batch_nb(X, subsets, block_rows=8192):
        trials, k = subsets.shape
        n, d = X.shape
        out = np.empty(trials)
        for t in prange(trials):
            q = np.zeros(d)
            for a in range(k):
                row = subsets[t, a]
                for c in range(d):
                    q[c] += np.float64(X[row, c])
            hs = np.empty(k)
            hi = np.empty(k, dtype=np.int64)
            _heap_init(hs, hi, k, n)
            buf = np.empty(min(n, block_rows))
            for start in range(0, n, block_rows):
                stop = min(n, start + block_rows)
                _scores_into(X, q, start, stop, buf)
                for r in range(stop - start):
                    if buf[r] >= hs[0]:
                        _offer(hs, hi, k, buf[r], start + r)
            hits = 0
            for a in range(k):
                target = hi[a]
                for b in range(k):
                    if subsets[t, b] == target:
                        hits += 1
                        break
            out[t] = hits / k
        return out

    @njit(cache=True)
    def log_ndtr_nb(z):
        if z >= 0.0:
            return math.log1p(-0.5 * math.erfc(z / _SQRT2))
        if z > -20.0:
            return math.log(0.5 * math.erfc(-z / _SQRT2))
        z2 = z * z
        term = 1.0
        series = 1.0
        for n in range(1, 13):
            term *= -(2.0 * n - 1.0) / z2
            series += term
        return -0.5 * z2 - math.log(-z) - _LOG_SQRT_2PI + math.log(series)

    @njit(cache=True)
    def _pplus_integrand_nb(x, mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb):
        z = (x - mu_in) / s_in
        log_f = log_coef - 0.5 * z * z - _LOG_SQRT_2PI - math.log(s_in)
        if k - i > 0:
            log_f += (k - i) * log_ndtr_nb(z)
        if i - 1 > 0:
            log_f += (i - 1) * log_ndtr_nb(-z)
        zo = x / s_out
        lp = log_ndtr_nb(zo)
        lq = log_ndtr_nb(-zo)
        nterms = m_out - j0 + 1
        top = -np.inf
        for t in range(nterms):
            j = j0 + t
            v = lb[t] + j * lp
            if m_out - j > 0:
                v += (m_out - j) * lq
            if v > top:
                top = v
        acc = 0.0
        for t in range(nterms):
            j = j0 + t
            v = lb[t] + j * lp
            if m_out - j > 0:
                v += (m_out - j) * lq
            acc += math.exp(v - top)
        return math.exp(log_f + top + math.log(acc))

    @njit(cache=True)
    def _simpson_pplus_nb(a, b, rel_tol, max_depth, panels, mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb):
        cap = panels + 2 * max_depth + 8
        st_lo = np.empty(cap)
        st_hi = np.empty(cap)
        st_flo = np.empty(cap)
        st_fmid = np.empty(cap)
        st_fhi = np.empty(cap)
        st_whole = np.empty(cap)
        st_tol = np.empty(cap)
        st_depth = np.empty(cap, dtype=np.int64)
        width = (b - a) / panels
        first = 0.0
        prev_f = _pplus_integrand_nb(a, mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb)
        # panels pushed in reverse so the stack pops them left to right
        for p in range(panels):
            lo = a + p * width
            hi = b if p == panels - 1 else a + (p + 1) * width
            fhi = _pplus_integrand_nb(hi, mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb)
            fm = _pplus_integrand_nb(0.5 * (lo + hi), mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb)
            slot = panels - 1 - p
            st_lo[slot] = lo
            st_hi[slot] = hi
            st_flo[slot] = prev_f
            st_fmid[slot] = fm
            st_fhi[slot] = fhi
            st_whole[slot] = (hi - lo) / 6.0 * (prev_f + 4.0 * fm + fhi)
            st_depth[slot] = 0
            first += st_whole[slot]
            prev_f = fhi
        budget = max(rel_tol * abs(first), 1e-300)
        for p in range(panels):
            st_tol[p] = budget / panels
        top = panels
        total = 0.0
        err = 0.0
        converged = True
        while top > 0:
            top -= 1
            lo = st_lo[top]
            hi = st_hi[top]
            flo = st_flo[top]
            fm = st_fmid[top]
            fhi = st_fhi[top]
            whole = st_whole[top]
            tol = st_tol[top]
            depth = st_depth[top]
            mid = 0.5 * (lo + hi)
            flm = _pplus_integrand_nb(0.5 * (lo + mid), mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb)
            frm = _pplus_integrand_nb(0.5 * (mid + hi), mu_in, s_in, s_out, log_coef, k, i, m_out, j0, lb)
            left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fm)
            right = (hi - mid) / 6.0 * (fm + 4.0 * frm + fhi)
            delta = left + right - whole
            if abs(delta) <= 15.0 * tol or depth + 1 >= max_depth:
                if abs(delta) > 15.0 * tol:
                    converged = False
                total += left + right + delta / 15.0
                err += abs(delta) / 15.0
                continue
            # right half below, left half on top
            st_lo[top] = mid
            st_hi[top] = hi
            st_flo[top] = fm
            st_fmid[top] = frm
            st_fhi[top] = fhi
            st_whole[top] = right
            st_tol[top] = 0.5 * tol
            st_depth[top] = depth + 1
            top += 1
            st_lo[top] = lo
            st_hi[top] = mid
            st_flo[top] = flo
            st_fmid[top] = flm
            st_fhi[top] = fm
            st_whole[top] = left
            st_tol[top] = 0.5 * tol
            st_depth[top] = depth + 1
            top += 1
        return total, err, converged

    @njit(cache=True, parallel=True)
    def pplus_batch_nb(mu_in, s_in, s_out, log_coef, kk, ii, m_out, j0, lb_start, lb_flat,
                       rel_tol, max_depth, panels, half_width):
        n = mu_in.size
        val = np.empty(n)
        err = np.empty(n)
        conv = np.empty(n, dtype=np.bool_)
        for t in prange(n):
            nterms = m_out[t] - j0[t] + 1
            lb = lb_flat[lb_start[t]: lb_start[t] + nterms]
            a = mu_in[t] - half_width * s_in[t]
            b = mu_in[t] + half_width * s_in[t]
            v, e, c = _simpson_pplus_nb(a, b, rel_tol, max_depth, panels, mu_in[t], s_in[t], s_out[t],
                                        log_coef[t], kk[t], ii[t], m_out[t], j0[t], lb)
            val[t] = v
            err[t] = e
            conv[t] = c
        return val, err, conv


# ==========================================================================
# dispatch
# ==========================================================================


def _numba_active():
    return HAVE_NUMBA and _backend.use_numba()


def topk(X, q, k):
    """Exact top-k of ``X @ q``; returns (indices, scores) best first."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    if not _numba_active():
        return topk_np(X, q, k)
    idx, s = topk_nb_kernel(X, q, int(k), TOPK_BLOCK_ROWS)
    order = np.lexsort((idx, -s))
    return idx[order], s[order]


def subsets_from_offsets(n, offsets):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if _numba_active():
        return subsets_from_offsets_nb(int(n), offsets)
    return subsets_from_offsets_np(int(n), offsets)


def precision_batch(X, subsets):
    subsets = np.ascontiguousarray(subsets, dtype=np.int64)
    if _numba_active():
        return precision_batch_nb(X, subsets)
    return precision_batch_np(X, subsets)


def pplus_batch(jobs, lb_flat, rel_tol, max_depth, panels, half_width):
    if _numba_active():
        return pplus_batch_nb(
            jobs["mu_in"], jobs["s_in"], jobs["s_out"], jobs["log_coef"], jobs["k"], jobs["i"],
            jobs["m_out"], jobs["j0"], jobs["lb_start"], lb_flat,
            float(rel_tol), int(max_depth), int(panels), float(half_width),
        )
    return pplus_batch_np(jobs, lb_flat, rel_tol, max_depth, panels, half_width)
