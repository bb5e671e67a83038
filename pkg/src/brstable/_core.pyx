# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels.

Mirrors ``_pycore`` line for line: same arguments, same order of uniform
draws, same floating-point expressions.  Randomness comes from the numpy
bit generator of the ``Generator`` passed in (``next_double`` only).
"""
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log1p, pow, floor, INFINITY
from libc.stdlib cimport malloc, realloc, free
from numpy.random cimport bitgen_t

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


# ---------------------------------------------------------------------------
# growable buffers and a binary min-heap keyed by (double, int64)
# ---------------------------------------------------------------------------

cdef struct DBuf:
    double *data
    Py_ssize_t n
    Py_ssize_t cap

cdef struct LBuf:
    long long *data
    Py_ssize_t n
    Py_ssize_t cap

cdef int dbuf_init(DBuf *b, Py_ssize_t cap) nogil:
    b.data = <double *> malloc(cap * sizeof(double))
    b.n = 0
    b.cap = cap
    return 0 if b.data != NULL else -1

cdef int dbuf_push(DBuf *b, double v) nogil:
    cdef double *p
    if b.n == b.cap:
        p = <double *> realloc(b.data, 2 * b.cap * sizeof(double))
        if p == NULL:
            return -1
        b.data = p
        b.cap *= 2
    b.data[b.n] = v
    b.n += 1
    return 0

cdef int lbuf_init(LBuf *b, Py_ssize_t cap) nogil:
    b.data = <long long *> malloc(cap * sizeof(long long))
    b.n = 0
    b.cap = cap
    return 0 if b.data != NULL else -1

cdef int lbuf_push(LBuf *b, long long v) nogil:
    cdef long long *p
    if b.n == b.cap:
        p = <long long *> realloc(b.data, 2 * b.cap * sizeof(long long))
        if p == NULL:
            return -1
        b.data = p
        b.cap *= 2
    b.data[b.n] = v
    b.n += 1
    return 0


cdef struct Heap:
    double *key
    long long *idx
    Py_ssize_t n
    Py_ssize_t cap

cdef inline bint _less(Heap *h, Py_ssize_t i, Py_ssize_t j) nogil:
    if h.key[i] < h.key[j]:
        return True
    if h.key[i] > h.key[j]:
        return False
    return h.idx[i] < h.idx[j]

cdef inline void _swap(Heap *h, Py_ssize_t i, Py_ssize_t j) nogil:
    cdef double k = h.key[i]
    cdef long long x = h.idx[i]
    h.key[i] = h.key[j]
    h.idx[i] = h.idx[j]
    h.key[j] = k
    h.idx[j] = x

cdef int heap_init(Heap *h, Py_ssize_t cap) nogil:
    h.key = <double *> malloc(cap * sizeof(double))
    h.idx = <long long *> malloc(cap * sizeof(long long))
    h.n = 0
    h.cap = cap
    return 0 if (h.key != NULL and h.idx != NULL) else -1

cdef void heap_free(Heap *h) nogil:
    free(h.key)
    free(h.idx)

cdef int heap_push(Heap *h, double key, long long idx) nogil:
    cdef Py_ssize_t i, parent
    cdef double *pk
    cdef long long *pi
    if h.n == h.cap:
        pk = <double *> realloc(h.key, 2 * h.cap * sizeof(double))
        if pk == NULL:
            return -1
        h.key = pk
        pi = <long long *> realloc(h.idx, 2 * h.cap * sizeof(long long))
        if pi == NULL:
            return -1
        h.idx = pi
        h.cap *= 2
    i = h.n
    h.key[i] = key
    h.idx[i] = idx
    h.n += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(h, i, parent):
            _swap(h, i, parent)
            i = parent
        else:
            break
    return 0

cdef void heap_pop(Heap *h) nogil:
    cdef Py_ssize_t i = 0, l, r, m
    h.n -= 1
    if h.n == 0:
        return
    h.key[0] = h.key[h.n]
    h.idx[0] = h.idx[h.n]
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < h.n and _less(h, l, m):
            m = l
        if r < h.n and _less(h, r, m):
            m = r
        if m == i:
            break
        _swap(h, i, m)
        i = m


cdef inline bitgen_t *_bitgen(rng) except NULL:
    return <bitgen_t *> PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")

cdef inline double _u(bitgen_t *bg) nogil:
    return bg.next_double(bg.state)

cdef inline Py_ssize_t _pick(bitgen_t *bg, const double[::1] cum, Py_ssize_t nt) nogil:
    cdef double u
    cdef Py_ssize_t k = 0
    if nt == 1:
        return 0
    u = _u(bg)
    while k < nt - 1 and u >= cum[k]:
        k += 1
    return k


cdef object _as_array(DBuf *b):
    out = np.empty(b.n, dtype=np.float64)
    cdef double[::1] v = out
    cdef Py_ssize_t i
    for i in range(b.n):
        v[i] = b.data[i]
    return out

cdef object _as_larray(LBuf *b):
    out = np.empty(b.n, dtype=np.int64)
    cdef long long[::1] v = out
    cdef Py_ssize_t i
    for i in range(b.n):
        v[i] = b.data[i]
    return out


# ---------------------------------------------------------------------------
# Levy-Prokhorov distance
# ---------------------------------------------------------------------------

cdef double _defect(const double *a, const double *w, Py_ssize_t k,
                    const double *y, const double *cum, Py_ssize_t m,
                    double d, double *best, Py_ssize_t *his,
                    Py_ssize_t *dq) nogil:
    cdef Py_ssize_t j, lo = 0, hi = 0, q = 0, head = 0, tail = 0, i
    cdef double pref_max = 0.0, out = 0.0, aj, val, alt, bj, key
    for j in range(k):
        aj = a[j]
        while lo < m and y[lo] < aj and aj - y[lo] > d:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < m and (y[hi] <= aj or y[hi] - aj <= d):
            hi += 1
        his[j] = hi
        while q < j and his[q] <= lo:
            if best[q] > pref_max:
                pref_max = best[q]
            q += 1
        while head < tail and dq[head] < q:
            head += 1
        val = pref_max - (cum[hi] - cum[lo])
        if head < tail:
            i = dq[head]
            alt = best[i] + cum[his[i]] - cum[hi]
            if alt > val:
                val = alt
        bj = w[j] + val
        best[j] = bj
        if bj > out:
            out = bj
        key = bj + cum[hi]
        while tail > head and best[dq[tail - 1]] + cum[his[dq[tail - 1]]] <= key:
            tail -= 1
        dq[tail] = j
        tail += 1
    return out


def lp_defect(a, w, y, cum, double d):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(cum, dtype=np.float64)
    cdef Py_ssize_t k = av.shape[0]
    if k == 0:
        return 0.0
    cdef double *best = <double *> malloc(k * sizeof(double))
    cdef Py_ssize_t *his = <Py_ssize_t *> malloc(k * sizeof(Py_ssize_t))
    cdef Py_ssize_t *dq = <Py_ssize_t *> malloc(k * sizeof(Py_ssize_t))
    cdef double out
    try:
        out = _defect(&av[0], &wv[0], k, &yv[0] if yv.shape[0] else NULL,
                      &cv[0], yv.shape[0], d, best, his, dq)
    finally:
        free(best)
        free(his)
        free(dq)
    return out


# prefix-sum rounding grows linearly in the number of atoms
ROUNDING_FLOOR = 4 * 2.220446049250313e-16


def _merge(loc, wt):
    cdef const double[::1] x = np.ascontiguousarray(loc, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(wt, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i, j = -1
    out_a = np.empty(n)
    out_w = np.empty(n)
    cdef double[::1] a = out_a
    cdef double[::1] w = out_w
    for i in range(n):
        if j >= 0 and a[j] == x[i]:
            w[j] += v[i]
        else:
            j += 1
            a[j] = x[i]
            w[j] = v[i]
    return out_a[:j + 1].copy(), out_w[:j + 1].copy()


def lp_distance(mu_loc, mu_w, nu_loc, nu_w, radii):
    a_np, aw_np = _merge(mu_loc, mu_w)
    b_np, bw_np = _merge(nu_loc, nu_w)
    # sequential prefix sums, same accumulation order as the Python backend
    cdef const double[::1] a = a_np
    cdef const double[::1] aw = aw_np
    cdef const double[::1] b = b_np
    cdef const double[::1] bw = bw_np
    acum_np = np.zeros(a.shape[0] + 1)
    bcum_np = np.zeros(b.shape[0] + 1)
    cdef double[::1] acum = acum_np
    cdef double[::1] bcum = bcum_np
    cdef Py_ssize_t ii
    for ii in range(a.shape[0]):
        acum[ii + 1] = acum[ii] + aw[ii]
    for ii in range(b.shape[0]):
        bcum[ii + 1] = bcum[ii] + bw[ii]
    cdef const double[::1] rad = np.ascontiguousarray(radii, dtype=np.float64)
    cdef Py_ssize_t k = a.shape[0], m = b.shape[0], nr = rad.shape[0]
    cdef Py_ssize_t big = (k if k > m else m) + 1
    cdef double *best = <double *> malloc(big * sizeof(double))
    cdef Py_ssize_t *his = <Py_ssize_t *> malloc(big * sizeof(Py_ssize_t))
    cdef Py_ssize_t *dq = <Py_ssize_t *> malloc(big * sizeof(Py_ssize_t))
    cdef Py_ssize_t lo = 0, hi = nr - 1, mid, found = nr - 1
    cdef double f, f1, f2, nxt, fval = 0.0
    cdef bint have = False
    # defects are differences of prefix sums; below this floor they are rounding
    cdef double tol = ROUNDING_FLOOR * (k + m + 2) * (acum[k] + bcum[m])
    cdef const double *ap = &a[0] if k else NULL
    cdef const double *awp = &aw[0] if k else NULL
    cdef const double *bp = &b[0] if m else NULL
    cdef const double *bwp = &bw[0] if m else NULL
    cdef const double *acp = &acum[0]
    cdef const double *bcp = &bcum[0]
    try:
        with nogil:
            while lo <= hi:
                mid = (lo + hi) // 2
                f1 = _defect(ap, awp, k, bp, bcp, m, rad[mid], best, his, dq) if k else 0.0
                f2 = _defect(bp, bwp, m, ap, acp, k, rad[mid], best, his, dq) if m else 0.0
                f = f1 if f1 > f2 else f2
                if f <= tol:
                    f = 0.0
                nxt = rad[mid + 1] if mid + 1 < nr else INFINITY
                if f <= nxt:
                    found = mid
                    fval = f
                    have = True
                    hi = mid - 1
                else:
                    lo = mid + 1
            if not have:
                f1 = _defect(ap, awp, k, bp, bcp, m, rad[found], best, his, dq) if k else 0.0
                f2 = _defect(bp, bwp, m, ap, acp, k, rad[found], best, his, dq) if m else 0.0
                fval = f1 if f1 > f2 else f2
                if fval <= tol:
                    fval = 0.0
    finally:
        free(best)
        free(his)
        free(dq)
    return rad[found] if rad[found] > fval else fval


# ---------------------------------------------------------------------------
# trimmed branching-stable forest
# ---------------------------------------------------------------------------

def stable_forest(rng, double alpha, double bmax, double window, double horizon,
                  tmpl_atoms, tmpl_start, tmpl_cum, long long max_atoms):
    cdef const double[::1] atoms = np.ascontiguousarray(tmpl_atoms, dtype=np.float64)
    cdef const long long[::1] start = np.ascontiguousarray(tmpl_start, dtype=np.int64)
    cdef const double[::1] cum = np.ascontiguousarray(tmpl_cum, dtype=np.float64)
    cdef Py_ssize_t nt = cum.shape[0]
    cdef bitgen_t *bg = _bitgen(rng)
    cdef double inv_alpha = 1.0 / alpha
    cdef DBuf pos, born, maxd, rate
    cdef LBuf parent
    cdef Heap heap
    cdef bint exploded = False
    cdef int err = 0
    cdef double t_reached = 0.0, c, r0, e, t, x, s, mi, d, xc, cc, rc
    cdef long long i
    cdef Py_ssize_t k, j
    dbuf_init(&pos, 64); dbuf_init(&born, 64); dbuf_init(&maxd, 64)
    dbuf_init(&rate, 64); lbuf_init(&parent, 64); heap_init(&heap, 64)
    try:
        with rng.bit_generator.lock:
          with nogil:
            dbuf_push(&pos, 0.0); dbuf_push(&born, 0.0); dbuf_push(&maxd, 0.0)
            lbuf_push(&parent, -1)
            c = bmax if bmax < window else window
            r0 = pow(c, alpha) if c > 0.0 else 0.0
            dbuf_push(&rate, r0)
            if r0 > 0.0:
                e = -log1p(-_u(bg)) / r0
                heap_push(&heap, e, 0)
            while heap.n > 0:
                t = heap.key[0]
                i = heap.idx[0]
                if t > horizon:
                    break
                heap_pop(&heap)
                t_reached = t
                x = pos.data[i]
                c = bmax if bmax < window - x else window - x
                s = c * pow(_u(bg), inv_alpha)
                k = _pick(bg, cum, nt)
                mi = maxd.data[i]
                for j in range(start[k], start[k + 1]):
                    d = s * atoms[j]
                    if d > c:
                        break
                    if pos.n >= max_atoms:
                        exploded = True
                        break
                    xc = x + d
                    err |= dbuf_push(&pos, xc)
                    err |= dbuf_push(&born, t)
                    err |= dbuf_push(&maxd, d if d > mi else mi)
                    err |= lbuf_push(&parent, i)
                    cc = bmax if bmax < window - xc else window - xc
                    rc = pow(cc, alpha) if cc > 0.0 else 0.0
                    err |= dbuf_push(&rate, rc)
                    if rc > 0.0:
                        e = -log1p(-_u(bg)) / rc
                        err |= heap_push(&heap, t + e, pos.n - 1)
                if exploded or err:
                    break
                e = -log1p(-_u(bg)) / rate.data[i]
                err |= heap_push(&heap, t + e, i)
        if err:
            raise MemoryError("stable_forest: allocation failed")
        return (_as_array(&pos), _as_array(&born), _as_array(&maxd),
                _as_larray(&parent), bool(exploded), t_reached)
    finally:
        free(pos.data); free(born.data); free(maxd.data); free(rate.data)
        free(parent.data); heap_free(&heap)


# ---------------------------------------------------------------------------
# rescaled / trimmed branching random walk forest
# ---------------------------------------------------------------------------

cdef inline double _fire_prob(double a_n, double c, double alpha) nogil:
    cdef double s = a_n * c
    if s >= 1.0:
        return 1.0
    if s <= 0.0:
        return 0.0
    return pow(s, alpha)

cdef inline long long _next_gen(bitgen_t *bg, long long g, double p, long long n_gen) nogil:
    cdef double u, k
    if p >= 1.0:
        return g + 1 if g + 1 <= n_gen else -1
    if p <= 0.0:
        return -1
    u = _u(bg)
    k = floor(log1p(-u) / log1p(-p))
    if k >= <double> (n_gen - g):
        return -1
    return g + 1 + <long long> k


def brw_forest(rng, double alpha, double a_n, double b, double window, long long n_gen,
               tmpl_atoms, tmpl_start, tmpl_cum, long long max_atoms):
    cdef const double[::1] atoms = np.ascontiguousarray(tmpl_atoms, dtype=np.float64)
    cdef const long long[::1] start = np.ascontiguousarray(tmpl_start, dtype=np.int64)
    cdef const double[::1] cum = np.ascontiguousarray(tmpl_cum, dtype=np.float64)
    cdef Py_ssize_t nt = cum.shape[0]
    cdef bitgen_t *bg = _bitgen(rng)
    cdef double inv_alpha = 1.0 / alpha
    cdef DBuf pos, maxd, prob
    cdef LBuf gen, parent
    cdef Heap heap
    cdef bint exploded = False
    cdef int err = 0
    cdef long long g_reached = 0, g, gc, gn, g1, i
    cdef double c, p0, x, v, d1, mi, d, xc, cc, pc
    cdef Py_ssize_t k, j
    dbuf_init(&pos, 64); dbuf_init(&maxd, 64); dbuf_init(&prob, 64)
    lbuf_init(&gen, 64); lbuf_init(&parent, 64); heap_init(&heap, 64)
    try:
        with rng.bit_generator.lock:
          with nogil:
            dbuf_push(&pos, 0.0); lbuf_push(&gen, 0); dbuf_push(&maxd, 0.0)
            lbuf_push(&parent, -1)
            c = b if b < window else window
            p0 = _fire_prob(a_n, c, alpha)
            dbuf_push(&prob, p0)
            g1 = _next_gen(bg, 0, p0, n_gen)
            if g1 >= 0:
                heap_push(&heap, <double> g1, 0)
            while heap.n > 0:
                g = <long long> heap.key[0]
                i = heap.idx[0]
                heap_pop(&heap)
                g_reached = g
                x = pos.data[i]
                c = b if b < window - x else window - x
                v = _u(bg)
                if a_n * c < 1.0:
                    d1 = c * pow(v, inv_alpha)
                else:
                    d1 = pow(v, inv_alpha) / a_n
                k = _pick(bg, cum, nt)
                mi = maxd.data[i]
                for j in range(start[k], start[k + 1]):
                    d = d1 * atoms[j]
                    if d > c:
                        break
                    if pos.n >= max_atoms:
                        exploded = True
                        break
                    xc = x + d
                    err |= dbuf_push(&pos, xc)
                    err |= lbuf_push(&gen, g)
                    err |= dbuf_push(&maxd, d if d > mi else mi)
                    err |= lbuf_push(&parent, i)
                    cc = b if b < window - xc else window - xc
                    pc = _fire_prob(a_n, cc, alpha)
                    err |= dbuf_push(&prob, pc)
                    gc = _next_gen(bg, g, pc, n_gen)
                    if gc >= 0:
                        err |= heap_push(&heap, <double> gc, pos.n - 1)
                if exploded or err:
                    break
                gn = _next_gen(bg, g, prob.data[i], n_gen)
                if gn >= 0:
                    err |= heap_push(&heap, <double> gn, i)
        if err:
            raise MemoryError("brw_forest: allocation failed")
        return (_as_array(&pos), _as_larray(&gen), _as_array(&maxd),
                _as_larray(&parent), bool(exploded), g_reached)
    finally:
        free(pos.data); free(maxd.data); free(prob.data)
        free(gen.data); free(parent.data); heap_free(&heap)
