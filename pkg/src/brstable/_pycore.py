"""Pure-Python kernels.

Same signatures and the same sequence of uniform draws as the compiled
``_core`` module, so a given generator state produces identical output on
either backend.  Every random number is a single ``rng.random()`` call
(``next_double`` on the bit generator); exponentials and geometrics are
obtained by inversion with ``log1p``.
"""
from __future__ import annotations

import heapq
from math import floor, inf, log1p

import numpy as np

BACKEND = "python"


# ---------------------------------------------------------------------------
# Levy-Prokhorov distance between atomic measures on the line
# ---------------------------------------------------------------------------

def lp_defect(a, w, y, cum, d):
    """Largest ``mu(A) - nu(closed d-neighbourhood of A)`` over atom subsets A.

    ``a`` holds the distinct locations of the left measure (sorted) and ``w``
    their weights; ``y`` the sorted locations of the right measure with
    ``cum`` its prefix sums (``len(y) + 1`` entries).  Runs in O(len(a) +
    len(y)) with a monotone deque for the overlapping-interval transitions.
    """
    k = len(a)
    m = len(y)
    best = [0.0] * k
    his = [0] * k
    lo = 0
    hi = 0
    q = 0            # predecessors [0, q) have hi <= lo_j
    pref_max = 0.0   # max(0, best over that prefix)
    dq = []          # indices i in [q, j) with decreasing best[i] + cum[his[i]]
    head = 0
    out = 0.0
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
        while head < len(dq) and dq[head] < q:
            head += 1
        val = pref_max - (cum[hi] - cum[lo])
        if head < len(dq):
            i = dq[head]
            alt = best[i] + cum[his[i]] - cum[hi]
            if alt > val:
                val = alt
        bj = w[j] + val
        best[j] = bj
        if bj > out:
            out = bj
        key = bj + cum[hi]
        while len(dq) > head and best[dq[-1]] + cum[his[dq[-1]]] <= key:
            dq.pop()
        dq.append(j)
    return out


# prefix-sum rounding grows linearly in the number of atoms
ROUNDING_FLOOR = 4 * 2.220446049250313e-16


def _merge(loc, wt):
    a = []
    w = []
    for x, v in zip(loc, wt):
        if a and a[-1] == x:
            w[-1] += v
        else:
            a.append(x)
            w.append(v)
    return a, w


def lp_distance(mu_loc, mu_w, nu_loc, nu_w, radii):
    """Exact LP distance; ``radii`` are the sorted distinct candidate radii.

    ``radii[0]`` must be 0 and the rest every distinct ``|x - y|`` between
    the two supports.  Binary search for the first radius whose defect fits
    below the next radius.
    """
    a, aw = _merge(list(mu_loc), list(mu_w))
    b, bw = _merge(list(nu_loc), list(nu_w))
    acum = [0.0]
    for v in aw:
        acum.append(acum[-1] + v)
    bcum = [0.0]
    for v in bw:
        bcum.append(bcum[-1] + v)
    radii = list(radii)
    nr = len(radii)
    # defects are differences of prefix sums; below this floor they are rounding
    tol = ROUNDING_FLOOR * (len(a) + len(b) + 2) * (acum[-1] + bcum[-1])

    def defect(idx):
        d = radii[idx]
        f1 = lp_defect(a, aw, b, bcum, d)
        f2 = lp_defect(b, bw, a, acum, d)
        f = f1 if f1 > f2 else f2
        return 0.0 if f <= tol else f

    lo, hi = 0, nr - 1
    found = nr - 1
    fval = None
    while lo <= hi:
        mid = (lo + hi) // 2
        f = defect(mid)
        nxt = radii[mid + 1] if mid + 1 < nr else inf
        if f <= nxt:
            found = mid
            fval = f
            hi = mid - 1
        else:
            lo = mid + 1
    if fval is None:
        fval = defect(found)
    return radii[found] if radii[found] > fval else fval


# ---------------------------------------------------------------------------
# Event-driven forests
# ---------------------------------------------------------------------------

def _pick(rand, cum, nt):
    if nt == 1:
        return 0
    u = rand()
    k = 0
    while k < nt - 1 and u >= cum[k]:
        k += 1
    return k


def stable_forest(rng, alpha, bmax, window, horizon,
                  tmpl_atoms, tmpl_start, tmpl_cum, max_atoms):
    """Birth forest of the trimmed branching-stable process on ``[0, window]``.

    Immortal-parent dynamics: a particle at ``x`` fires at rate ``c**alpha``
    with ``c = min(bmax, window - x)``; a firing places children at
    ``x + c * V**(1/alpha) * y_j`` for the atoms ``y_j <= V**(-1/alpha)`` of a
    template drawn from the directional law.

    Returns ``(pos, born, maxdisp, parent, exploded, t_reached)``.
    """
    rand = rng.random
    inv_alpha = 1.0 / alpha
    atoms = [float(v) for v in tmpl_atoms]
    start = [int(v) for v in tmpl_start]
    cum = [float(v) for v in tmpl_cum]
    nt = len(cum)
    pos = [0.0]
    born = [0.0]
    maxd = [0.0]
    parent = [-1]
    rate = []
    heap = []
    exploded = False
    t_reached = 0.0

    c = bmax if bmax < window else window
    r0 = c ** alpha if c > 0.0 else 0.0
    rate.append(r0)
    if r0 > 0.0:
        e = -log1p(-rand()) / r0
        heapq.heappush(heap, (e, 0))
    while heap:
        t, i = heap[0]
        if t > horizon:
            break
        heapq.heappop(heap)
        t_reached = t
        x = pos[i]
        c = bmax if bmax < window - x else window - x
        s = c * rand() ** inv_alpha
        k = _pick(rand, cum, nt)
        mi = maxd[i]
        for j in range(start[k], start[k + 1]):
            d = s * atoms[j]
            if d > c:
                break
            if len(pos) >= max_atoms:
                exploded = True
                break
            xc = x + d
            pos.append(xc)
            born.append(t)
            maxd.append(d if d > mi else mi)
            parent.append(i)
            cc = bmax if bmax < window - xc else window - xc
            rc = cc ** alpha if cc > 0.0 else 0.0
            rate.append(rc)
            if rc > 0.0:
                e = -log1p(-rand()) / rc
                heapq.heappush(heap, (t + e, len(pos) - 1))
        if exploded:
            break
        e = -log1p(-rand()) / rate[i]
        heapq.heappush(heap, (t + e, i))
    return (np.array(pos), np.array(born), np.array(maxd),
            np.array(parent, dtype=np.int64), exploded, t_reached)


def _fire_prob(a_n, c, alpha):
    s = a_n * c
    if s >= 1.0:
        return 1.0
    if s <= 0.0:
        return 0.0
    return s ** alpha


def _next_gen(rand, g, p, n_gen):
    if p >= 1.0:
        return g + 1 if g + 1 <= n_gen else -1
    if p <= 0.0:
        return -1
    u = rand()
    k = floor(log1p(-u) / log1p(-p))
    if k >= n_gen - g:
        return -1
    return g + 1 + int(k)


def brw_forest(rng, alpha, a_n, b, window, n_gen,
               tmpl_atoms, tmpl_start, tmpl_cum, max_atoms):
    """Birth forest of the rescaled (and optionally trimmed) walk.

    Positions are in rescaled units (divided by ``a_n``).  For the power-law
    first atom ``F_1(t) = min(t, 1)**alpha`` a particle at ``x`` produces a
    visible cluster in a given generation with probability
    ``F_1(a_n * c)``, ``c = min(b, window - x)``; the waiting time is
    geometric and the cluster is drawn conditionally on being visible.

    Returns ``(pos, gen, maxdisp, parent, exploded, gen_reached)``.
    """
    rand = rng.random
    inv_alpha = 1.0 / alpha
    atoms = [float(v) for v in tmpl_atoms]
    start = [int(v) for v in tmpl_start]
    cum = [float(v) for v in tmpl_cum]
    nt = len(cum)
    pos = [0.0]
    gen = [0]
    maxd = [0.0]
    parent = [-1]
    prob = []
    heap = []
    exploded = False
    g_reached = 0

    c = b if b < window else window
    p0 = _fire_prob(a_n, c, alpha)
    prob.append(p0)
    g1 = _next_gen(rand, 0, p0, n_gen)
    if g1 >= 0:
        heapq.heappush(heap, (g1, 0))
    while heap:
        g, i = heapq.heappop(heap)
        g_reached = g
        x = pos[i]
        c = b if b < window - x else window - x
        v = rand()
        if a_n * c < 1.0:
            d1 = c * v ** inv_alpha
        else:
            d1 = v ** inv_alpha / a_n
        k = _pick(rand, cum, nt)
        mi = maxd[i]
        for j in range(start[k], start[k + 1]):
            d = d1 * atoms[j]
            if d > c:
                break
            if len(pos) >= max_atoms:
                exploded = True
                break
            xc = x + d
            pos.append(xc)
            gen.append(g)
            maxd.append(d if d > mi else mi)
            parent.append(i)
            cc = b if b < window - xc else window - xc
            pc = _fire_prob(a_n, cc, alpha)
            prob.append(pc)
            gc = _next_gen(rand, g, pc, n_gen)
            if gc >= 0:
                heapq.heappush(heap, (gc, len(pos) - 1))
        if exploded:
            break
        gn = _next_gen(rand, g, prob[i], n_gen)
        if gn >= 0:
            heapq.heappush(heap, (gn, i))
    return (np.array(pos), np.array(gen, dtype=np.int64), np.array(maxd),
            np.array(parent, dtype=np.int64), exploded, g_reached)
