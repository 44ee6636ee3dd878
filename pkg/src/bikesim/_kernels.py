"""Compiled inner loops of the projection used at every reoptimization epoch.

These mirror :func:`bikesim.projection.project_stock` and
:func:`bikesim.projection.detect_shortages` step for step (same splitting
points, same arithmetic) but only accumulate the quantities the optimizer
needs: total expected loss, first shortage start and its loss. The walk over
a projection is resumable, so the part before an intervention is computed once
and shared by every amount tried at that time.

Station data is passed as plain arrays: breakpoints ``bp`` (seconds, float),
balance slope ``g``, rental rate ``rent`` and return rate ``ret`` (all per
second, one per piece).
"""

import math

import numpy as np
from numba import njit

FEAS_EPS = 1e-9
SCORE_SCALE = 1e9
DELAY_SCALE = 1e6

NONE = 0
BIKE = 1
STAND = 2


@njit(cache=True)
def quantize(x, scale):
    return np.int64(math.floor(x * scale + 0.5))


@njit(cache=True)
def _piece(bp, t):
    k = np.searchsorted(bp, t, side="right") - 1
    m = len(bp) - 2
    if k > m:
        k = m
    if k < 0:
        k = 0
    return k


@njit(cache=True)
def _clamp(x, u):
    if x < 0.0:
        return 0.0
    if x > u:
        return u
    return x


@njit(cache=True)
def _walk(bp, g, rent, ret, u, it, ia, t_stop, track,
          t, v, j, k, total, first_start, first_lost, have_first, open_kind, open_start, open_lost, clear):
    """Advance the shortage accounting of a projection from ``t`` to ``t_stop``.

    The state tuple is threaded through unchanged in meaning so a walk can be
    split at an intervention time and resumed with identical arithmetic. With
    ``track`` the smallest distance to a bound is kept in ``clear``.
    """
    n_iv = len(it)
    while t < t_stop:
        c = bp[k + 1]
        if j < n_iv and it[j] < c:
            c = it[j]
        if c > t_stop:
            c = t_stop
        if c > t:
            gk = g[k]
            # [ba, c) is the part at a bound of kind bkind
            ba = c
            bkind = NONE
            if gk > 0 and v < u:
                h = t + (u - v) / gk
                if h < c:
                    ba = h
                    bkind = STAND
                    v = u
                else:
                    v = min(u, v + gk * (c - t))
            elif gk < 0 and v > 0:
                h = t + (0.0 - v) / gk
                if h < c:
                    ba = h
                    bkind = BIKE
                    v = 0.0
                else:
                    v = max(0.0, v + gk * (c - t))
            elif v == 0.0:
                ba = t
                bkind = BIKE
            elif v == u:
                ba = t
                bkind = STAND
            if track and bkind != NONE:
                clear = 0.0
            # moving part [t, ba)
            if ba > t and open_kind != NONE:
                total += open_lost
                if not have_first:
                    first_start = open_start
                    first_lost = open_lost
                    have_first = True
                open_kind = NONE
            # bound part [ba, c)
            if bkind != NONE and c > ba:
                r = rent[k] if bkind == BIKE else ret[k]
                if r > 0:
                    lost = r * (c - ba)
                    if open_kind == bkind:
                        open_lost += lost
                    else:
                        if open_kind != NONE:
                            total += open_lost
                            if not have_first:
                                first_start = open_start
                                first_lost = open_lost
                                have_first = True
                        open_kind = bkind
                        open_start = ba
                        open_lost = lost
                elif open_kind != NONE:
                    total += open_lost
                    if not have_first:
                        first_start = open_start
                        first_lost = open_lost
                        have_first = True
                    open_kind = NONE
            t = c
        if t >= bp[k + 1] and k < len(g) - 1:
            k += 1
        if track:
            clear = min(clear, v, u - v)
        while j < n_iv and it[j] <= t:
            v = _clamp(v + ia[j], u)
            j += 1
        if track:
            clear = min(clear, v, u - v)
        if t >= bp[-1]:
            break
    return t, v, j, k, total, first_start, first_lost, have_first, open_kind, open_start, open_lost, clear


@njit(cache=True)
def _close_open(st):
    """``(total, first_start, first_lost)`` of a walk state, closing any open shortage."""
    total, first_start, first_lost, have_first, open_kind, open_start, open_lost = (
        st[4], st[5], st[6], st[7], st[8], st[9], st[10])
    if open_kind != NONE:
        total += open_lost
        if not have_first:
            first_start = open_start
            first_lost = open_lost
    return total, first_start, first_lost


@njit(cache=True)
def scan(bp, g, rent, ret, u, t0, v0, it, ia):
    """Return ``(total_lost, first_start, first_lost)`` of the projection.

    ``it``/``ia`` are sorted intervention times and amounts (``it >= t0``).
    ``first_start`` is the horizon when there is no shortage.
    """
    H = bp[-1]
    v = v0
    j = 0
    while j < len(it) and it[j] <= t0:
        v = _clamp(v + ia[j], u)
        j += 1
    st = _walk(bp, g, rent, ret, u, it, ia, H, False,
               t0, v, j, _piece(bp, t0), 0.0, H, 0.0, False, NONE, 0.0, 0.0, u)
    return _close_open(st)


@njit(cache=True)
def scan_all(offsets, bp, g, rent, ret, caps, t0, stocks):
    """Batched :func:`scan` without interventions; station ``s`` uses
    ``bp[offsets[s]:offsets[s+1]]`` and the matching ``offsets[s] - s`` piece slice."""
    n = len(caps)
    total = np.empty(n)
    first = np.empty(n)
    first_lost = np.empty(n)
    none_t = np.empty(0)
    none_a = np.empty(0)
    for s in range(n):
        a, b = offsets[s], offsets[s + 1]
        pa, pb = a - s, b - s - 1
        total[s], first[s], first_lost[s] = scan(
            bp[a:b], g[pa:pb], rent[pa:pb], ret[pa:pb], caps[s], t0, stocks[s], none_t, none_a
        )
    return total, first, first_lost


@njit(cache=True)
def value_at(bp, g, u, t0, v0, it, ia, t_query):
    """Value just before ``t_query`` (interventions at ``t_query`` excluded)."""
    t = t0
    v = v0
    j = 0
    n_iv = len(it)
    while j < n_iv and it[j] <= t and it[j] < t_query:
        v = _clamp(v + ia[j], u)
        j += 1
    k = _piece(bp, t)
    while t < t_query:
        c = bp[k + 1]
        if j < n_iv and it[j] < c:
            c = it[j]
        if c > t_query:
            c = t_query
        if c > t:
            gk = g[k]
            if gk > 0 and v < u:
                v = min(u, v + gk * (c - t))
            elif gk < 0 and v > 0:
                v = max(0.0, v + gk * (c - t))
            t = c
        if t >= bp[k + 1] and k < len(g) - 1:
            k += 1
        while j < n_iv and it[j] <= t and it[j] < t_query:
            v = _clamp(v + ia[j], u)
            j += 1
        if t >= bp[-1]:
            break
    return v


@njit(cache=True)
def clearance(bp, g, u, t0, v0, it, ia, t_from):
    """Smallest distance ``min(v, u - v)`` of the projection to a bound over
    ``[t_from, H]``, counting values after any jump at ``t_from``.

    ``t_from`` must be ``t0`` or an intervention time. The projection is linear
    between evaluation points and ``min(v, u - v)`` is concave, so checking
    segment ends is enough.
    """
    H = bp[-1]
    v = v0
    j = 0
    while j < len(it) and it[j] <= t0:
        v = _clamp(v + ia[j], u)
        j += 1
    st = _walk(bp, g, g, g, u, it, ia, t_from, False,
               t0, v, j, _piece(bp, t0), 0.0, H, 0.0, False, NONE, 0.0, 0.0, u)
    v = st[1]
    st = _walk(bp, g, g, g, u, it, ia, H, True,
               st[0], v, st[2], st[3], 0.0, H, 0.0, False, NONE, 0.0, 0.0, min(u, v, u - v))
    return st[11]


@njit(cache=True)
def base_points(bp, g, u, t0, v0):
    """Vertices ``(times, values)`` of the projection without interventions."""
    n = len(g)
    pt = np.empty(2 * n + 2)
    pv = np.empty(2 * n + 2)
    m = 0
    t = t0
    v = v0
    pt[0] = t
    pv[0] = v
    m = 1
    k = _piece(bp, t)
    H = bp[-1]
    while t < H:
        c = bp[k + 1]
        if c > t:
            gk = g[k]
            if gk > 0 and v < u:
                h = t + (u - v) / gk
                if h < c:
                    pt[m] = h
                    pv[m] = u
                    m += 1
                v = min(u, v + gk * (c - t))
            elif gk < 0 and v > 0:
                h = t + (0.0 - v) / gk
                if h < c:
                    pt[m] = h
                    pv[m] = 0.0
                    m += 1
                v = max(0.0, v + gk * (c - t))
            pt[m] = c
            pv[m] = v
            m += 1
            t = c
        if k < n - 1:
            k += 1
        else:
            break
    return pt[:m], pv[:m]


@njit(cache=True)
def _sat(w, level, below):
    return w <= level if below else w >= level


@njit(cache=True)
def _point_value(pt, pv, t):
    i = np.searchsorted(pt, t, side="right") - 1
    if i >= len(pt) - 1:
        return pv[-1]
    if i < 0:
        i = 0
    a, b = pt[i], pt[i + 1]
    return pv[i] + (pv[i + 1] - pv[i]) * (t - a) / (b - a)


@njit(cache=True)
def _first_time(pt, pv, t_from, level, below):
    """Earliest ``t >= t_from`` on the polyline with value ``<= level``
    (``below``) or ``>= level``; ``inf`` if none."""
    i = np.searchsorted(pt, t_from, side="right") - 1
    if i < 0:
        i = 0
    for q in range(i, len(pt) - 1):
        a, b = pt[q], pt[q + 1]
        if b <= a or b <= t_from:
            continue
        lo = max(a, t_from)
        va, vb = pv[q], pv[q + 1]
        vlo = va + (vb - va) * (lo - a) / (b - a)
        if _sat(vlo, level, below):
            return lo
        if _sat(vb, level, below):
            x = a + (level - va) * (b - a) / (vb - va)
            return max(x, lo)
    return np.inf


@njit(cache=True)
def earliest_feasible(pt, pv, u, E, O, horizon):
    """First integer time ``>= E`` at which exchanging ``O`` bikes fits the
    projection given by its vertices; ``-1`` if none before ``horizon``."""
    if O > 0:
        level = u - O + FEAS_EPS
        below = True
    else:
        level = -O - FEAS_EPS
        below = False
    t_from = float(E)
    while True:
        x = _first_time(pt, pv, t_from, level, below)
        if not np.isfinite(x):
            return -1
        T = math.ceil(x - 1e-7)
        if T < t_from:
            T = int(t_from)
        if T >= horizon:
            return -1
        if _sat(_point_value(pt, pv, float(T)), level, below):
            return T
        t_from = float(T + 1)


@njit(cache=True)
def _insert(it, ia, T, O):
    n = len(it)
    nt = np.empty(n + 1)
    na = np.empty(n + 1)
    p = 0
    while p < n and it[p] <= T:
        nt[p] = it[p]
        na[p] = ia[p]
        p += 1
    nt[p] = T
    na[p] = O
    for q in range(p, n):
        nt[q + 1] = it[q]
        na[q + 1] = ia[q]
    return nt, na


@njit(cache=True)
def _better(qs, qd, T, qc, O, bqs, bqd, bT, bqc, bO):
    """Lexicographic preference: score, delay, earlier time, larger clearance,
    smaller |O|, unload."""
    if qs != bqs:
        return qs > bqs
    if qd != bqd:
        return qd > bqd
    if T != bT:
        return T < bT
    if qc != bqc:
        return qc > bqc
    if abs(O) != abs(bO):
        return abs(O) < abs(bO)
    return O > bO


@njit(cache=True)
def best_candidate(bp, g, rent, ret, u, t0, v0, pt, pv, base_total, base_first,
                   E, max_unload, max_load, deadline, svc):
    """Best (amount, time) for one vehicle at one station.

    Amounts ``+1..max_unload`` and ``-1..-max_load`` each get the earliest
    feasible integer time ``>= E`` on the no-intervention projection
    ``(pt, pv)``; candidates whose service would end after ``deadline`` are
    dropped. Returns ``(found, score, delay, T, clearance, O)``.

    The feasible set shrinks as the amount grows, so the earliest time is
    non-decreasing in the magnitude and the search resumes where it stopped.
    The walk up to each arrival time is shared by all amounts at that time.
    """
    H = bp[-1]
    found = False
    b_score = 0.0
    b_delay = 0.0
    b_clear = 0.0
    bqs = np.int64(0)
    bqd = np.int64(0)
    bqc = np.int64(0)
    bT = 0
    bO = 0
    k0 = _piece(bp, t0)
    none = np.empty(0)
    pre_T = -1
    pre = _walk(bp, g, rent, ret, u, none, none, t0, False,
                t0, v0, 0, k0, 0.0, H, 0.0, False, NONE, 0.0, 0.0, u)
    for sgn in (1, -1):
        top = max_unload if sgn > 0 else max_load
        start = E
        for mag in range(1, top + 1):
            O = sgn * mag
            T = earliest_feasible(pt, pv, u, start, O, H)
            if T < 0 or T + mag * svc > deadline:
                break
            start = T
            if T != pre_T:
                pre = _walk(bp, g, rent, ret, u, none, none, float(T), False,
                            t0, v0, 0, k0, 0.0, H, 0.0, False, NONE, 0.0, 0.0, u)
                pre_T = T
            v = _clamp(pre[1] + O, u)
            st = _walk(bp, g, rent, ret, u, none, none, H, True,
                       pre[0], v, 0, pre[3], pre[4], pre[5], pre[6], pre[7], pre[8], pre[9], pre[10],
                       min(u, v, u - v))
            tot, fs, _ = _close_open(st)
            cl = st[11]
            score = base_total - tot
            delay = fs - base_first
            qs = quantize(score, SCORE_SCALE)
            qd = quantize(delay, DELAY_SCALE)
            qc = quantize(cl, DELAY_SCALE)
            if (not found) or _better(qs, qd, T, qc, O, bqs, bqd, bT, bqc, bO):
                found = True
                b_score, b_delay, b_clear, bqs, bqd, bqc, bT, bO = score, delay, cl, qs, qd, qc, T, O
    return found, b_score, b_delay, bT, b_clear, bO


@njit(cache=True)
def best_amount_at(bp, g, rent, ret, u, t0, v0, it, ia, T, max_unload, max_load, max_mag):
    """Best amount (0 allowed) for a visit fixed at time ``T``, on top of the
    interventions ``it``/``ia``. Returns ``(score, delay, O)``."""
    base_total, base_first, _ = scan(bp, g, rent, ret, u, t0, v0, it, ia)
    w = value_at(bp, g, u, t0, v0, it, ia, float(T))
    up = min(max_unload, int(math.floor(u - w + FEAS_EPS)), max_mag)
    down = min(max_load, int(math.floor(w + FEAS_EPS)), max_mag)
    b_score = 0.0
    b_delay = 0.0
    bqs = np.int64(0)
    bqd = np.int64(0)
    bqc = quantize(clearance(bp, g, u, t0, v0, it, ia, float(T)), DELAY_SCALE)
    bO = 0
    for sgn in (1, -1):
        top = up if sgn > 0 else down
        for mag in range(1, top + 1):
            O = sgn * mag
            nt, na = _insert(it, ia, float(T), float(O))
            tot, fs, _ = scan(bp, g, rent, ret, u, t0, v0, nt, na)
            score = base_total - tot
            delay = fs - base_first
            qs = quantize(score, SCORE_SCALE)
            qd = quantize(delay, DELAY_SCALE)
            qc = quantize(clearance(bp, g, u, t0, v0, nt, na, float(T)), DELAY_SCALE)
            if _better(qs, qd, T, qc, O, bqs, bqd, T, bqc, bO):
                b_score, b_delay, bqs, bqd, bqc, bO = score, delay, qs, qd, qc, O
    return b_score, b_delay, bO


@njit(cache=True)
def best_assignment(bp, g, rent, ret, u, t0, v0, base_total, base_first,
                    s_id, s_cap, s_end, s_ready, s_load, s_travel, back, svc):
    """Best vehicle for one station over all vehicle slots.

    Slot arrays give each vehicle's id, capacity, shift end, ready time, load
    and travel time from its ready location to the station; ``back`` is the
    station-to-depot time. Candidates are ranked by score, delay, earlier
    arrival, lower vehicle id, clearance, smaller |O|, unloading. Returns
    ``(slot index or -1, score, T, O)``; ``-1`` unless the best score is
    strictly positive after quantization.
    """
    H = bp[-1]
    pt, pv = base_points(bp, g, u, t0, v0)
    bk = -1
    bqs = np.int64(0)
    bqd = np.int64(0)
    bqc = np.int64(0)
    bT = 0
    bO = 0
    bid = 0
    b_score = 0.0
    for k in range(len(s_id)):
        if s_ready[k] >= s_end[k]:
            continue
        E = s_ready[k] + s_travel[k]
        deadline = s_end[k] - back
        if E + svc > deadline or E >= H:
            continue
        load = s_load[k]
        mu = min(load, int(u))
        ml = min(s_cap[k] - load, int(u))
        found, score, delay, T, cl, O = best_candidate(
            bp, g, rent, ret, u, t0, v0, pt, pv, base_total, base_first, E, mu, ml, deadline, svc
        )
        if not found:
            continue
        qs = quantize(score, SCORE_SCALE)
        qd = quantize(delay, DELAY_SCALE)
        qc = quantize(cl, DELAY_SCALE)
        better = bk < 0
        if not better:
            if qs != bqs:
                better = qs > bqs
            elif qd != bqd:
                better = qd > bqd
            elif T != bT:
                better = T < bT
            elif s_id[k] != bid:
                better = s_id[k] < bid
            elif qc != bqc:
                better = qc > bqc
            elif abs(O) != abs(bO):
                better = abs(O) < abs(bO)
            else:
                better = O > bO
        if better:
            bk, bqs, bqd, bqc, bT, bO, bid, b_score = k, qs, qd, qc, T, O, s_id[k], score
    if bk >= 0 and bqs <= 0:
        bk = -1
    return bk, b_score, bT, bO
