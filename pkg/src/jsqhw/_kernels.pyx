# cython: language_level=3
"""Compiled event loops for the counts and per-queue JSQ simulators.

The pure-Python twin lives in ``_kernels_py.py``; both consume the bit
generator's doubles in the same order and must return identical results.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log1p, NAN, isnan
from numpy.random cimport bitgen_t

cnp.import_array()

DEF OK = 0
DEF OVERFLOW = 1
DEF CAPACITY = 2


cdef inline double _next(bitgen_t *rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef inline Py_ssize_t _departure_level(const long long *q, Py_ssize_t K,
                                        double r) noexcept nogil:
    # level i fires with rate q[i] - q[i+1]; fall back to the top busy level
    # when rounding pushes r past the cumulative total
    cdef Py_ssize_t i, last = -1
    cdef double cum = 0.0
    cdef long long nxt, width
    for i in range(K):
        nxt = q[i + 1] if i + 1 < K else 0
        width = q[i] - nxt
        if width > 0:
            cum += width
            last = i
            if r < cum:
                return i
    return last


def run_counts(long long[::1] q0, long long n, double arrival_rate,
               double horizon, bint truncated, object bitgen,
               double[::1] grid, Py_ssize_t capacity):
    cdef Py_ssize_t K = q0.shape[0]
    cdef Py_ssize_t G = grid.shape[0]
    cdef Py_ssize_t i, j, gi = 0, m = 0
    cdef long long A = 0, U1 = 0, U2 = 0, n_events = 0
    cdef double t = 0.0, tnext, u, r, rate, hit = NAN
    cdef int status = OK
    cdef signed char code

    q_arr = np.array(q0, dtype=np.int64)
    cdef long long[::1] q = q_arr
    qmin_arr = np.array(q0, dtype=np.int64)
    qmax_arr = np.array(q0, dtype=np.int64)
    cdef long long[::1] qmin = qmin_arr
    cdef long long[::1] qmax = qmax_arr
    D_arr = np.zeros(K, dtype=np.int64)
    I_arr = np.zeros(K, dtype=np.float64)
    cdef long long[::1] D = D_arr
    cdef double[::1] I = I_arr

    g_state_arr = np.zeros((G, K), dtype=np.int64)
    g_dep_arr = np.zeros((G, K), dtype=np.int64)
    g_int_arr = np.zeros((G, K), dtype=np.float64)
    g_arr_arr = np.zeros(G, dtype=np.int64)
    g_u1_arr = np.zeros(G, dtype=np.int64)
    g_u2_arr = np.zeros(G, dtype=np.int64)
    cdef long long[:, ::1] g_state = g_state_arr
    cdef long long[:, ::1] g_dep = g_dep_arr
    cdef double[:, ::1] g_int = g_int_arr
    cdef long long[::1] g_arr = g_arr_arr
    cdef long long[::1] g_u1 = g_u1_arr
    cdef long long[::1] g_u2 = g_u2_arr

    ev_t_arr = np.empty(capacity, dtype=np.float64)
    ev_c_arr = np.empty(capacity, dtype=np.int8)
    cdef double[::1] ev_t = ev_t_arr
    cdef signed char[::1] ev_c = ev_c_arr

    if K > 1 and q[1] >= n:
        hit = 0.0

    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(
        bitgen.capsule, "BitGenerator")
    cdef const long long *qp = &q[0]

    with bitgen.lock:
        with nogil:
            while True:
                rate = arrival_rate + q[0]
                u = _next(rng)
                tnext = t - log1p(-u) / rate
                while gi < G and grid[gi] < tnext and grid[gi] <= horizon:
                    for i in range(K):
                        g_state[gi, i] = q[i]
                        g_dep[gi, i] = D[i]
                        g_int[gi, i] = I[i] + q[i] * (grid[gi] - t)
                    g_arr[gi] = A
                    g_u1[gi] = U1
                    g_u2[gi] = U2
                    gi += 1
                if tnext > horizon:
                    break
                for i in range(K):
                    I[i] += q[i] * (tnext - t)
                t = tnext
                r = _next(rng) * rate
                if r < arrival_rate:
                    A += 1
                    j = 0
                    while j < K and q[j] >= n:
                        j += 1
                    if truncated and j >= 2:
                        U1 += 1
                        U2 += 1
                        code = 0
                    elif j == K:
                        status = OVERFLOW
                        break
                    else:
                        if j >= 1:
                            U1 += 1
                        q[j] += 1
                        if q[j] > qmax[j]:
                            qmax[j] = q[j]
                        code = <signed char>(j + 1)
                else:
                    i = _departure_level(qp, K, r - arrival_rate)
                    q[i] -= 1
                    D[i] += 1
                    if q[i] < qmin[i]:
                        qmin[i] = q[i]
                    code = <signed char>(-(i + 1))
                n_events += 1
                if isnan(hit) and K > 1 and q[1] >= n:
                    hit = t
                if capacity > 0:
                    if m >= capacity:
                        status = CAPACITY
                        break
                    ev_t[m] = t
                    ev_c[m] = code
                    m += 1

    return {
        "status": status,
        "t_stop": t,
        "event_times": ev_t_arr[:m],
        "event_codes": ev_c_arr[:m],
        "grid_states": g_state_arr,
        "grid_arrivals": g_arr_arr,
        "grid_departures": g_dep_arr,
        "grid_integrals": g_int_arr,
        "grid_u1": g_u1_arr,
        "grid_u2": g_u2_arr,
        "hit_time": hit,
        "qmin": qmin_arr,
        "qmax": qmax_arr,
        "n_events": n_events,
    }


def run_per_queue(long long[::1] lengths0, Py_ssize_t K, double arrival_rate,
                  double horizon, object bitgen, double[::1] grid,
                  Py_ssize_t capacity, Py_ssize_t customer_capacity):
    """Explicit-queue JSQ with uniform tie breaking and FIFO wait tracking.

    Queue lengths are capped at ``K``.  After ``horizon`` the system keeps
    evolving, unrecorded, until every customer who arrived by ``horizon``
    has entered service.
    """
    cdef Py_ssize_t n = lengths0.shape[0]
    cdef Py_ssize_t G = grid.shape[0]
    cdef Py_ssize_t i, j, L, idx, slot, gi = 0, m = 0, ncust = 0
    cdef long long pending = 0, c
    cdef double t = 0.0, tnext, u, r, rate
    cdef int status = OK
    cdef bint recording = True
    cdef signed char code

    # bucket L holds the queues of length exactly L
    members_arr = np.zeros((K + 1, n), dtype=np.int64)
    size_arr = np.zeros(K + 1, dtype=np.int64)
    pos_arr = np.zeros(n, dtype=np.int64)
    length_arr = np.array(lengths0, dtype=np.int64)
    fifo_arr = np.full((n, K), -1, dtype=np.int64)
    head_arr = np.zeros(n, dtype=np.int64)
    q_arr = np.zeros(K, dtype=np.int64)
    cdef long long[:, ::1] members = members_arr
    cdef long long[::1] size = size_arr
    cdef long long[::1] pos = pos_arr
    cdef long long[::1] length = length_arr
    cdef long long[:, ::1] fifo = fifo_arr
    cdef long long[::1] head = head_arr
    cdef long long[::1] q = q_arr

    for j in range(n):
        L = length[j]
        if L < 0 or L > K:
            raise ValueError("initial queue length outside [0, k_max]")
        pos[j] = size[L]
        members[L, size[L]] = j
        size[L] += 1
        for i in range(L):
            q[i] += 1

    g_state_arr = np.zeros((G, K), dtype=np.int64)
    cdef long long[:, ::1] g_state = g_state_arr
    ev_t_arr = np.empty(capacity, dtype=np.float64)
    ev_c_arr = np.empty(capacity, dtype=np.int8)
    cdef double[::1] ev_t = ev_t_arr
    cdef signed char[::1] ev_c = ev_c_arr
    arr_t_arr = np.empty(customer_capacity, dtype=np.float64)
    wait_arr = np.empty(customer_capacity, dtype=np.float64)
    cdef double[::1] arr_t = arr_t_arr
    cdef double[::1] wait = wait_arr

    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(
        bitgen.capsule, "BitGenerator")
    cdef const long long *qp = &q[0]

    with bitgen.lock:
        with nogil:
            while True:
                rate = arrival_rate + q[0]
                u = _next(rng)
                tnext = t - log1p(-u) / rate
                if recording:
                    while gi < G and grid[gi] < tnext and grid[gi] <= horizon:
                        for i in range(K):
                            g_state[gi, i] = q[i]
                        gi += 1
                    if tnext > horizon:
                        recording = False
                if not recording and pending == 0:
                    break
                t = tnext
                r = _next(rng) * rate
                if r < arrival_rate:
                    L = 0
                    while L <= K and size[L] == 0:
                        L += 1
                    if L >= K:
                        status = OVERFLOW
                        break
                    idx = <Py_ssize_t>(_next(rng) * size[L])
                    if idx >= size[L]:
                        idx = size[L] - 1
                    j = members[L, idx]
                    if recording:
                        if ncust >= customer_capacity:
                            status = CAPACITY
                            break
                        c = ncust
                        ncust += 1
                        arr_t[c] = t
                        if L == 0:
                            wait[c] = 0.0
                        else:
                            wait[c] = NAN
                            pending += 1
                    else:
                        c = -1
                    slot = (head[j] + L) % K
                    fifo[j, slot] = c
                    q[L] += 1
                    code = <signed char>(L + 1)
                    # move queue j from bucket L to L + 1
                    members[L, pos[j]] = members[L, size[L] - 1]
                    pos[members[L, pos[j]]] = pos[j]
                    size[L] -= 1
                    L += 1
                else:
                    i = _departure_level(qp, K, r - arrival_rate)
                    L = i + 1
                    idx = <Py_ssize_t>(_next(rng) * size[L])
                    if idx >= size[L]:
                        idx = size[L] - 1
                    j = members[L, idx]
                    fifo[j, head[j]] = -1
                    head[j] = (head[j] + 1) % K
                    if L > 1:
                        c = fifo[j, head[j]]
                        if c >= 0 and isnan(wait[c]):
                            wait[c] = t - arr_t[c]
                            pending -= 1
                    q[i] -= 1
                    code = <signed char>(-(i + 1))
                    members[L, pos[j]] = members[L, size[L] - 1]
                    pos[members[L, pos[j]]] = pos[j]
                    size[L] -= 1
                    L -= 1
                pos[j] = size[L]
                members[L, size[L]] = j
                size[L] += 1
                length[j] = L
                if recording:
                    if m >= capacity:
                        status = CAPACITY
                        break
                    ev_t[m] = t
                    ev_c[m] = code
                    m += 1

    return {
        "status": status,
        "event_times": ev_t_arr[:m],
        "event_codes": ev_c_arr[:m],
        "grid_states": g_state_arr,
        "arrival_times": arr_t_arr[:ncust],
        "waits": wait_arr[:ncust],
        "lengths": length_arr,
    }
