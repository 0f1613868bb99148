"""Pure-Python event loops, used when the compiled extension is unavailable.

Mirrors ``_kernels.pyx`` statement for statement: the same doubles are drawn
from the bit generator in the same order, so both backends return identical
arrays for identical inputs.
"""

import math

import numpy as np

OK, OVERFLOW, CAPACITY = 0, 1, 2


class _Uniforms:
    """Buffered reader of the bit generator's double stream."""

    def __init__(self, bitgen, block=4096):
        self._gen = np.random.Generator(bitgen)
        self._block = block
        self._buf = []
        self._i = 0

    def __call__(self):
        if self._i == len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


def _departure_level(q, K, r):
    cum = 0.0
    last = -1
    for i in range(K):
        nxt = q[i + 1] if i + 1 < K else 0
        width = q[i] - nxt
        if width > 0:
            cum += width
            last = i
            if r < cum:
                return i
    return last


def run_counts(q0, n, arrival_rate, horizon, truncated, bitgen, grid, capacity):
    K = len(q0)
    G = len(grid)
    grid = [float(g) for g in grid]
    q = [int(v) for v in q0]
    qmin, qmax = list(q), list(q)
    D = [0] * K
    I = [0.0] * K
    A = U1 = U2 = n_events = 0
    g_state = np.zeros((G, K), dtype=np.int64)
    g_dep = np.zeros((G, K), dtype=np.int64)
    g_int = np.zeros((G, K), dtype=np.float64)
    g_arr = np.zeros(G, dtype=np.int64)
    g_u1 = np.zeros(G, dtype=np.int64)
    g_u2 = np.zeros(G, dtype=np.int64)
    ev_t, ev_c = [], []
    t = 0.0
    gi = 0
    status = OK
    hit = 0.0 if K > 1 and q[1] >= n else math.nan
    uniform = _Uniforms(bitgen)

    while True:
        rate = arrival_rate + q[0]
        u = uniform()
        tnext = t - math.log1p(-u) / rate
        while gi < G and grid[gi] < tnext and grid[gi] <= horizon:
            g_state[gi] = q
            g_dep[gi] = D
            g_int[gi] = [I[i] + q[i] * (grid[gi] - t) for i in range(K)]
            g_arr[gi] = A
            g_u1[gi] = U1
            g_u2[gi] = U2
            gi += 1
        if tnext > horizon:
            break
        for i in range(K):
            I[i] += q[i] * (tnext - t)
        t = tnext
        r = uniform() * rate
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
                qmax[j] = max(qmax[j], q[j])
                code = j + 1
        else:
            i = _departure_level(q, K, r - arrival_rate)
            q[i] -= 1
            D[i] += 1
            qmin[i] = min(qmin[i], q[i])
            code = -(i + 1)
        n_events += 1
        if math.isnan(hit) and K > 1 and q[1] >= n:
            hit = t
        if capacity > 0:
            if len(ev_t) >= capacity:
                status = CAPACITY
                break
            ev_t.append(t)
            ev_c.append(code)

    return {
        "status": status,
        "t_stop": t,
        "event_times": np.array(ev_t, dtype=np.float64),
        "event_codes": np.array(ev_c, dtype=np.int8),
        "grid_states": g_state,
        "grid_arrivals": g_arr,
        "grid_departures": g_dep,
        "grid_integrals": g_int,
        "grid_u1": g_u1,
        "grid_u2": g_u2,
        "hit_time": hit,
        "qmin": np.array(qmin, dtype=np.int64),
        "qmax": np.array(qmax, dtype=np.int64),
        "n_events": n_events,
    }


def run_per_queue(lengths0, K, arrival_rate, horizon, bitgen, grid, capacity,
                  customer_capacity):
    n = len(lengths0)
    G = len(grid)
    grid = [float(g) for g in grid]
    length = [int(v) for v in lengths0]
    members = [[] for _ in range(K + 1)]
    pos = [0] * n
    q = [0] * K
    for j, L in enumerate(length):
        if L < 0 or L > K:
            raise ValueError("initial queue length outside [0, k_max]")
        pos[j] = len(members[L])
        members[L].append(j)
        for i in range(L):
            q[i] += 1
    fifo = [[-1] * K for _ in range(n)]
    head = [0] * n
    g_state = np.zeros((G, K), dtype=np.int64)
    ev_t, ev_c = [], []
    arr_t, wait = [], []
    t = 0.0
    gi = 0
    pending = 0
    status = OK
    recording = True
    uniform = _Uniforms(bitgen)

    def take(L, idx):
        bucket = members[L]
        j = bucket[idx]
        last = bucket.pop()
        if last != j:
            bucket[pos[j]] = last
            pos[last] = pos[j]
        return j

    while True:
        rate = arrival_rate + q[0]
        u = uniform()
        tnext = t - math.log1p(-u) / rate
        if recording:
            while gi < G and grid[gi] < tnext and grid[gi] <= horizon:
                g_state[gi] = q
                gi += 1
            if tnext > horizon:
                recording = False
        if not recording and pending == 0:
            break
        t = tnext
        r = uniform() * rate
        if r < arrival_rate:
            L = 0
            while L <= K and not members[L]:
                L += 1
            if L >= K:
                status = OVERFLOW
                break
            size = len(members[L])
            idx = min(int(uniform() * size), size - 1)
            j = take(L, idx)
            if recording:
                if len(arr_t) >= customer_capacity:
                    status = CAPACITY
                    break
                c = len(arr_t)
                arr_t.append(t)
                if L == 0:
                    wait.append(0.0)
                else:
                    wait.append(math.nan)
                    pending += 1
            else:
                c = -1
            fifo[j][(head[j] + L) % K] = c
            q[L] += 1
            code = L + 1
            L += 1
        else:
            i = _departure_level(q, K, r - arrival_rate)
            L = i + 1
            size = len(members[L])
            idx = min(int(uniform() * size), size - 1)
            j = take(L, idx)
            fifo[j][head[j]] = -1
            head[j] = (head[j] + 1) % K
            if L > 1:
                c = fifo[j][head[j]]
                if c >= 0 and math.isnan(wait[c]):
                    wait[c] = t - arr_t[c]
                    pending -= 1
            q[i] -= 1
            code = -(i + 1)
            L -= 1
        pos[j] = len(members[L])
        members[L].append(j)
        length[j] = L
        if recording:
            if len(ev_t) >= capacity:
                status = CAPACITY
                break
            ev_t.append(t)
            ev_c.append(code)

    return {
        "status": status,
        "event_times": np.array(ev_t, dtype=np.float64),
        "event_codes": np.array(ev_c, dtype=np.int8),
        "grid_states": g_state,
        "arrival_times": np.array(arr_t, dtype=np.float64),
        "waits": np.array(wait, dtype=np.float64),
        "lengths": np.array(length, dtype=np.int64),
    }
