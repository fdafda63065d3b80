# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Gillespie direct-method kernel.

Mirrors ``_ssa_py.ssa_run`` operation for operation; see that module for the
argument layout and status codes.
"""

from libc.math cimport log, isinf

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF DONE = 0
DEF NEED_UNIFORMS = 1
DEF LOG_FULL = 2
DEF BAD_HAZARD = 3


def ssa_run(cnp.int64_t[::1] state,
            const cnp.int32_t[::1] in_ptr, const cnp.int32_t[::1] in_place,
            const cnp.int64_t[::1] in_count,
            const cnp.int32_t[::1] d_ptr, const cnp.int32_t[::1] d_place,
            const cnp.int64_t[::1] d_val,
            const cnp.int32_t[::1] law, const cnp.int32_t[::1] pa,
            const cnp.int32_t[::1] pb,
            const cnp.int32_t[::1] norm_ptr, const cnp.int32_t[::1] norm_idx,
            const double[::1] tr_rates,
            double t, double t1,
            const double[::1] uniforms, Py_ssize_t pos,
            double[::1] ev_times, cnp.int32_t[::1] ev_ids, Py_ssize_t n_ev,
            bint record):
    cdef Py_ssize_t n_t = law.shape[0]
    cdef Py_ssize_t n_u = uniforms.shape[0]
    cdef Py_ssize_t cap = ev_ids.shape[0]
    cdef double[::1] h = np.zeros(n_t, dtype=np.float64)
    cdef Py_ssize_t k, q, lo, hi, chosen
    cdef int status = DONE
    cdef Py_ssize_t bad = -1
    cdef double total, hk, u1, u2, t_next, target, acc
    cdef cnp.int64_t n
    cdef bint enabled

    with nogil:
        while True:
            total = 0.0
            for k in range(n_t):
                enabled = True
                for q in range(in_ptr[k], in_ptr[k + 1]):
                    if state[in_place[q]] < in_count[q]:
                        enabled = False
                        break
                if not enabled:
                    h[k] = 0.0
                    continue
                if law[k] == 0:
                    hk = tr_rates[k]
                elif law[k] == 1:
                    hk = tr_rates[k] * <double>state[pa[k]]
                else:
                    hk = (tr_rates[k] * <double>state[pa[k]]) * <double>state[pb[k]]
                    lo = norm_ptr[k]
                    hi = norm_ptr[k + 1]
                    if hi > lo:
                        n = 0
                        for q in range(lo, hi):
                            n += state[norm_idx[q]]
                        if n > 0:
                            hk = hk / <double>n
                        else:
                            hk = 0.0
                if not (hk >= 0.0) or isinf(hk):
                    status = BAD_HAZARD
                    bad = k
                    break
                h[k] = hk
                total += hk
            if status == BAD_HAZARD:
                break
            if total <= 0.0:
                t = t1
                break
            if pos + 2 > n_u:
                status = NEED_UNIFORMS
                break
            if record and n_ev >= cap:
                status = LOG_FULL
                break
            u1 = 1.0 - uniforms[pos]
            u2 = uniforms[pos + 1]
            pos += 2
            t_next = t + (-log(u1) / total)
            if t_next >= t1:
                t = t1
                break
            t = t_next
            target = u2 * total
            acc = 0.0
            chosen = -1
            for k in range(n_t):
                if h[k] > 0.0:
                    acc += h[k]
                    chosen = k
                    if target < acc:
                        break
            for q in range(d_ptr[chosen], d_ptr[chosen + 1]):
                state[d_place[q]] += d_val[q]
            if record:
                ev_times[n_ev] = t
                ev_ids[n_ev] = <cnp.int32_t>chosen
                n_ev += 1

    return t, pos, n_ev, status, bad
