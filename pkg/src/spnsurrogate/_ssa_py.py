"""Pure-Python Gillespie direct-method kernel.

Reference implementation of the compiled kernel in ``_ssa_ext.pyx``.  Both
consume the same uniform stream in the same order and evaluate hazards with
the same floating-point operation order, so they produce identical
trajectories for identical inputs.

Status codes returned by ``ssa_run``:

    0  clock reached ``t1`` or total hazard is zero
    1  uniform buffer exhausted; refill and call again
    2  event log full; grow it and call again
    3  a hazard evaluated negative or NaN (index in the last return slot)
"""

import math

DONE = 0
NEED_UNIFORMS = 1
LOG_FULL = 2
BAD_HAZARD = 3

LAW_CONSTANT = 0
LAW_PER_CAPITA = 1
LAW_BILINEAR = 2


def ssa_run(state, in_ptr, in_place, in_count, d_ptr, d_place, d_val,
            law, pa, pb, norm_ptr, norm_idx, tr_rates,
            t, t1, uniforms, pos, ev_times, ev_ids, n_ev, record):
    x = state.tolist()
    in_ptr_l = in_ptr.tolist()
    in_place_l = in_place.tolist()
    in_count_l = in_count.tolist()
    d_ptr_l = d_ptr.tolist()
    d_place_l = d_place.tolist()
    d_val_l = d_val.tolist()
    law_l = law.tolist()
    pa_l = pa.tolist()
    pb_l = pb.tolist()
    norm_ptr_l = norm_ptr.tolist()
    norm_idx_l = norm_idx.tolist()
    rates = tr_rates.tolist()
    n_t = len(law_l)
    n_u = uniforms.shape[0]
    cap = ev_ids.shape[0]
    h = [0.0] * n_t
    status = DONE
    bad = -1
    log = math.log

    while True:
        total = 0.0
        for k in range(n_t):
            enabled = True
            for q in range(in_ptr_l[k], in_ptr_l[k + 1]):
                if x[in_place_l[q]] < in_count_l[q]:
                    enabled = False
                    break
            if not enabled:
                h[k] = 0.0
                continue
            lw = law_l[k]
            if lw == LAW_CONSTANT:
                hk = rates[k]
            elif lw == LAW_PER_CAPITA:
                hk = rates[k] * float(x[pa_l[k]])
            else:
                hk = (rates[k] * float(x[pa_l[k]])) * float(x[pb_l[k]])
                lo = norm_ptr_l[k]
                hi = norm_ptr_l[k + 1]
                if hi > lo:
                    n = 0
                    for q in range(lo, hi):
                        n += x[norm_idx_l[q]]
                    hk = hk / float(n) if n > 0 else 0.0
            if not (hk >= 0.0) or hk == math.inf:
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
        u1 = 1.0 - float(uniforms[pos])
        u2 = float(uniforms[pos + 1])
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
        for q in range(d_ptr_l[chosen], d_ptr_l[chosen + 1]):
            x[d_place_l[q]] += d_val_l[q]
        if record:
            ev_times[n_ev] = t
            ev_ids[n_ev] = chosen
            n_ev += 1

    state[:] = x
    return t, pos, n_ev, status, bad
