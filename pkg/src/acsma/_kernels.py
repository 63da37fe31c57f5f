"""Compiled inner loop of the discrete-event CSMA simulator.

The kernel is resumable: all state lives in arrays owned by the caller.
Random numbers come from per-link buffers of uniforms; when the buffer of
the link about to act runs low, the kernel returns ``NEED_REFILL`` and the
caller tops it up from that link's generator before calling again. Without
numba the same code runs as plain Python (slowly).
"""

from __future__ import annotations

import math

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

DONE = 0
NEED_REFILL_MAC = 1
NEED_REFILL_ARRIVAL = 2
INDEPENDENCE_VIOLATION = 3

# event kinds, also the tie-break order for one link
COUNTDOWN_EXPIRED = 0
TRANSMISSION_END = 1
PACKET_ARRIVAL = 2
PACKET_SERVED = 3
DROP = 4
KIND_NAMES = ("countdown_expired", "transmission_end", "packet_arrival", "packet_served", "drop")

# reserve per event so no event is processed half-way before a refill
_RESERVE = 4

# indices into the float scalar block
S_TIME, S_NEXT_UPDATE = 0, 1
# indices into the int scalar block
I_MASK, I_SET, I_REFILL_LINK, I_LOG_POS, I_TRACE_POS, I_EVENTS = 0, 1, 2, 3, 4, 5


@njit(cache=True)
def _draw(buf, pos, link):
    u = buf[link, pos[link]]
    pos[link] += 1
    return u


@njit(cache=True)
def _set_index(masks, mask):
    lo, hi = 0, masks.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if masks[mid] < mask:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _log(log_t, log_link, log_kind, log_q, log_r, iscal, t, link, kind, q, r):
    p = iscal[I_LOG_POS]
    if p < log_t.shape[0]:
        log_t[p] = t
        log_link[p] = link
        log_kind[p] = kind
        log_q[p] = q
        log_r[p] = r
        iscal[I_LOG_POS] = p + 1


@njit(cache=True, nogil=True)
def run(
    horizon, fscal, iscal,
    nbr, masks, occupancy, busy,
    active, blocked, deadline, remaining, tx_end, carrying,
    rate, r, beta,
    mac_buf, mac_pos,
    aqm, exp_tx, adapt, alpha, update_interval,
    arr_rate, next_arrival, arr_buf, arr_pos,
    queue, arrived, served, dropped, dummies,
    trace_r, trace_q, trace_served, trace_dropped, trace_busy,
    log_t, log_link, log_kind, log_q, log_r,
):
    L = active.shape[0]
    B = mac_buf.shape[1]
    BA = arr_buf.shape[1]
    t = fscal[S_TIME]
    while True:
        # -- next event: linear scan, ties by (time, link, kind); TA update first
        best_t = horizon
        best_link = -1
        best_kind = -1
        if aqm and fscal[S_NEXT_UPDATE] <= best_t:
            best_t = fscal[S_NEXT_UPDATE]
            best_link = -2
        for l in range(L):
            if active[l]:
                if tx_end[l] < best_t:
                    best_t, best_link, best_kind = tx_end[l], l, TRANSMISSION_END
            elif blocked[l] == 0:
                if deadline[l] < best_t:
                    best_t, best_link, best_kind = deadline[l], l, COUNTDOWN_EXPIRED
            if aqm and next_arrival[l] < best_t:
                best_t, best_link, best_kind = next_arrival[l], l, PACKET_ARRIVAL
        if best_link >= 0:
            if mac_pos[best_link] > B - _RESERVE:
                iscal[I_REFILL_LINK] = best_link
                return NEED_REFILL_MAC
            if aqm and arr_pos[best_link] > BA - _RESERVE:
                iscal[I_REFILL_LINK] = best_link
                return NEED_REFILL_ARRIVAL

        # -- advance the clock, accumulating time-weighted occupancy
        dt = best_t - t
        if dt > 0:
            occupancy[iscal[I_SET]] += dt
            for l in range(L):
                if active[l]:
                    busy[l] += dt
        t = best_t
        fscal[S_TIME] = t
        if best_link == -1:
            return DONE
        iscal[I_EVENTS] += 1

        if best_link == -2:
            # periodic TA update r = alpha * Q, countdowns rescaled to the new rate
            p = iscal[I_TRACE_POS]
            for l in range(L):
                if adapt:
                    new_r = alpha * queue[l]
                    new_rate = math.exp(beta * new_r)
                    if not active[l]:
                        if blocked[l] == 0:
                            deadline[l] = t + (deadline[l] - t) * rate[l] / new_rate
                        else:
                            remaining[l] = remaining[l] * rate[l] / new_rate
                    r[l] = new_r
                    rate[l] = new_rate
                if p < trace_r.shape[0]:
                    trace_r[p, l] = r[l]
                    trace_q[p, l] = queue[l]
                    trace_served[p, l] = served[l]
                    trace_dropped[p, l] = dropped[l]
                    trace_busy[p, l] = busy[l]
            iscal[I_TRACE_POS] = p + 1
            fscal[S_NEXT_UPDATE] = t + update_interval
            continue

        l = best_link
        if best_kind == COUNTDOWN_EXPIRED:
            mask = iscal[I_MASK]
            if mask & nbr[l]:
                return INDEPENDENCE_VIOLATION
            active[l] = 1
            mask |= 1 << l
            iscal[I_MASK] = mask
            iscal[I_SET] = _set_index(masks, mask)
            if exp_tx:
                tx_end[l] = t - math.log(1.0 - _draw(mac_buf, mac_pos, l))
            else:
                tx_end[l] = t + 1.0
            if aqm:
                if queue[l] > 0:
                    carrying[l] = 1
                else:
                    carrying[l] = 0
            for j in range(L):
                if (nbr[l] >> j) & 1:
                    if blocked[j] == 0 and not active[j]:
                        remaining[j] = deadline[j] - t
                    blocked[j] += 1
            _log(log_t, log_link, log_kind, log_q, log_r, iscal, t, l, COUNTDOWN_EXPIRED, queue[l], r[l])
        elif best_kind == TRANSMISSION_END:
            active[l] = 0
            mask = iscal[I_MASK] & ~(1 << l)
            iscal[I_MASK] = mask
            iscal[I_SET] = _set_index(masks, mask)
            _log(log_t, log_link, log_kind, log_q, log_r, iscal, t, l, TRANSMISSION_END, queue[l], r[l])
            if aqm:
                if carrying[l]:
                    queue[l] -= 1
                    served[l] += 1
                    _log(log_t, log_link, log_kind, log_q, log_r, iscal, t, l, PACKET_SERVED, queue[l], r[l])
                else:
                    dummies[l] += 1
                carrying[l] = 0
            for j in range(L):
                if (nbr[l] >> j) & 1:
                    blocked[j] -= 1
                    if blocked[j] == 0 and not active[j]:
                        deadline[j] = t + remaining[j]
            deadline[l] = t - math.log(1.0 - _draw(mac_buf, mac_pos, l)) / rate[l]
        else:  # PACKET_ARRIVAL
            arrived[l] += 1
            pdrop = r[l] if r[l] < 1.0 else 1.0
            if _draw(arr_buf, arr_pos, l) < pdrop:
                dropped[l] += 1
                _log(log_t, log_link, log_kind, log_q, log_r, iscal, t, l, DROP, queue[l], r[l])
            else:
                queue[l] += 1
                _log(log_t, log_link, log_kind, log_q, log_r, iscal, t, l, PACKET_ARRIVAL, queue[l], r[l])
            next_arrival[l] = t - math.log(1.0 - _draw(arr_buf, arr_pos, l)) / arr_rate[l]
