"""Numba kernels for the dual-layer discrete matcher.

Horizontal and vertical displacements live in separate label layers
coupled through the data term. Each pixel's label window is centered on
its per-pixel displacement estimate from the coarser pyramid level;
messages between neighbors with different centers are shifted in
displacement space, extrapolating linearly (then truncating) outside the
source window, which is exact for the truncated-L1 smoothness.

All kernels are sequential and deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def data_cost(da, db, cu, cv, radius, dscale, trunc_data, eta):
    """Unary cost table (H, W, Lu, Lv) with truncated-L1 data term."""
    h, w, depth = da.shape
    labels = 2 * radius + 1
    out = np.empty((h, w, labels, labels), np.float32)
    for y in range(h):
        for x in range(w):
            for iu in range(labels):
                wu = cu[y, x] + iu - radius
                sx = x + wu
                if sx < 0:
                    sx = 0
                elif sx > w - 1:
                    sx = w - 1
                for iv in range(labels):
                    wv = cv[y, x] + iv - radius
                    sy = y + wv
                    if sy < 0:
                        sy = 0
                    elif sy > h - 1:
                        sy = h - 1
                    acc = 0.0
                    for d in range(depth):
                        diff = da[y, x, d] - db[sy, sx, d]
                        if diff < 0.0:
                            diff = -diff
                        acc += diff
                    cost = dscale * acc
                    if cost > trunc_data:
                        cost = trunc_data
                    out[y, x, iu, iv] = cost + eta * (abs(wu) + abs(wv))
    return out


@njit(cache=True)
def _dt_trunc_l1(h, alpha, trunc):
    """In-place 1-D lower envelope for truncated-L1 costs; returns the cap."""
    labels = h.shape[0]
    minh = h[0]
    for i in range(1, labels):
        if h[i] < minh:
            minh = h[i]
    for i in range(1, labels):
        v = h[i - 1] + alpha
        if v < h[i]:
            h[i] = v
    for i in range(labels - 2, -1, -1):
        v = h[i + 1] + alpha
        if v < h[i]:
            h[i] = v
    cap = minh + trunc
    for i in range(labels):
        if h[i] > cap:
            h[i] = cap
    return cap


@njit(cache=True)
def _emit(h, cap, delta, alpha, out):
    """Evaluate a message on a window shifted by ``delta`` labels, normalized."""
    labels = h.shape[0]
    mn = np.inf
    for j in range(labels):
        i = j + delta
        if i < 0:
            val = h[0] + alpha * (-i)
        elif i > labels - 1:
            val = h[labels - 1] + alpha * (i - (labels - 1))
        else:
            val = h[i]
        if val > cap:
            val = cap
        out[j] = val
        if val < mn:
            mn = val
    for j in range(labels):
        out[j] -= mn


@njit(cache=True)
def bp_phase(dcost, msum_other, msg, centers, radius, alpha, trunc):
    """One layer update: data messages, then four in-place directional sweeps.

    ``dcost`` is indexed (y, x, l_self, l_other); ``msg`` holds incoming
    spatial messages (direction, y, x, label) with directions 0=from left,
    1=from right, 2=from above, 3=from below.
    """
    h, w, labels, _ = dcost.shape
    mu = np.empty((h, w, labels), np.float32)
    for y in range(h):
        for x in range(w):
            for i in range(labels):
                best = np.inf
                for j in range(labels):
                    v = dcost[y, x, i, j] + msum_other[y, x, j]
                    if v < best:
                        best = v
                mu[y, x, i] = best

    buf = np.empty(labels, np.float32)
    out = np.empty(labels, np.float32)
    # rightward sweep
    for y in range(h):
        for x in range(w - 1):
            for l in range(labels):
                buf[l] = mu[y, x, l] + msg[0, y, x, l] + msg[2, y, x, l] + msg[3, y, x, l]
            cap = _dt_trunc_l1(buf, alpha, trunc)
            _emit(buf, cap, centers[y, x + 1] - centers[y, x], alpha, out)
            for l in range(labels):
                msg[0, y, x + 1, l] = out[l]
    # leftward sweep
    for y in range(h):
        for x in range(w - 1, 0, -1):
            for l in range(labels):
                buf[l] = mu[y, x, l] + msg[1, y, x, l] + msg[2, y, x, l] + msg[3, y, x, l]
            cap = _dt_trunc_l1(buf, alpha, trunc)
            _emit(buf, cap, centers[y, x - 1] - centers[y, x], alpha, out)
            for l in range(labels):
                msg[1, y, x - 1, l] = out[l]
    # downward sweep
    for y in range(h - 1):
        for x in range(w):
            for l in range(labels):
                buf[l] = mu[y, x, l] + msg[0, y, x, l] + msg[1, y, x, l] + msg[2, y, x, l]
            cap = _dt_trunc_l1(buf, alpha, trunc)
            _emit(buf, cap, centers[y + 1, x] - centers[y, x], alpha, out)
            for l in range(labels):
                msg[2, y + 1, x, l] = out[l]
    # upward sweep
    for y in range(h - 1, 0, -1):
        for x in range(w):
            for l in range(labels):
                buf[l] = mu[y, x, l] + msg[0, y, x, l] + msg[1, y, x, l] + msg[3, y, x, l]
            cap = _dt_trunc_l1(buf, alpha, trunc)
            _emit(buf, cap, centers[y - 1, x] - centers[y, x], alpha, out)
            for l in range(labels):
                msg[3, y - 1, x, l] = out[l]


@njit(cache=True)
def decode(dcost, msg_u, msg_v, cu, cv, radius):
    """Joint per-pixel argmin of data cost plus all incoming messages."""
    h, w, labels, _ = dcost.shape
    wu = np.empty((h, w), np.int32)
    wv = np.empty((h, w), np.int32)
    su = np.empty(labels, np.float32)
    sv = np.empty(labels, np.float32)
    for y in range(h):
        for x in range(w):
            for l in range(labels):
                su[l] = (
                    msg_u[0, y, x, l] + msg_u[1, y, x, l] + msg_u[2, y, x, l] + msg_u[3, y, x, l]
                )
                sv[l] = (
                    msg_v[0, y, x, l] + msg_v[1, y, x, l] + msg_v[2, y, x, l] + msg_v[3, y, x, l]
                )
            best = np.inf
            bi = 0
            bj = 0
            for i in range(labels):
                for j in range(labels):
                    v = dcost[y, x, i, j] + su[i] + sv[j]
                    if v < best:
                        best = v
                        bi = i
                        bj = j
            wu[y, x] = cu[y, x] + bi - radius
            wv[y, x] = cv[y, x] + bj - radius
    return wu, wv


@njit(cache=True)
def flow_energy(da, db, wu, wv, dscale, trunc_data, eta, alpha, trunc_smooth):
    """Full model energy of an integer displacement field."""
    h, w, depth = da.shape
    energy = 0.0
    for y in range(h):
        for x in range(w):
            sx = x + wu[y, x]
            if sx < 0:
                sx = 0
            elif sx > w - 1:
                sx = w - 1
            sy = y + wv[y, x]
            if sy < 0:
                sy = 0
            elif sy > h - 1:
                sy = h - 1
            acc = 0.0
            for d in range(depth):
                diff = da[y, x, d] - db[sy, sx, d]
                if diff < 0.0:
                    diff = -diff
                acc += diff
            cost = dscale * acc
            if cost > trunc_data:
                cost = trunc_data
            energy += cost + eta * (abs(wu[y, x]) + abs(wv[y, x]))
            if x + 1 < w:
                su = alpha * abs(wu[y, x] - wu[y, x + 1])
                sv = alpha * abs(wv[y, x] - wv[y, x + 1])
                energy += min(su, trunc_smooth) + min(sv, trunc_smooth)
            if y + 1 < h:
                su = alpha * abs(wu[y, x] - wu[y + 1, x])
                sv = alpha * abs(wv[y, x] - wv[y + 1, x])
                energy += min(su, trunc_smooth) + min(sv, trunc_smooth)
    return energy
