"""Compiled per-orbit collision loops for the two executable tables.

Scalar math here mirrors billiards.collide exactly (same operations in
the same order), so the compiled path and the pure-Python reference stay
bit-for-bit interchangeable.  No reductions happen inside the parallel
loops; each orbit writes only its own rows, which keeps results
independent of the thread count.
"""

from __future__ import annotations

import warnings

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

# the sandbox TBB is older than numba wants; the fallback layer is fine
warnings.filterwarnings("ignore", category=NumbaWarning,
                        message=".*TBB.*")

T_MIN = 1e-10
TANGENT_TOL = 1e-9
STATUS_OK = 0
STATUS_TANGENT = 1
STATUS_LOST = 2

_HALF_PI = np.pi / 2.0
_TWO_PI = 2.0 * np.pi


@njit(cache=True, inline="always")
def _stadium_geometry(L, s):
    """Boundary point, tangent and inward normal at arc length s."""
    h = 0.5 * L
    if s < L:
        return -h + s, -1.0, 1.0, 0.0, 0.0, 1.0
    if s < L + np.pi:
        al = s - L - _HALF_PI
        ca = np.cos(al)
        sa = np.sin(al)
        return h + ca, sa, -sa, ca, -ca, -sa
    if s < 2.0 * L + np.pi:
        u = s - L - np.pi
        return h - u, 1.0, -1.0, 0.0, 0.0, -1.0
    al = s - 2.0 * L - np.pi + _HALF_PI
    ca = np.cos(al)
    sa = np.sin(al)
    return -h + ca, sa, -sa, ca, -ca, -sa


@njit(cache=True, inline="always")
def _stadium_step(L, x, y, dx, dy):
    """One collision: returns (x, y, dx', dy', s', psi', status)."""
    h = 0.5 * L
    best_t = np.inf
    arc = -1
    if dy < 0.0:
        t = (-1.0 - y) / dy
        if t > T_MIN:
            xh = x + t * dx
            if -h <= xh <= h and t < best_t:
                best_t = t
                arc = 0
    if dy > 0.0:
        t = (1.0 - y) / dy
        if t > T_MIN:
            xh = x + t * dx
            if -h <= xh <= h and t < best_t:
                best_t = t
                arc = 2
    # right cap, center (h, 0)
    qx = x - h
    qd = qx * dx + y * dy
    c0 = qx * qx + y * y - 1.0
    disc = qd * qd - c0
    if disc > 0.0:
        sq = np.sqrt(disc)
        t = -qd - sq
        if t > T_MIN and t < best_t and x + t * dx >= h:
            best_t = t
            arc = 1
        t = -qd + sq
        if t > T_MIN and t < best_t and x + t * dx >= h:
            best_t = t
            arc = 1
    # left cap, center (-h, 0)
    qx = x + h
    qd = qx * dx + y * dy
    c0 = qx * qx + y * y - 1.0
    disc = qd * qd - c0
    if disc > 0.0:
        sq = np.sqrt(disc)
        t = -qd - sq
        if t > T_MIN and t < best_t and x + t * dx <= -h:
            best_t = t
            arc = 3
        t = -qd + sq
        if t > T_MIN and t < best_t and x + t * dx <= -h:
            best_t = t
            arc = 3
    if arc < 0:
        return x, y, dx, dy, 0.0, 0.0, STATUS_LOST

    xh = x + best_t * dx
    yh = y + best_t * dy
    if arc == 0:
        yh = -1.0
        nx, ny = 0.0, 1.0
        tx, ty = 1.0, 0.0
        s = xh + h
    elif arc == 2:
        yh = 1.0
        nx, ny = 0.0, -1.0
        tx, ty = -1.0, 0.0
        s = L + np.pi + (h - xh)
    else:
        cx = h if arc == 1 else -h
        qx = xh - cx
        qy = yh
        rr = np.sqrt(qx * qx + qy * qy)
        qx /= rr
        qy /= rr
        xh = cx + qx
        yh = qy
        nx, ny = -qx, -qy
        tx, ty = -qy, qx
        al = np.arctan2(qy, qx)
        if arc == 1:
            s = L + al + _HALF_PI
        else:
            if al < 0.0:
                al += _TWO_PI
            s = 2.0 * L + np.pi + (al - _HALF_PI)
    ddn = dx * nx + dy * ny
    if -ddn < TANGENT_TOL:
        return xh, yh, dx, dy, s, 0.0, STATUS_TANGENT
    rx = dx - 2.0 * ddn * nx
    ry = dy - 2.0 * ddn * ny
    psi = np.arctan2(rx * tx + ry * ty, rx * nx + ry * ny)
    return xh, yh, rx, ry, s, psi, STATUS_OK


@njit(cache=True, inline="always")
def _semidisp_geometry(a, b, r, s):
    """Boundary point, tangent and inward normal at arc length s."""
    if s < a:
        return s, 0.0, 1.0, 0.0, 0.0, 1.0
    if s < a + b:
        return a, s - a, 0.0, 1.0, -1.0, 0.0
    if s < 2.0 * a + b:
        return a - (s - a - b), b, -1.0, 0.0, 0.0, -1.0
    if s < 2.0 * a + 2.0 * b:
        return 0.0, b - (s - 2.0 * a - b), 0.0, -1.0, 1.0, 0.0
    u = (s - 2.0 * a - 2.0 * b) / r
    cu = np.cos(u)
    su = np.sin(u)
    return 0.5 * a + r * cu, 0.5 * b - r * su, -su, -cu, cu, -su


@njit(cache=True, inline="always")
def _semidisp_step(a, b, r, x, y, dx, dy):
    cx = 0.5 * a
    cy = 0.5 * b
    best_t = np.inf
    arc = -1
    if dy < 0.0:
        t = (0.0 - y) / dy
        if t > T_MIN:
            xh = x + t * dx
            if 0.0 <= xh <= a and t < best_t:
                best_t = t
                arc = 0
    if dy > 0.0:
        t = (b - y) / dy
        if t > T_MIN:
            xh = x + t * dx
            if 0.0 <= xh <= a and t < best_t:
                best_t = t
                arc = 2
    if dx > 0.0:
        t = (a - x) / dx
        if t > T_MIN:
            yh = y + t * dy
            if 0.0 <= yh <= b and t < best_t:
                best_t = t
                arc = 1
    if dx < 0.0:
        t = (0.0 - x) / dx
        if t > T_MIN:
            yh = y + t * dy
            if 0.0 <= yh <= b and t < best_t:
                best_t = t
                arc = 3
    qx = x - cx
    qy = y - cy
    qd = qx * dx + qy * dy
    c0 = qx * qx + qy * qy - r * r
    disc = qd * qd - c0
    if disc > 0.0:
        sq = np.sqrt(disc)
        t = -qd - sq
        if t > T_MIN and t < best_t:
            best_t = t
            arc = 4
        else:
            t = -qd + sq
            if t > T_MIN and t < best_t:
                best_t = t
                arc = 4
    if arc < 0:
        return x, y, dx, dy, 0.0, 0.0, STATUS_LOST

    xh = x + best_t * dx
    yh = y + best_t * dy
    if arc == 0:
        yh = 0.0
        nx, ny = 0.0, 1.0
        tx, ty = 1.0, 0.0
        s = xh
    elif arc == 1:
        xh = a
        nx, ny = -1.0, 0.0
        tx, ty = 0.0, 1.0
        s = a + yh
    elif arc == 2:
        yh = b
        nx, ny = 0.0, -1.0
        tx, ty = -1.0, 0.0
        s = a + b + (a - xh)
    elif arc == 3:
        xh = 0.0
        nx, ny = 1.0, 0.0
        tx, ty = 0.0, -1.0
        s = 2.0 * a + b + (b - yh)
    else:
        qx = xh - cx
        qy = yh - cy
        rr = np.sqrt(qx * qx + qy * qy)
        qx /= rr
        qy /= rr
        xh = cx + r * qx
        yh = cy + r * qy
        nx, ny = qx, qy
        # clockwise parameterization: T = (-sin u, -cos u) with (cos u, sin u) = (qx, -qy)
        tx, ty = qy, -qx
        u = np.arctan2(-qy, qx)
        if u < 0.0:
            u += _TWO_PI
        s = 2.0 * a + 2.0 * b + r * u
    ddn = dx * nx + dy * ny
    if -ddn < TANGENT_TOL:
        return xh, yh, dx, dy, s, 0.0, STATUS_TANGENT
    rx = dx - 2.0 * ddn * nx
    ry = dy - 2.0 * ddn * ny
    psi = np.arctan2(rx * tx + ry * ty, rx * nx + ry * ny)
    return xh, yh, rx, ry, s, psi, STATUS_OK


@njit(cache=True, parallel=True)
def run_orbits(kind, p0, p1, p2, s0, psi0, record_idx, out_s, out_psi, status):
    """Advance each orbit through max(record_idx) collisions.

    kind 0 = stadium(L=p0), kind 1 = semidispersing(a=p0, b=p1, r=p2).
    Records (s, psi) at the requested step indices (step 0 is the initial
    state).  On tangency or a lost ray the status is set and the
    remaining records are NaN.
    """
    n = s0.shape[0]
    n_rec = record_idx.shape[0]
    n_steps = 0
    for j in range(n_rec):
        if record_idx[j] > n_steps:
            n_steps = record_idx[j]
    for i in prange(n):
        s = s0[i]
        psi = psi0[i]
        if kind == 0:
            x, y, tx, ty, nx, ny = _stadium_geometry(p0, s)
        else:
            x, y, tx, ty, nx, ny = _semidisp_geometry(p0, p1, p2, s)
        cp = np.cos(psi)
        sp = np.sin(psi)
        dx = cp * nx + sp * tx
        dy = cp * ny + sp * ty
        st = STATUS_OK
        rec = 0
        for step in range(n_steps + 1):
            while rec < n_rec and record_idx[rec] == step:
                out_s[i, rec] = s
                out_psi[i, rec] = psi
                rec += 1
            if rec >= n_rec or st != STATUS_OK:
                break
            if kind == 0:
                x, y, dx, dy, s, psi, st = _stadium_step(p0, x, y, dx, dy)
            else:
                x, y, dx, dy, s, psi, st = _semidisp_step(p0, p1, p2, x, y, dx, dy)
        status[i] = st
        for j in range(rec, n_rec):
            out_s[i, j] = np.nan
            out_psi[i, j] = np.nan
        if st != STATUS_OK:
            # drop records taken before the failure as well
            for j in range(n_rec):
                out_s[i, j] = np.nan
                out_psi[i, j] = np.nan
