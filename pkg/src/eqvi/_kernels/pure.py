"""Pure-Python twin of the compiled Gauss-Seidel step kernel.

Mirrors `_gs.pyx` operation for operation (same update order, same
arithmetic) so both backends produce identical iterates; this module is the
fallback when the extension was not built.

Node boxes are per-node intervals [lo_j, hi_j]; the solver uses the
constraint box -r <= u <= r and the outer loop may pin single nodes to a
kink point by passing a degenerate interval.
"""

import math

BACKEND = "pure-python"


def _phi(t, pm1):
    """Signed power |t|^pm1 * sign(t)."""
    if t == 0.0:
        return 0.0
    return math.copysign(math.fabs(t) ** pm1, t)


def _smooth(w, up, gj, uL, uR, hasL, hasR, k, pm1, inv_dt, eps, e_mass):
    val = (w - up) * inv_dt + eps * w - gj
    if e_mass != 0.0:
        val += e_mass * _phi(w, pm1)
    if hasL:
        val += k * _phi(w - uL, pm1)
    if hasR:
        val += k * _phi(w - uR, pm1)
    return val


def _node_solve(up, gj, cj, uL, uR, hasL, hasR, k, p, beta, inv_dt, eps,
                e_mass, lo, hi):
    """Exact minimizer of the per-node strictly convex 1-D problem on [lo, hi]."""
    if lo == hi:
        return lo
    if p == 2.0 and (cj == 0.0 or beta == 1.0):
        # linear smooth part: soft-threshold then clip
        a = inv_dt + eps + e_mass
        b = up * inv_dt + gj
        if hasL:
            a += k
            b += k * uL
        if hasR:
            a += k
            b += k * uR
        if b > cj:
            w = (b - cj) / a
        elif b < -cj:
            w = (b + cj) / a
        else:
            w = 0.0
        if w > hi:
            return hi
        if w < lo:
            return lo
        return w

    pm1 = p - 1.0
    bm1 = beta - 1.0

    def d_right(w):
        val = _smooth(w, up, gj, uL, uR, hasL, hasR, k, pm1, inv_dt, eps, e_mass)
        if cj != 0.0:
            if beta == 1.0:
                val += cj if w >= 0.0 else -cj
            else:
                val += cj * beta * _phi(w, bm1)
        return val

    def d_left(w):
        val = _smooth(w, up, gj, uL, uR, hasL, hasR, k, pm1, inv_dt, eps, e_mass)
        if cj != 0.0:
            if beta == 1.0:
                val += cj if w > 0.0 else -cj
            else:
                val += cj * beta * _phi(w, bm1)
        return val

    if d_right(lo) >= 0.0:
        return lo
    if d_left(hi) <= 0.0:
        return hi
    a, b = lo, hi
    while b - a > 1e-13:
        mid = 0.5 * (a + b)
        dr = d_right(mid)
        if dr < 0.0:
            a = mid
        elif d_left(mid) > 0.0:
            b = mid
        else:
            return mid
    return 0.5 * (a + b)


def _neighbors(u, j, m, dirichlet):
    if j > 0:
        uL, hasL = u[j - 1], True
    else:
        uL, hasL = 0.0, dirichlet
    if j < m - 1:
        uR, hasR = u[j + 1], True
    else:
        uR, hasR = 0.0, dirichlet
    return uL, uR, hasL, hasR


def step_sweep(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt, eps, e_mass,
               dirichlet, omega):
    """One in-place Gauss-Seidel pass; returns the max node move."""
    m = len(u)
    move = 0.0
    for j in range(m):
        uL, uR, hasL, hasR = _neighbors(u, j, m, dirichlet)
        w = _node_solve(u_prev[j], g[j], cpsi[j], uL, uR, hasL, hasR,
                        k, p, beta, inv_dt, eps, e_mass, lo[j], hi[j])
        if omega != 1.0:
            w = omega * w + (1.0 - omega) * u[j]
            if w > hi[j]:
                w = hi[j]
            elif w < lo[j]:
                w = lo[j]
        d = math.fabs(w - u[j])
        if d > move:
            move = d
        u[j] = w
    return move


def step_residual(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt, eps, e_mass,
                  dirichlet):
    """Natural-map residual: max |u_j - best_response_j(u)| over the step."""
    m = len(u)
    res = 0.0
    for j in range(m):
        uL, uR, hasL, hasR = _neighbors(u, j, m, dirichlet)
        w = _node_solve(u_prev[j], g[j], cpsi[j], uL, uR, hasL, hasR,
                        k, p, beta, inv_dt, eps, e_mass, lo[j], hi[j])
        d = math.fabs(u[j] - w)
        if d > res:
            res = d
    return res


def step_solve(u, u_prev, g, cpsi, lo, hi, beta, e_grad, e_mass, p, dx,
               inv_dt, eps, dirichlet, omega, tol, max_sweeps):
    """Solve one backward-Euler step to node residual <= tol.

    Modifies u in place (warm start in, solution out); returns
    (sweeps_used, residual).
    """
    m = len(u)
    k = e_grad / dx ** p
    for j in range(m):
        if u[j] > hi[j]:
            u[j] = hi[j]
        elif u[j] < lo[j]:
            u[j] = lo[j]
    thr = tol
    sweeps = 0
    while sweeps < max_sweeps:
        move = step_sweep(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt,
                          eps, e_mass, dirichlet, omega)
        sweeps += 1
        if move <= thr:
            res = step_residual(u, u_prev, g, cpsi, lo, hi, beta, k, p,
                                inv_dt, eps, e_mass, dirichlet)
            if res <= tol:
                return sweeps, res
            thr *= 0.25
    res = step_residual(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt, eps,
                        e_mass, dirichlet)
    return sweeps, res
