# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gauss-Seidel step kernel; arithmetic mirrors pure.py exactly."""

from libc.math cimport fabs, copysign, pow

BACKEND = "cython"


cdef inline double _phi(double t, double pm1) noexcept nogil:
    if t == 0.0:
        return 0.0
    return copysign(pow(fabs(t), pm1), t)


cdef inline double _smooth(double w, double up, double gj, double uL, double uR,
                           bint hasL, bint hasR, double k, double pm1,
                           double inv_dt, double eps, double e_mass) noexcept nogil:
    cdef double val = (w - up) * inv_dt + eps * w - gj
    if e_mass != 0.0:
        val += e_mass * _phi(w, pm1)
    if hasL:
        val += k * _phi(w - uL, pm1)
    if hasR:
        val += k * _phi(w - uR, pm1)
    return val


cdef inline double _d_onesided(double w, double up, double gj, double cj,
                               double uL, double uR, bint hasL, bint hasR,
                               double k, double pm1, double beta, double bm1,
                               double inv_dt, double eps, double e_mass,
                               bint right) noexcept nogil:
    cdef double val = _smooth(w, up, gj, uL, uR, hasL, hasR, k, pm1, inv_dt, eps, e_mass)
    if cj != 0.0:
        if beta == 1.0:
            if right:
                val += cj if w >= 0.0 else -cj
            else:
                val += cj if w > 0.0 else -cj
        else:
            val += cj * beta * _phi(w, bm1)
    return val


cdef double _node_solve(double up, double gj, double cj, double uL, double uR,
                        bint hasL, bint hasR, double k, double p, double beta,
                        double inv_dt, double eps, double e_mass,
                        double lo, double hi) noexcept nogil:
    cdef double a, b, w, aa, bb, mid, dr
    cdef double pm1, bm1
    if lo == hi:
        return lo
    if p == 2.0 and (cj == 0.0 or beta == 1.0):
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
    if _d_onesided(lo, up, gj, cj, uL, uR, hasL, hasR, k, pm1, beta, bm1,
                   inv_dt, eps, e_mass, 1) >= 0.0:
        return lo
    if _d_onesided(hi, up, gj, cj, uL, uR, hasL, hasR, k, pm1, beta, bm1,
                   inv_dt, eps, e_mass, 0) <= 0.0:
        return hi
    aa = lo
    bb = hi
    while bb - aa > 1e-13:
        mid = 0.5 * (aa + bb)
        dr = _d_onesided(mid, up, gj, cj, uL, uR, hasL, hasR, k, pm1, beta, bm1,
                         inv_dt, eps, e_mass, 1)
        if dr < 0.0:
            aa = mid
        elif _d_onesided(mid, up, gj, cj, uL, uR, hasL, hasR, k, pm1, beta, bm1,
                         inv_dt, eps, e_mass, 0) > 0.0:
            bb = mid
        else:
            return mid
    return 0.5 * (aa + bb)


cdef double _step_sweep(double[::1] u, const double[::1] u_prev, const double[::1] g,
                        const double[::1] cpsi, const double[::1] lo, const double[::1] hi,
                        double beta, double k, double p,
                        double inv_dt, double eps, double e_mass, bint dirichlet,
                        double omega) noexcept nogil:
    cdef Py_ssize_t m = u.shape[0]
    cdef Py_ssize_t j
    cdef double move = 0.0, w, d, uL, uR
    cdef bint hasL, hasR
    for j in range(m):
        if j > 0:
            uL = u[j - 1]
            hasL = 1
        else:
            uL = 0.0
            hasL = dirichlet
        if j < m - 1:
            uR = u[j + 1]
            hasR = 1
        else:
            uR = 0.0
            hasR = dirichlet
        w = _node_solve(u_prev[j], g[j], cpsi[j], uL, uR, hasL, hasR,
                        k, p, beta, inv_dt, eps, e_mass, lo[j], hi[j])
        if omega != 1.0:
            w = omega * w + (1.0 - omega) * u[j]
            if w > hi[j]:
                w = hi[j]
            elif w < lo[j]:
                w = lo[j]
        d = fabs(w - u[j])
        if d > move:
            move = d
        u[j] = w
    return move


cdef double _step_residual(const double[::1] u, const double[::1] u_prev,
                           const double[::1] g, const double[::1] cpsi,
                           const double[::1] lo, const double[::1] hi,
                           double beta, double k, double p,
                           double inv_dt, double eps, double e_mass,
                           bint dirichlet) noexcept nogil:
    cdef Py_ssize_t m = u.shape[0]
    cdef Py_ssize_t j
    cdef double res = 0.0, w, d, uL, uR
    cdef bint hasL, hasR
    for j in range(m):
        if j > 0:
            uL = u[j - 1]
            hasL = 1
        else:
            uL = 0.0
            hasL = dirichlet
        if j < m - 1:
            uR = u[j + 1]
            hasR = 1
        else:
            uR = 0.0
            hasR = dirichlet
        w = _node_solve(u_prev[j], g[j], cpsi[j], uL, uR, hasL, hasR,
                        k, p, beta, inv_dt, eps, e_mass, lo[j], hi[j])
        d = fabs(u[j] - w)
        if d > res:
            res = d
    return res


def step_residual(const double[::1] u, const double[::1] u_prev, const double[::1] g,
                  const double[::1] cpsi, const double[::1] lo, const double[::1] hi,
                  double beta, double k, double p,
                  double inv_dt, double eps, double e_mass, bint dirichlet):
    return _step_residual(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt, eps,
                          e_mass, dirichlet)


def step_solve(double[::1] u, const double[::1] u_prev, const double[::1] g,
               const double[::1] cpsi, const double[::1] lo, const double[::1] hi,
               double beta, double e_grad, double e_mass, double p,
               double dx, double inv_dt, double eps, bint dirichlet, double omega,
               double tol, long max_sweeps):
    """Solve one backward-Euler step in place; returns (sweeps, residual)."""
    cdef Py_ssize_t m = u.shape[0]
    cdef Py_ssize_t j
    cdef double k = e_grad / pow(dx, p)
    cdef double thr = tol
    cdef double move, res
    cdef long sweeps = 0
    for j in range(m):
        if u[j] > hi[j]:
            u[j] = hi[j]
        elif u[j] < lo[j]:
            u[j] = lo[j]
    while sweeps < max_sweeps:
        move = _step_sweep(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt, eps,
                           e_mass, dirichlet, omega)
        sweeps += 1
        if move <= thr:
            res = _step_residual(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt,
                                 eps, e_mass, dirichlet)
            if res <= tol:
                return sweeps, res
            thr *= 0.25
    res = _step_residual(u, u_prev, g, cpsi, lo, hi, beta, k, p, inv_dt, eps,
                         e_mass, dirichlet)
    return sweeps, res
