# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent kernel. Mirrors ``_kernel_py`` line for line."""

from libc.math cimport exp, log1p, fabs, sqrt, cos, acos, copysign, pow, isfinite, INFINITY, M_PI
import numpy as np

cdef double TIE_TOL = 1e-12
cdef double WEIGHT_FLOOR = 1e-10
cdef double POISSON_THETA_MAX = 700.0

cdef enum:
    MAXC = 10

cdef enum:
    GAUSS = 0
    BERN = 1
    POIS = 2

cdef enum:
    K_L1 = 0
    K_SCAD = 1
    K_MCP = 2
    K_SICA = 3
    K_HARD = 4
    K_L0 = 5


cdef inline double pen_value(int kind, double lam, double a, double t) nogil:
    cdef double d
    if kind == K_L1:
        return lam * t
    elif kind == K_SCAD:
        if t <= lam:
            return lam * t
        elif t <= a * lam:
            return (2 * a * lam * t - t * t - lam * lam) / (2 * (a - 1))
        return lam * lam * (a + 1) / 2
    elif kind == K_MCP:
        if t <= a * lam:
            return lam * t - t * t / (2 * a)
        return a * lam * lam / 2
    elif kind == K_SICA:
        return lam * (a + 1) * t / (a + t)
    elif kind == K_HARD:
        d = lam - t
        if d < 0:
            d = 0
        return lam * lam - d * d
    if t != 0:
        return lam
    return 0.0


cdef inline double clip(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline double cbrt_signed(double x) nogil:
    return copysign(pow(fabs(x), 1.0 / 3.0), x)


cdef int cubic_real_roots(double b2, double b1, double b0, double* out) nogil:
    cdef double shift = b2 / 3.0
    cdef double P = b1 - b2 * b2 / 3.0
    cdef double Q = 2.0 * b2 * b2 * b2 / 27.0 - b2 * b1 / 3.0 + b0
    cdef double disc = Q * Q / 4.0 + P * P * P / 27.0
    cdef double r, arg, phi, sq, u, f, df
    cdef int m, k, it
    if disc < 0.0:
        r = 2.0 * sqrt(-P / 3.0)
        arg = clip((3.0 * Q / (2.0 * P)) * sqrt(-3.0 / P), -1.0, 1.0)
        phi = acos(arg) / 3.0
        for k in range(3):
            out[k] = r * cos(phi - 2.0 * M_PI * k / 3.0) - shift
        m = 3
    else:
        sq = sqrt(disc)
        out[0] = cbrt_signed(-Q / 2 + sq) + cbrt_signed(-Q / 2 - sq) - shift
        m = 1
    for k in range(m):
        u = out[k]
        for it in range(3):
            f = ((u + b2) * u + b1) * u + b0
            df = (3.0 * u + 2.0 * b2) * u + b1
            if df == 0.0:
                break
            u -= f / df
        out[k] = u
    return m


cdef inline double scalar_obj(int kind, double lam, double a, double z, double w, double b) nogil:
    return 0.5 * w * (z - b) * (z - b) + pen_value(kind, lam, a, fabs(b))


cdef int candidates(int kind, double lam, double a, double z, double w, double* c) nogil:
    cdef int m = 1
    cdef double den
    cdef double roots[3]
    cdef int nr, k
    c[0] = 0.0
    if kind == K_L1:
        c[m] = z - lam / w if z - lam / w > 0 else 0.0; m += 1
    elif kind == K_SCAD:
        c[m] = lam; m += 1
        c[m] = a * lam; m += 1
        c[m] = clip(z - lam / w, 0.0, lam); m += 1
        den = w - 1.0 / (a - 1)
        if den != 0.0:
            c[m] = clip((w * z - a * lam / (a - 1)) / den, lam, a * lam); m += 1
        c[m] = z if z > a * lam else a * lam; m += 1
    elif kind == K_MCP:
        c[m] = a * lam; m += 1
        den = w - 1.0 / a
        if den != 0.0:
            c[m] = clip((w * z - lam) / den, 0.0, a * lam); m += 1
        c[m] = z if z > a * lam else a * lam; m += 1
    elif kind == K_HARD:
        c[m] = lam; m += 1
        den = w - 2.0
        if den != 0.0:
            c[m] = clip((w * z - 2 * lam) / den, 0.0, lam); m += 1
        c[m] = z if z > lam else lam; m += 1
    elif kind == K_SICA:
        nr = cubic_real_roots(-(a + z), 0.0, lam * a * (a + 1) / w, roots)
        for k in range(nr):
            if isfinite(roots[k]) and roots[k] > a:
                c[m] = roots[k] - a; m += 1
        c[m] = z; m += 1
    else:
        c[m] = z; m += 1
    return m


cdef double argmin_sorted(int kind, double lam, double a, double z, double w, double* c, int m) nogil:
    cdef int i, k
    cdef double tmp, v
    cdef double best_b = 0.0
    cdef double best_v = INFINITY
    # insertion sort, ascending magnitude (all candidates are >= 0)
    for i in range(1, m):
        tmp = c[i]
        k = i - 1
        while k >= 0 and c[k] > tmp:
            c[k + 1] = c[k]
            k -= 1
        c[k + 1] = tmp
    for i in range(m):
        v = scalar_obj(kind, lam, a, z, w, c[i])
        if v < best_v - TIE_TOL:
            best_b = c[i]
            best_v = v
    return best_b


cdef double threshold(int kind, double lam, double a, double tau, double z, double w, bint exact) nogil:
    cdef double c[MAXC]
    cdef double f[MAXC]
    cdef int m, i, mf
    cdef double az, b
    if z == 0.0:
        return 0.0
    az = fabs(z)
    m = candidates(kind, lam, a, az, w, c)
    if not exact:
        b = argmin_sorted(kind, lam, a, az, w, c, m)
        if b < tau:
            b = 0.0
    else:
        mf = 0
        for i in range(m):
            if c[i] >= tau:
                f[mf] = c[i]; mf += 1
        f[mf] = tau; mf += 1
        f[mf] = 0.0; mf += 1
        b = argmin_sorted(kind, lam, a, az, w, f, mf)
    if b == 0.0:
        return 0.0
    return copysign(b, z)


def scalar_threshold_c(int kind, double lam, double a, double tau, double z, double w, bint exact):
    """Compiled scalar thresholding rule (exposed for cross-checking)."""
    return threshold(kind, lam, a, tau, z, w, exact)


cdef inline double b_val(int fam, double t) nogil:
    if fam == GAUSS:
        return 0.5 * t * t
    elif fam == BERN:
        if t > 0:
            return t + log1p(exp(-t))
        return log1p(exp(t))
    return exp(t)


cdef inline void mean_var(int fam, double t, double* mu, double* w) nogil:
    cdef double e
    if fam == BERN:
        e = exp(-fabs(t))
        if t >= 0:
            mu[0] = 1.0 / (1.0 + e)
        else:
            mu[0] = e / (1.0 + e)
        w[0] = e / ((1.0 + e) * (1.0 + e))
    else:
        mu[0] = exp(t)
        w[0] = mu[0]
    if w[0] < WEIGHT_FLOOR:
        w[0] = WEIGHT_FLOOR


cdef inline double b_and_exp(int fam, double t, double* e) nogil:
    # b(t) together with the exponential needed to refresh the mean and variance
    if fam == BERN:
        e[0] = exp(-fabs(t))
        if t > 0:
            return t + log1p(e[0])
        return log1p(e[0])
    e[0] = exp(t)
    return e[0]


cdef inline void mean_var_from_exp(int fam, double t, double e, double* mu, double* w) nogil:
    if fam == BERN:
        if t >= 0:
            mu[0] = 1.0 / (1.0 + e)
        else:
            mu[0] = e / (1.0 + e)
        w[0] = e / ((1.0 + e) * (1.0 + e))
    else:
        mu[0] = e
        w[0] = e
    if w[0] < WEIGHT_FLOOR:
        w[0] = WEIGHT_FLOOR


cdef double full_objective(int fam, int kind, double lam, double a, double[::1] y,
                           double* theta, double[::1] beta, int n, int p) nogil:
    cdef double s = 0.0
    cdef int i, j
    for i in range(n):
        s += b_val(fam, theta[i]) - y[i] * theta[i]
    s /= n
    for j in range(p):
        s += pen_value(kind, lam, a, fabs(beta[j]))
    return s


def coordinate_descent(double[::1, :] X, double[::1] y, double[::1] beta, int family_code,
                       int kind_code, double lam, double a, double tau, bint exact,
                       int max_nnz, int max_cycles, double tol, int max_halvings,
                       on_update=None):
    """Compiled counterpart of ``_kernel_py.coordinate_descent`` (``on_update`` is ignored)."""
    cdef int n = X.shape[0]
    cdef int p = X.shape[1]
    cdef int fam = family_code
    cdef int kind = kind_code
    cdef bint gaussian = fam == GAUSS
    cdef double[::1] colsq = np.empty(p)
    cdef double[::1] theta = np.empty(n)
    cdef double[::1] resid = np.empty(n)
    cdef double[::1] mu = np.empty(n)
    cdef double[::1] w = np.empty(n)
    cdef double[::1] xty = np.empty(p)
    cdef double[::1] th_new = np.empty(n)
    cdef double[::1] e_new = np.empty(n)
    cdef double[::1] beta_old = np.empty(p)
    cdef double[::1] cand_vec = np.empty(p)
    cdef int i, j, h, cycles = 0, nnz = 0, rejections = 0, backtracks = 0
    cdef bint converged = False, accepted, ok, bad_theta
    cdef double s, s1, s2, wbar, z, c, bj, delta, maxdelta, t, cand, pen_old, b_old, b_new
    cdef double q, q_prev, qc, xij, bsum = 0.0

    with nogil:
        for j in range(p):
            s = 0.0
            for i in range(n):
                s += X[i, j] * X[i, j]
            colsq[j] = s
            if beta[j] != 0.0:
                nnz += 1
        for i in range(n):
            theta[i] = 0.0
        for j in range(p):
            if beta[j] != 0.0:
                for i in range(n):
                    theta[i] += X[i, j] * beta[j]
        if gaussian:
            for i in range(n):
                resid[i] = y[i] - theta[i]
        else:
            for i in range(n):
                mean_var(fam, theta[i], &mu[i], &w[i])
                bsum += b_val(fam, theta[i])
            for j in range(p):
                s = 0.0
                for i in range(n):
                    s += X[i, j] * y[i]
                xty[j] = s
        q_prev = full_objective(fam, kind, lam, a, y, &theta[0], beta, n, p)

        for cycles in range(1, max_cycles + 1):
            for j in range(p):
                beta_old[j] = beta[j]
            maxdelta = 0.0
            for j in range(p):
                if colsq[j] == 0.0:
                    continue
                bj = beta[j]
                if gaussian:
                    wbar = colsq[j] / n
                    s1 = 0.0
                    for i in range(n):
                        s1 += X[i, j] * resid[i]
                    z = bj + s1 / colsq[j]
                else:
                    s1 = 0.0
                    s2 = 0.0
                    for i in range(n):
                        xij = X[i, j]
                        s1 += xij * (y[i] - mu[i])
                        s2 += w[i] * xij * xij
                    wbar = s2 / n
                    z = bj + s1 / s2
                c = threshold(kind, lam, a, tau, z, wbar, exact)
                if c == bj:
                    continue
                if bj == 0.0 and nnz >= max_nnz:
                    rejections += 1
                    continue
                if gaussian:
                    delta = c - bj
                    for i in range(n):
                        resid[i] -= delta * X[i, j]
                else:
                    t = 1.0
                    accepted = False
                    pen_old = pen_value(kind, lam, a, fabs(bj))
                    b_old = bsum
                    for h in range(max_halvings + 1):
                        if t < 1.0:
                            cand = bj + t * (c - bj)
                        else:
                            cand = c
                        t *= 0.5
                        if cand != 0.0 and fabs(cand) < tau:
                            continue
                        delta = cand - bj
                        bad_theta = False
                        b_new = 0.0
                        for i in range(n):
                            th_new[i] = theta[i] + delta * X[i, j]
                            if fam == POIS and fabs(th_new[i]) > POISSON_THETA_MAX:
                                bad_theta = True
                                break
                            b_new += b_and_exp(fam, th_new[i], &e_new[i])
                        if bad_theta:
                            continue
                        if (b_new - b_old - delta * xty[j]) / n + pen_value(kind, lam, a, fabs(cand)) - pen_old <= 0.0:
                            accepted = True
                            break
                    if not accepted:
                        continue
                    c = cand
                    bsum = b_new
                    for i in range(n):
                        theta[i] = th_new[i]
                        mean_var_from_exp(fam, theta[i], e_new[i], &mu[i], &w[i])
                if bj == 0.0:
                    nnz += 1
                elif c == 0.0:
                    nnz -= 1
                beta[j] = c
                if fabs(delta) > maxdelta:
                    maxdelta = fabs(delta)
            if not gaussian:
                q = full_objective(fam, kind, lam, a, y, &theta[0], beta, n, p)
                if q > q_prev + 1e-12 * (fabs(q_prev) if fabs(q_prev) > 1.0 else 1.0):
                    backtracks += 1
                    ok = False
                    t = 0.5
                    for h in range(max_halvings):
                        for j in range(p):
                            cand_vec[j] = beta_old[j] + t * (beta[j] - beta_old[j])
                            if cand_vec[j] != 0.0 and fabs(cand_vec[j]) < tau:
                                cand_vec[j] = beta_old[j]
                        for i in range(n):
                            th_new[i] = 0.0
                        for j in range(p):
                            if cand_vec[j] != 0.0:
                                for i in range(n):
                                    th_new[i] += X[i, j] * cand_vec[j]
                        bad_theta = False
                        if fam == POIS:
                            for i in range(n):
                                if fabs(th_new[i]) > POISSON_THETA_MAX:
                                    bad_theta = True
                                    break
                        if bad_theta:
                            t *= 0.5
                            continue
                        qc = full_objective(fam, kind, lam, a, y, &th_new[0], cand_vec, n, p)
                        if qc <= q_prev:
                            ok = True
                            break
                        t *= 0.5
                    if not ok:
                        for j in range(p):
                            beta[j] = beta_old[j]
                        break
                    nnz = 0
                    maxdelta = 0.0
                    for j in range(p):
                        if fabs(cand_vec[j] - beta_old[j]) > maxdelta:
                            maxdelta = fabs(cand_vec[j] - beta_old[j])
                        beta[j] = cand_vec[j]
                        if beta[j] != 0.0:
                            nnz += 1
                    bsum = 0.0
                    for i in range(n):
                        theta[i] = th_new[i]
                        mean_var(fam, theta[i], &mu[i], &w[i])
                        bsum += b_val(fam, theta[i])
                    q = qc
                q_prev = q
            if maxdelta < tol:
                converged = True
                break
    return cycles, bool(converged), rejections, backtracks
