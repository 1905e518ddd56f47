# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Semantics mirror ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, floor, cos, sin, M_PI

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


def patch_eval(rects, points):
    cdef double[:, ::1] r = np.ascontiguousarray(rects, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] pt = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = pt.shape[0], p = r.shape[0]
    phi_a = np.zeros((n, p))
    grad_a = np.zeros((n, p, 3))
    hess_a = np.zeros((n, p, 3, 3))
    cdef double[:, ::1] phi = phi_a
    cdef double[:, :, ::1] grad = grad_a
    cdef double[:, :, :, ::1] hess = hess_a
    cdef Py_ssize_t a, b, i, j
    cdef double x, y, z, z2, X, Y, X2, Y2, R2, R, R3, ax, ay, s
    cdef double f, gX, gY, gz, hXX, hYY, hXY, hXz, hYz
    for a in range(n):
        x = pt[a, 0]
        y = pt[a, 1]
        z = pt[a, 2]
        z2 = z * z
        for b in range(p):
            f = 0.0
            gX = 0.0
            gY = 0.0
            gz = 0.0
            hXX = 0.0
            hYY = 0.0
            hXY = 0.0
            hXz = 0.0
            hYz = 0.0
            for i in range(2):
                X = r[b, i] - x
                X2 = X * X
                ax = X2 + z2
                for j in range(2):
                    Y = r[b, 2 + j] - y
                    Y2 = Y * Y
                    ay = Y2 + z2
                    s = 1.0 if (i + j) % 2 == 0 else -1.0
                    R2 = X2 + Y2 + z2
                    R = sqrt(R2)
                    R3 = R2 * R
                    f += s * atan2(X * Y, z * R)
                    gX += s * Y * z / (ax * R)
                    gY += s * X * z / (ay * R)
                    gz -= s * X * Y * (R2 + z2) / (ax * ay * R)
                    hXX -= s * X * Y * z * (3 * X2 + 2 * Y2 + 3 * z2) / (ax * ax * R3)
                    hYY -= s * X * Y * z * (2 * X2 + 3 * Y2 + 3 * z2) / (ay * ay * R3)
                    hXY += s * z / R3
                    hXz -= s * Y * (X2 * z2 + Y2 * z2 + 2 * z2 * z2 - X2 * X2 - X2 * Y2) / (ax * ax * R3)
                    hYz -= s * X * (X2 * z2 + Y2 * z2 + 2 * z2 * z2 - Y2 * Y2 - X2 * Y2) / (ay * ay * R3)
            phi[a, b] = f / TWO_PI
            grad[a, b, 0] = -gX / TWO_PI
            grad[a, b, 1] = -gY / TWO_PI
            grad[a, b, 2] = gz / TWO_PI
            hess[a, b, 0, 0] = hXX / TWO_PI
            hess[a, b, 1, 1] = hYY / TWO_PI
            hess[a, b, 2, 2] = -(hXX + hYY) / TWO_PI
            hess[a, b, 0, 1] = hXY / TWO_PI
            hess[a, b, 1, 0] = hXY / TWO_PI
            hess[a, b, 0, 2] = -hXz / TWO_PI
            hess[a, b, 2, 0] = -hXz / TWO_PI
            hess[a, b, 1, 2] = -hYz / TWO_PI
            hess[a, b, 2, 1] = -hYz / TWO_PI
    return phi_a, grad_a, hess_a


cdef inline double _accel(double[:, ::1] r, long[::1] owner, double[:, ::1] volts,
                          double[::1] row, double sample_period, double qm,
                          double x, double t, double y0, double z0) nogil:
    cdef Py_ssize_t n_rows = volts.shape[0], n_src = volts.shape[1]
    cdef Py_ssize_t k, b, i, j
    cdef double u, frac, acc, X, Y, ax, R, s, total, z2 = z0 * z0
    u = t / sample_period
    k = <Py_ssize_t>floor(u)
    if k >= n_rows - 1:
        for b in range(n_src):
            row[b] = volts[n_rows - 1, b]
    elif k < 0:
        for b in range(n_src):
            row[b] = volts[0, b]
    else:
        frac = u - k
        for b in range(n_src):
            row[b] = volts[k, b] * (1.0 - frac) + volts[k + 1, b] * frac
    total = 0.0
    for b in range(r.shape[0]):
        acc = 0.0
        for i in range(2):
            X = r[b, i] - x
            ax = X * X + z2
            for j in range(2):
                Y = r[b, 2 + j] - y0
                R = sqrt(X * X + Y * Y + z2)
                s = 1.0 if (i + j) % 2 == 0 else -1.0
                acc += s * Y * z0 / (ax * R)
        total -= row[owner[b]] * acc
    return -qm * total / TWO_PI


def verlet_axial(rects, owner, volts, double sample_period, double x0, double v0,
                 double dt, long n_steps, double charge_to_mass, double y0, double z0,
                 long stride, double x_lo, double x_hi):
    cdef double[:, ::1] r = np.ascontiguousarray(rects, dtype=np.float64)
    cdef long[::1] own = np.ascontiguousarray(owner, dtype=np.int64)
    cdef double[:, ::1] vt = np.ascontiguousarray(volts, dtype=np.float64)
    cdef double[::1] row = np.empty(vt.shape[1])
    cdef long n_out = n_steps // stride + 1
    xs_a = np.empty(n_out)
    vs_a = np.empty(n_out)
    cdef double[::1] xs = xs_a
    cdef double[::1] vs = vs_a
    cdef double x = x0, v = v0, a, a_new, t
    cdef long step, done = 0
    with nogil:
        a = _accel(r, own, vt, row, sample_period, charge_to_mass, x, 0.0, y0, z0)
        xs[0] = x
        vs[0] = v
        for step in range(1, n_steps + 1):
            t = step * dt
            x = x + v * dt + 0.5 * a * dt * dt
            a_new = _accel(r, own, vt, row, sample_period, charge_to_mass, x, t, y0, z0)
            v = v + 0.5 * (a + a_new) * dt
            a = a_new
            done = step
            if step % stride == 0:
                xs[step // stride] = x
                vs[step // stride] = v
            if not (x_lo <= x <= x_hi):
                break
    n_kept = done // stride + 1
    return xs_a[:n_kept], vs_a[:n_kept], done


def probe_scan(kv, double dt, starts, long n_probe, detunings, double rabi):
    cdef double[::1] k = np.ascontiguousarray(kv, dtype=np.float64)
    cdef long[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef double[::1] det = np.ascontiguousarray(detunings, dtype=np.float64)
    cdef Py_ssize_t nd = st.shape[0], nw = det.shape[0], d, w, step
    out_a = np.empty((nd, nw))
    cdef double[:, ::1] out = out_a
    cdef double ar, ai, br, bi, nar, nai, delta, om, half, c, sn, sx
    with nogil:
        for d in range(nd):
            for w in range(nw):
                ar = 1.0
                ai = 0.0
                br = 0.0
                bi = 0.0
                for step in range(n_probe):
                    delta = det[w] + k[st[d] + step]
                    om = sqrt(rabi * rabi + delta * delta)
                    half = 0.5 * om * dt
                    c = cos(half)
                    if half > 1e-12:
                        sn = sin(half) / om
                    else:
                        sn = 0.5 * dt
                    sx = sn * rabi
                    # a' = (c + i sn delta) a - i sx b ; b' = -i sx a + (c - i sn delta) b
                    nar = c * ar - sn * delta * ai + sx * bi
                    nai = c * ai + sn * delta * ar - sx * br
                    br, bi = c * br + sn * delta * bi + sx * ai, c * bi - sn * delta * br - sx * ar
                    ar = nar
                    ai = nai
                out[d, w] = br * br + bi * bi
    return out_a


def axial_profile(rects, owner, volts, x, double y0, double z0):
    cdef const double[:, ::1] r = np.ascontiguousarray(rects, dtype=np.float64).reshape(-1, 4)
    cdef const long[::1] own = np.ascontiguousarray(owner, dtype=np.int64)
    cdef const double[:, ::1] vt = np.ascontiguousarray(volts, dtype=np.float64)
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = xs.shape[0], p = r.shape[0], a, b, i, j
    phi_a = np.empty(n)
    d1_a = np.empty(n)
    d2_a = np.empty(n)
    cdef double[::1] phi = phi_a
    cdef double[::1] d1 = d1_a
    cdef double[::1] d2 = d2_a
    cdef double z2 = z0 * z0, X, Y, X2, Y2, ax, R2, R, R3, s, f, gX, hXX, v, tf, tg, th
    if vt.shape[0] != n:
        raise ValueError("one voltage row per point is required")
    with nogil:
        for a in range(n):
            tf = 0.0
            tg = 0.0
            th = 0.0
            for b in range(p):
                f = 0.0
                gX = 0.0
                hXX = 0.0
                for i in range(2):
                    X = r[b, i] - xs[a]
                    X2 = X * X
                    ax = X2 + z2
                    for j in range(2):
                        Y = r[b, 2 + j] - y0
                        Y2 = Y * Y
                        s = 1.0 if (i + j) % 2 == 0 else -1.0
                        R2 = X2 + Y2 + z2
                        R = sqrt(R2)
                        R3 = R2 * R
                        f += s * atan2(X * Y, z0 * R)
                        gX += s * Y * z0 / (ax * R)
                        hXX -= s * X * Y * z0 * (3 * X2 + 2 * Y2 + 3 * z2) / (ax * ax * R3)
                v = vt[a, own[b]]
                tf += v * f
                tg -= v * gX
                th += v * hXX
            phi[a] = tf / TWO_PI
            d1[a] = tg / TWO_PI
            d2[a] = th / TWO_PI
    return phi_a, d1_a, d2_a
