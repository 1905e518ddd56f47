"""Pure-Python (numpy) implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and semantics. :mod:`zonetrap.kernels` picks one at import time.
"""
import math

import numpy as np

TWO_PI = 2.0 * math.pi


def patch_eval(rects, points):
    """Unit potential, gradient and Hessian of rectangular patches.

    Parameters
    ----------
    rects : (P, 4) array of ``x_min, x_max, y_min, y_max``
    points : (N, 3) array, all with z > 0

    Returns
    -------
    phi : (N, P)
    grad : (N, P, 3)
    hess : (N, P, 3, 3)
    """
    rects = np.ascontiguousarray(rects, dtype=float).reshape(-1, 4)
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    x = points[:, 0][:, None]
    y = points[:, 1][:, None]
    z = points[:, 2][:, None]
    n, p = points.shape[0], rects.shape[0]

    phi = np.zeros((n, p))
    gX = np.zeros((n, p))
    gY = np.zeros((n, p))
    gz = np.zeros((n, p))
    hXX = np.zeros((n, p))
    hYY = np.zeros((n, p))
    hXY = np.zeros((n, p))
    hXz = np.zeros((n, p))
    hYz = np.zeros((n, p))

    z2 = z * z
    for i in (0, 1):
        X = rects[:, i][None, :] - x
        X2 = X * X
        for j in (2, 3):
            Y = rects[:, j][None, :] - y
            Y2 = Y * Y
            s = 1.0 if (i + j) % 2 == 0 else -1.0
            R2 = X2 + Y2 + z2
            R = np.sqrt(R2)
            R3 = R2 * R
            ax = X2 + z2
            ay = Y2 + z2
            phi += s * np.arctan2(X * Y, z * R)
            gX += s * Y * z / (ax * R)
            gY += s * X * z / (ay * R)
            gz -= s * X * Y * (R2 + z2) / (ax * ay * R)
            hXX -= s * X * Y * z * (3 * X2 + 2 * Y2 + 3 * z2) / (ax * ax * R3)
            hYY -= s * X * Y * z * (2 * X2 + 3 * Y2 + 3 * z2) / (ay * ay * R3)
            hXY += s * z / R3
            hXz -= s * Y * (X2 * z2 + Y2 * z2 + 2 * z2 * z2 - X2 * X2 - X2 * Y2) / (ax * ax * R3)
            hYz -= s * X * (X2 * z2 + Y2 * z2 + 2 * z2 * z2 - Y2 * Y2 - X2 * Y2) / (ay * ay * R3)

    phi /= TWO_PI
    grad = np.stack([-gX, -gY, gz], axis=-1) / TWO_PI
    hess = np.empty((n, p, 3, 3))
    hess[..., 0, 0] = hXX
    hess[..., 1, 1] = hYY
    hess[..., 2, 2] = -(hXX + hYY)
    hess[..., 0, 1] = hess[..., 1, 0] = hXY
    hess[..., 0, 2] = hess[..., 2, 0] = -hXz
    hess[..., 1, 2] = hess[..., 2, 1] = -hYz
    hess /= TWO_PI
    return phi, grad, hess


def _axial_force_basis(rects, owner, n_sources, x, y0, z0):
    """d(phi_s)/dx at (x, y0, z0) summed per source electrode."""
    z2 = z0 * z0
    X = rects[:, 0:2] - x
    Y = rects[:, 2:4] - y0
    ax = X * X + z2
    # corners (i, j) with sign (-1)**(i+j)
    R = np.sqrt(X[:, :, None] ** 2 + Y[:, None, :] ** 2 + z2)
    terms = Y[:, None, :] * z0 / (ax[:, :, None] * R)
    acc = terms[:, 0, 0] - terms[:, 0, 1] - terms[:, 1, 0] + terms[:, 1, 1]
    return -np.bincount(owner, weights=acc, minlength=n_sources) / TWO_PI


def verlet_axial(rects, owner, volts, sample_period, x0, v0, dt, n_steps,
                 charge_to_mass, y0, z0, stride, x_lo, x_hi):
    """Velocity-Verlet integration of 1-D axial motion.

    ``volts`` is a (T, S) table of source voltages at times ``k*sample_period``,
    interpolated linearly and held after the last row.
    Returns ``(x, v, n_done)`` sampled every ``stride`` steps (first entry is
    the initial state); ``n_done < n_steps`` means the ion left
    ``[x_lo, x_hi]``.
    """
    rects = np.ascontiguousarray(rects, dtype=float)
    owner = np.ascontiguousarray(owner, dtype=np.int64)
    volts = np.ascontiguousarray(volts, dtype=float)
    n_rows, n_src = volts.shape
    n_out = n_steps // stride + 1
    xs = np.empty(n_out)
    vs = np.empty(n_out)

    def volt_at(t):
        u = t / sample_period
        k = int(math.floor(u))
        if k >= n_rows - 1:
            return volts[n_rows - 1]
        if k < 0:
            return volts[0]
        f = u - k
        return volts[k] * (1.0 - f) + volts[k + 1] * f

    def accel(x, t):
        return -charge_to_mass * float(np.dot(volt_at(t), _axial_force_basis(rects, owner, n_src, x, y0, z0)))

    x, v = float(x0), float(v0)
    a = accel(x, 0.0)
    xs[0], vs[0] = x, v
    done = 0
    for step in range(1, n_steps + 1):
        t = step * dt
        x = x + v * dt + 0.5 * a * dt * dt
        a_new = accel(x, t)
        v = v + 0.5 * (a + a_new) * dt
        a = a_new
        done = step
        if step % stride == 0:
            xs[step // stride] = x
            vs[step // stride] = v
        if not (x_lo <= x <= x_hi):
            break
    n_kept = done // stride + 1
    return xs[:n_kept], vs[:n_kept], done


def probe_scan(kv, dt, starts, n_probe, detunings, rabi):
    """Excited-state population after a square probe pulse.

    ``kv`` is the Doppler shift k*v sampled every ``dt``; a probe starting at
    index ``starts[d]`` lasts ``n_probe`` steps. The instantaneous detuning is
    ``detunings[w] + kv``. Returns a (len(starts), len(detunings)) array.
    """
    kv = np.asarray(kv, dtype=float)
    starts = np.asarray(starts, dtype=np.int64)
    det = np.asarray(detunings, dtype=float)[None, :]
    shape = (starts.size, det.size)
    # state (a, b) for |down>, |excited>
    a = np.ones(shape, dtype=complex)
    b = np.zeros(shape, dtype=complex)
    for step in range(n_probe):
        delta = det + kv[starts + step][:, None]
        w = np.sqrt(rabi * rabi + delta * delta)
        half = 0.5 * w * dt
        c = np.cos(half)
        sn = 0.5 * dt * np.sinc(half / math.pi)  # sin(half) / w, finite at w = 0
        # H = (rabi sx - delta sz) / 2 ; U = c - i sn (rabi sx - delta sz)
        a_new = (c + 1j * sn * delta) * a - 1j * sn * rabi * b
        b = -1j * sn * rabi * a + (c - 1j * sn * delta) * b
        a = a_new
    return np.abs(b) ** 2


def axial_profile(rects, owner, volts, x, y0, z0):
    """phi, dphi/dx and d2phi/dx2 at (x[n], y0, z0) with voltage row ``volts[n]`` over sources.

    ``owner[p]`` maps patch p to its source column in ``volts`` (N, S).
    """
    x = np.ascontiguousarray(x, dtype=float).reshape(-1)
    pts = np.column_stack([x, np.full_like(x, y0), np.full_like(x, z0)])
    phi, grad, hess = patch_eval(rects, pts)
    vp = np.asarray(volts, dtype=float)[:, np.asarray(owner)]
    return (np.einsum("np,np->n", phi, vp), np.einsum("np,np->n", grad[:, :, 0], vp),
            np.einsum("np,np->n", hess[:, :, 0, 0], vp))
