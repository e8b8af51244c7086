"""Sample-by-sample adaptive loops (numba-compiled)."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def nearest(y, points):
    best = 0
    dmin = np.inf
    for i in range(points.size):
        d = (y.real - points[i].real) ** 2 + (y.imag - points[i].imag) ** 2
        if d < dmin:
            dmin = d
            best = i
    return points[best]


@njit(cache=True, nogil=True)
def butterfly_lms(x, ref, n_ref, w, mu, points, start, stop, out, err, pll_gain=0.0):
    """2x2 butterfly LMS over output symbols ``start..stop``.

    ``x`` is (2, n) at 2 samples/symbol, ``w`` is (2, 2, T) and is updated in
    place. Symbols below ``n_ref`` adapt on ``ref``, later ones on decisions.
    With ``pll_gain > 0`` each output carries a first-order phase loop and
    ``out`` holds the derotated symbols; the taps adapt in the unrotated frame.
    """
    n = x.shape[1]
    T = w.shape[2]
    c = T // 2
    win = np.empty((2, T), dtype=np.complex128)
    theta = np.zeros(2)
    for m in range(start, stop):
        base = 2 * m - c
        for k in range(T):
            j = (base + k) % n
            win[0, k] = x[0, j]
            win[1, k] = x[1, j]
        e2 = 0.0
        for o in range(2):
            y = 0j
            for p in range(2):
                for k in range(T):
                    y += w[o, p, k] * win[p, k]
            rot = np.exp(-1j * theta[o]) if pll_gain > 0 else 1.0 + 0j
            z = y * rot
            if m < n_ref:
                d = ref[o, m]
            else:
                d = nearest(z, points)
            e = d - z
            out[o, m] = z
            e2 += e.real * e.real + e.imag * e.imag
            if pll_gain > 0:
                theta[o] += pll_gain * np.angle(z * np.conj(d))
            g = mu * e * np.conj(rot)
            for p in range(2):
                for k in range(T):
                    w[o, p, k] += g * np.conj(win[p, k])
        err[m] = e2 / 2


@njit(cache=True, nogil=True)
def dd_phase_loop(y, points, theta0, gain, out, track):
    """First-order decision-directed carrier phase loop."""
    theta = theta0
    for m in range(y.size):
        z = y[m] * np.exp(-1j * theta)
        out[m] = z
        track[m] = theta
        d = nearest(z, points)
        theta += gain * np.angle(z * np.conj(d))
