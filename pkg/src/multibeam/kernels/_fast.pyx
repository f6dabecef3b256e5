# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels (see _ref.py for reference)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, sin, cos, fabs

cnp.import_array()


cdef inline double _sinc(double x) nogil:
    cdef double px
    if fabs(x) < 1e-12:
        return 1.0
    px = M_PI * x
    return sin(px) / px


def pattern_amplitude(weights, angles_rad, double spacing_wl):
    """Array factor sum_n w[n] * exp(-1j*2*pi*n*spacing_wl*sin(angle))."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ang = np.ascontiguousarray(angles_rad, dtype=np.float64)
    cdef Py_ssize_t num_el = w.shape[0]
    cdef Py_ssize_t num_ang = ang.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(num_ang, dtype=np.complex128)
    cdef Py_ssize_t i, n
    cdef double step, ph, c, s, re, im, wr, wi
    with nogil:
        for i in range(num_ang):
            step = -2.0 * M_PI * spacing_wl * sin(ang[i])
            re = 0.0
            im = 0.0
            for n in range(num_el):
                ph = step * n
                c = cos(ph)
                s = sin(ph)
                wr = w[n].real
                wi = w[n].imag
                # (wr + j*wi) * (c + j*s)
                re += wr * c - wi * s
                im += wr * s + wi * c
            out[i] = re + 1j * im
    return out


def sinc_taps(alphas, tofs_s, double bandwidth_hz, Py_ssize_t num_taps):
    """Band-limited impulse response sum_k alpha_k * sinc(B*(n*Ts - tof_k))."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] a = np.ascontiguousarray(alphas, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tof = np.ascontiguousarray(tofs_s, dtype=np.float64)
    cdef Py_ssize_t num_paths = a.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.zeros(num_taps, dtype=np.complex128)
    cdef Py_ssize_t n, k
    cdef double x, g
    with nogil:
        for n in range(num_taps):
            for k in range(num_paths):
                # B*(n*Ts - tof) = n - B*tof
                x = n - bandwidth_hz * tof[k]
                g = _sinc(x)
                out[n].real += g * a[k].real
                out[n].imag += g * a[k].imag
    return out


def sinc_matrix(tofs_s, double bandwidth_hz, Py_ssize_t num_taps, double anchor_tap):
    """Real dictionary S[n, k] = sinc(B*((n - anchor_tap)*Ts - tof_k))."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tof = np.ascontiguousarray(tofs_s, dtype=np.float64)
    cdef Py_ssize_t num_tofs = tof.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((num_taps, num_tofs), dtype=np.float64)
    cdef Py_ssize_t n, k
    with nogil:
        for n in range(num_taps):
            for k in range(num_tofs):
                out[n, k] = _sinc((n - anchor_tap) - bandwidth_hz * tof[k])
    return out
