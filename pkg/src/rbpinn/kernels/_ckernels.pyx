# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels`` (same signatures and results)."""

import numpy as np
from libc.math cimport tanh as c_tanh

cdef enum:
    G = 2


def tanh_forward(z):
    cdef const double[:, :] zv = z
    cdef Py_ssize_t n = zv.shape[0], m = zv.shape[1], i, j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = c_tanh(zv[i, j])
    return out


def omsq_forward(h):
    cdef const double[:, :] hv = h
    cdef Py_ssize_t n = hv.shape[0], m = hv.shape[1], i, j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef double x
    with nogil:
        for i in range(n):
            for j in range(m):
                x = hv[i, j]
                o[i, j] = 1.0 - x * x
    return out


def tanh_backward(g, h):
    """Adjoint of ``h = tanh(z)``: ``g * (1 - h**2)``."""
    cdef const double[:, :] gv = g
    cdef const double[:, :] hv = h
    cdef Py_ssize_t n = hv.shape[0], m = hv.shape[1], i, j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef double x
    with nogil:
        for i in range(n):
            for j in range(m):
                x = hv[i, j]
                o[i, j] = gv[i, j] * (1.0 - x * x)
    return out


def omsq_backward(g, h):
    """Adjoint of ``s = 1 - h**2``: ``-2 h g``."""
    cdef const double[:, :] gv = g
    cdef const double[:, :] hv = h
    cdef Py_ssize_t n = hv.shape[0], m = hv.shape[1], i, j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = -2.0 * (hv[i, j] * gv[i, j])
    return out


def mul_backward(g, a, b):
    cdef const double[:, :] gv = g
    cdef const double[:, :] av = a
    cdef const double[:, :] bv = b
    cdef Py_ssize_t n = gv.shape[0], m = gv.shape[1], i, j
    ga = np.empty((n, m))
    gb = np.empty((n, m))
    cdef double[:, ::1] oa = ga
    cdef double[:, ::1] ob = gb
    with nogil:
        for i in range(n):
            for j in range(m):
                oa[i, j] = gv[i, j] * bv[i, j]
                ob[i, j] = gv[i, j] * av[i, j]
    return ga, gb


# ---------------------------------------------------------------- solver stencils

cdef inline double limited(double a, double b) noexcept nogil:
    cdef double p = a * b
    if p > 0.0:
        return 2.0 * p / (a + b)
    return 0.0


cdef inline double face_flux(double vel, double qm2, double qm1, double q0, double qp1) noexcept nogil:
    cdef double d = q0 - qm1
    if vel > 0.0:
        return vel * (qm1 + 0.5 * limited(qm1 - qm2, d))
    return vel * (q0 - 0.5 * limited(qp1 - q0, d))


def vanleer_advect(q, u, w, double dx, double dz):
    cdef const double[:, :] qv = q
    cdef const double[:, :] uv = u
    cdef const double[:, :] wv = w
    cdef Py_ssize_t nx = qv.shape[0] - 2 * G, nz = qv.shape[1] - 2 * G, i, j, I, J
    out = np.empty((nx, nz))
    cdef double[:, ::1] o = out
    cdef double fl, fr, fb, ft
    with nogil:
        for i in range(nx):
            I = i + G
            for j in range(nz):
                J = j + G
                fl = face_flux(uv[I, J], qv[I - 2, J], qv[I - 1, J], qv[I, J], qv[I + 1, J])
                fr = face_flux(uv[I + 1, J], qv[I - 1, J], qv[I, J], qv[I + 1, J], qv[I + 2, J])
                fb = face_flux(wv[I, J], qv[I, J - 2], qv[I, J - 1], qv[I, J], qv[I, J + 1])
                ft = face_flux(wv[I, J + 1], qv[I, J - 1], qv[I, J], qv[I, J + 1], qv[I, J + 2])
                o[i, j] = -((fr - fl) / dx + (ft - fb) / dz)
    return out


cdef inline double corner(const double[:, :] uv, const double[:, :] wv, Py_ssize_t I, Py_ssize_t J) noexcept nogil:
    # u*w at (x-face I, z-face J) of the extended arrays
    return 0.25 * (wv[I - 1, J] + wv[I, J]) * (uv[I, J - 1] + uv[I, J])


def momentum_advect(u, w, double dx, double dz):
    cdef const double[:, :] uv = u
    cdef const double[:, :] wv = w
    cdef Py_ssize_t nx = uv.shape[0] - 2 * G, nz = uv.shape[1] - 2 * G, i, j, I, J
    au = np.empty((nx, nz))
    aw = np.empty((nx, nz))
    cdef double[:, ::1] oa = au
    cdef double[:, ::1] ob = aw
    cdef double c0, c1, a, b
    with nogil:
        for i in range(nx):
            I = i + G
            for j in range(nz):
                J = j + G
                c1 = 0.5 * (uv[I, J] + uv[I + 1, J])
                c0 = 0.5 * (uv[I - 1, J] + uv[I, J])
                a = c1 * c1
                b = c0 * c0
                oa[i, j] = (a - b) / dx + (corner(uv, wv, I, J + 1) - corner(uv, wv, I, J)) / dz
                c1 = 0.5 * (wv[I, J] + wv[I, J + 1])
                c0 = 0.5 * (wv[I, J - 1] + wv[I, J])
                a = c1 * c1
                b = c0 * c0
                ob[i, j] = (corner(uv, wv, I + 1, J) - corner(uv, wv, I, J)) / dx + (a - b) / dz
    return au, aw


def laplacian(q, double dx, double dz):
    cdef const double[:, :] qv = q
    cdef Py_ssize_t nx = qv.shape[0] - 2 * G, nz = qv.shape[1] - 2 * G, i, j, I, J
    out = np.empty((nx, nz))
    cdef double[:, ::1] o = out
    cdef double c
    with nogil:
        for i in range(nx):
            I = i + G
            for j in range(nz):
                J = j + G
                c = qv[I, J]
                o[i, j] = ((qv[I - 1, J] - 2.0 * c + qv[I + 1, J]) / (dx * dx)
                           + (qv[I, J - 1] - 2.0 * c + qv[I, J + 1]) / (dz * dz))
    return out
