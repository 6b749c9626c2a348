"""NumPy implementations of the hot kernels (always available)."""

import numpy as np


def tanh_forward(z):
    return np.tanh(z)


def omsq_forward(h):
    out = h * h
    np.subtract(1.0, out, out=out)
    return out


def tanh_backward(g, h):
    """Adjoint of ``h = tanh(z)``: ``g * (1 - h**2)``."""
    out = h * h
    np.subtract(1.0, out, out=out)
    out *= g
    return out


def omsq_backward(g, h):
    """Adjoint of ``s = 1 - h**2``: ``-2 h g``."""
    out = h * g
    out *= -2.0
    return out


def mul_backward(g, a, b):
    return g * b, g * a


# ---------------------------------------------------------------- solver stencils
# Extended arrays carry two ghost layers on every side; index [g+i, g+j] is
# interior cell/face (i, j). Returned arrays cover the (nx, nz) interior.

G = 2


def _limited_slope(a, b):
    """van Leer slope: harmonic mean of one-sided differences, zero at extrema."""
    prod = a * b
    den = a + b
    out = np.zeros_like(a)
    np.divide(2.0 * prod, den, out=out, where=prod > 0.0)
    return out


def vanleer_advect(q, u, w, dx, dz):
    """Flux-form ``-div(v q)`` with van Leer limited upwind face values.

    ``q`` lives at cell centres, ``u`` on left x-faces and ``w`` on bottom
    z-faces, all as ghost-extended arrays.
    """
    nx, nz = q.shape[0] - 2 * G, q.shape[1] - 2 * G
    # x-faces i = 0..nx of interior rows
    rows = slice(G, G + nz)
    qm2 = q[G - 2 : G + nx - 1, rows]
    qm1 = q[G - 1 : G + nx, rows]
    q0 = q[G : G + nx + 1, rows]
    qp1 = q[G + 1 : G + nx + 2, rows]
    d = q0 - qm1
    left = qm1 + 0.5 * _limited_slope(qm1 - qm2, d)
    right = q0 - 0.5 * _limited_slope(qp1 - q0, d)
    uf = u[G : G + nx + 1, rows]
    fx = uf * np.where(uf > 0.0, left, right)
    cols = slice(G, G + nx)
    qm2 = q[cols, G - 2 : G + nz - 1]
    qm1 = q[cols, G - 1 : G + nz]
    q0 = q[cols, G : G + nz + 1]
    qp1 = q[cols, G + 1 : G + nz + 2]
    d = q0 - qm1
    left = qm1 + 0.5 * _limited_slope(qm1 - qm2, d)
    right = q0 - 0.5 * _limited_slope(qp1 - q0, d)
    wf = w[cols, G : G + nz + 1]
    fz = wf * np.where(wf > 0.0, left, right)
    return -((fx[1:] - fx[:-1]) / dx + (fz[:, 1:] - fz[:, :-1]) / dz)


def momentum_advect(u, w, dx, dz):
    """Conservative central advection terms ``div(v u)`` and ``div(v w)`` on a MAC grid."""
    nx, nz = u.shape[0] - 2 * G, u.shape[1] - 2 * G
    rows = slice(G, G + nz)
    cols = slice(G, G + nx)
    # u^2 at cell centres i-1..nx-1 (x-derivative at faces i = 0..nx-1)
    uc = 0.5 * (u[G - 1 : G + nx, rows] + u[G : G + nx + 1, rows])
    uu = uc * uc
    # w^2 at cell centres j-1..nz-1
    wc = 0.5 * (w[cols, G - 1 : G + nz] + w[cols, G : G + nz + 1])
    ww = wc * wc
    # u*w at corners (x-face i, z-face j), i = 0..nx, j = 0..nz
    wx = 0.5 * (w[G - 1 : G + nx, G : G + nz + 1] + w[G : G + nx + 1, G : G + nz + 1])
    uz = 0.5 * (u[G : G + nx + 1, G - 1 : G + nz] + u[G : G + nx + 1, G : G + nz + 1])
    uw = wx * uz
    adv_u = (uu[1:] - uu[:-1]) / dx + (uw[:-1, 1:] - uw[:-1, :-1]) / dz
    adv_w = (uw[1:, :-1] - uw[:-1, :-1]) / dx + (ww[:, 1:] - ww[:, :-1]) / dz
    return adv_u, adv_w


def laplacian(q, dx, dz):
    """Five-point Laplacian of the interior of a ghost-extended array."""
    nx, nz = q.shape[0] - 2 * G, q.shape[1] - 2 * G
    c = q[G : G + nx, G : G + nz]
    return ((q[G - 1 : G + nx - 1, G : G + nz] - 2.0 * c + q[G + 1 : G + nx + 1, G : G + nz]) / (dx * dx)
            + (q[G : G + nx, G - 1 : G + nz - 1] - 2.0 * c + q[G : G + nx, G + 1 : G + nz + 1]) / (dz * dz))
