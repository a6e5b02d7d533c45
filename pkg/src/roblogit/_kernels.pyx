# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same API as ``roblogit._kernels_py``."""

import numpy as np
from libc.math cimport exp, log1p, fabs

cdef int LOSS_BOUNDED = 0
cdef int LOSS_DEVIANCE = 1

cdef int PEN_NONE = 0
cdef int PEN_ENET = 1
cdef int PEN_SCAD = 2
cdef int PEN_MCP = 3


cdef inline double _softplus(double t) noexcept nogil:
    if t > 0:
        return t + log1p(exp(-t))
    return log1p(exp(t))


cdef inline double _expit(double t) noexcept nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef inline void _parts(double t, double c, double *P, double *Q, double *Pc, double *Qc) noexcept nogil:
    # everything from one exp(-|t|): P = expit(t), Q = expit(-t), Pc = P**c, Qc = Q**c
    cdef double e = exp(-fabs(t))
    cdef double big = exp(-c * log1p(e))
    cdef double small = big * exp(-c * fabs(t))
    if t >= 0:
        P[0] = 1.0 / (1.0 + e)
        Q[0] = e * P[0]
        Pc[0] = big
        Qc[0] = small
    else:
        Q[0] = 1.0 / (1.0 + e)
        P[0] = e * Q[0]
        Pc[0] = small
        Qc[0] = big


cdef inline void _phi_psi(double y, double t, int code, double c, double scale,
                          double *phi, double *psi) noexcept nogil:
    cdef double P, Q, Pc, Qc, g
    if code == LOSS_DEVIANCE:
        P = _expit(t)
        phi[0] = y * _softplus(-t) + (1.0 - y) * _softplus(t) + 1.0
        psi[0] = P - y
        return
    _parts(t, c, &P, &Q, &Pc, &Qc)
    g = scale * c / (c + 1.0)
    phi[0] = scale * (1.0 - (y * Pc + (1.0 - y) * Qc)) + g * (Pc * P + Qc * Q)
    psi[0] = (P - y) * scale * c * (Pc * Q + Qc * P)


cdef inline double _chi(double y, double t, int code, double c, double scale) noexcept nogil:
    cdef double P, Q, Pc, Qc, nu, nup, e
    if code == LOSS_DEVIANCE:
        e = exp(-fabs(t))
        return e / ((1.0 + e) * (1.0 + e))
    _parts(t, c, &P, &Q, &Pc, &Qc)
    nu = scale * c * (Pc * Q + Qc * P)
    nup = scale * c * (Pc * Q * (c * Q - P) + Qc * P * (Q - c * P))
    return P * Q * nu - (y - P) * nup


def loss_arrays(y, t, int code, double c, double scale):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64).ravel()
    cdef Py_ssize_t n = tv.shape[0], i
    phi = np.empty(n)
    psi = np.empty(n)
    cdef double[::1] fv = phi
    cdef double[::1] gv = psi
    with nogil:
        for i in range(n):
            _phi_psi(yv[i], tv[i], code, c, scale, &fv[i], &gv[i])
    shape = np.shape(t)
    return phi.reshape(shape), psi.reshape(shape)


def chi_array(y, t, int code, double c, double scale):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64).ravel()
    cdef Py_ssize_t n = tv.shape[0], i
    out = np.empty(n)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _chi(yv[i], tv[i], code, c, scale)
    return out.reshape(np.shape(t))


cdef double _fill(const double[::1] y, const double[::1] t, int code, double c, double scale,
                  double[::1] psi) noexcept nogil:
    cdef Py_ssize_t i
    cdef double phi, total = 0.0
    for i in range(t.shape[0]):
        _phi_psi(y[i], t[i], code, c, scale, &phi, &psi[i])
        total += phi
    return total


def value_grad(X, y, beta, int code, double c, double scale):
    # the two matrix-vector products go to BLAS; the elementwise pass is compiled
    X = np.asarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(X @ np.asarray(beta, dtype=np.float64))
    psi = np.empty(tv.shape[0])
    cdef double[::1] pv = psi
    cdef double total
    with nogil:
        total = _fill(yv, tv, code, c, scale, pv)
    n = X.shape[0]
    return total / n, X.T @ psi / n


def value_only(X, y, beta, int code, double c, double scale):
    X = np.asarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(X @ np.asarray(beta, dtype=np.float64))
    psi = np.empty(tv.shape[0])
    cdef double[::1] pv = psi
    cdef double total
    with nogil:
        total = _fill(yv, tv, code, c, scale, pv)
    return total / X.shape[0]


cdef inline double _sign(double z) noexcept nogil:
    if z > 0:
        return 1.0
    if z < 0:
        return -1.0
    return 0.0


cdef inline double _soft(double z, double thr) noexcept nogil:
    cdef double m = fabs(z) - thr
    if m <= 0:
        return 0.0
    return _sign(z) * m


cdef inline double _prox1(double z, double eta, int code, double lam, double a,
                          double theta) noexcept nogil:
    cdef double az = fabs(z)
    if code == PEN_ENET:
        return _soft(z, eta * lam * theta) / (1.0 + eta * lam * (1.0 - theta))
    if code == PEN_SCAD:
        if az <= lam * (1.0 + eta):
            return _soft(z, eta * lam)
        if az <= a * lam:
            return ((a - 1.0) * z - _sign(z) * a * lam * eta) / (a - 1.0 - eta)
        return z
    if code == PEN_MCP:
        if az <= a * lam:
            return _soft(z, eta * lam) / (1.0 - eta / a)
        return z
    return z


def prox(z, double eta, int code, double lam, double a, double theta, mask=None):
    if code not in (PEN_NONE, PEN_ENET, PEN_SCAD, PEN_MCP):
        raise ValueError(f"unknown penalty code {code}")
    zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[::1] zv = zz.ravel()
    cdef Py_ssize_t n = zv.shape[0], i
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef const double[::1] mv
    cdef bint has_mask = mask is not None
    if has_mask:
        mv = np.ascontiguousarray(mask, dtype=np.float64).ravel()
    else:
        mv = np.ones(n)
    with nogil:
        for i in range(n):
            if mv[i] != 0:
                ov[i] = _prox1(zv[i], eta, code, lam, a, theta)
            else:
                ov[i] = zv[i]
    return out.reshape(zz.shape)
