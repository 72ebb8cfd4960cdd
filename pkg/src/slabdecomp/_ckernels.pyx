# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels.

Same API and random-number consumption as ``_pykernels``. Field models of
kind ``KIND_GENERIC`` carry a Python callback and are not handled here.
"""

import numpy as np

from libc.math cimport INFINITY, ceil, exp, fabs, isfinite, log, log1p, sqrt
from scipy.special.cython_special cimport erfc, erfcx

cdef enum:
    KIND_GAUSSIAN = 0
    KIND_LAPLACE = 1
    KIND_QUADRATIC = 2
    KIND_GENERIC = 3

cdef enum:
    STATUS_OK = 0
    STATUS_NONFINITE = 1

cdef enum:
    GD_CONVERGED = 0
    GD_MAX_ITERS = 1
    GD_DIVERGED = 2

cdef double SQRT2 = 1.4142135623730951
cdef double SQRT_2_OVER_PI = 0.7978845608028654
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double LOG_2PI = 1.8378770664093453
cdef double TAIL_SWITCH = -2.0
cdef int CF_DEPTH = 200

ctypedef struct Slab:
    int kind
    double param
    double gamma
    double log_q
    double log_1mq
    double c0
    double c1
    double isg


cdef Slab _make_slab(int kind, double param, double q, double gamma) except *:
    cdef Slab s
    s.kind = kind
    s.param = param
    s.gamma = gamma
    s.log_q = 0.0
    s.log_1mq = 0.0
    s.c0 = 0.0
    s.c1 = 0.0
    s.isg = 0.0
    if kind == KIND_QUADRATIC:
        return s
    if not (gamma > 0.0):
        raise ValueError("gamma must be positive")
    if 0.0 < q < 1.0:
        s.log_q = log(q)
        s.log_1mq = log1p(-q)
    if kind == KIND_GAUSSIAN:
        s.c1 = param / (1.0 + gamma * param)
        s.c0 = -0.5 * log1p(gamma * param)
    elif kind == KIND_LAPLACE:
        s.isg = 1.0 / sqrt(gamma)
        s.c0 = log(0.5 * param) + 0.5 * (LOG_2PI - log(gamma))
    else:
        raise ValueError(f"kind {kind} is not supported by the compiled kernels")
    return s


cdef inline double _lae(double a, double b) noexcept nogil:
    cdef double tmp
    if a < b:
        tmp = a
        a = b
        b = tmp
    if b == -INFINITY:
        return a
    return a + log1p(exp(b - a))


cdef void _tail(double t, double* logphi, double* mean, double* var) noexcept nogil:
    cdef double u, f, c, e, ex, big_phi, r
    cdef int k
    if t >= TAIL_SWITCH:
        if t < 0.0:
            ex = erfcx(-t / SQRT2)
            logphi[0] = log(0.5 * ex)
            r = SQRT_2_OVER_PI / ex
        else:
            big_phi = 1.0 - 0.5 * erfc(t / SQRT2)
            logphi[0] = 0.5 * t * t + log(big_phi)
            r = INV_SQRT_2PI * exp(-0.5 * t * t) / big_phi
        mean[0] = t + r
        var[0] = 1.0 - r * mean[0]
    else:
        u = -t
        f = 0.0
        # depth rule shared with _pykernels.cf_depth
        for k in range(<int>min(CF_DEPTH, ceil(6.0 + 120.0 / u + 240.0 / (u * u))), 2, -1):
            f = k / (u + f)
        c = 2.0 / (u + f)
        e = 1.0 / (u + c)
        mean[0] = e
        var[0] = e * (u + 2.0 * c - f) / ((u + f) * (u + c))
        logphi[0] = log(0.5 * erfcx(u / SQRT2))


cdef void _tilted(const Slab* s, double x, double* logg, double* mean, double* var) noexcept nogil:
    cdef double lp, mp, vp, lm, mm, vm, lse, wp, wm, mup, mum
    if s.kind == KIND_GAUSSIAN:
        logg[0] = s.c0 + 0.5 * x * x * s.c1
        mean[0] = x * s.c1
        var[0] = s.c1
        return
    _tail((x - s.param) * s.isg, &lp, &mp, &vp)
    _tail((-x - s.param) * s.isg, &lm, &mm, &vm)
    lse = _lae(lp, lm)
    wp = exp(lp - lse)
    wm = exp(lm - lse)
    mup = mp * s.isg
    mum = -mm * s.isg
    logg[0] = s.c0 + lse
    mean[0] = wp * mup + wm * mum
    var[0] = (wp * vp + wm * vm) * s.isg * s.isg + wp * wm * (mup - mum) * (mup - mum)


cdef void _vterms(const Slab* s, double x, double* v, double* v1, double* v2, double* p) noexcept nogil:
    cdef double logg, mean, var, a, lse, pp, pm
    _tilted(s, x, &logg, &mean, &var)
    a = s.log_q + logg
    lse = _lae(s.log_1mq, a)
    pp = exp(a - lse)
    pm = exp(s.log_1mq - lse)
    v[0] = -lse
    v1[0] = -pp * mean
    v2[0] = -pp * var - pp * pm * mean * mean
    p[0] = pp


def tilted_moments(int kind, double param, double gamma, x):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Slab s = _make_slab(kind, param, 0.5, gamma)
    cdef Py_ssize_t n = xv.shape[0], i
    logg = np.empty(n)
    mean = np.empty(n)
    var = np.empty(n)
    cdef double[::1] lv = logg, mv = mean, vv = var
    with nogil:
        for i in range(n):
            _tilted(&s, xv[i], &lv[i], &mv[i], &vv[i])
    shape = np.shape(x)
    return logg.reshape(shape), mean.reshape(shape), var.reshape(shape)


def potential_terms(int kind, double param, double q, double gamma, x):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Slab s = _make_slab(kind, param, q, gamma)
    cdef Py_ssize_t n = xv.shape[0], i
    v = np.empty(n)
    v1 = np.empty(n)
    v2 = np.empty(n)
    p = np.empty(n)
    cdef double[::1] a = v, b = v1, c = v2, e = p
    with nogil:
        for i in range(n):
            _vterms(&s, xv[i], &a[i], &b[i], &c[i], &e[i])
    shape = np.shape(x)
    return v.reshape(shape), v1.reshape(shape), v2.reshape(shape), p.reshape(shape)


cdef double _energy(const Slab* s, const double* L, const double* h, Py_ssize_t d,
                    const double* phi, double* w, double* grad) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc, H = 0.0, v, v1, v2, p
    if s.kind == KIND_QUADRATIC:
        for i in range(d):
            H += 0.5 * phi[i] * phi[i]
            grad[i] = phi[i]
        return H
    for i in range(d):
        acc = phi[i]
        for j in range(i):
            acc -= L[i * d + j] * w[j]
        w[i] = acc / L[i * d + i]
    for i in range(d - 1, -1, -1):
        acc = w[i]
        for j in range(i + 1, d):
            acc -= L[j * d + i] * w[j]
        w[i] = acc / L[i * d + i]
    for i in range(d):
        _vterms(s, h[i] + phi[i], &v, &v1, &v2, &p)
        H += 0.5 * phi[i] * w[i] + v
        grad[i] = w[i] + v1
    return H


ctypedef struct Field:
    Slab s
    const double* L
    const double* h
    double* w
    Py_ssize_t d


cdef inline double _field_energy(Field* f, const double* phi, double* grad) noexcept nogil:
    return _energy(&f.s, f.L, f.h, f.d, phi, f.w, grad)


cdef class _FieldHolder:
    """Owns the arrays behind a ``Field`` struct."""
    cdef Field f
    cdef const double[:, ::1] chol
    cdef const double[::1] h
    cdef double[::1] work

    def __init__(self, model):
        if model.kind == KIND_GENERIC:
            raise ValueError("generic slabs require the pure-Python kernels")
        self.h = np.ascontiguousarray(model.h, dtype=np.float64)
        d = self.h.shape[0]
        self.chol = np.ascontiguousarray(model.chol, dtype=np.float64)
        if self.chol.shape[0] != d or self.chol.shape[1] != d:
            raise ValueError("factor shape does not match field dimension")
        self.work = np.empty(d)
        self.f.s = _make_slab(model.kind, model.param, model.q, model.gamma)
        self.f.L = &self.chol[0, 0]
        self.f.h = &self.h[0]
        self.f.w = &self.work[0]
        self.f.d = d


cdef inline bint _all_finite(const double* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        if not isfinite(a[i]):
            return False
    return True


def field_energy(model, phi):
    cdef _FieldHolder holder = _FieldHolder(model)
    cdef Field* f = &holder.f
    cdef const double[::1] x = np.ascontiguousarray(phi, dtype=np.float64)
    grad = np.empty(f.d)
    cdef double[::1] g = grad
    cdef double H = _field_energy(f, &x[0], &g[0])
    return H, grad


def mala_advance(model, double tau, bint retry, double[::1] phi, double[::1] grad, double energy,
                 const double[:, ::1] noise, const double[::1] unif, long n_steps, long offset,
                 long thin, double[:, ::1] out):
    cdef _FieldHolder holder = _FieldHolder(model)
    cdef Field* f = &holder.f
    cdef Py_ssize_t d = f.d, i
    cdef double[::1] prop = np.empty(d)
    cdef double[::1] gprop = np.empty(d)
    cdef long used = 0, steps = 0, recorded = 0, accepted = 0
    cdef int status = STATUS_OK
    cdef long n_prop = noise.shape[0], n_out = out.shape[0]
    cdef double sq = sqrt(2.0 * tau), h_prop, fwd, bwd, diff, log_ratio
    cdef bint accept
    with nogil:
        while steps < n_steps and used < n_prop:
            for i in range(d):
                prop[i] = phi[i] - tau * grad[i] + sq * noise[used, i]
            h_prop = _field_energy(f, &prop[0], &gprop[0])
            if not (isfinite(h_prop) and _all_finite(&gprop[0], d)):
                status = STATUS_NONFINITE
                break
            fwd = 0.0
            bwd = 0.0
            for i in range(d):
                diff = prop[i] - phi[i] + tau * grad[i]
                fwd += diff * diff
                diff = phi[i] - prop[i] + tau * gprop[i]
                bwd += diff * diff
            log_ratio = energy - h_prop - (bwd - fwd) / (4.0 * tau)
            accept = unif[used] <= exp(log_ratio if log_ratio < 700.0 else 700.0)
            used += 1
            if accept:
                for i in range(d):
                    phi[i] = prop[i]
                    grad[i] = gprop[i]
                energy = h_prop
                accepted += 1
            if accept or not retry:
                steps += 1
                if (offset + steps) % thin == 0 and recorded < n_out:
                    for i in range(d):
                        out[recorded, i] = phi[i]
                    recorded += 1
    return used, steps, recorded, accepted, energy, status


cdef void _mass_solve(const double* M, Py_ssize_t d, const double* rho, double* out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(d):
        acc = rho[i]
        for j in range(i):
            acc -= M[i * d + j] * out[j]
        out[i] = acc / M[i * d + i]
    for i in range(d - 1, -1, -1):
        acc = out[i]
        for j in range(i + 1, d):
            acc -= M[j * d + i] * out[j]
        out[i] = acc / M[i * d + i]


cdef bint _leapfrog(Field* f, double eps, long n_leap, const double* M, bint identity,
                    double* x, double* rho, double* g, double* vel, double* h_out) noexcept nogil:
    """In place; ``g`` must hold the gradient at ``x`` on entry."""
    cdef Py_ssize_t i, d = f.d
    cdef long l
    cdef double h = 0.0, step
    for i in range(d):
        rho[i] -= 0.5 * eps * g[i]
    for l in range(n_leap):
        if identity:
            for i in range(d):
                x[i] += eps * rho[i]
        else:
            _mass_solve(M, d, rho, vel)
            for i in range(d):
                x[i] += eps * vel[i]
        h = _field_energy(f, x, g)
        if not (isfinite(h) and _all_finite(g, d)):
            h_out[0] = h
            return False
        step = eps if l < n_leap - 1 else 0.5 * eps
        for i in range(d):
            rho[i] -= step * g[i]
    h_out[0] = h
    return True


def leapfrog(model, double eps, long n_leap, mass_chol, phi, rho):
    cdef _FieldHolder holder = _FieldHolder(model)
    cdef Field* f = &holder.f
    cdef Py_ssize_t d = f.d
    x_arr = np.array(phi, dtype=np.float64)
    r_arr = np.array(rho, dtype=np.float64)
    h0, g_arr = field_energy(model, x_arr)
    cdef double[::1] x = x_arr, r = r_arr, g = g_arr
    cdef double[::1] vel = np.empty(d)
    cdef bint identity = mass_chol is None
    cdef const double[:, ::1] M = np.eye(1) if identity else np.ascontiguousarray(mass_chol, dtype=np.float64)
    cdef double h = 0.0
    cdef bint ok
    if n_leap == 0:
        return x_arr, r_arr, h0, g_arr, True
    ok = _leapfrog(f, eps, n_leap, &M[0, 0], identity, &x[0], &r[0], &g[0], &vel[0], &h)
    return x_arr, r_arr, h, g_arr, bool(ok)


def hmc_advance(model, double eps, long n_leap, mass_chol, bint retry, double[::1] phi,
                double[::1] grad, double energy, const double[:, ::1] noise,
                const double[::1] unif, long n_steps, long offset, long thin, double[:, ::1] out):
    cdef _FieldHolder holder = _FieldHolder(model)
    cdef Field* f = &holder.f
    cdef Py_ssize_t d = f.d, i, j
    cdef double[::1] x = np.empty(d)
    cdef double[::1] rho = np.empty(d)
    cdef double[::1] gx = np.empty(d)
    cdef double[::1] vel = np.empty(d)
    cdef bint identity = mass_chol is None
    cdef const double[:, ::1] M = np.eye(1) if identity else np.ascontiguousarray(mass_chol, dtype=np.float64)
    cdef long used = 0, steps = 0, recorded = 0, accepted = 0
    cdef int status = STATUS_OK
    cdef long n_prop = noise.shape[0], n_out = out.shape[0]
    cdef double kin0, kin1, h_prop = 0.0, log_ratio, acc
    cdef bint accept
    with nogil:
        while steps < n_steps and used < n_prop:
            kin0 = 0.0
            for i in range(d):
                kin0 += 0.5 * noise[used, i] * noise[used, i]
                if identity:
                    rho[i] = noise[used, i]
                else:
                    acc = 0.0
                    for j in range(i + 1):
                        acc += M[i, j] * noise[used, j]
                    rho[i] = acc
                x[i] = phi[i]
                gx[i] = grad[i]
            if not _leapfrog(f, eps, n_leap, &M[0, 0], identity, &x[0], &rho[0], &gx[0],
                             &vel[0], &h_prop):
                status = STATUS_NONFINITE
                break
            kin1 = 0.0
            if identity:
                for i in range(d):
                    kin1 += 0.5 * rho[i] * rho[i]
            else:
                _mass_solve(&M[0, 0], d, &rho[0], &vel[0])
                for i in range(d):
                    kin1 += 0.5 * rho[i] * vel[i]
            log_ratio = energy - h_prop + kin0 - kin1
            accept = unif[used] <= exp(log_ratio if log_ratio < 700.0 else 700.0)
            used += 1
            if accept:
                for i in range(d):
                    phi[i] = x[i]
                    grad[i] = gx[i]
                energy = h_prop
                accepted += 1
            if accept or not retry:
                steps += 1
                if (offset + steps) % thin == 0 and recorded < n_out:
                    for i in range(d):
                        out[recorded, i] = phi[i]
                    recorded += 1
    return used, steps, recorded, accepted, energy, status


def gradient_descent(model, double[::1] phi, double lr, long max_iters, double tol):
    cdef _FieldHolder holder = _FieldHolder(model)
    cdef Field* f = &holder.f
    cdef Py_ssize_t d = f.d, i
    cdef double[::1] grad = np.empty(d)
    cdef double energy, new_energy, gnorm
    cdef long it = 0, rising = 0
    cdef int status = GD_MAX_ITERS
    with nogil:
        energy = _field_energy(f, &phi[0], &grad[0])
        gnorm = 0.0
        for i in range(d):
            gnorm = max(gnorm, fabs(grad[i]))
        while it < max_iters:
            if gnorm < tol:
                status = GD_CONVERGED
                break
            for i in range(d):
                phi[i] -= lr * grad[i]
            new_energy = _field_energy(f, &phi[0], &grad[0])
            it += 1
            if new_energy > energy:
                rising += 1
            else:
                rising = 0
            energy = new_energy
            gnorm = 0.0
            for i in range(d):
                gnorm = max(gnorm, fabs(grad[i]))
            if rising >= 10:
                status = GD_DIVERGED
                break
        if status == GD_MAX_ITERS and gnorm < tol:
            status = GD_CONVERGED
    return it, gnorm, energy, status
