# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: the mixture energy, its SGLD loop and the fused tractable loss.

Energies are ``E_c(x) = |L^T (x - mu_c)|^2 / 2`` with ``L`` the lower
Cholesky factor of the precision. ``cls < 0`` selects the total energy
``-log sum_c exp(-E_c)``; otherwise the single class energy ``E_cls``.
Semantics match ``gcsl._kernels_py`` exactly.
"""

import numpy as np

from libc.math cimport exp, log, isfinite
from libc.stdint cimport int64_t

cdef double LOG_2PI = 1.8378770664093453


cdef void _energy_grad_one(const double* x, const double[:, ::1] means,
                           const double[:, ::1] lower, int cls,
                           double* u, double* e, double* energy, double* grad) noexcept nogil:
    # u is (C, D) scratch holding L^T (x - mu_c) per class, e is (C,) scratch
    cdef Py_ssize_t C = means.shape[0]
    cdef Py_ssize_t D = means.shape[1]
    cdef Py_ssize_t c, i, j, c0, c1
    cdef double s, emin, z, w
    if cls >= 0:
        c0 = cls
        c1 = cls + 1
    else:
        c0 = 0
        c1 = C
    for i in range(D):
        grad[i] = 0.0
    emin = 0.0
    for c in range(c0, c1):
        s = 0.0
        for j in range(D):
            w = 0.0
            for i in range(j, D):
                w += lower[i, j] * (x[i] - means[c, i])
            u[c * D + j] = w
            s += w * w
        e[c] = 0.5 * s
        if c == c0 or e[c] < emin:
            emin = e[c]
    z = 0.0
    for c in range(c0, c1):
        z += exp(emin - e[c])
    energy[0] = emin - log(z)
    for c in range(c0, c1):
        w = exp(emin - e[c]) / z
        # grad += w * L u_c
        for i in range(D):
            s = 0.0
            for j in range(i + 1):
                s += lower[i, j] * u[c * D + j]
            grad[i] += w * s


def mixture_energy_grad(const double[:, ::1] x, const double[:, ::1] means,
                        const double[:, ::1] lower, int cls=-1):
    """Energy ``(n,)`` and gradient w.r.t. ``x`` ``(n, D)`` for each row of ``x``."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t D = means.shape[1]
    cdef Py_ssize_t C = means.shape[0]
    energy_arr = np.empty(n)
    grad_arr = np.empty((n, D))
    cdef double[::1] energy = energy_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] u = np.empty(C * D)
    cdef double[::1] e = np.empty(C)
    cdef Py_ssize_t k
    with nogil:
        for k in range(n):
            _energy_grad_one(&x[k, 0], means, lower, cls, &u[0], &e[0],
                             &energy[k], &grad[k, 0])
    return energy_arr, grad_arr


def mixture_sgld(double[:, ::1] x, const double[:, ::1] means, const double[:, ::1] lower,
                 double step_size, const double[:, :, ::1] noise,
                 const double[::1] lo, const double[::1] hi, bint clip, int cls,
                 double[:, :, ::1] traj=None):
    """Run ``noise.shape[0]`` Langevin steps in place on the rows of ``x``.

    ``x <- x - step_size / 2 * grad E(x) + noise[t]``, optionally clipped to
    ``[lo, hi]``. Writes each post-step state to ``traj[t]`` when given.
    Returns ``-1`` on success or the 1-based step that produced a
    non-finite coordinate.
    """
    cdef Py_ssize_t K = noise.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t C = means.shape[0]
    cdef double[::1] u = np.empty(C * D)
    cdef double[::1] e = np.empty(C)
    cdef double[::1] grad = np.empty(D)
    cdef double energy
    cdef double half = 0.5 * step_size
    cdef bint record = traj is not None
    cdef Py_ssize_t t, k, i
    cdef Py_ssize_t bad = -1
    cdef double v
    with nogil:
        for t in range(K):
            if bad >= 0:
                break
            for k in range(n):
                _energy_grad_one(&x[k, 0], means, lower, cls, &u[0], &e[0],
                                 &energy, &grad[0])
                for i in range(D):
                    v = x[k, i] - half * grad[i] + noise[t, k, i]
                    if clip:
                        if v < lo[i]:
                            v = lo[i]
                        elif v > hi[i]:
                            v = hi[i]
                    if not isfinite(v):
                        bad = t + 1
                    x[k, i] = v
                    if record:
                        traj[t, k, i] = v
    return bad


def hybrid_loss_grad(const double[:, ::1] x, const int64_t[::1] labels,
                     const double[:, ::1] W, const double[::1] b, const double[::1] a,
                     const double[:, ::1] M, const double[:, ::1] raw, double lam,
                     double[:, ::1] gW, double[::1] gb, double[::1] ga,
                     double[:, ::1] gM, double[:, ::1] gR):
    """Fused closed-form semi-supervised loss and gradient.

    Same value and gradient as ``gcsl.objectives.semi_supervised_loss``;
    gradients are written into the ``g*`` buffers (upper triangle of ``gR``
    left at zero). Returns ``(cross_entropy, generative_nll, coupling_penalty)``.
    """
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t C = W.shape[0]
    cdef double[::1] L = np.zeros(D * D)
    cdef double[::1] P = np.zeros(D * D)
    cdef double[::1] S = np.zeros(D * D)
    cdef double[::1] H = np.zeros(D * D)
    cdef double[::1] logpi = np.empty(C)
    cdef double[::1] pi = np.empty(C)
    cdef double[::1] s = np.empty(C)
    cdef double[::1] ll = np.empty(C)
    cdef double[::1] gam = np.empty(C)
    cdef double[::1] gsum = np.zeros(C)
    cdef double[::1] dd = np.empty(C * D)
    cdef double[::1] wsum = np.zeros(C * D)
    cdef double[::1] r = np.empty(C * D)
    cdef double[::1] e = np.empty(C)
    cdef Py_ssize_t n, c, i, j, k
    cdef long long y
    cdef double logdet = 0.0, const, amax, lse, smax, tmp, q, w
    cdef double ce = 0.0, nll = 0.0, penalty = 0.0, esum, inv_n
    with nogil:
        gW[:, :] = 0.0
        gb[:] = 0.0
        gM[:, :] = 0.0
        gR[:, :] = 0.0
        for i in range(D):
            for j in range(i):
                L[i * D + j] = raw[i, j]
            L[i * D + i] = exp(raw[i, i])
            logdet += 2.0 * raw[i, i]
        for i in range(D):
            for j in range(D):
                tmp = 0.0
                for k in range(D):
                    tmp += L[i * D + k] * L[j * D + k]
                P[i * D + j] = tmp
        amax = a[0]
        for c in range(1, C):
            if a[c] > amax:
                amax = a[c]
        tmp = 0.0
        for c in range(C):
            tmp += exp(a[c] - amax)
        lse = amax + log(tmp)
        for c in range(C):
            logpi[c] = a[c] - lse
            pi[c] = exp(logpi[c])
        const = 0.5 * logdet - 0.5 * D * LOG_2PI

        for n in range(N):
            y = labels[n]
            if y >= 0:
                smax = 0.0
                for c in range(C):
                    tmp = b[c]
                    for j in range(D):
                        tmp += W[c, j] * x[n, j]
                    s[c] = tmp
                    if c == 0 or tmp > smax:
                        smax = tmp
                tmp = 0.0
                for c in range(C):
                    tmp += exp(s[c] - smax)
                lse = smax + log(tmp)
                ce += lse - s[y]
                for c in range(C):
                    w = exp(s[c] - lse)
                    if c == y:
                        w -= 1.0
                    gb[c] += w
                    for j in range(D):
                        gW[c, j] += w * x[n, j]
            for c in range(C):
                q = 0.0
                for j in range(D):
                    dd[c * D + j] = x[n, j] - M[c, j]
                for j in range(D):
                    tmp = 0.0
                    for i in range(j, D):
                        tmp += L[i * D + j] * dd[c * D + i]
                    q += tmp * tmp
                ll[c] = logpi[c] + const - 0.5 * q
            if y >= 0:
                nll -= ll[y]
                for c in range(C):
                    gam[c] = 0.0
                gam[y] = 1.0
            else:
                smax = ll[0]
                for c in range(1, C):
                    if ll[c] > smax:
                        smax = ll[c]
                tmp = 0.0
                for c in range(C):
                    tmp += exp(ll[c] - smax)
                lse = smax + log(tmp)
                nll -= lse
                for c in range(C):
                    gam[c] = exp(ll[c] - lse)
            for c in range(C):
                w = gam[c]
                if w == 0.0:
                    continue
                gsum[c] += w
                for i in range(D):
                    wsum[c * D + i] += w * dd[c * D + i]
                    for j in range(D):
                        S[i * D + j] += w * dd[c * D + i] * dd[c * D + j]

        for c in range(C):
            ga[c] = N * pi[c] - gsum[c]
            for i in range(D):
                tmp = 0.0
                for j in range(D):
                    tmp -= wsum[c * D + j] * P[j * D + i]
                gM[c, i] = tmp
        for i in range(D):
            for j in range(i + 1):
                tmp = 0.0
                for k in range(D):
                    tmp += S[i * D + k] * L[k * D + j]
                gR[i, j] = tmp
            gR[i, i] = gR[i, i] * L[i * D + i] - N

        if lam > 0.0:
            esum = 0.0
            for c in range(C):
                q = 0.0
                for i in range(D):
                    tmp = 0.0
                    for j in range(D):
                        tmp += M[c, j] * P[j * D + i]
                    r[c * D + i] = W[c, i] - tmp
                    q += tmp * M[c, i]
                    penalty += r[c * D + i] * r[c * D + i]
                e[c] = b[c] - (logpi[c] - 0.5 * q)
                penalty += e[c] * e[c]
                esum += e[c]
            penalty *= 0.5 * lam
            for c in range(C):
                gb[c] += lam * e[c]
                ga[c] -= lam * (e[c] - pi[c] * esum)
                for i in range(D):
                    gW[c, i] += lam * r[c * D + i]
                    tmp = 0.0
                    for j in range(D):
                        tmp += (e[c] * M[c, j] - r[c * D + j]) * P[j * D + i]
                    gM[c, i] += lam * tmp
            # symmetric part of d penalty / d Lambda, times L
            for i in range(D):
                for j in range(D):
                    tmp = 0.0
                    for c in range(C):
                        tmp += (-r[c * D + i] * M[c, j] - r[c * D + j] * M[c, i]
                                + e[c] * M[c, i] * M[c, j])
                    S[i * D + j] = lam * tmp
            for i in range(D):
                for j in range(i + 1):
                    tmp = 0.0
                    for k in range(D):
                        tmp += S[i * D + k] * L[k * D + j]
                    if i == j:
                        tmp *= L[i * D + i]
                    gR[i, j] += tmp

        inv_n = 1.0 / N
        for c in range(C):
            gb[c] *= inv_n
            ga[c] *= inv_n
            for i in range(D):
                gW[c, i] *= inv_n
                gM[c, i] *= inv_n
        for i in range(D):
            for j in range(i + 1):
                gR[i, j] *= inv_n
    return ce * inv_n, nll * inv_n, penalty * inv_n
