# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar-state kernels for the variational jump filter and smoother.

Specializes the per-step recursions of :mod:`jumpgauss.vjgm` to systems whose
state and observations are one-dimensional: every Gaussian quantity reduces to
a (mean, variance) pair and the only remaining structure is the M-regime
chain. The functions here run the same coordinate-ascent protocol as the
generic drivers (same update order, same convergence checks) so the two
backends agree to floating-point noise.
"""

import numpy as np

from libc.math cimport INFINITY, exp, fabs, log, sqrt

from jumpgauss.gaussians import NumericError

cdef double LOG_2PI = 1.8378770664093453
cdef double _SQRT_EPS = 1.4901161193847656e-08


cdef inline double _log_n(double u, double mu, double s) noexcept:
    cdef double r = u - mu
    return -0.5 * (LOG_2PI + log(s) + r * r / s)


cdef inline double _lse(double[::1] w, Py_ssize_t m) noexcept:
    cdef double top = -INFINITY
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(m):
        if w[i] > top:
            top = w[i]
    if top == -INFINITY:
        return -INFINITY
    for i in range(m):
        acc += exp(w[i] - top)
    return top + log(acc)


cdef int _chain_predict(double[::1] fs_prev, double[:, ::1] lam, Py_ssize_t m,
                        double[::1] fpred, double[:, ::1] fdag) noexcept:
    """fpred and fdag from Bayes' rule on the chain; uniform zero-mass columns."""
    cdef Py_ssize_t i, j
    cdef double total = 0.0
    cdef double colsum
    for i in range(m):
        fpred[i] = 0.0
        for j in range(m):
            fpred[i] += lam[i, j] * fs_prev[j]
        total += fpred[i]
    for i in range(m):
        if fpred[i] > 0.0:
            for j in range(m):
                fdag[j, i] = lam[i, j] * fs_prev[j] / fpred[i]
        else:
            for j in range(m):
                fdag[j, i] = 1.0 / m
        colsum = 0.0
        for j in range(m):
            colsum += fdag[j, i]
        for j in range(m):
            fdag[j, i] /= colsum
    for i in range(m):
        fpred[i] /= total
    return 0


cdef int _predict_reverse(double[::1] gsm, double[::1] gsv, double[::1] tr_a,
                          double[::1] tr_b, double[::1] tr_q, Py_ssize_t m,
                          double[::1] pm, double[::1] pv, double[::1] gain,
                          double[::1] roff, double[::1] rv) except -1:
    cdef Py_ssize_t z
    for z in range(m):
        pm[z] = tr_a[z] * gsm[z] + tr_b[z]
        pv[z] = tr_a[z] * tr_a[z] * gsv[z] + tr_q[z]
        if pv[z] <= 0.0:
            raise NumericError("predictive variance is not positive")
        gain[z] = gsv[z] * tr_a[z] / pv[z]
        rv[z] = gsv[z] - gain[z] * gain[z] * pv[z]
        if rv[z] <= _SQRT_EPS * gsv[z]:
            raise NumericError(
                "reverse covariance of regime %d is numerically degenerate" % z
            )
        roff[z] = gsm[z] - gain[z] * pm[z]
    return 0


cdef int _mix(double[::1] w, double[::1] pm, double[::1] pv, double[::1] gain,
              double[::1] roff, double[::1] rv, Py_ssize_t m,
              double* log_eta, double* mix_gain, double* mix_off,
              double* mix_rv, double* mix_pm, double* mix_pv) except -1:
    """Precision-average the per-regime joint log-Gaussians over (x_{t-1}, x_t)."""
    cdef Py_ssize_t z
    cdef double c11, c12, c22, det, mu1, mu2, lin1, lin2
    cdef double p11 = 0.0, p12 = 0.0, p22 = 0.0
    cdef double l1 = 0.0, l2 = 0.0
    cdef double wlogdet = 0.0, wmaha = 0.0
    for z in range(m):
        if w[z] == 0.0:
            continue
        mu1 = gain[z] * pm[z] + roff[z]
        mu2 = pm[z]
        c11 = gain[z] * gain[z] * pv[z] + rv[z]
        c12 = gain[z] * pv[z]
        c22 = pv[z]
        det = c11 * c22 - c12 * c12
        if det <= 0.0 or c11 <= 0.0:
            raise NumericError("joint covariance is not positive definite")
        lin1 = (c22 * mu1 - c12 * mu2) / det
        lin2 = (c11 * mu2 - c12 * mu1) / det
        p11 += w[z] * c22 / det
        p12 -= w[z] * c12 / det
        p22 += w[z] * c11 / det
        l1 += w[z] * lin1
        l2 += w[z] * lin2
        wlogdet += w[z] * log(det)
        wmaha += w[z] * (mu1 * lin1 + mu2 * lin2)
    det = p11 * p22 - p12 * p12
    if det <= 0.0 or p11 <= 0.0:
        raise NumericError("pooled joint precision is not positive definite")
    cdef double s11 = p22 / det
    cdef double s12 = -p12 / det
    cdef double s22 = p11 / det
    cdef double m1 = s11 * l1 + s12 * l2
    cdef double m2 = s12 * l1 + s22 * l2
    log_eta[0] = -0.5 * (wlogdet + log(det) + wmaha - (m1 * l1 + m2 * l2))
    mix_pm[0] = m2
    mix_pv[0] = s22
    mix_gain[0] = s12 / s22
    mix_off[0] = m1 - (s12 / s22) * m2
    mix_rv[0] = s11 - (s12 / s22) * (s12 / s22) * s22
    if mix_pv[0] <= 0.0 or mix_rv[0] <= 0.0:
        raise NumericError("mixed factor covariance is not positive definite")
    return 0


cdef int _filter_update(double log_kappa, double[::1] fs, double[::1] gsm,
                        double[::1] gsv, Py_ssize_t m, double tol,
                        int max_iters, double[::1] f, double* gm, double* gv,
                        double* bound, double[::1] scratch) noexcept:
    """Marginal fixed point; returns 1 when the bound change fell below tol."""
    cdef Py_ssize_t z
    cdef int it, converged = 0
    cdef double prec, lin, cur_gm, cur_gv, lse, prev_bound = 0.0
    cdef double xi, total
    cdef int have_prev = 0
    for z in range(m):
        f[z] = fs[z]
    for it in range(max_iters):
        prec = 0.0
        lin = 0.0
        for z in range(m):
            prec += f[z] / gsv[z]
            lin += f[z] * gsm[z] / gsv[z]
        cur_gv = 1.0 / prec
        cur_gm = cur_gv * lin
        for z in range(m):
            xi = -0.5 * (cur_gv / gsv[z] - 1.0
                         + (gsm[z] - cur_gm) * (gsm[z] - cur_gm) / gsv[z]
                         + log(gsv[z]) - log(cur_gv))
            if fs[z] > 0.0:
                scratch[z] = log(fs[z]) + xi
            else:
                scratch[z] = -INFINITY
        lse = _lse(scratch, m)
        bound[0] = log_kappa + lse
        total = 0.0
        for z in range(m):
            f[z] = exp(scratch[z] - lse)
            total += f[z]
        for z in range(m):
            f[z] /= total
        gm[0] = cur_gm
        gv[0] = cur_gv
        if have_prev and fabs(bound[0] - prev_bound) < tol:
            converged = 1
            break
        prev_bound = bound[0]
        have_prev = 1
    return converged


cdef int _reverse_update(double[::1] pm, double[::1] pv, double[::1] gain,
                         double[::1] roff, double[::1] rv, double[:, ::1] fdag,
                         double[::1] f_t, double marg_gm, double marg_gv,
                         Py_ssize_t m, double[:, ::1] f_rev, double* rev_a,
                         double* rev_b, double* rev_q,
                         double[::1] log_zeta, double[::1] scratch) except -1:
    """One pass of the reverse-kernel stationarity equations (scalar case)."""
    cdef Py_ssize_t z, j
    cdef double ar = rev_a[0], br = rev_b[0], qr = rev_q[0]
    cdef double log_c, y, h, s, term1, term2, lse, colsum
    cdef double wsum, prec, asum, bsum, w
    for z in range(m):
        log_c = -0.5 * (qr / rv[z] - (1.0 + LOG_2PI) - log(qr))
        y = roff[z] - br
        h = ar - gain[z]
        s = rv[z]
        term1 = log_c + _log_n(y, h * marg_gm, s) - 0.5 * (h * h * marg_gv) / s
        term2 = _log_n(marg_gm, pm[z], pv[z]) - 0.5 * marg_gv / pv[z]
        log_zeta[z] = term1 + term2
    for j in range(m):
        for z in range(m):
            if fdag[z, j] > 0.0:
                scratch[z] = log_zeta[z] + log(fdag[z, j])
            else:
                scratch[z] = -INFINITY
        lse = _lse(scratch, m)
        if lse == -INFINITY:
            raise NumericError("reverse chain column lost all mass")
        colsum = 0.0
        for z in range(m):
            f_rev[z, j] = exp(scratch[z] - lse)
            colsum += f_rev[z, j]
        for z in range(m):
            f_rev[z, j] /= colsum
    prec = 0.0
    asum = 0.0
    bsum = 0.0
    for z in range(m):
        wsum = 0.0
        for j in range(m):
            wsum += f_rev[z, j] * f_t[j]
        w = wsum / rv[z]
        prec += w
        asum += w * gain[z]
        bsum += w * roff[z]
    if prec <= 0.0:
        raise NumericError("pooled reverse precision is not positive")
    rev_q[0] = 1.0 / prec
    rev_a[0] = asum / prec
    rev_b[0] = bsum / prec
    return 0


cdef int _value_step(double prev_kappa, double[::1] fs_prev, double[::1] pm,
                     double[::1] pv, double[::1] gain, double[::1] roff,
                     double[::1] rv, double[::1] fpred, double[:, ::1] fdag,
                     double[:, ::1] f_rev, double rev_a, double rev_b,
                     double rev_q, double[::1] ob_c, double[::1] ob_d,
                     double[::1] ob_r, double y_t, Py_ssize_t m, int t,
                     double* log_kappa, double[::1] fs, double[::1] gsm,
                     double[::1] gsv, double[::1] wcol,
                     double[::1] scratch) except -1:
    """Advance the value function one step given the current reverse kernels."""
    cdef Py_ssize_t j, z
    cdef double log_eta, mg, mo, mrv, mpm, mpv
    cdef double zdag, log_c, y_h, h_h, s_h
    cdef double j_lq, h_lq, c_lq, prec_c, lin, mean_c, log_hbar
    cdef double inc, total
    for j in range(m):
        # zeta_dagger for destination j
        zdag = 0.0
        for z in range(m):
            if f_rev[z, j] > 0.0:
                if fdag[z, j] <= 0.0:
                    zdag = -INFINITY
                    break
                zdag += f_rev[z, j] * (log(fdag[z, j]) - log(f_rev[z, j]))
        for z in range(m):
            wcol[z] = f_rev[z, j]
        _mix(wcol, pm, pv, gain, roff, rv, m,
             &log_eta, &mg, &mo, &mrv, &mpm, &mpv)
        # expected log-ratio of mixed to shared reverse kernel
        log_c = -0.5 * (rev_q / mrv - (1.0 + LOG_2PI) - log(rev_q))
        y_h = rev_b - mo
        h_h = mg - rev_a
        s_h = mrv
        # conjugate combination: observation likelihood plus the correction
        j_lq = ob_c[j] * ob_c[j] / ob_r[j] + h_h * h_h / s_h
        h_lq = ob_c[j] * (y_t - ob_d[j]) / ob_r[j] + h_h * y_h / s_h
        c_lq = (-0.5 * ((y_t - ob_d[j]) * (y_t - ob_d[j]) / ob_r[j]
                        + LOG_2PI + log(ob_r[j]))
                - 0.5 * (y_h * y_h / s_h + LOG_2PI + log(s_h)))
        prec_c = 1.0 / mpv + j_lq
        if prec_c <= 0.0:
            raise NumericError("combined precision is not positive")
        lin = mpm / mpv + h_lq
        mean_c = lin / prec_c
        gsm[j] = mean_c
        gsv[j] = 1.0 / prec_c
        log_hbar = (c_lq - 0.5 * mpm * (mpm / mpv) + 0.5 * mean_c * lin
                    - 0.5 * log(mpv) - 0.5 * log(prec_c))
        if fpred[j] > 0.0 and zdag != -INFINITY:
            scratch[j] = log_hbar + log_c + zdag + log_eta + log(fpred[j])
        else:
            scratch[j] = -INFINITY
    inc = _lse(scratch, m)
    if inc == -INFINITY:
        raise NumericError(
            "value update at time %d: no regime retains mass" % t
        )
    total = 0.0
    for j in range(m):
        fs[j] = exp(scratch[j] - inc)
        total += fs[j]
    for j in range(m):
        fs[j] /= total
    log_kappa[0] = prev_kappa + inc
    return 0


def filter_scalar(double[::1] lam0, double[:, ::1] lam, double[::1] init_m,
                  double[::1] init_v, double[::1] tr_a, double[::1] tr_b,
                  double[::1] tr_q, double[::1] ob_c, double[::1] ob_d,
                  double[::1] ob_r, double[::1] y, double inner_tol,
                  int inner_max, double marg_tol, int marg_max):
    """Forward variational filter for a scalar-state system.

    Returns the per-time value-function arrays, product marginals, bounds,
    reverse kernels, and inner convergence flags, in the same order the
    generic driver assembles them.
    """
    cdef Py_ssize_t m = lam0.shape[0]
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t t, z, it

    log_kappa = np.empty(n)
    f_star = np.empty((n, m))
    gs_mean = np.empty((n, m))
    gs_var = np.empty((n, m))
    f_marg = np.empty((n, m))
    g_mean = np.empty(n)
    g_var = np.empty(n)
    bounds = np.empty(n)
    rev_f = np.empty((n - 1 if n > 1 else 0, m, m))
    rev_a = np.empty(n - 1 if n > 1 else 0)
    rev_b = np.empty(n - 1 if n > 1 else 0)
    rev_q = np.empty(n - 1 if n > 1 else 0)
    flags = np.zeros(n, dtype=np.intc)

    cdef double[::1] log_kappa_v = log_kappa
    cdef double[:, ::1] f_star_v = f_star
    cdef double[:, ::1] gs_mean_v = gs_mean
    cdef double[:, ::1] gs_var_v = gs_var
    cdef double[:, ::1] f_marg_v = f_marg
    cdef double[::1] g_mean_v = g_mean
    cdef double[::1] g_var_v = g_var
    cdef double[::1] bounds_v = bounds
    cdef double[:, :, ::1] rev_f_v = rev_f
    cdef double[::1] rev_a_v = rev_a
    cdef double[::1] rev_b_v = rev_b
    cdef double[::1] rev_q_v = rev_q
    cdef int[::1] flags_v = flags

    scratch = np.empty(m)
    wcol = np.empty(m)
    fpred = np.empty(m)
    fdag = np.empty((m, m))
    pm = np.empty(m)
    pv = np.empty(m)
    gain = np.empty(m)
    roff = np.empty(m)
    rv = np.empty(m)
    log_zeta = np.empty(m)
    f_rev = np.empty((m, m))
    cdef double[::1] scratch_v = scratch
    cdef double[::1] wcol_v = wcol
    cdef double[::1] fpred_v = fpred
    cdef double[:, ::1] fdag_v = fdag
    cdef double[::1] pm_v = pm
    cdef double[::1] pv_v = pv
    cdef double[::1] gain_v = gain
    cdef double[::1] roff_v = roff
    cdef double[::1] rv_v = rv
    cdef double[::1] log_zeta_v = log_zeta
    cdef double[:, ::1] f_rev_v = f_rev

    cdef double prec_c, lin, mean_c, inc, total
    cdef double cur_a, cur_b, cur_q, log_eta
    cdef double bound = 0.0, prev_bound = 0.0
    cdef int conv

    # time zero: per-regime conjugate updates of the initial components
    for z in range(m):
        prec_c = 1.0 / init_v[z] + ob_c[z] * ob_c[z] / ob_r[z]
        if prec_c <= 0.0:
            raise NumericError("combined precision is not positive")
        lin = init_m[z] / init_v[z] + ob_c[z] * (y[0] - ob_d[z]) / ob_r[z]
        mean_c = lin / prec_c
        gs_mean_v[0, z] = mean_c
        gs_var_v[0, z] = 1.0 / prec_c
        inc = (-0.5 * ((y[0] - ob_d[z]) * (y[0] - ob_d[z]) / ob_r[z]
                       + LOG_2PI + log(ob_r[z]))
               - 0.5 * init_m[z] * (init_m[z] / init_v[z]) + 0.5 * mean_c * lin
               - 0.5 * log(init_v[z]) - 0.5 * log(prec_c))
        if lam0[z] > 0.0:
            scratch_v[z] = log(lam0[z]) + inc
        else:
            scratch_v[z] = -INFINITY
    inc = _lse(scratch_v, m)
    if inc == -INFINITY:
        raise NumericError("value update at time 0: no regime retains mass")
    total = 0.0
    for z in range(m):
        f_star_v[0, z] = exp(scratch_v[z] - inc)
        total += f_star_v[0, z]
    for z in range(m):
        f_star_v[0, z] /= total
    log_kappa_v[0] = inc
    flags_v[0] = _filter_update(log_kappa_v[0], f_star_v[0], gs_mean_v[0],
                                gs_var_v[0], m, marg_tol, marg_max,
                                f_marg_v[0], &g_mean_v[0], &g_var_v[0],
                                &bounds_v[0], scratch_v)

    for t in range(1, n):
        _chain_predict(f_star_v[t - 1], lam, m, fpred_v, fdag_v)
        _predict_reverse(gs_mean_v[t - 1], gs_var_v[t - 1], tr_a, tr_b, tr_q,
                         m, pm_v, pv_v, gain_v, roff_v, rv_v)
        # initial reverse pair: exact chain posterior, source-weighted pool
        for z in range(m):
            wcol_v[z] = f_star_v[t - 1, z]
        _mix(wcol_v, pm_v, pv_v, gain_v, roff_v, rv_v, m,
             &log_eta, &cur_a, &cur_b, &cur_q, &mean_c, &prec_c)
        for z in range(m):
            for it in range(m):
                f_rev_v[z, it] = fdag_v[z, it]
        prev_bound = 0.0
        conv = 0
        for it in range(inner_max):
            _value_step(log_kappa_v[t - 1], f_star_v[t - 1], pm_v, pv_v,
                        gain_v, roff_v, rv_v, fpred_v, fdag_v, f_rev_v,
                        cur_a, cur_b, cur_q, ob_c, ob_d, ob_r, y[t], m,
                        <int> t, &log_kappa_v[t], f_star_v[t], gs_mean_v[t],
                        gs_var_v[t], wcol_v, scratch_v)
            _filter_update(log_kappa_v[t], f_star_v[t], gs_mean_v[t],
                           gs_var_v[t], m, marg_tol, marg_max, f_marg_v[t],
                           &g_mean_v[t], &g_var_v[t], &bound, scratch_v)
            _reverse_update(pm_v, pv_v, gain_v, roff_v, rv_v, fdag_v,
                            f_marg_v[t], g_mean_v[t], g_var_v[t], m, f_rev_v,
                            &cur_a, &cur_b, &cur_q, log_zeta_v, scratch_v)
            if it > 0 and fabs(bound - prev_bound) < inner_tol:
                conv = 1
                break
            prev_bound = bound
        bounds_v[t] = bound
        flags_v[t] = conv
        for z in range(m):
            for it in range(m):
                rev_f_v[t - 1, z, it] = f_rev_v[z, it]
        rev_a_v[t - 1] = cur_a
        rev_b_v[t - 1] = cur_b
        rev_q_v[t - 1] = cur_q

    return (log_kappa, f_star, gs_mean, gs_var, f_marg, g_mean, g_var,
            bounds, rev_f, rev_a, rev_b, rev_q, flags)


def sweep_scalar(double[:, ::1] lam, double[::1] tr_a, double[::1] tr_b,
                 double[::1] tr_q, double[::1] ob_c, double[::1] ob_d,
                 double[::1] ob_r, double[::1] y, double[::1] log_kappa,
                 double[:, ::1] f_star, double[:, ::1] gs_mean,
                 double[:, ::1] gs_var, double[:, :, ::1] rev_f,
                 double[::1] rev_a, double[::1] rev_b, double[::1] rev_q,
                 double[:, ::1] fix_f, double[::1] fix_gm, double[::1] fix_gv,
                 double inner_tol, int inner_max):
    """One forward smoother sweep against frozen marginals, in place.

    Re-solves the reverse-kernel fixed point at each time and recomputes the
    value-function arrays with the new kernels. All value and kernel arrays
    are updated in place; the caller recomputes the terminal marginal and the
    backward pass.
    """
    cdef Py_ssize_t m = lam.shape[0]
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t t, z, it

    scratch = np.empty(m)
    wcol = np.empty(m)
    fpred = np.empty(m)
    fdag = np.empty((m, m))
    pm = np.empty(m)
    pv = np.empty(m)
    gain = np.empty(m)
    roff = np.empty(m)
    rv = np.empty(m)
    log_zeta = np.empty(m)
    cdef double[::1] scratch_v = scratch
    cdef double[::1] wcol_v = wcol
    cdef double[::1] fpred_v = fpred
    cdef double[:, ::1] fdag_v = fdag
    cdef double[::1] pm_v = pm
    cdef double[::1] pv_v = pv
    cdef double[::1] gain_v = gain
    cdef double[::1] roff_v = roff
    cdef double[::1] rv_v = rv
    cdef double[::1] log_zeta_v = log_zeta

    cdef double cur_a, cur_b, cur_q
    cdef double objective, prev_obj, xi, cur_gv, cur_gm
    cdef int support_broken

    for t in range(1, n):
        _chain_predict(f_star[t - 1], lam, m, fpred_v, fdag_v)
        _predict_reverse(gs_mean[t - 1], gs_var[t - 1], tr_a, tr_b, tr_q,
                         m, pm_v, pv_v, gain_v, roff_v, rv_v)
        cur_a = rev_a[t - 1]
        cur_b = rev_b[t - 1]
        cur_q = rev_q[t - 1]
        prev_obj = 0.0
        cur_gm = fix_gm[t]
        cur_gv = fix_gv[t]
        for it in range(inner_max):
            _reverse_update(pm_v, pv_v, gain_v, roff_v, rv_v, fdag_v,
                            fix_f[t], cur_gm, cur_gv, m, rev_f[t - 1],
                            &cur_a, &cur_b, &cur_q, log_zeta_v, scratch_v)
            _value_step(log_kappa[t - 1], f_star[t - 1], pm_v, pv_v, gain_v,
                        roff_v, rv_v, fpred_v, fdag_v, rev_f[t - 1],
                        cur_a, cur_b, cur_q, ob_c, ob_d, ob_r, y[t], m,
                        <int> t, &log_kappa[t], f_star[t], gs_mean[t],
                        gs_var[t], wcol_v, scratch_v)
            # bound of the frozen product marginal against the new values
            objective = log_kappa[t]
            support_broken = 0
            for z in range(m):
                if fix_f[t, z] <= 0.0:
                    continue
                if f_star[t, z] <= 0.0:
                    support_broken = 1
                    break
                xi = -0.5 * (cur_gv / gs_var[t, z] - 1.0
                             + (gs_mean[t, z] - cur_gm) * (gs_mean[t, z] - cur_gm)
                             / gs_var[t, z]
                             + log(gs_var[t, z]) - log(cur_gv))
                objective += fix_f[t, z] * (xi + log(f_star[t, z])
                                            - log(fix_f[t, z]))
            if support_broken:
                objective = -INFINITY
            if it > 0 and fabs(objective - prev_obj) < inner_tol:
                break
            prev_obj = objective
        rev_a[t - 1] = cur_a
        rev_b[t - 1] = cur_b
        rev_q[t - 1] = cur_q
    return None


def terminal_scalar(double log_kappa, double[::1] f_star, double[::1] gs_mean,
                    double[::1] gs_var, double marg_tol, int marg_max):
    """Marginal fixed point at the final time; returns (f, gm, gv, bound, ok)."""
    cdef Py_ssize_t m = f_star.shape[0]
    f = np.empty(m)
    scratch = np.empty(m)
    cdef double[::1] f_v = f
    cdef double[::1] scratch_v = scratch
    cdef double gm = 0.0, gv = 0.0, bound = 0.0
    cdef int conv
    conv = _filter_update(log_kappa, f_star, gs_mean, gs_var, m, marg_tol,
                          marg_max, f_v, &gm, &gv, &bound, scratch_v)
    return f, gm, gv, bound, bool(conv)


def backward_scalar(double[::1] f_term, double g_mean_term, double g_var_term,
                    double[:, :, ::1] rev_f, double[::1] rev_a,
                    double[::1] rev_b, double[::1] rev_q):
    """Propagate a terminal product marginal through the reverse kernels."""
    cdef Py_ssize_t m = f_term.shape[0]
    cdef Py_ssize_t n = rev_f.shape[0] + 1
    cdef Py_ssize_t t, z, j
    cdef double total
    f = np.empty((n, m))
    gm = np.empty(n)
    gv = np.empty(n)
    cdef double[:, ::1] f_v = f
    cdef double[::1] gm_v = gm
    cdef double[::1] gv_v = gv
    for z in range(m):
        f_v[n - 1, z] = f_term[z]
    gm_v[n - 1] = g_mean_term
    gv_v[n - 1] = g_var_term
    for t in range(n - 2, -1, -1):
        total = 0.0
        for z in range(m):
            f_v[t, z] = 0.0
            for j in range(m):
                f_v[t, z] += rev_f[t, z, j] * f_v[t + 1, j]
            total += f_v[t, z]
        for z in range(m):
            f_v[t, z] /= total
        gm_v[t] = rev_a[t] * gm_v[t + 1] + rev_b[t]
        gv_v[t] = rev_a[t] * rev_a[t] * gv_v[t + 1] + rev_q[t]
    return f, gm, gv
