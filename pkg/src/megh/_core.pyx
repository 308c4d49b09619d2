# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, nonecheck=False
"""Compiled kernels for the cluster marginal likelihoods.

``log_marginals`` evaluates, for every cluster i,

    log m_i = log K_i + log  integral exp(l_i(u) - log K_i) g(u) du

where ``log K_i = max_u l_i(u)``.  The integral is computed by globally
adaptive Gauss-Kronrod (7/15) quadrature after the substitution
``u = c + s * tan(v)``, with ``c`` the mode of ``l_i + log g`` and ``s``
a multiple of the reciprocal square root of its curvature there.

``_core_py`` implements the same algorithm in pure Python; the two must
stay in lockstep.
"""

import numpy as np

from libc.math cimport exp, log, log1p, expm1, sqrt, tan, cos, fabs, lgamma, M_PI, INFINITY
from libc.stdlib cimport malloc, free

cdef double LOG_SQRT_2PI = 0.91893853320467274178
cdef double U_CAP = 700.0
cdef int MAX_EXPAND = 6
# tan-substitution scale as a multiple of the Laplace scale at the mode
cdef double WIDEN = 4.0
cdef double EPMACH = 2.220446049250313e-16
cdef double UFLOW = 2.2250738585072014e-308

cdef double[8] XGK = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
]
cdef double[8] WGK = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
]
cdef double[4] WG = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
]


cdef struct Model:
    int bfam
    double b0, b1, b2, bconst
    int structure
    int refam
    double r0, r1, rshift, rconst, sd


cdef struct Cluster:
    Py_ssize_t n
    const double* s0
    const double* ew
    const double* d
    const double* lh
    double A, D, B
    long nevals
    int nan_seen


cdef inline double softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double log_h0_s(const Model* m, double s) noexcept nogil:
    cdef double z, w
    if m.bfam == 0:
        z = m.b1 * (s - m.b0)
        return m.bconst + (m.b1 - 1.0) * (s - m.b0) + (m.b2 - 1.0) * softplus(z)
    w = (s - m.b0) / m.b1
    return m.bconst - s + w - softplus(w)


cdef inline double cumhaz0_s(const Model* m, double s) noexcept nogil:
    if m.bfam == 0:
        return expm1(softplus(m.b1 * (s - m.b0)) * m.b2)
    return softplus((s - m.b0) / m.b1)


cdef inline double cluster_loglik(const Model* m, Cluster* c, double u) noexcept nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0
    cdef double s
    c.nevals += 1
    if m.structure == 0:
        return c.A - c.B
    if m.structure == 1:
        return c.A + c.D * u - c.B * exp(u)
    for j in range(c.n):
        s = c.s0[j] + u
        if c.d[j] != 0.0:
            acc += c.d[j] * (log_h0_s(m, s) + c.lh[j] + u)
        acc -= cumhaz0_s(m, s) * c.ew[j]
    return acc


cdef inline double re_logpdf(const Model* m, double u) noexcept nogil:
    cdef double y, z
    if m.refam == 0:
        z = u * m.r0
        return m.rconst - 0.5 * z * z
    if m.refam == 1:
        z = u * m.r0
        return m.rconst - 0.5 * (m.r1 + 1.0) * log1p(z * z / m.r1)
    y = u - m.rshift
    if y < 0:
        z = y * m.r0
    else:
        z = y * m.r1
    return m.rconst - 0.5 * z * z


cdef inline double objective(const Model* m, Cluster* c, int with_prior, double u) noexcept nogil:
    cdef double v = cluster_loglik(m, c, u)
    if with_prior:
        v += re_logpdf(m, u)
    if v != v:
        c.nan_seen = 1
        return -INFINITY
    return v


cdef double brent_max(const Model* m, Cluster* c, int with_prior, double lo, double hi,
                      double xatol, double* fout) noexcept nogil:
    # Bounded Brent minimisation of -objective (golden section + parabolic steps).
    cdef double sqrt_eps = 1.4901161193847656e-08
    cdef double golden_mean = 0.3819660112501051
    cdef double a = lo, b = hi
    cdef double fulc = a + golden_mean * (b - a)
    cdef double nfc = fulc, xf = fulc
    cdef double rat = 0.0, e = 0.0, x = xf
    cdef double fx = -objective(m, c, with_prior, x)
    cdef double ffulc = fx, fnfc = fx
    cdef double xm = 0.5 * (a + b)
    cdef double tol1 = sqrt_eps * fabs(xf) + xatol / 3.0
    cdef double tol2 = 2.0 * tol1
    cdef double r, q, p, fu, si
    cdef int golden, num = 1
    while fabs(xf - xm) > (tol2 - 0.5 * (b - a)):
        golden = 1
        if fabs(e) > tol1:
            golden = 0
            r = (xf - nfc) * (fx - ffulc)
            q = (xf - fulc) * (fx - fnfc)
            p = (xf - fulc) * q - (xf - nfc) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = fabs(q)
            r = e
            e = rat
            if (fabs(p) < fabs(0.5 * q * r)) and (p > q * (a - xf)) and (p < q * (b - xf)):
                rat = p / q
                x = xf + rat
                if ((x - a) < tol2) or ((b - x) < tol2):
                    si = 1.0 if xm - xf >= 0 else -1.0
                    rat = tol1 * si
            else:
                golden = 1
        if golden:
            if xf >= xm:
                e = a - xf
            else:
                e = b - xf
            rat = golden_mean * e
        si = 1.0 if rat >= 0 else -1.0
        x = xf + si * (fabs(rat) if fabs(rat) > tol1 else tol1)
        fu = -objective(m, c, with_prior, x)
        num += 1
        if fu <= fx:
            if x >= xf:
                a = xf
            else:
                b = xf
            fulc = nfc
            ffulc = fnfc
            nfc = xf
            fnfc = fx
            xf = x
            fx = fu
        else:
            if x < xf:
                a = x
            else:
                b = x
            if (fu <= fnfc) or (nfc == xf):
                fulc = nfc
                ffulc = fnfc
                nfc = x
                fnfc = fu
            elif (fu <= ffulc) or (fulc == xf) or (fulc == nfc):
                fulc = x
                ffulc = fu
        xm = 0.5 * (a + b)
        tol1 = sqrt_eps * fabs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        if num >= 500:
            break
    fout[0] = -fx
    return xf


cdef double find_max(const Model* m, Cluster* c, int with_prior, double centre, double half,
                     double xatol, double* fout) noexcept nogil:
    # Brent on [centre - half, centre + half], widened while the optimum sits on an edge.
    cdef double lo = centre - half
    cdef double hi = centre + half
    cdef double x = 0.0, f = -INFINITY, width
    cdef int k, near_lo, near_hi
    if lo < -U_CAP:
        lo = -U_CAP
    if hi > U_CAP:
        hi = U_CAP
    for k in range(MAX_EXPAND + 1):
        x = brent_max(m, c, with_prior, lo, hi, xatol, &f)
        width = hi - lo
        near_lo = (x - lo) < 1e-3 * width and lo > -U_CAP
        near_hi = (hi - x) < 1e-3 * width and hi < U_CAP
        if not (near_lo or near_hi):
            break
        if near_lo:
            lo = lo - width
            if lo < -U_CAP:
                lo = -U_CAP
        if near_hi:
            hi = hi + width
            if hi > U_CAP:
                hi = U_CAP
    fout[0] = f
    return x


cdef double local_scale(const Model* m, Cluster* c, double x, double f0, double sd) noexcept nogil:
    cdef double h = 1e-3 * sd
    cdef double fp, fm, kappa, s = sd
    cdef int it
    for it in range(3):
        fp = objective(m, c, 1, x + h)
        fm = objective(m, c, 1, x - h)
        kappa = -(fp - 2.0 * f0 + fm) / (h * h)
        if not (kappa > 0.0 and kappa < INFINITY):
            return sd
        s = 1.0 / sqrt(kappa)
        if h <= 1e-2 * s:
            return s
        h = 1e-3 * s
    return s


cdef inline double integrand(const Model* m, Cluster* c, double v, double centre, double scale,
                             double shift) noexcept nogil:
    cdef double u = centre + scale * tan(v)
    cdef double val, cv
    if u > U_CAP or u < -U_CAP:
        return 0.0
    val = cluster_loglik(m, c, u) + re_logpdf(m, u) - shift
    if val != val:
        c.nan_seen = 1
        return 0.0
    if val < -745.0:
        return 0.0
    cv = cos(v)
    return exp(val) * scale / (cv * cv)


cdef void qk15(const Model* m, Cluster* c, double a, double b, double centre, double scale,
               double shift, double* result, double* abserr) noexcept nogil:
    cdef double centr = 0.5 * (a + b)
    cdef double hlgth = 0.5 * (b - a)
    cdef double dhlgth = fabs(hlgth)
    cdef double fv1[7]
    cdef double fv2[7]
    cdef double fc, resg, resk, resabs, resasc, reskh, absc, f1, f2, fsum, err
    cdef int j, jtw, jtwm1
    fc = integrand(m, c, centr, centre, scale, shift)
    resg = fc * WG[3]
    resk = fc * WGK[7]
    resabs = fabs(resk)
    for j in range(3):
        jtw = 2 * j + 1
        absc = hlgth * XGK[jtw]
        f1 = integrand(m, c, centr - absc, centre, scale, shift)
        f2 = integrand(m, c, centr + absc, centre, scale, shift)
        fv1[jtw] = f1
        fv2[jtw] = f2
        fsum = f1 + f2
        resg += WG[j] * fsum
        resk += WGK[jtw] * fsum
        resabs += WGK[jtw] * (fabs(f1) + fabs(f2))
    for j in range(4):
        jtwm1 = 2 * j
        absc = hlgth * XGK[jtwm1]
        f1 = integrand(m, c, centr - absc, centre, scale, shift)
        f2 = integrand(m, c, centr + absc, centre, scale, shift)
        fv1[jtwm1] = f1
        fv2[jtwm1] = f2
        fsum = f1 + f2
        resk += WGK[jtwm1] * fsum
        resabs += WGK[jtwm1] * (fabs(f1) + fabs(f2))
    reskh = resk * 0.5
    resasc = WGK[7] * fabs(fc - reskh)
    for j in range(7):
        resasc += WGK[j] * (fabs(fv1[j] - reskh) + fabs(fv2[j] - reskh))
    result[0] = resk * hlgth
    resabs *= dhlgth
    resasc *= dhlgth
    err = fabs((resk - resg) * hlgth)
    if resasc != 0.0 and err != 0.0:
        f1 = (200.0 * err / resasc) ** 1.5
        err = resasc * (f1 if f1 < 1.0 else 1.0)
    if resabs > UFLOW / (50.0 * EPMACH):
        f1 = EPMACH * 50.0 * resabs
        if f1 > err:
            err = f1
    abserr[0] = err


cdef int adaptive_gk(const Model* m, Cluster* c, double centre, double scale, double shift,
                     double epsabs, double epsrel, int limit, int n_init,
                     double* result, double* abserr) noexcept nogil:
    cdef double* alist = <double*> malloc(limit * sizeof(double))
    cdef double* blist = <double*> malloc(limit * sizeof(double))
    cdef double* rlist = <double*> malloc(limit * sizeof(double))
    cdef double* elist = <double*> malloc(limit * sizeof(double))
    cdef int last = 0, i, imax, status = 1
    cdef double lo = -0.5 * M_PI, width, area, errsum, tol, mid, r1, e1, r2, e2, emax
    if n_init < 1:
        n_init = 1
    if n_init > limit:
        n_init = limit
    width = M_PI / n_init
    for i in range(n_init):
        alist[i] = lo + i * width
        blist[i] = lo + (i + 1) * width if i + 1 < n_init else 0.5 * M_PI
        qk15(m, c, alist[i], blist[i], centre, scale, shift, &rlist[i], &elist[i])
    last = n_init
    while True:
        area = 0.0
        errsum = 0.0
        imax = 0
        emax = -1.0
        for i in range(last):
            area += rlist[i]
            errsum += elist[i]
            if elist[i] > emax:
                emax = elist[i]
                imax = i
        tol = epsrel * fabs(area)
        if epsabs > tol:
            tol = epsabs
        if errsum <= tol:
            status = 0
            break
        if last >= limit:
            status = 1
            break
        mid = 0.5 * (alist[imax] + blist[imax])
        qk15(m, c, alist[imax], mid, centre, scale, shift, &r1, &e1)
        qk15(m, c, mid, blist[imax], centre, scale, shift, &r2, &e2)
        alist[last] = mid
        blist[last] = blist[imax]
        rlist[last] = r2
        elist[last] = e2
        blist[imax] = mid
        rlist[imax] = r1
        elist[imax] = e1
        last += 1
    result[0] = area
    abserr[0] = errsum
    free(alist)
    free(blist)
    free(rlist)
    free(elist)
    return status


cdef Model make_model(int bfam, const double[::1] theta, int structure, int refam,
                      const double[::1] re_params):
    cdef Model m
    cdef double sigma, gamma, k, s
    m.bfam = bfam
    if bfam == 0:
        m.b0 = log(theta[0])
        m.b1 = theta[1]
        m.b2 = 1.0 / theta[2]
        m.bconst = log(theta[1]) - log(theta[2]) - log(theta[0])
    else:
        m.b0 = theta[0]
        m.b1 = theta[1]
        m.b2 = 0.0
        m.bconst = -log(theta[1])
    m.structure = structure
    m.refam = refam
    m.rshift = 0.0
    m.r0 = 0.0
    m.r1 = 0.0
    m.rconst = 0.0
    m.sd = 0.0
    if structure == 0:
        return m
    if refam == 0:
        sigma = re_params[0]
        m.r0 = 1.0 / sigma
        m.rconst = -LOG_SQRT_2PI - log(sigma)
        m.sd = sigma
    elif refam == 1:
        s = re_params[0]
        k = re_params[1]
        m.r0 = 1.0 / s
        m.r1 = k
        m.rconst = lgamma(0.5 * (k + 1.0)) - lgamma(0.5 * k) - 0.5 * log(k * M_PI) - log(s)
        m.sd = s * sqrt(k / (k - 2.0))
    else:
        sigma = re_params[0]
        gamma = re_params[1]
        m.r0 = 1.0 / (sigma * (1.0 - gamma))
        m.r1 = 1.0 / (sigma * (1.0 + gamma))
        m.rshift = -2.0 * sigma * gamma * sqrt(2.0 / M_PI)
        m.rconst = -LOG_SQRT_2PI - log(sigma)
        m.sd = sigma * sqrt(1.0 + (3.0 - 8.0 / M_PI) * gamma * gamma)
    return m


cdef void setup_cluster(const Model* m, Cluster* c, Py_ssize_t start, Py_ssize_t stop,
                        const double[::1] s0, const double[::1] ew, const double[::1] d,
                        const double[::1] lh) noexcept nogil:
    cdef Py_ssize_t j
    c.n = stop - start
    c.nevals = 0
    c.nan_seen = 0
    c.A = 0.0
    c.D = 0.0
    c.B = 0.0
    if c.n > 0:
        c.s0 = &s0[start]
        c.ew = &ew[start]
        c.d = &d[start]
        c.lh = &lh[start]
    if m.structure == 2:
        return
    for j in range(start, stop):
        if d[j] != 0.0:
            c.A += d[j] * (log_h0_s(m, s0[j]) + lh[j])
            c.D += d[j]
        c.B += cumhaz0_s(m, s0[j]) * ew[j]


def _prepare(const double[::1] t, const double[::1] lh, const double[::1] lt):
    cdef Py_ssize_t n = t.shape[0], j
    s0_arr = np.empty(n)
    ew_arr = np.empty(n)
    cdef double[::1] s0 = s0_arr
    cdef double[::1] ew = ew_arr
    for j in range(n):
        s0[j] = log(t[j]) + lt[j]
        ew[j] = exp(lh[j] - lt[j])
    return s0_arr, ew_arr


def log_marginals(const double[::1] t, const double[::1] d, const double[::1] lh,
                  const double[::1] lt, const Py_ssize_t[::1] offsets, int bfam,
                  const double[::1] theta, int structure, int refam,
                  const double[::1] re_params, double epsabs=1e-9, double epsrel=1e-7,
                  bint scaled=True, int limit=200, int n_init=6):
    """Per-cluster log marginal likelihoods.

    Returns ``(logm, logk, mode, scale, status, nevals)``; ``status`` is 0 on
    success, 1 if the subdivision limit was hit and 2 if NaNs appeared.
    Data must be sorted by cluster with ``offsets`` delimiting clusters.
    """
    cdef Py_ssize_t r = offsets.shape[0] - 1, i
    cdef Model m = make_model(bfam, theta, structure, refam, re_params)
    s0_arr, ew_arr = _prepare(t, lh, lt)
    cdef const double[::1] s0 = s0_arr
    cdef const double[::1] ew = ew_arr
    logm_a = np.empty(r)
    logk_a = np.empty(r)
    mode_a = np.zeros(r)
    scale_a = np.zeros(r)
    status_a = np.zeros(r, dtype=np.int32)
    nev_a = np.zeros(r, dtype=np.int64)
    cdef double[::1] logm = logm_a
    cdef double[::1] logk = logk_a
    cdef double[::1] mode = mode_a
    cdef double[::1] scale = scale_a
    cdef int[::1] status = status_a
    cdef long long[::1] nev = nev_a
    cdef Cluster c
    cdef double half = 10.0 * m.sd, xatol = 1e-5 * m.sd
    cdef double fk, fc, xc, sc, peak, res, err
    cdef int st
    with nogil:
        for i in range(r):
            setup_cluster(&m, &c, offsets[i], offsets[i + 1], s0, ew, d, lh)
            if structure == 0:
                logm[i] = c.A - c.B
                logk[i] = logm[i]
                nev[i] = 1
                continue
            if scaled:
                find_max(&m, &c, 0, 0.0, half, xatol, &fk)
            else:
                fk = 0.0
            xc = find_max(&m, &c, 1, m.rshift, half, xatol, &fc)
            sc = local_scale(&m, &c, xc, fc, m.sd)
            peak = exp(fc - fk) * sc * WIDEN
            st = adaptive_gk(&m, &c, xc, sc * WIDEN, fk, epsabs * peak, epsrel, limit, n_init, &res, &err)
            if c.nan_seen:
                st = 2
            logk[i] = fk
            logm[i] = fk + log(res) if res > 0 else -INFINITY
            mode[i] = xc
            scale[i] = sc
            status[i] = st
            nev[i] = c.nevals
    return logm_a, logk_a, mode_a, scale_a, status_a, nev_a


def loglik_grid(const double[::1] t, const double[::1] d, const double[::1] lh,
                const double[::1] lt, const Py_ssize_t[::1] offsets, int bfam,
                const double[::1] theta, int structure, const double[::1] u):
    """Conditional cluster log-likelihoods l_i(u_k) as an (r, k) array."""
    cdef Py_ssize_t r = offsets.shape[0] - 1, k = u.shape[0], i, q
    cdef double[::1] dummy = np.ones(3)
    cdef Model m = make_model(bfam, theta, structure, 0, dummy)
    s0_arr, ew_arr = _prepare(t, lh, lt)
    cdef const double[::1] s0 = s0_arr
    cdef const double[::1] ew = ew_arr
    out_a = np.empty((r, k))
    cdef double[:, ::1] out = out_a
    cdef Cluster c
    with nogil:
        for i in range(r):
            setup_cluster(&m, &c, offsets[i], offsets[i + 1], s0, ew, d, lh)
            for q in range(k):
                out[i, q] = cluster_loglik(&m, &c, u[q])
    return out_a
