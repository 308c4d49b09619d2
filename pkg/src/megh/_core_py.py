"""Pure-Python twin of the compiled ``_core`` kernels.

Same algorithm, same constants, same control flow; only the sums over a
cluster's subjects are vectorised with numpy. Used when the extension is
not built, or when ``MEGH_BACKEND=python`` is set.
"""

from __future__ import annotations

import math

import numpy as np

LOG_SQRT_2PI = 0.91893853320467274178
U_CAP = 700.0
MAX_EXPAND = 6
WIDEN = 4.0
EPMACH = 2.220446049250313e-16
UFLOW = 2.2250738585072014e-308

XGK = (
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
)
WGK = (
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
)
WG = (
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_scalar(x: float) -> float:
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


class _Model:
    def __init__(self, bfam, theta, structure, refam, re_params):
        self.bfam = bfam
        if bfam == 0:
            self.b0 = math.log(theta[0])
            self.b1 = theta[1]
            self.b2 = 1.0 / theta[2]
            self.bconst = math.log(theta[1]) - math.log(theta[2]) - math.log(theta[0])
        else:
            self.b0 = theta[0]
            self.b1 = theta[1]
            self.b2 = 0.0
            self.bconst = -math.log(theta[1])
        self.structure = structure
        self.refam = refam
        self.rshift = 0.0
        self.r0 = self.r1 = self.rconst = self.sd = 0.0
        if structure == 0:
            return
        if refam == 0:
            sigma = re_params[0]
            self.r0 = 1.0 / sigma
            self.rconst = -LOG_SQRT_2PI - math.log(sigma)
            self.sd = sigma
        elif refam == 1:
            s, k = re_params[0], re_params[1]
            self.r0 = 1.0 / s
            self.r1 = k
            self.rconst = (
                math.lgamma(0.5 * (k + 1.0)) - math.lgamma(0.5 * k) - 0.5 * math.log(k * math.pi) - math.log(s)
            )
            self.sd = s * math.sqrt(k / (k - 2.0))
        else:
            sigma, gamma = re_params[0], re_params[1]
            self.r0 = 1.0 / (sigma * (1.0 - gamma))
            self.r1 = 1.0 / (sigma * (1.0 + gamma))
            self.rshift = -2.0 * sigma * gamma * math.sqrt(2.0 / math.pi)
            self.rconst = -LOG_SQRT_2PI - math.log(sigma)
            self.sd = sigma * math.sqrt(1.0 + (3.0 - 8.0 / math.pi) * gamma * gamma)

    def log_h0_s(self, s):
        if self.bfam == 0:
            z = self.b1 * (s - self.b0)
            return self.bconst + (self.b1 - 1.0) * (s - self.b0) + (self.b2 - 1.0) * _softplus(z)
        w = (s - self.b0) / self.b1
        return self.bconst - s + w - _softplus(w)

    def cumhaz0_s(self, s):
        if self.bfam == 0:
            return np.expm1(_softplus(self.b1 * (s - self.b0)) * self.b2)
        return _softplus((s - self.b0) / self.b1)

    def re_logpdf(self, u: float) -> float:
        if self.refam == 0:
            z = u * self.r0
            return self.rconst - 0.5 * z * z
        if self.refam == 1:
            z = u * self.r0
            return self.rconst - 0.5 * (self.r1 + 1.0) * math.log1p(z * z / self.r1)
        y = u - self.rshift
        z = y * (self.r0 if y < 0 else self.r1)
        return self.rconst - 0.5 * z * z


class _Cluster:
    def __init__(self, m: _Model, s0, ew, d, lh):
        self.m = m
        self.s0, self.ew, self.d, self.lh = s0, ew, d, lh
        self.nevals = 0
        self.nan_seen = False
        self.A = self.D = self.B = 0.0
        if m.structure != 2 and len(s0):
            ev = d != 0.0
            self.A = float(np.sum(d[ev] * (m.log_h0_s(s0[ev]) + lh[ev])))
            self.D = float(np.sum(d[ev]))
            self.B = float(np.sum(m.cumhaz0_s(s0) * ew))

    def loglik(self, u: float) -> float:
        self.nevals += 1
        m = self.m
        if m.structure == 0:
            return self.A - self.B
        if m.structure == 1:
            try:
                return self.A + self.D * u - self.B * math.exp(u)
            except OverflowError:
                return -math.inf
        with np.errstate(over="ignore", invalid="ignore"):
            s = self.s0 + u
            ev = self.d != 0.0
            acc = np.sum(self.d[ev] * (m.log_h0_s(s[ev]) + self.lh[ev] + u))
            acc -= np.sum(m.cumhaz0_s(s) * self.ew)
        return float(acc)

    def objective(self, with_prior: bool, u: float) -> float:
        v = self.loglik(u)
        if with_prior:
            v += self.m.re_logpdf(u)
        if v != v:
            self.nan_seen = True
            return -math.inf
        return v


def _brent_max(c: _Cluster, with_prior, lo, hi, xatol):
    sqrt_eps = 1.4901161193847656e-08
    golden_mean = 0.3819660112501051
    a, b = lo, hi
    fulc = a + golden_mean * (b - a)
    nfc = xf = fulc
    rat = e = 0.0
    x = xf
    fx = -c.objective(with_prior, x)
    ffulc = fnfc = fx
    xm = 0.5 * (a + b)
    tol1 = sqrt_eps * abs(xf) + xatol / 3.0
    tol2 = 2.0 * tol1
    num = 1
    while abs(xf - xm) > (tol2 - 0.5 * (b - a)):
        golden = True
        if abs(e) > tol1:
            golden = False
            r = (xf - nfc) * (fx - ffulc)
            q = (xf - fulc) * (fx - fnfc)
            p = (xf - fulc) * q - (xf - nfc) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r = e
            e = rat
            if (abs(p) < abs(0.5 * q * r)) and (p > q * (a - xf)) and (p < q * (b - xf)):
                rat = p / q
                x = xf + rat
                if ((x - a) < tol2) or ((b - x) < tol2):
                    rat = tol1 * (1.0 if xm - xf >= 0 else -1.0)
            else:
                golden = True
        if golden:
            e = (a - xf) if xf >= xm else (b - xf)
            rat = golden_mean * e
        si = 1.0 if rat >= 0 else -1.0
        x = xf + si * (abs(rat) if abs(rat) > tol1 else tol1)
        fu = -c.objective(with_prior, x)
        num += 1
        if fu <= fx:
            if x >= xf:
                a = xf
            else:
                b = xf
            fulc, ffulc = nfc, fnfc
            nfc, fnfc = xf, fx
            xf, fx = x, fu
        else:
            if x < xf:
                a = x
            else:
                b = x
            if (fu <= fnfc) or (nfc == xf):
                fulc, ffulc = nfc, fnfc
                nfc, fnfc = x, fu
            elif (fu <= ffulc) or (fulc == xf) or (fulc == nfc):
                fulc, ffulc = x, fu
        xm = 0.5 * (a + b)
        tol1 = sqrt_eps * abs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        if num >= 500:
            break
    return xf, -fx


def _find_max(c: _Cluster, with_prior, centre, half, xatol):
    lo = max(centre - half, -U_CAP)
    hi = min(centre + half, U_CAP)
    x, f = 0.0, -math.inf
    for _ in range(MAX_EXPAND + 1):
        x, f = _brent_max(c, with_prior, lo, hi, xatol)
        width = hi - lo
        near_lo = (x - lo) < 1e-3 * width and lo > -U_CAP
        near_hi = (hi - x) < 1e-3 * width and hi < U_CAP
        if not (near_lo or near_hi):
            break
        if near_lo:
            lo = max(lo - width, -U_CAP)
        if near_hi:
            hi = min(hi + width, U_CAP)
    return x, f


def _local_scale(c: _Cluster, x, f0, sd):
    h = 1e-3 * sd
    s = sd
    for _ in range(3):
        fp = c.objective(True, x + h)
        fm = c.objective(True, x - h)
        kappa = -(fp - 2.0 * f0 + fm) / (h * h)
        if not (0.0 < kappa < math.inf):
            return sd
        s = 1.0 / math.sqrt(kappa)
        if h <= 1e-2 * s:
            return s
        h = 1e-3 * s
    return s


def _integrand(c: _Cluster, v, centre, scale, shift):
    u = centre + scale * math.tan(v)
    if u > U_CAP or u < -U_CAP:
        return 0.0
    val = c.loglik(u) + c.m.re_logpdf(u) - shift
    if val != val:
        c.nan_seen = True
        return 0.0
    if val < -745.0:
        return 0.0
    cv = math.cos(v)
    return math.exp(val) * scale / (cv * cv)


def _qk15(c: _Cluster, a, b, centre, scale, shift):
    centr = 0.5 * (a + b)
    hlgth = 0.5 * (b - a)
    dhlgth = abs(hlgth)
    fv1 = [0.0] * 7
    fv2 = [0.0] * 7
    fc = _integrand(c, centr, centre, scale, shift)
    resg = fc * WG[3]
    resk = fc * WGK[7]
    resabs = abs(resk)
    for j in range(3):
        jtw = 2 * j + 1
        absc = hlgth * XGK[jtw]
        f1 = _integrand(c, centr - absc, centre, scale, shift)
        f2 = _integrand(c, centr + absc, centre, scale, shift)
        fv1[jtw], fv2[jtw] = f1, f2
        fsum = f1 + f2
        resg += WG[j] * fsum
        resk += WGK[jtw] * fsum
        resabs += WGK[jtw] * (abs(f1) + abs(f2))
    for j in range(4):
        jtwm1 = 2 * j
        absc = hlgth * XGK[jtwm1]
        f1 = _integrand(c, centr - absc, centre, scale, shift)
        f2 = _integrand(c, centr + absc, centre, scale, shift)
        fv1[jtwm1], fv2[jtwm1] = f1, f2
        fsum = f1 + f2
        resk += WGK[jtwm1] * fsum
        resabs += WGK[jtwm1] * (abs(f1) + abs(f2))
    reskh = resk * 0.5
    resasc = WGK[7] * abs(fc - reskh)
    for j in range(7):
        resasc += WGK[j] * (abs(fv1[j] - reskh) + abs(fv2[j] - reskh))
    result = resk * hlgth
    resabs *= dhlgth
    resasc *= dhlgth
    err = abs((resk - resg) * hlgth)
    if resasc != 0.0 and err != 0.0:
        err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
    if resabs > UFLOW / (50.0 * EPMACH):
        err = max(EPMACH * 50.0 * resabs, err)
    return result, err


def _adaptive_gk(c: _Cluster, centre, scale, shift, epsabs, epsrel, limit, n_init):
    n_init = min(max(n_init, 1), limit)
    lo = -0.5 * math.pi
    width = math.pi / n_init
    alist, blist, rlist, elist = [], [], [], []
    for i in range(n_init):
        a = lo + i * width
        b = lo + (i + 1) * width if i + 1 < n_init else 0.5 * math.pi
        r, e = _qk15(c, a, b, centre, scale, shift)
        alist.append(a)
        blist.append(b)
        rlist.append(r)
        elist.append(e)
    while True:
        area = 0.0
        errsum = 0.0
        imax = 0
        emax = -1.0
        for i in range(len(rlist)):
            area += rlist[i]
            errsum += elist[i]
            if elist[i] > emax:
                emax = elist[i]
                imax = i
        tol = max(epsrel * abs(area), epsabs)
        if errsum <= tol:
            status = 0
            break
        if len(rlist) >= limit:
            status = 1
            break
        mid = 0.5 * (alist[imax] + blist[imax])
        r1, e1 = _qk15(c, alist[imax], mid, centre, scale, shift)
        r2, e2 = _qk15(c, mid, blist[imax], centre, scale, shift)
        alist.append(mid)
        blist.append(blist[imax])
        rlist.append(r2)
        elist.append(e2)
        blist[imax] = mid
        rlist[imax] = r1
        elist[imax] = e1
    return status, area, errsum


def _prepare(t, lh, lt):
    return np.log(t) + lt, np.exp(lh - lt)


def log_marginals(t, d, lh, lt, offsets, bfam, theta, structure, refam, re_params,
                  epsabs=1e-9, epsrel=1e-7, scaled=True, limit=200, n_init=6):
    """Per-cluster log marginal likelihoods; see ``_core.log_marginals``."""
    m = _Model(bfam, theta, structure, refam, re_params)
    s0, ew = _prepare(t, lh, lt)
    r = len(offsets) - 1
    logm = np.empty(r)
    logk = np.empty(r)
    mode = np.zeros(r)
    scale = np.zeros(r)
    status = np.zeros(r, dtype=np.int32)
    nev = np.zeros(r, dtype=np.int64)
    half = 10.0 * m.sd
    xatol = 1e-5 * m.sd
    for i in range(r):
        sl = slice(offsets[i], offsets[i + 1])
        c = _Cluster(m, s0[sl], ew[sl], d[sl], lh[sl])
        if structure == 0:
            logm[i] = logk[i] = c.A - c.B
            nev[i] = 1
            continue
        if scaled:
            _, fk = _find_max(c, False, 0.0, half, xatol)
        else:
            fk = 0.0
        xc, fc = _find_max(c, True, m.rshift, half, xatol)
        sc = _local_scale(c, xc, fc, m.sd)
        peak = math.exp(fc - fk) * sc * WIDEN
        st, res, _ = _adaptive_gk(c, xc, sc * WIDEN, fk, epsabs * peak, epsrel, limit, n_init)
        if c.nan_seen:
            st = 2
        logk[i] = fk
        logm[i] = fk + math.log(res) if res > 0 else -math.inf
        mode[i] = xc
        scale[i] = sc
        status[i] = st
        nev[i] = c.nevals
    return logm, logk, mode, scale, status, nev


def loglik_grid(t, d, lh, lt, offsets, bfam, theta, structure, u):
    """Conditional cluster log-likelihoods l_i(u_k) as an (r, k) array."""
    m = _Model(bfam, theta, structure, 0, (1.0, 1.0, 1.0))
    s0, ew = _prepare(t, lh, lt)
    r = len(offsets) - 1
    out = np.empty((r, len(u)))
    for i in range(r):
        sl = slice(offsets[i], offsets[i + 1])
        c = _Cluster(m, s0[sl], ew[sl], d[sl], lh[sl])
        for q, uq in enumerate(u):
            out[i, q] = c.loglik(float(uq))
    return out
