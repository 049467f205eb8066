# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: exact and hit-and-run simplex sampling, batched policy
draws with the truncation test, and the MGR running-product accumulation.

Every function here has a line-for-line twin in ``_fallback.py``.  Both draw
uniforms through ``next_double`` of the generator's bit generator in the same
order, so a given generator state yields the same draws from either backend.
"""
import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log, log1p, expm1, sqrt, cos, sin, fabs, pow, isfinite
from numpy.random cimport bitgen_t

cnp.import_array()

cdef enum:
    MAXK = 16

cdef double GROUP_TOL = 1e-9
cdef double COND_LIMIT = 1e6
cdef double TWO_PI = 6.283185307179586

MAX_K = MAXK


cdef struct Table:
    int m
    int ng
    double raw[MAXK]
    double cost[MAXK]
    int mult[MAXK]
    double b[MAXK][MAXK]


class KernelError(RuntimeError):
    pass


cdef bitgen_t *_bitgen(object gen) except NULL:
    capsule = gen.bit_generator.capsule
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t *rng):
    return rng.next_double(rng.state)


cdef void _build_table(const double *c, int m, Table *t):
    """Group equal costs and compute partial-fraction coefficients b[g][j]
    of prod_g (s + c_g)^(-d_g) by Taylor expansion at each pole."""
    cdef double s[MAXK]
    cdef double coef[MAXK]
    cdef double ser[MAXK]
    cdef int i, j, k, l, g, h, dg, dh
    cdef double tmp, total, delta, pref, acc
    t.m = m
    for i in range(m):
        t.raw[i] = c[i]
        s[i] = c[i]
    # insertion sort, descending
    for i in range(1, m):
        tmp = s[i]
        j = i - 1
        while j >= 0 and s[j] < tmp:
            s[j + 1] = s[j]
            j -= 1
        s[j + 1] = tmp
    t.ng = 0
    i = 0
    while i < m:
        j = i
        total = s[i]
        while j + 1 < m and s[i] - s[j + 1] <= GROUP_TOL:
            j += 1
            total += s[j]
        t.cost[t.ng] = total / (j - i + 1)
        t.mult[t.ng] = j - i + 1
        t.ng += 1
        i = j + 1
    for g in range(t.ng):
        dg = t.mult[g]
        coef[0] = 1.0
        for k in range(1, dg):
            coef[k] = 0.0
        pref = 1.0
        for h in range(t.ng):
            if h == g:
                continue
            delta = t.cost[h] - t.cost[g]
            dh = t.mult[h]
            pref *= pow(delta, -dh)
            ser[0] = 1.0
            for k in range(1, dg):
                ser[k] = ser[k - 1] * (-(dh + k - 1.0) / k) / delta
            for k in range(dg - 1, -1, -1):
                acc = 0.0
                for l in range(k + 1):
                    acc += coef[l] * ser[k - l]
                coef[k] = acc
        for j in range(dg):
            t.b[g][j] = pref * coef[dg - 1 - j]


cdef double _table_eval(Table *t, double z, double *absum):
    cdef int g, j
    cdef double total = 0.0, ab = 0.0, e, inner, ainner, p, term
    for g in range(t.ng):
        e = exp(-t.cost[g] * z)
        inner = 0.0
        ainner = 0.0
        p = 1.0
        for j in range(t.mult[g]):
            term = t.b[g][j] * p
            inner += term
            ainner += fabs(term)
            p *= z / (j + 1.0)
        total += e * inner
        ab += e * ainner
    absum[0] = ab
    return total


cdef double _stable_conv(const double *c, int m, double z):
    """Convolution of exponentials at z as the (0, m-1) entry of exp(z*J),
    J upper bidiagonal with diagonal -c and unit superdiagonal."""
    cdef double A[MAXK][MAXK]
    cdef double E[MAXK][MAXK]
    cdef double P[MAXK][MAXK]
    cdef double W[MAXK][MAXK]
    cdef int i, j, k, it, s = 0
    cdef double cmin, norm, scale, acc, pmax, emax
    if m == 1:
        return exp(-c[0] * z)
    cmin = c[0]
    for i in range(1, m):
        if c[i] < cmin:
            cmin = c[i]
    norm = 0.0
    for i in range(m):
        for j in range(m):
            A[i][j] = 0.0
        A[i][i] = -z * (c[i] - cmin)
        if i + 1 < m:
            A[i][i + 1] = z
        acc = fabs(A[i][i]) + (z if i + 1 < m else 0.0)
        if acc > norm:
            norm = acc
    while norm > 0.5:
        norm *= 0.5
        s += 1
    scale = pow(2.0, -s)
    for i in range(m):
        for j in range(i, m):
            A[i][j] *= scale
    for i in range(m):
        for j in range(m):
            E[i][j] = 1.0 if i == j else 0.0
            P[i][j] = E[i][j]
    for it in range(1, 30):
        pmax = 0.0
        emax = 0.0
        for i in range(m):
            for j in range(i, m):
                acc = 0.0
                for k in range(i, j + 1):
                    acc += P[i][k] * A[k][j]
                W[i][j] = acc / it
        for i in range(m):
            for j in range(i, m):
                P[i][j] = W[i][j]
                E[i][j] += W[i][j]
                if fabs(W[i][j]) > pmax:
                    pmax = fabs(W[i][j])
                if fabs(E[i][j]) > emax:
                    emax = fabs(E[i][j])
        if pmax <= 1e-18 * emax:
            break
    for it in range(s):
        for i in range(m):
            for j in range(i, m):
                acc = 0.0
                for k in range(i, j + 1):
                    acc += E[i][k] * E[k][j]
                W[i][j] = acc
        for i in range(m):
            for j in range(i, m):
                E[i][j] = W[i][j]
    return exp(-z * cmin) * E[0][m - 1]


cdef double _conv(Table *t, double z, int *n_stable):
    cdef double v, ab
    if z <= 0.0:
        return 1.0 if t.m == 1 else 0.0
    v = _table_eval(t, z, &ab)
    if not (v > 0.0) or ab > COND_LIMIT * v:
        n_stable[0] += 1
        return _stable_conv(t.raw, t.m, z)
    return v


cdef int _sample_exact(const double *c_in, int K, double floor, double tol,
                       bitgen_t *rng, double *q_out, int *n_stable) except -1:
    cdef int idx[MAXK]
    cdef double cs[MAXK]
    cdef double u[MAXK]
    cdef Table tabs[MAXK]
    cdef int i, a, r = 0, n, it, m
    cdef double scale = 1.0 - K * floor
    cdef double B, U, lo, hi, x, xn, e, zb, S, F, f, rate, v
    cdef bint done
    for i in range(1, K):
        if c_in[i] < c_in[r]:
            r = i
    n = 0
    for i in range(K):
        if i != r:
            idx[n] = i
            n += 1
    idx[K - 1] = r
    for i in range(K):
        cs[i] = scale * (c_in[idx[i]] - c_in[r])
    for a in range(K - 2):
        _build_table(cs + a, K - a, &tabs[a])
    if K >= 3:
        _build_table(cs + K - 2, 2, &tabs[K - 2])
    B = 1.0
    for a in range(K - 2):
        U = _uniform(rng)
        m = K - a
        zb = _conv(&tabs[a], B, n_stable)
        if not (zb > 0.0) or not isfinite(zb):
            raise KernelError("non-finite subsimplex normalizer in exact sampler")
        lo = 0.0
        hi = B
        x = B * (1.0 - pow(1.0 - U, 1.0 / (m - 1)))
        done = False
        for it in range(200):
            e = exp(-cs[a] * x)
            S = e * _conv(&tabs[a], B - x, n_stable) / zb
            f = e * _conv(&tabs[a + 1], B - x, n_stable) / zb
            if not isfinite(S) or not isfinite(f):
                raise KernelError("non-finite conditional density in exact sampler")
            F = 1.0 - S
            # log-concave marginal: Newton on log S from the right of the root
            # and on log F from the left never crosses the root
            if F > U:
                hi = x
                if S > 0.0 and f > 0.0:
                    xn = x + (log(S) - log1p(-U)) * S / f
                else:
                    xn = -1.0
            else:
                lo = x
                if F > 0.0 and f > 0.0:
                    xn = x - (log(F) - log(U)) * F / f
                else:
                    xn = -1.0
            if not (xn >= lo and xn <= hi):
                xn = 0.5 * (lo + hi)
            if fabs(xn - x) <= tol or hi - lo <= tol:
                x = xn
                done = True
                break
            x = xn
        if not done:
            raise KernelError("inverse-CDF iteration did not converge")
        u[a] = x
        B -= x
        if B < 0.0:
            B = 0.0
    U = _uniform(rng)
    rate = cs[K - 2] - cs[K - 1]
    if rate * B > 1e-14:
        v = -log1p(U * expm1(-rate * B)) / rate
    else:
        v = U * B
    if v > B:
        v = B
    u[K - 2] = v
    u[K - 1] = B - v
    for i in range(K):
        q_out[idx[i]] = floor + scale * u[i]
    return 0


cdef double _normal_pair(bitgen_t *rng, double *second):
    cdef double u1 = 1.0 - _uniform(rng)
    cdef double u2 = _uniform(rng)
    cdef double rad = sqrt(-2.0 * log(u1))
    second[0] = rad * sin(TWO_PI * u2)
    return rad * cos(TWO_PI * u2)


cdef void _hit_and_run(const double *c, int K, double floor, int n_steps,
                       bitgen_t *rng, double *q):
    cdef double v[MAXK]
    cdef int i, step
    cdef double mean, spare, lo, hi, bound, rate, length, U, s, total
    for i in range(K):
        q[i] = 1.0 / K
    for step in range(n_steps):
        i = 0
        while i < K:
            v[i] = _normal_pair(rng, &spare)
            if i + 1 < K:
                v[i + 1] = spare
            i += 2
        mean = 0.0
        for i in range(K):
            mean += v[i]
        mean /= K
        for i in range(K):
            v[i] -= mean
        lo = -1e300
        hi = 1e300
        rate = 0.0
        for i in range(K):
            rate += c[i] * v[i]
            if v[i] > 0.0:
                bound = (floor - q[i]) / v[i]
                if bound > lo:
                    lo = bound
            elif v[i] < 0.0:
                bound = (floor - q[i]) / v[i]
                if bound < hi:
                    hi = bound
        if lo > 0.0:
            lo = 0.0
        if hi < 0.0:
            hi = 0.0
        length = hi - lo
        U = _uniform(rng)
        if fabs(rate) * length < 1e-14:
            s = U * length
        elif rate > 0.0:
            s = -log1p(U * expm1(-rate * length)) / rate
        else:
            s = length - log1p(U * expm1(rate * length)) / rate
        if s < 0.0:
            s = 0.0
        if s > length:
            s = length
        total = 0.0
        for i in range(K):
            q[i] += (lo + s) * v[i]
            if q[i] < floor:
                q[i] = floor
            total += q[i]
        for i in range(K):
            q[i] /= total


def conv_eval(costs, double zeta):
    """Convolution of exponentials with the given rates at ``zeta``.

    Returns ``(value, n_stable)`` where ``n_stable`` counts evaluations that
    were routed to the matrix-exponential path by the conditioning guard.
    """
    cdef double[::1] c = np.ascontiguousarray(costs, dtype=np.float64)
    cdef Table t
    cdef int n_stable = 0
    if c.shape[0] < 1 or c.shape[0] > MAXK:
        raise ValueError(f"need 1 <= len(costs) <= {MAXK}")
    _build_table(&c[0], c.shape[0], &t)
    value = _conv(&t, zeta, &n_stable)
    return value, n_stable


def stable_conv(costs, double zeta):
    cdef double[::1] c = np.ascontiguousarray(costs, dtype=np.float64)
    if c.shape[0] < 1 or c.shape[0] > MAXK:
        raise ValueError(f"need 1 <= len(costs) <= {MAXK}")
    return _stable_conv(&c[0], c.shape[0], zeta)


def sample_rows(costs, double floor, gen, double tol=1e-10):
    """One exact draw per row of the cost matrix."""
    cdef double[:, ::1] C = np.ascontiguousarray(np.atleast_2d(costs), dtype=np.float64)
    cdef Py_ssize_t n = C.shape[0], i
    cdef int K = C.shape[1]
    cdef int n_stable = 0
    if K < 2 or K > MAXK:
        raise ValueError(f"exact sampler needs 2 <= K <= {MAXK}")
    out = np.empty((n, K), dtype=np.float64)
    cdef double[:, ::1] Q = out
    cdef bitgen_t *rng = _bitgen(gen)
    with gen.bit_generator.lock:
        for i in range(n):
            _sample_exact(&C[i, 0], K, floor, tol, rng, &Q[i, 0], &n_stable)
    return out, n_stable


def hit_and_run_rows(costs, double floor, int n_steps, gen):
    """One hit-and-run draw per row, each chain started at the centroid."""
    cdef double[:, ::1] C = np.ascontiguousarray(np.atleast_2d(costs), dtype=np.float64)
    cdef Py_ssize_t n = C.shape[0], i
    cdef int K = C.shape[1]
    if K < 2 or K > MAXK:
        raise ValueError(f"hit-and-run kernel needs 2 <= K <= {MAXK}")
    out = np.empty((n, K), dtype=np.float64)
    cdef double[:, ::1] Q = out
    cdef bitgen_t *rng = _bitgen(gen)
    with gen.bit_generator.lock:
        for i in range(n):
            _hit_and_run(&C[i, 0], K, floor, n_steps, rng, &Q[i, 0])
    return out


def draw_policies(X, theta_eta, double floor, sigma_inv, double threshold,
                  int max_rejects, gen, int method=0, int hr_steps=2500,
                  double tol=1e-10):
    """Draw one policy per context row, optionally under the truncation test.

    Costs are ``theta_eta @ x``.  With ``sigma_inv`` given (shape (K, d, d)),
    the statistic sum_a q_a^2 x^T sigma_inv[a] x is computed for each draw and
    proposals above ``threshold`` are rejected; after ``max_rejects``
    rejections the last proposal is kept and flagged as forced.
    """
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Th = np.ascontiguousarray(theta_eta, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], i
    cdef int d = Xv.shape[1], K = Th.shape[0], a, j, k, rej
    cdef int n_stable = 0
    cdef bint trunc = sigma_inv is not None
    cdef double[:, :, ::1] Si
    cdef double c[MAXK]
    cdef double w[MAXK]
    cdef double st, acc
    if K < 2 or K > MAXK:
        raise ValueError(f"policy kernel needs 2 <= K <= {MAXK}")
    if Th.shape[1] != d:
        raise ValueError("theta_eta and X dimension mismatch")
    if trunc:
        Si = np.ascontiguousarray(sigma_inv, dtype=np.float64)
        if Si.shape[0] != K or Si.shape[1] != d or Si.shape[2] != d:
            raise ValueError("sigma_inv must have shape (K, d, d)")
    Q_arr = np.empty((n, K), dtype=np.float64)
    st_arr = np.zeros(n, dtype=np.float64)
    rej_arr = np.zeros(n, dtype=np.int64)
    forced_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] Q = Q_arr
    cdef double[::1] stats = st_arr
    cdef long long[::1] rejs = rej_arr
    cdef unsigned char[::1] forced = forced_arr
    cdef bitgen_t *rng = _bitgen(gen)
    with gen.bit_generator.lock:
        for i in range(n):
            for a in range(K):
                acc = 0.0
                for j in range(d):
                    acc += Th[a, j] * Xv[i, j]
                c[a] = acc
                if trunc:
                    acc = 0.0
                    for j in range(d):
                        for k in range(d):
                            acc += Xv[i, j] * Si[a, j, k] * Xv[i, k]
                    w[a] = acc
            rej = 0
            while True:
                if method == 0:
                    _sample_exact(c, K, floor, tol, rng, &Q[i, 0], &n_stable)
                else:
                    _hit_and_run(c, K, floor, hr_steps, rng, &Q[i, 0])
                if not trunc:
                    break
                st = 0.0
                for a in range(K):
                    st += Q[i, a] * Q[i, a] * w[a]
                stats[i] = st
                if st <= threshold:
                    break
                rej += 1
                if rej >= max_rejects:
                    forced[i] = 1
                    break
            rejs[i] = rej
    return Q_arr, st_arr, rej_arr, forced_arr, n_stable


def mgr_accumulate(X, Q, double c, long long N, long long start, Zs, acc, total):
    """Advance the MGR running products over a chunk of (x, q) pairs.

    Pair number ``start + i`` sits at depth ``(start + i) % N`` of its repeat.
    ``Zs`` and ``acc`` carry the in-progress repeat across chunks; a finished
    repeat's c*I + c*sum_n Z_n is added into ``total``.  Returns the number of
    repeats completed in this chunk and the largest c*q_a^2*|x|^2 seen.
    """
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, :, ::1] Z = Zs
    cdef double[:, :, ::1] A = acc
    cdef double[:, :, ::1] Tt = total
    cdef Py_ssize_t n = Xv.shape[0], i
    cdef int d = Xv.shape[1], K = Qv.shape[1], a, r, k
    cdef long long pos, completed = 0
    cdef double s, xx, contraction = 0.0, vr
    cdef double v[64]
    if d > 64:
        raise ValueError("mgr kernel supports d <= 64")
    for i in range(n):
        pos = (start + i) % N
        if pos == 0:
            for a in range(K):
                for r in range(d):
                    for k in range(d):
                        Z[a, r, k] = 1.0 if r == k else 0.0
                        A[a, r, k] = c if r == k else 0.0
        xx = 0.0
        for k in range(d):
            xx += Xv[i, k] * Xv[i, k]
        for a in range(K):
            s = c * Qv[i, a] * Qv[i, a]
            if s * xx > contraction:
                contraction = s * xx
            for r in range(d):
                vr = 0.0
                for k in range(d):
                    vr += Z[a, r, k] * Xv[i, k]
                v[r] = vr
            for r in range(d):
                for k in range(d):
                    Z[a, r, k] -= s * v[r] * Xv[i, k]
                    A[a, r, k] += c * Z[a, r, k]
        if pos == N - 1:
            for a in range(K):
                for r in range(d):
                    for k in range(d):
                        Tt[a, r, k] += A[a, r, k]
            completed += 1
    return completed, contraction
