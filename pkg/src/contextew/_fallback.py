"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

The arithmetic follows the compiled code operation by operation, and uniforms
come from ``Generator.random()``, which reads the same ``next_double`` stream,
so both backends produce the same draws for the same generator state.
"""
import math

import numpy as np

MAX_K = 16
GROUP_TOL = 1e-9
COND_LIMIT = 1e6
TWO_PI = 6.283185307179586


class KernelError(RuntimeError):
    pass


class _Table:
    __slots__ = ("m", "raw", "cost", "mult", "b")

    def __init__(self, c):
        self.m = len(c)
        self.raw = list(c)
        s = sorted(c, reverse=True)
        self.cost, self.mult = [], []
        i, m = 0, len(s)
        while i < m:
            j = i
            total = s[i]
            while j + 1 < m and s[i] - s[j + 1] <= GROUP_TOL:
                j += 1
                total += s[j]
            self.cost.append(total / (j - i + 1))
            self.mult.append(j - i + 1)
            i = j + 1
        self.b = []
        for g, dg in enumerate(self.mult):
            coef = [1.0] + [0.0] * (dg - 1)
            pref = 1.0
            for h, dh in enumerate(self.mult):
                if h == g:
                    continue
                delta = self.cost[h] - self.cost[g]
                pref *= math.pow(delta, -dh)
                ser = [1.0] * dg
                for k in range(1, dg):
                    ser[k] = ser[k - 1] * (-(dh + k - 1.0) / k) / delta
                for k in range(dg - 1, -1, -1):
                    acc = 0.0
                    for l in range(k + 1):
                        acc += coef[l] * ser[k - l]
                    coef[k] = acc
            self.b.append([pref * coef[dg - 1 - j] for j in range(dg)])

    def evaluate(self, z):
        total = 0.0
        ab = 0.0
        for cost, bs in zip(self.cost, self.b):
            e = math.exp(-cost * z)
            inner = 0.0
            ainner = 0.0
            p = 1.0
            for j, bj in enumerate(bs):
                term = bj * p
                inner += term
                ainner += abs(term)
                p *= z / (j + 1.0)
            total += e * inner
            ab += e * ainner
        return total, ab


def _stable_conv(c, z):
    m = len(c)
    if m == 1:
        return math.exp(-c[0] * z)
    cmin = min(c)
    A = [[0.0] * m for _ in range(m)]
    norm = 0.0
    for i in range(m):
        A[i][i] = -z * (c[i] - cmin)
        if i + 1 < m:
            A[i][i + 1] = z
        acc = abs(A[i][i]) + (z if i + 1 < m else 0.0)
        if acc > norm:
            norm = acc
    s = 0
    while norm > 0.5:
        norm *= 0.5
        s += 1
    scale = math.pow(2.0, -s)
    for i in range(m):
        for j in range(i, m):
            A[i][j] *= scale
    E = [[1.0 if i == j else 0.0 for j in range(m)] for i in range(m)]
    P = [row[:] for row in E]
    for it in range(1, 30):
        W = [[0.0] * m for _ in range(m)]
        for i in range(m):
            for j in range(i, m):
                acc = 0.0
                for k in range(i, j + 1):
                    acc += P[i][k] * A[k][j]
                W[i][j] = acc / it
        pmax = 0.0
        emax = 0.0
        for i in range(m):
            for j in range(i, m):
                P[i][j] = W[i][j]
                E[i][j] += W[i][j]
                pmax = max(pmax, abs(W[i][j]))
                emax = max(emax, abs(E[i][j]))
        if pmax <= 1e-18 * emax:
            break
    for _ in range(s):
        W = [[0.0] * m for _ in range(m)]
        for i in range(m):
            for j in range(i, m):
                acc = 0.0
                for k in range(i, j + 1):
                    acc += E[i][k] * E[k][j]
                W[i][j] = acc
        E = W
    return math.exp(-z * cmin) * E[0][m - 1]


def _conv(table, z, counter):
    if z <= 0.0:
        return 1.0 if table.m == 1 else 0.0
    v, ab = table.evaluate(z)
    if not (v > 0.0) or ab > COND_LIMIT * v:
        counter[0] += 1
        return _stable_conv(table.raw, z)
    return v


def _sample_exact(c_in, K, floor, tol, gen, counter):
    r = 0
    for i in range(1, K):
        if c_in[i] < c_in[r]:
            r = i
    idx = [i for i in range(K) if i != r] + [r]
    scale = 1.0 - K * floor
    cs = [scale * (c_in[idx[i]] - c_in[r]) for i in range(K)]
    tabs = [_Table(cs[a:]) for a in range(K - 1)]
    u = [0.0] * K
    B = 1.0
    for a in range(K - 2):
        U = gen.random()
        m = K - a
        zb = _conv(tabs[a], B, counter)
        if not (zb > 0.0) or not math.isfinite(zb):
            raise KernelError("non-finite subsimplex normalizer in exact sampler")
        lo, hi = 0.0, B
        x = B * (1.0 - math.pow(1.0 - U, 1.0 / (m - 1)))
        for _ in range(200):
            e = math.exp(-cs[a] * x)
            S = e * _conv(tabs[a], B - x, counter) / zb
            f = e * _conv(tabs[a + 1], B - x, counter) / zb
            if not math.isfinite(S) or not math.isfinite(f):
                raise KernelError("non-finite conditional density in exact sampler")
            F = 1.0 - S
            # log-concave marginal: Newton on log S from the right of the root
            # and on log F from the left never crosses the root
            if F > U:
                hi = x
                xn = x + (math.log(S) - math.log1p(-U)) * S / f if (S > 0.0 and f > 0.0) else -1.0
            else:
                lo = x
                xn = x - (math.log(F) - math.log(U)) * F / f if (F > 0.0 and f > 0.0) else -1.0
            if not (lo <= xn <= hi):
                xn = 0.5 * (lo + hi)
            if abs(xn - x) <= tol or hi - lo <= tol:
                x = xn
                break
            x = xn
        else:
            raise KernelError("inverse-CDF iteration did not converge")
        u[a] = x
        B = max(B - x, 0.0)
    U = gen.random()
    rate = cs[K - 2] - cs[K - 1]
    if rate * B > 1e-14:
        v = -math.log1p(U * math.expm1(-rate * B)) / rate
    else:
        v = U * B
    v = min(v, B)
    u[K - 2] = v
    u[K - 1] = B - v
    q = [0.0] * K
    for i in range(K):
        q[idx[i]] = floor + scale * u[i]
    return q


def _normal_pair(gen):
    u1 = 1.0 - gen.random()
    u2 = gen.random()
    rad = math.sqrt(-2.0 * math.log(u1))
    return rad * math.cos(TWO_PI * u2), rad * math.sin(TWO_PI * u2)


def _hit_and_run(c, K, floor, n_steps, gen):
    q = [1.0 / K] * K
    v = [0.0] * K
    for _ in range(n_steps):
        i = 0
        while i < K:
            first, spare = _normal_pair(gen)
            v[i] = first
            if i + 1 < K:
                v[i + 1] = spare
            i += 2
        mean = 0.0
        for i in range(K):
            mean += v[i]
        mean /= K
        for i in range(K):
            v[i] -= mean
        lo, hi, rate = -1e300, 1e300, 0.0
        for i in range(K):
            rate += c[i] * v[i]
            if v[i] > 0.0:
                lo = max(lo, (floor - q[i]) / v[i])
            elif v[i] < 0.0:
                hi = min(hi, (floor - q[i]) / v[i])
        lo = min(lo, 0.0)
        hi = max(hi, 0.0)
        length = hi - lo
        U = gen.random()
        if abs(rate) * length < 1e-14:
            s = U * length
        elif rate > 0.0:
            s = -math.log1p(U * math.expm1(-rate * length)) / rate
        else:
            s = length - math.log1p(U * math.expm1(rate * length)) / rate
        s = min(max(s, 0.0), length)
        total = 0.0
        for i in range(K):
            q[i] += (lo + s) * v[i]
            if q[i] < floor:
                q[i] = floor
            total += q[i]
        for i in range(K):
            q[i] /= total
    return q


def conv_eval(costs, zeta):
    c = [float(v) for v in np.ravel(costs)]
    if not 1 <= len(c) <= MAX_K:
        raise ValueError(f"need 1 <= len(costs) <= {MAX_K}")
    counter = [0]
    value = _conv(_Table(c), float(zeta), counter)
    return value, counter[0]


def stable_conv(costs, zeta):
    c = [float(v) for v in np.ravel(costs)]
    if not 1 <= len(c) <= MAX_K:
        raise ValueError(f"need 1 <= len(costs) <= {MAX_K}")
    return _stable_conv(c, float(zeta))


def sample_rows(costs, floor, gen, tol=1e-10):
    C = np.atleast_2d(np.asarray(costs, dtype=np.float64))
    n, K = C.shape
    if not 2 <= K <= MAX_K:
        raise ValueError(f"exact sampler needs 2 <= K <= {MAX_K}")
    out = np.empty((n, K))
    counter = [0]
    for i in range(n):
        out[i] = _sample_exact(C[i].tolist(), K, floor, tol, gen, counter)
    return out, counter[0]


def hit_and_run_rows(costs, floor, n_steps, gen):
    C = np.atleast_2d(np.asarray(costs, dtype=np.float64))
    n, K = C.shape
    if not 2 <= K <= MAX_K:
        raise ValueError(f"hit-and-run kernel needs 2 <= K <= {MAX_K}")
    out = np.empty((n, K))
    for i in range(n):
        out[i] = _hit_and_run(C[i].tolist(), K, floor, n_steps, gen)
    return out


def draw_policies(X, theta_eta, floor, sigma_inv, threshold, max_rejects, gen,
                  method=0, hr_steps=2500, tol=1e-10):
    X = np.asarray(X, dtype=np.float64)
    Th = np.asarray(theta_eta, dtype=np.float64)
    n, d = X.shape
    K = Th.shape[0]
    if not 2 <= K <= MAX_K:
        raise ValueError(f"policy kernel needs 2 <= K <= {MAX_K}")
    if Th.shape[1] != d:
        raise ValueError("theta_eta and X dimension mismatch")
    trunc = sigma_inv is not None
    if trunc:
        Si = np.asarray(sigma_inv, dtype=np.float64)
        if Si.shape != (K, d, d):
            raise ValueError("sigma_inv must have shape (K, d, d)")
    Q = np.empty((n, K))
    stats = np.zeros(n)
    rejs = np.zeros(n, dtype=np.int64)
    forced = np.zeros(n, dtype=np.uint8)
    counter = [0]
    for i in range(n):
        x = X[i].tolist()
        c = []
        w = []
        for a in range(K):
            acc = 0.0
            for j in range(d):
                acc += Th[a, j] * x[j]
            c.append(acc)
            if trunc:
                acc = 0.0
                for j in range(d):
                    for k in range(d):
                        acc += x[j] * Si[a, j, k] * x[k]
                w.append(acc)
        rej = 0
        while True:
            if method == 0:
                q = _sample_exact(c, K, floor, tol, gen, counter)
            else:
                q = _hit_and_run(c, K, floor, hr_steps, gen)
            Q[i] = q
            if not trunc:
                break
            st = 0.0
            for a in range(K):
                st += q[a] * q[a] * w[a]
            stats[i] = st
            if st <= threshold:
                break
            rej += 1
            if rej >= max_rejects:
                forced[i] = 1
                break
        rejs[i] = rej
    return Q, stats, rejs, forced, counter[0]


def mgr_accumulate(X, Q, c, N, start, Zs, acc, total):
    X = np.asarray(X, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    n, d = X.shape
    K = Q.shape[1]
    eye = np.eye(d)
    completed = 0
    contraction = 0.0
    for i in range(n):
        pos = (start + i) % N
        if pos == 0:
            Zs[:] = eye
            acc[:] = c * eye
        x = X[i]
        xx = float(x @ x)
        for a in range(K):
            s = c * Q[i, a] * Q[i, a]
            contraction = max(contraction, s * xx)
            v = Zs[a] @ x
            Zs[a] -= s * np.outer(v, x)
            acc[a] += c * Zs[a]
        if pos == N - 1:
            total += acc
            completed += 1
    return completed, contraction
