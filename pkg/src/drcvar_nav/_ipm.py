"""Compiled kernel of the primal-dual interior-point method.

Single-program, dense, allocation-light loops compiled with numba.  The cone
is an orthant of size ``l`` followed by second-order cones whose first index
and size are given by ``starts`` and ``sizes``.
"""

import numpy as np
from numba import njit

ST_OPTIMAL = 0
ST_INACCURATE = 1
ST_INFEASIBLE = 2
ST_UNBOUNDED = 3
ST_MAX_ITER = 4
ST_NUMERICAL = 5

STEP_FRACTION = 0.99
INFEASIBILITY_TOL = 1e-9
INACCURATE_FACTOR = 1e3
# stop once the best merit has not halved for this many iterations and is
# already within the inaccurate band
STALL_ITERS = 5
# extra refinement sweeps for the indefinite (equality-constrained) system
LU_REFINE = 5
# reassociation lets the dense inner products vectorise; no NaN/inf assumptions
_REASSOC = {"reassoc", "contract"}


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _mv(M, v):
    out = np.zeros(M.shape[0])
    for i in range(M.shape[0]):
        acc = 0.0
        for j in range(M.shape[1]):
            acc += M[i, j] * v[j]
        out[i] = acc
    return out


@njit(cache=True, error_model="numpy")
def _mtv(M, v):
    out = np.zeros(M.shape[1])
    for i in range(M.shape[0]):
        vi = v[i]
        if vi != 0.0:
            for j in range(M.shape[1]):
                out[j] += M[i, j] * vi
    return out


@njit(cache=True, error_model="numpy")
def _csr(M):
    """Row pointers and column indices of the nonzeros of M."""
    m, n = M.shape
    indptr = np.zeros(m + 1, dtype=np.int64)
    for i in range(m):
        c = 0
        for j in range(n):
            if M[i, j] != 0.0:
                c += 1
        indptr[i + 1] = indptr[i] + c
    indices = np.empty(indptr[m], dtype=np.int64)
    for i in range(m):
        k = indptr[i]
        for j in range(n):
            if M[i, j] != 0.0:
                indices[k] = j
                k += 1
    return indptr, indices


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _mv_csr(M, indptr, indices, v):
    out = np.zeros(M.shape[0])
    for i in range(M.shape[0]):
        acc = 0.0
        for a in range(indptr[i], indptr[i + 1]):
            acc += M[i, indices[a]] * v[indices[a]]
        out[i] = acc
    return out


@njit(cache=True, error_model="numpy")
def _mtv_csr(M, indptr, indices, v):
    out = np.zeros(M.shape[1])
    for i in range(M.shape[0]):
        vi = v[i]
        if vi != 0.0:
            for a in range(indptr[i], indptr[i + 1]):
                out[indices[a]] += M[i, indices[a]] * vi
    return out


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _mv_rows(M, l, indptr, indices, v):
    """M v where the first ``l`` rows follow the CSR pattern and the rest are dense."""
    out = np.zeros(M.shape[0])
    for i in range(l):
        acc = 0.0
        for a in range(indptr[i], indptr[i + 1]):
            acc += M[i, indices[a]] * v[indices[a]]
        out[i] = acc
    for i in range(l, M.shape[0]):
        acc = 0.0
        for j in range(M.shape[1]):
            acc += M[i, j] * v[j]
        out[i] = acc
    return out


@njit(cache=True, error_model="numpy")
def _mtv_rows(M, l, indptr, indices, v):
    out = np.zeros(M.shape[1])
    for i in range(l):
        vi = v[i]
        if vi != 0.0:
            for a in range(indptr[i], indptr[i + 1]):
                out[indices[a]] += M[i, indices[a]] * vi
    for i in range(l, M.shape[0]):
        vi = v[i]
        if vi != 0.0:
            for j in range(M.shape[1]):
                out[j] += M[i, j] * vi
    return out


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _scaled_gram(Gt, l, indptr, indices):
    """Gt'Gt using the sparsity of the orthant rows (their pattern is that of G)."""
    m, n = Gt.shape
    H = np.zeros((n, n))
    for i in range(l):
        for a in range(indptr[i], indptr[i + 1]):
            ja = indices[a]
            va = Gt[i, ja]
            for b in range(a, indptr[i + 1]):
                jb = indices[b]
                H[ja, jb] += va * Gt[i, jb]
    for i in range(l, m):
        for ja in range(n):
            va = Gt[i, ja]
            if va != 0.0:
                for jb in range(ja, n):
                    H[ja, jb] += va * Gt[i, jb]
    for ja in range(n):
        for jb in range(ja + 1, n):
            H[jb, ja] = H[ja, jb]
    return H


@njit(cache=True, error_model="numpy")
def _min_eig(x, l, starts, sizes):
    r = np.inf
    for i in range(l):
        r = min(r, x[i])
    for c in range(starts.size):
        st, k = starts[c], sizes[c]
        acc = 0.0
        for j in range(st + 1, st + k):
            acc += x[j] * x[j]
        r = min(r, x[st] - np.sqrt(acc))
    return r


@njit(cache=True, error_model="numpy")
def _identity(m, l, starts):
    e = np.zeros(m)
    e[:l] = 1.0
    for c in range(starts.size):
        e[starts[c]] = 1.0
    return e


@njit(cache=True, error_model="numpy")
def _jprod(u, v, l, starts, sizes):
    out = np.empty_like(u)
    for i in range(l):
        out[i] = u[i] * v[i]
    for c in range(starts.size):
        st, k = starts[c], sizes[c]
        acc = 0.0
        for j in range(st, st + k):
            acc += u[j] * v[j]
        for j in range(st + 1, st + k):
            out[j] = u[st] * v[j] + v[st] * u[j]
        out[st] = acc
    return out


@njit(cache=True, error_model="numpy")
def _jdiv(lam, v, l, starts, sizes):
    """Solve lam o u = v for u."""
    out = np.empty_like(v)
    for i in range(l):
        out[i] = v[i] / lam[i]
    for c in range(starts.size):
        st, k = starts[c], sizes[c]
        l0 = lam[st]
        nn = 0.0
        lv = 0.0
        for j in range(st + 1, st + k):
            nn += lam[j] * lam[j]
            lv += lam[j] * v[j]
        u0 = (l0 * v[st] - lv) / (l0 * l0 - nn)
        out[st] = u0
        for j in range(st + 1, st + k):
            out[j] = (v[j] - u0 * lam[j]) / l0
    return out


@njit(cache=True, error_model="numpy")
def _max_step(x, dx, l, starts, sizes):
    """Largest alpha >= 0 keeping x + alpha*dx in the cone (x interior)."""
    out = np.inf
    for i in range(l):
        if dx[i] < 0:
            out = min(out, -x[i] / dx[i])
    for c in range(starts.size):
        st, k = starts[c], sizes[c]
        x0, d0 = x[st], dx[st]
        dd = 0.0
        xd = 0.0
        xx = 0.0
        for j in range(st + 1, st + k):
            dd += dx[j] * dx[j]
            xd += x[j] * dx[j]
            xx += x[j] * x[j]
        a = d0 * d0 - dd
        bb = x0 * d0 - xd
        cc = max(x0 * x0 - xx, 0.0)
        # first positive root of a*t^2 + 2*bb*t + cc
        alpha = np.inf
        if a == 0.0:
            if bb < 0:
                alpha = -cc / (2 * bb)
        else:
            disc = bb * bb - a * cc
            if disc >= 0:
                sq = np.sqrt(disc)
                qq = -(bb + sq) if bb >= 0 else -(bb - sq)
                r1 = qq / a
                if r1 > 0:
                    alpha = r1
                if qq != 0.0:
                    r2 = cc / qq
                    if r2 > 0 and r2 < alpha:
                        alpha = r2
        out = min(out, alpha)
    return out


@njit(cache=True, error_model="numpy")
def _nt_scaling(s, z, l, starts, sizes):
    """Nesterov-Todd scaling data: orthant ratios and per-cone (w0, w1), eta."""
    w = np.empty(s.size)
    eta = np.ones(starts.size)
    for i in range(l):
        w[i] = np.sqrt(s[i] / z[i])
    for c in range(starts.size):
        st, k = starts[c], sizes[c]
        ss = 0.0
        zz = 0.0
        for j in range(st + 1, st + k):
            ss += s[j] * s[j]
            zz += z[j] * z[j]
        sn = np.sqrt(max(s[st] * s[st] - ss, 1e-300))
        zn = np.sqrt(max(z[st] * z[st] - zz, 1e-300))
        dot = 0.0
        for j in range(st, st + k):
            dot += (s[j] / sn) * (z[j] / zn)
        two_gamma = 2.0 * np.sqrt(max((1.0 + dot) / 2.0, 1e-300))
        w[st] = (s[st] / sn + z[st] / zn) / two_gamma
        for j in range(st + 1, st + k):
            w[j] = (s[j] / sn - z[j] / zn) / two_gamma
        eta[c] = np.sqrt(sn / zn)
    return w, eta


@njit(cache=True, error_model="numpy")
def _scale(w, eta, v, inverse, l, starts, sizes):
    """W v (or W^{-1} v) for a vector."""
    out = np.empty_like(v)
    for i in range(l):
        out[i] = v[i] / w[i] if inverse else v[i] * w[i]
    sign = -1.0 if inverse else 1.0
    for c in range(starts.size):
        st, k = starts[c], sizes[c]
        e = 1.0 / eta[c] if inverse else eta[c]
        w0 = w[st]
        d = 0.0
        for j in range(st + 1, st + k):
            d += w[j] * v[j]
        out[st] = e * (w0 * v[st] + sign * d)
        coef = d / (1.0 + w0) + sign * v[st]
        for j in range(st + 1, st + k):
            out[j] = e * (v[j] + coef * w[j])
    return out


@njit(cache=True, error_model="numpy")
def _scale_rows(w, eta, M, inverse, l, starts, sizes):
    """W M (or W^{-1} M) for a matrix with one row per cone coordinate."""
    out = np.empty_like(M)
    ncol = M.shape[1]
    for i in range(l):
        f = 1.0 / w[i] if inverse else w[i]
        for col in range(ncol):
            out[i, col] = M[i, col] * f
    sign = -1.0 if inverse else 1.0
    for c in range(starts.size):
        st, k = starts[c], sizes[c]
        e = 1.0 / eta[c] if inverse else eta[c]
        w0 = w[st]
        for col in range(ncol):
            d = 0.0
            for j in range(st + 1, st + k):
                d += w[j] * M[j, col]
            out[st, col] = e * (w0 * M[st, col] + sign * d)
            coef = d / (1.0 + w0) + sign * M[st, col]
            for j in range(st + 1, st + k):
                out[j, col] = e * (M[j, col] + coef * w[j])
    return out


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _cholesky(H):
    n = H.shape[0]
    L = np.zeros_like(H)
    for j in range(n):
        acc = H[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if not acc > 0.0:
            return L, False
        L[j, j] = np.sqrt(acc)
        for i in range(j + 1, n):
            acc = H[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    return L, True


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _cho_solve(L, r):
    n = L.shape[0]
    y = r.copy()
    for i in range(n):
        acc = y[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= L[k, i] * y[k]
        y[i] = acc / L[i, i]
    return y


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _lu(K):
    n = K.shape[0]
    LU = K.copy()
    piv = np.arange(n)
    for j in range(n):
        p = j
        best = abs(LU[j, j])
        for i in range(j + 1, n):
            if abs(LU[i, j]) > best:
                best = abs(LU[i, j])
                p = i
        if best == 0.0 or not np.isfinite(best):
            return LU, piv, False
        if p != j:
            for col in range(n):
                tmp = LU[j, col]
                LU[j, col] = LU[p, col]
                LU[p, col] = tmp
            tmp_i = piv[j]
            piv[j] = piv[p]
            piv[p] = tmp_i
        for i in range(j + 1, n):
            f = LU[i, j] / LU[j, j]
            LU[i, j] = f
            for col in range(j + 1, n):
                LU[i, col] -= f * LU[j, col]
    return LU, piv, True


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _lu_solve(LU, piv, r):
    n = LU.shape[0]
    y = np.empty(n)
    for i in range(n):
        y[i] = r[piv[i]]
    for i in range(n):
        acc = y[i]
        for k in range(i):
            acc -= LU[i, k] * y[k]
        y[i] = acc
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= LU[i, k] * y[k]
        y[i] = acc / LU[i, i]
    return y


@njit(cache=True, error_model="numpy")
def _factor(P, A, Gt, l, indptr, indices):
    """Factor the reduced KKT matrix [P + Gt'Gt, A'; A, 0] (shifted)."""
    n = P.shape[0]
    p = A.shape[0]
    H = P + _scaled_gram(Gt, l, indptr, indices)
    if p == 0:
        dmax = 0.0
        for i in range(n):
            dmax = max(dmax, abs(H[i, i]))
        reg = 1e-13 * (1.0 + dmax)
        for i in range(n):
            H[i, i] += reg
        L, ok = _cholesky(H)
        return L, np.zeros(0, dtype=np.int64), ok, False
    # pivoting copes with the indefinite matrix; only a fixed tiny shift, since
    # one scaled by max diag(H) would distort the equalities and small pivots
    K = np.zeros((n + p, n + p))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    for i in range(n):
        K[i, i] += 1e-13
    for i in range(p):
        K[n + i, n + i] = -1e-13
    LU, piv, ok = _lu(K)
    return LU, piv, ok, True


@njit(cache=True, error_model="numpy")
def _kkt_solve(fac, piv, use_lu, P, A, G, Gt, w, eta, bx, by, bz, refine, l, starts, sizes, indptr, indices):
    """Solve [P A' G'; A 0 0; G 0 -W'W] [dx; dy; dz] = [bx; by; bz]."""
    n = P.shape[0]
    dx, dy, dz = _reduced(fac, piv, use_lu, Gt, w, eta, bx, by, bz, n, l, starts, sizes, indptr, indices)
    steps = refine + LU_REFINE if use_lu else refine
    for _ in range(steps):
        wwdz = _scale(w, eta, _scale(w, eta, dz, False, l, starts, sizes), False, l, starts, sizes)
        r1 = bx - (_mv(P, dx) + _mtv(A, dy) + _mtv_csr(G, indptr, indices, dz))
        r2 = by - _mv(A, dx)
        r3 = bz - (_mv_csr(G, indptr, indices, dx) - wwdz)
        cx, cy, cz = _reduced(fac, piv, use_lu, Gt, w, eta, r1, r2, r3, n, l, starts, sizes, indptr, indices)
        dx = dx + cx
        dy = dy + cy
        dz = dz + cz
    return dx, dy, dz


@njit(cache=True, error_model="numpy")
def _reduced(fac, piv, use_lu, Gt, w, eta, bx, by, bz, n, l, starts, sizes, indptr, indices):
    bzt = _scale(w, eta, bz, True, l, starts, sizes)
    rx = bx + _mtv_rows(Gt, l, indptr, indices, bzt)
    if use_lu:
        rhs = np.concatenate((rx, by))
        sol = _lu_solve(fac, piv, rhs)
        dx = sol[:n].copy()
        dy = sol[n:].copy()
    else:
        dx = _cho_solve(fac, rx)
        dy = np.zeros(0)
    dz = _scale(w, eta, _mv_rows(Gt, l, indptr, indices, dx) - bzt, True, l, starts, sizes)
    return dx, dy, dz


@njit(cache=True, error_model="numpy", fastmath=_REASSOC)
def _dot(u, v):
    acc = 0.0
    for i in range(u.size):
        acc += u[i] * v[i]
    return acc


@njit(cache=True, error_model="numpy")
def _norm(v):
    acc = 0.0
    for i in range(v.size):
        acc += v[i] * v[i]
    return np.sqrt(acc)


@njit(cache=True, error_model="numpy")
def solve_kernel(P, q, A, b, G, h, l, starts, sizes, tol, max_iter, refine):
    """Mehrotra predictor-corrector iterations for one program.

    Returns ``(status, iterations, x, y, z, s, pres, dres, gap)``.
    """
    n = q.size
    m = h.size
    p = b.size
    degree = max(l + starts.size, 1)
    e = _identity(m, l, starts)
    bnorm = max(1.0, np.sqrt(_norm(b) ** 2 + _norm(h) ** 2))
    qnorm = max(1.0, _norm(q))

    # initial point from the W = I system
    w = np.ones(m)
    eta = np.ones(starts.size)
    for c in range(starts.size):
        for j in range(starts[c] + 1, starts[c] + sizes[c]):
            w[j] = 0.0
    indptr, indices = _csr(G)
    fac, piv, ok, use_lu = _factor(P, A, G, l, indptr, indices)
    if not ok:
        nan = np.full(n, np.nan)
        return ST_NUMERICAL, 0, nan, np.full(p, np.nan), np.full(m, np.nan), np.full(m, np.nan), np.nan, np.nan, np.nan
    x, y, zz = _kkt_solve(fac, piv, use_lu, P, A, G, G, w, eta, -q, b, h, refine, l, starts, sizes,
                          indptr, indices)
    s = -zz
    z = zz.copy()
    for vec in (s, z):
        ts = -_min_eig(vec, l, starts, sizes)
        if ts >= -1e-8 * max(_norm(vec), 1.0):
            vec += (1.0 + ts) * e

    best_x, best_y, best_z, best_s = x.copy(), y.copy(), z.copy(), s.copy()
    best_merit = np.inf
    best_res = np.array([np.inf, np.inf, np.inf])
    status = ST_MAX_ITER
    it = 0
    pres = dres = gap = np.inf
    stall = 0
    for it in range(max_iter + 1):
        Px = _mv(P, x)
        Gx = _mv_csr(G, indptr, indices, x)
        Ax = _mv(A, x)
        dual_lin = _mtv_csr(G, indptr, indices, z) + _mtv(A, y)
        rx = Px + q + dual_lin
        ry = Ax - b
        rz = Gx + s - h
        gap = _dot(s, z)
        mu = gap / degree
        qx = _dot(q, x)
        pcost = 0.5 * _dot(x, Px) + qx
        pres = np.sqrt(_norm(ry) ** 2 + _norm(rz) ** 2) / bnorm
        dres = _norm(rx) / qnorm
        relgap = gap / max(1.0, abs(pcost))
        if not (np.isfinite(pres) and np.isfinite(dres) and np.isfinite(gap)):
            status = ST_NUMERICAL
            break
        merit = max(max(pres, dres), min(gap, relgap))
        if merit < 0.5 * best_merit:
            stall = 0
        else:
            stall += 1
        if merit < best_merit:
            best_merit = merit
            best_x[:] = x
            best_y[:] = y
            best_z[:] = z
            best_s[:] = s
            best_res[0], best_res[1], best_res[2] = pres, dres, gap
        if pres <= tol and dres <= tol and (gap <= tol or relgap <= tol):
            status = ST_OPTIMAL
            break
        # Farkas certificate: z in K*, A'y + G'z = 0, h'z + b'y < 0
        hzby = _dot(h, z) + _dot(b, y)
        if hzby < 0 and _norm(dual_lin) <= INFEASIBILITY_TOL * -hzby:
            status = ST_INFEASIBLE
            break
        # improving ray: q'x < 0 with Px = 0, Ax = 0, Gx in -K
        if qx < 0:
            gs = Gx + s
            ray = np.sqrt(_norm(Px) ** 2 + _norm(Ax) ** 2 + _norm(gs) ** 2)
            if ray <= INFEASIBILITY_TOL * -qx and _norm(x) > 1e6 * bnorm:
                status = ST_UNBOUNDED
                break
        if it == max_iter:
            break
        if stall >= STALL_ITERS and best_merit <= INACCURATE_FACTOR * tol:
            break

        w, eta = _nt_scaling(s, z, l, starts, sizes)
        lam = _scale(w, eta, z, False, l, starts, sizes)
        Gt = _scale_rows(w, eta, G, True, l, starts, sizes)
        if not np.all(np.isfinite(Gt)):
            status = ST_NUMERICAL
            break
        fac, piv, ok, use_lu = _factor(P, A, Gt, l, indptr, indices)
        if not ok:
            status = ST_NUMERICAL
            break
        # affine-scaling direction
        u = -lam
        dx, dy, dz = _kkt_solve(fac, piv, use_lu, P, A, G, Gt, w, eta, -rx, -ry,
                                -rz - _scale(w, eta, u, False, l, starts, sizes), refine, l, starts, sizes,
                                indptr, indices)
        ds = _scale(w, eta, u - _scale(w, eta, dz, False, l, starts, sizes), False, l, starts, sizes)
        a_aff = min(1.0, min(_max_step(s, ds, l, starts, sizes), _max_step(z, dz, l, starts, sizes)))
        mu_aff = _dot(s + a_aff * ds, z + a_aff * dz) / degree
        sigma = min(max(mu_aff / max(mu, 1e-300), 0.0), 1.0) ** 3
        # combined predictor-corrector direction
        ds_s = (-_jprod(lam, lam, l, starts, sizes)
                - _jprod(_scale(w, eta, ds, True, l, starts, sizes), _scale(w, eta, dz, False, l, starts, sizes),
                         l, starts, sizes)
                + sigma * mu * e)
        u = _jdiv(lam, ds_s, l, starts, sizes)
        dx, dy, dz = _kkt_solve(fac, piv, use_lu, P, A, G, Gt, w, eta, -rx, -ry,
                                -rz - _scale(w, eta, u, False, l, starts, sizes), refine, l, starts, sizes,
                                indptr, indices)
        ds = _scale(w, eta, u - _scale(w, eta, dz, False, l, starts, sizes), False, l, starts, sizes)
        alpha = min(1.0, STEP_FRACTION * min(_max_step(s, ds, l, starts, sizes), _max_step(z, dz, l, starts, sizes)))
        if not (np.isfinite(alpha) and np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
            status = ST_NUMERICAL
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds

    if (status == ST_MAX_ITER or status == ST_NUMERICAL) and np.isfinite(best_merit):
        # iterates that never converged fall back to the best point seen
        x, y, z, s = best_x, best_y, best_z, best_s
        pres, dres, gap = best_res[0], best_res[1], best_res[2]
        if best_merit <= INACCURATE_FACTOR * tol:
            status = ST_INACCURATE
    return status, it, x, y, z, s, pres, dres, gap
