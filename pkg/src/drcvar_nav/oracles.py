"""Independent reference computations for the validation suites.

Nothing here calls the interior-point solver: distances come from active-set
enumeration, CVaR from a refined grid, LPs from scipy's HiGHS, cone
projections and LQ tracking from closed forms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from .conic import ConeDims, ConicProgram, conic_solve
from .geometry import PolyhedralSet, contains, dual_margin, make_box
from .risk import empirical_cvar

ALPHAS = (0.05, 0.1, 0.5, 1.0)


def random_rotation(rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.normal(size=(3, 3)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def random_obstacle(rng) -> PolyhedralSet:
    """A rotated box or the hull of 6..14 random points, near the origin."""
    center = rng.normal(size=3)
    if rng.random() < 0.5:
        return make_box(center, rng.uniform(0.2, 2.0, size=3), random_rotation(rng))
    pts = center + rng.normal(size=(int(rng.integers(6, 15)), 3)) * rng.uniform(0.3, 2.0, size=3)
    hull = ConvexHull(pts)
    eq = hull.equations  # n'x + c <= 0 inside, with unit n
    return PolyhedralSet(eq[:, :3], -eq[:, 3])


def projection_distance(p, A, b) -> float:
    """Distance from ``p`` to ``{x : A x <= b}`` by enumerating active sets.

    The projection satisfies some set of at most three faces with equality
    and is the closest point of that affine set; every feasible candidate is
    at least as far as the projection, so the minimum over feasible
    candidates is exact.
    """
    p = np.asarray(p, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.linalg.norm(A, axis=1)
    A, b = A / scale[:, None], b / scale
    r = b - A @ p
    if np.all(r >= -1e-12):
        return 0.0
    best = np.inf
    for k in (1, 2, 3):
        S = np.array(list(itertools.combinations(range(A.shape[0]), k)))
        As = A[S]  # (M, k, 3)
        rs = r[S]
        # least-norm step onto the affine set: d = As' (As As')^-1 rs
        M = As @ As.transpose(0, 2, 1)
        good = np.abs(np.linalg.det(M)) > 1e-10
        if not np.any(good):
            continue
        mu = np.linalg.solve(M[good], rs[good][..., None])
        d = (As[good].transpose(0, 2, 1) @ mu)[..., 0]
        feasible = np.all(d @ A.T <= r[None, :] + 1e-9, axis=1)
        if np.any(feasible):
            best = min(best, float(np.linalg.norm(d[feasible], axis=1).min()))
    return best


def cvar_grid(losses, alpha: float, points: int = 201, rounds: int = 60) -> float:
    """``inf_z [mean((x + z)^+) / alpha - z]`` by successively refined grids."""
    x = np.asarray(losses, dtype=float).reshape(-1)

    def f(z):
        return np.maximum(x[None, :] + z[:, None], 0.0).mean(axis=1) / alpha - z

    lo, hi = -x.max() - 1.0, -x.min() + 1.0
    best = np.inf
    for _ in range(rounds):
        z = np.linspace(lo, hi, points)
        v = f(z)
        k = int(np.argmin(v))
        best = min(best, float(v[k]))
        step = z[1] - z[0]
        lo, hi = z[k] - 2 * step, z[k] + 2 * step
        if step < 1e-14:
            break
    return best


def soc_projection(v) -> np.ndarray:
    """Euclidean projection onto ``{(t, x) : ||x|| <= t}``."""
    v = np.asarray(v, dtype=float)
    t, x = v[0], v[1:]
    nx = np.linalg.norm(x)
    if nx <= t:
        return v.copy()
    if nx <= -t:
        return np.zeros_like(v)
    c = 0.5 * (t + nx)
    return np.concatenate([[c], c * x / nx])


def lq_tracking(Ad, Bd, Q, R, x0, x_ref) -> np.ndarray:
    """Inputs minimising ``sum_l (x_l - r_l)'Q(x_l - r_l) + u_{l-1}'R u_{l-1}``, l = 1..T.

    Backward Riccati recursion with an affine term for the reference.
    """
    T = x_ref.shape[0]
    P = Q.copy()
    p = -Q @ x_ref[-1]
    gains = []
    for l in range(T - 1, -1, -1):
        # value at x_{l+1}: x'Px + 2 p'x ; stage l uses input u_l
        H = R + Bd.T @ P @ Bd
        K = np.linalg.solve(H, Bd.T @ P @ Ad)
        k = np.linalg.solve(H, Bd.T @ p)
        gains.append((K, k))
        Acl = Ad - Bd @ K
        P_new = Ad.T @ P @ Acl
        p_new = Acl.T @ p
        if l > 0:
            P_new = P_new + Q
            p_new = p_new - Q @ x_ref[l - 1]
        P, p = 0.5 * (P_new + P_new.T), p_new
    gains.reverse()
    x = np.asarray(x0, dtype=float)
    out = []
    for K, k in gains:
        u = -K @ x - k
        out.append(u)
        x = Ad @ x + Bd @ u
    return np.array(out)


@dataclass
class SuiteResult:
    name: str
    passed: int
    total: int
    worst: float

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def line(self) -> str:
        return f"{self.name}: {self.passed}/{self.total} passed (worst error {self.worst:.3g})"


def duality_suite(n: int = 1000, seed: int = 0, tol: float = 1e-6) -> SuiteResult:
    """Dual margin against enumerated projection distance on random pairs."""
    rng = np.random.default_rng(seed)
    passed, worst = 0, 0.0
    for _ in range(n):
        obs = random_obstacle(rng)
        p = rng.normal(size=3) * 3.0
        margin, _ = dual_margin(p, obs)
        ref = 0.0 if contains(obs, p) else projection_distance(p, obs.A, obs.b)
        err = abs(margin - ref)
        worst = max(worst, err)
        passed += err <= tol
    return SuiteResult("duality", passed, n, worst)


def cvar_suite(n: int = 500, seed: int = 0, tol: float = 1e-6) -> SuiteResult:
    rng = np.random.default_rng(seed)
    passed, worst, total = 0, 0.0, 0
    for _ in range(n):
        x = rng.normal(size=int(rng.integers(1, 40))) * rng.uniform(0.1, 5.0)
        for a in ALPHAS:
            err = abs(empirical_cvar(x, a) - cvar_grid(x, a))
            worst = max(worst, err)
            passed += err <= tol
            total += 1
    return SuiteResult("cvar", passed, total, worst)


def conic_suite(n: int = 200, seed: int = 0, tol: float = 1e-6, solver_tol: float = 1e-10) -> SuiteResult:
    """Random LPs against HiGHS and cone projections against the closed form.

    Solves run at ``solver_tol``: a point-wise check at ``tol`` needs a duality
    gap of order ``tol**2`` on the strongly convex projections.
    """
    rng = np.random.default_rng(seed)
    passed, worst, total = 0, 0.0, 0
    for _ in range(n):
        # bounded feasible LP: box plus random cuts through a known interior point
        k = int(rng.integers(2, 8))
        m = int(rng.integers(1, 10))
        x_in = rng.normal(size=k)
        G = np.vstack([np.eye(k), -np.eye(k), rng.normal(size=(m, k))])
        h = np.concatenate([x_in + rng.uniform(0.5, 3, k), -x_in + rng.uniform(0.5, 3, k),
                            G[2 * k:] @ x_in + rng.uniform(0.1, 2, m)])
        q = rng.normal(size=k)
        ref = linprog(q, A_ub=G, b_ub=h, bounds=[(None, None)] * k, method="highs")
        sol = conic_solve(ConicProgram(q=q, G=G, h=h, dims=ConeDims(l=G.shape[0])), tol=solver_tol)
        err = abs(sol.objective - ref.fun) / max(1.0, abs(ref.fun)) if sol.ok else np.inf
        worst = max(worst, err)
        passed += err <= tol
        total += 1

        # projection onto a second-order cone: min ||x - v||^2 with x in SOC
        d = int(rng.integers(2, 6))
        v = rng.normal(size=d) * 2.0
        prog = ConicProgram(q=-2.0 * v, P=2.0 * np.eye(d), G=-np.eye(d), h=np.zeros(d), dims=ConeDims(q=(d,)))
        sol = conic_solve(prog, tol=solver_tol)
        err = float(np.linalg.norm(sol.x - soc_projection(v))) if sol.ok else np.inf
        worst = max(worst, err)
        passed += err <= tol
        total += 1
    return SuiteResult("conic", passed, total, worst)
