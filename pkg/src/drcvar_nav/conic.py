"""Dense primal-dual interior-point solver for small conic quadratic programs.

Solves::

    minimize    1/2 x'Px + q'x
    subject to  Ax = b
                Gx + s = h,   s in K

where K is the product of a nonnegative orthant of size ``l`` and
second-order cones ``{(u0, u1) : ||u1|| <= u0}``.  The method is Mehrotra
predictor-corrector with Nesterov-Todd scaling; the iterations run in a
compiled kernel (see ``_ipm``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._ipm import solve_kernel

OPTIMAL = "optimal"
INACCURATE = "optimal_inaccurate"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"
NUMERICAL_ERROR = "numerical_error"

_STATUS = (OPTIMAL, INACCURATE, INFEASIBLE, UNBOUNDED, MAX_ITER, NUMERICAL_ERROR)
_REFINE = 1


@dataclass(frozen=True)
class ConeDims:
    """Sizes of the orthant part and of each second-order cone."""

    l: int = 0
    q: tuple[int, ...] = ()

    def __post_init__(self):
        if self.l < 0 or any(k < 1 for k in self.q):
            raise ValueError(f"invalid cone dimensions {self}")
        object.__setattr__(self, "q", tuple(int(k) for k in self.q))

    @property
    def m(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)

    def cone_index(self):
        sizes = np.asarray(self.q, dtype=np.int64)
        starts = self.l + np.cumsum(sizes) - sizes
        return starts, sizes


def _arr(v):
    return np.array(v, dtype=np.float64, order="C", copy=True)


@dataclass
class ConicProgram:
    """Solver-neutral description of a convex quadratic cone program."""

    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    dims: ConeDims
    P: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        # private C-ordered copies keep the compiled kernel on one signature
        self.q = _arr(self.q).reshape(-1)
        n = self.q.size
        self.G = _arr(self.G).reshape(-1, n)
        self.h = _arr(self.h).reshape(-1)
        self.P = np.zeros((n, n)) if self.P is None else _arr(self.P)
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = _arr(self.A).reshape(-1, n)
        self.b = _arr(self.b).reshape(-1)
        if self.G.shape[0] != self.dims.m or self.h.size != self.dims.m:
            raise ValueError(
                f"cone rows {self.dims.m} do not match G {self.G.shape} / h {self.h.shape}"
            )
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b disagree on the number of equalities")
        if self.check and n:
            if not np.allclose(self.P, self.P.T, atol=1e-12 * (1 + abs(self.P).max())):
                raise ValueError("P is not symmetric")
            if np.any(self.P):
                lo = np.linalg.eigvalsh(self.P)[0]
                if lo < -1e-9 * max(1.0, abs(self.P).max()):
                    raise ValueError(f"P is not positive semidefinite (min eig {lo:.3g})")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def shape_key(self):
        return (self.n, self.A.shape[0], self.dims)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, INACCURATE)


def conic_solve(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 100) -> ConicSolution:
    """Solve a single conic program.

    Returns a :class:`ConicSolution` whose ``status`` is one of ``optimal``,
    ``optimal_inaccurate`` (progress stalled within ``1e3 * tol``),
    ``infeasible`` (a Farkas certificate was found), ``unbounded``,
    ``max_iter`` or ``numerical_error``.  Failures are never raised; callers
    inspect the status or ``ok``.
    """
    starts, sizes = prog.dims.cone_index()
    st, it, x, y, z, s, pres, dres, gap = solve_kernel(
        prog.P, prog.q, prog.A, prog.b, prog.G, prog.h, prog.dims.l, starts, sizes,
        float(tol), int(max_iter), _REFINE,
    )
    status = _STATUS[st]
    objective = prog.objective(x) if np.all(np.isfinite(x)) else float("nan")
    return ConicSolution(status, x, y, z, s, objective, int(it), float(pres), float(dres), float(gap))

