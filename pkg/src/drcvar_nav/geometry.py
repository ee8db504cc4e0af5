"""Polyhedral occupancy sets and point-to-set distances.

An occupancy set is ``{p : A p <= b}`` in R^3.  Distances are computed by a
closed-form clamp for boxes and by a small projection QP otherwise; the dual
separation margin ``max {(A p - b)'lam : lam >= 0, ||A'lam|| <= 1}`` is the
quantity that the collision constraints are built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import ConeDims, ConicProgram, conic_solve

MEMBERSHIP_TOL = 1e-9
DUALITY_TOL = 1e-6
SOLVE_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for invalid occupancy sets."""


class SolverFailure(RuntimeError):
    """An internal convex solve did not reach optimality."""


@dataclass(frozen=True, eq=False)
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray


class PolyhedralSet:
    """Bounded, nonempty polyhedron ``{p : A p <= b}`` in R^3.

    Construction certifies boundedness and nonemptiness by solving the six
    axis-aligned support-function LPs; the resulting axis bounds are kept in
    ``bounds`` (shape (2, 3): lower row, upper row).
    """

    __slots__ = ("A", "b", "bounds", "box")

    def __init__(self, A, b):
        A = np.array(A, dtype=float)
        b = np.array(b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[1] != 3:
            raise GeometryError(f"A must have 3 columns, got shape {A.shape}")
        if A.shape[0] != b.size:
            raise GeometryError("A and b have different row counts")
        if A.shape[0] < 4:
            raise GeometryError(f"a bounded 3D polytope needs at least 4 faces, got {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise GeometryError("A and b must be finite")
        if np.any(np.linalg.norm(A, axis=1) <= 0):
            raise GeometryError("every face normal must be nonzero")
        bounds = _support_bounds(A, b)
        self._init(A, b, bounds, None)

    def _init(self, A, b, bounds, box):
        A.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "box", box)

    def __setattr__(self, name, value):
        raise AttributeError("PolyhedralSet is immutable")

    def __reduce__(self):
        return PolyhedralSet._trusted, (self.A, self.b, self.bounds, self.box)

    @classmethod
    def _trusted(cls, A, b, bounds, box=None):
        obj = cls.__new__(cls)
        obj._init(np.array(A, dtype=float), np.array(b, dtype=float), bounds, box)
        return obj

    @property
    def n_faces(self) -> int:
        return self.b.size

    def __repr__(self):
        kind = "box" if self.box is not None else "polytope"
        return f"PolyhedralSet({kind}, n_faces={self.n_faces})"


def _support_bounds(A, b):
    """Per-axis extent of {p : A p <= b}; raises if empty or unbounded."""
    directions = np.vstack([np.eye(3), -np.eye(3)])
    progs = [ConicProgram(q=-d, G=A, h=b, dims=ConeDims(l=A.shape[0]), check=False) for d in directions]
    sols = [conic_solve(p, tol=1e-9, max_iter=200) for p in progs]
    statuses = {s.status for s in sols}
    if "infeasible" in statuses:
        raise GeometryError("occupancy set is empty")
    if "unbounded" in statuses:
        raise GeometryError("occupancy set is unbounded")
    if not all(s.ok for s in sols):
        raise GeometryError(f"could not certify the occupancy set (solver statuses {sorted(statuses)})")
    support = np.array([-s.objective for s in sols])
    return np.vstack([-support[3:], support[:3]])


def make_box(center, half_extents, rotation=None) -> PolyhedralSet:
    """Rotated, translated box as a 6-face polyhedron.

    Rows are ordered (+x, -x, +y, -y, +z, -z) in the box frame, whose axes are
    the columns of ``rotation``.
    """
    center = np.asarray(center, dtype=float).reshape(3)
    half = np.asarray(half_extents, dtype=float).reshape(3)
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float).reshape(3, 3)
    if np.any(half <= 0) or not np.all(np.isfinite(half)):
        raise GeometryError(f"half extents must be strictly positive, got {half}")
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
        raise GeometryError("rotation is not orthonormal")
    A = np.empty((6, 3))
    bvec = np.empty(6)
    for k in range(3):
        axis = R[:, k]
        A[2 * k] = axis
        A[2 * k + 1] = -axis
        bvec[2 * k] = half[k] + axis @ center
        bvec[2 * k + 1] = half[k] - axis @ center
    corner_reach = np.abs(R) @ half
    bounds = np.vstack([center - corner_reach, center + corner_reach])
    return PolyhedralSet._trusted(A, bvec, bounds, Box(center, half, R))


def contains(pset: PolyhedralSet, p, tol: float = MEMBERSHIP_TOL) -> bool:
    p = np.asarray(p, dtype=float).reshape(3)
    return bool(np.all(pset.A @ p <= pset.b + tol))


def translate(pset: PolyhedralSet, v) -> PolyhedralSet:
    """Minkowski translation ``O + v``: same normals, offsets ``b + A v``."""
    v = np.asarray(v, dtype=float).reshape(3)
    box = None
    if pset.box is not None:
        box = Box(pset.box.center + v, pset.box.half_extents, pset.box.rotation)
    return PolyhedralSet._trusted(pset.A, pset.b + pset.A @ v, pset.bounds + v, box)


def project(p, pset: PolyhedralSet) -> np.ndarray:
    """Closest point of ``pset`` to ``p``."""
    p = np.asarray(p, dtype=float).reshape(3)
    if pset.box is not None:
        bx = pset.box
        local = bx.rotation.T @ (p - bx.center)
        return bx.center + bx.rotation @ np.clip(local, -bx.half_extents, bx.half_extents)
    if contains(pset, p):
        return p.copy()
    # min 1/2 ||d||^2  s.t.  A (p + d) <= b
    prog = ConicProgram(q=np.zeros(3), P=np.eye(3), G=pset.A, h=pset.b - pset.A @ p,
                        dims=ConeDims(l=pset.n_faces), check=False)
    sol = conic_solve(prog, tol=SOLVE_TOL)
    if not sol.ok:
        raise SolverFailure(f"projection solve ended with status {sol.status}")
    return p + sol.x


def distance(p, pset: PolyhedralSet) -> float:
    """Euclidean distance from ``p`` to the set (zero inside)."""
    p = np.asarray(p, dtype=float).reshape(3)
    if contains(pset, p):
        return 0.0
    return float(np.linalg.norm(p - project(p, pset)))


def signed_distance(p, pset: PolyhedralSet) -> float:
    """Distance outside the set, minus the depth to the boundary inside it."""
    p = np.asarray(p, dtype=float).reshape(3)
    if contains(pset, p, tol=0.0):
        rows = (pset.A @ p - pset.b) / np.linalg.norm(pset.A, axis=1)
        return float(rows.max())
    return distance(p, pset)


def _margin_program(p, pset):
    n = pset.n_faces
    g = pset.A @ p - pset.b
    G = np.zeros((n + 4, n))
    G[:n] = -np.eye(n)
    G[n + 1 :] = -pset.A.T
    h = np.zeros(n + 4)
    h[n] = 1.0
    return ConicProgram(q=-g, G=G, h=h, dims=ConeDims(l=n, q=(4,)), check=False)


def dual_margin(p, pset: PolyhedralSet, tol: float = SOLVE_TOL):
    """Dual separation margin and its multiplier.

    Returns ``(margin, lam)`` maximising ``(A p - b)'lam`` over ``lam >= 0``,
    ``||A'lam||_2 <= 1``.  Outside the set the margin equals ``distance``;
    inside it is 0, attained by ``lam = 0``.
    """
    return dual_margins([p], [pset], tol=tol)[0]


def dual_margins(points, sets, tol: float = SOLVE_TOL):
    """:func:`dual_margin` over matching lists of points and sets."""
    points = list(points)
    sets = list(sets)
    if len(points) != len(sets):
        raise ValueError("points and sets must have the same length")
    out = []
    for p, s in zip(points, sets):
        p = np.asarray(p, dtype=float).reshape(3)
        if contains(s, p):
            out.append((0.0, np.zeros(s.n_faces)))
            continue
        sol = conic_solve(_margin_program(p, s), tol=tol)
        if not sol.ok:
            raise SolverFailure(f"dual margin solve ended with status {sol.status}")
        out.append((-sol.objective, sol.x))
    return out
