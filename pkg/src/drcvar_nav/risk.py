"""Distributionally robust CVaR collision constraints built from error samples.

For an agent at ``z_i`` and a neighbour occupying ``O + z_j + w`` (``O`` the
neighbour's body, ``w`` its prediction error) the constraint function is
``F = d_min - dist(z_i, O + z_j + w)``.  A :class:`DRCVaRBlock` holds the
finite system of linear and second-order-cone constraints in the multipliers
``(lam, eta, s, t, lam_theta)`` whose feasibility guarantees that the worst-case
CVaR of ``F`` over a Wasserstein ball around the sampled errors is
non-positive.

The block is bilinear in ``(z_i, lam)``.  Two convex restrictions are exposed:

* with the trajectory fixed, :meth:`DRCVaRBlock.risk_program` is a conic
  program in the multipliers;
* with ``lam`` (and ``eta``) fixed, :meth:`DRCVaRBlock.position_row` gives the
  single linear inequality on ``z_i`` that is equivalent to the block once
  ``t``, ``s`` and ``lam_theta`` are chosen optimally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import ConeDims, ConicProgram
from .geometry import PolyhedralSet, distance, translate

FEASIBILITY_TOL = 1e-7
CONSERVATIVE_TOL = 1e-6
# |t| <= T_PAD + 2 (max_n ||z_i - z_j - w_n|| + d_min) in the risk program; the
# optimal t is a loss quantile, which never exceeds the largest separation
T_PAD = 10.0


@dataclass(frozen=True)
class AmbiguityParams:
    """Wasserstein radius, CVaR level, safety margin and sample count."""

    theta: float
    alpha: float
    d_min: float
    n_samples: int

    def __post_init__(self):
        vals = (self.theta, self.alpha, self.d_min)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"ambiguity parameters must be finite: {self}")
        if self.theta < 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.d_min < 0:
            raise ValueError(f"d_min must be >= 0, got {self.d_min}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError(f"n_samples must be a positive integer, got {self.n_samples}")
        object.__setattr__(self, "n_samples", int(self.n_samples))


@dataclass(frozen=True, eq=False)
class SupportPolytope:
    """Support of the prediction error: all of R^3, or ``{w : C w <= h}``."""

    kind: str = "unbounded"
    C: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "unbounded":
            return
        if self.kind != "polytope":
            raise ValueError(f"unknown support kind {self.kind!r}")
        C = np.array(self.C, dtype=float)
        h = np.array(self.h, dtype=float).reshape(-1)
        if C.ndim != 2 or C.shape[1] != 3 or C.shape[0] != h.size or h.size == 0:
            raise ValueError("support needs C of shape (r, 3) and h of length r")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(h))):
            raise ValueError("support data must be finite")
        if np.any(h < 0):
            raise ValueError("support polytope must contain the origin (h >= 0)")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "h", h)

    @classmethod
    def unbounded(cls):
        return cls("unbounded")

    @classmethod
    def polytope(cls, C, h):
        return cls("polytope", C, h)

    @property
    def bounded(self) -> bool:
        return self.kind == "polytope"

    @property
    def n_rows(self) -> int:
        return 0 if self.C is None else self.C.shape[0]


class ErrorSampleSet:
    """The ``N_s`` sampled prediction errors for one (neighbour, lead time)."""

    __slots__ = ("samples",)

    def __init__(self, samples):
        arr = np.array(samples, dtype=float)
        if arr.size == 0:
            raise ValueError("sample set is empty")
        arr = arr.reshape(-1, 3)
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        arr.flags.writeable = False
        self.samples = arr

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)))

    def __len__(self):
        return self.samples.shape[0]

    def __repr__(self):
        return f"ErrorSampleSet(n={len(self)})"


def _cvar_candidates(x, alpha):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("empirical CVaR of an empty loss list")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    z = -x
    vals = np.maximum(x[None, :] + z[:, None], 0.0).sum(axis=1) / (x.size * alpha) - z
    return z, vals


def empirical_cvar(losses, alpha: float) -> float:
    """``inf_z [mean((x + z)^+) / alpha - z]`` of the empirical loss distribution.

    The objective is piecewise linear and convex in ``z`` with kinks at
    ``z = -x_i``, so its minimum is found by evaluating those candidates.
    """
    _, vals = _cvar_candidates(losses, alpha)
    return float(vals.min())


def cvar_minimizer(losses, alpha: float) -> float:
    """A minimising ``z`` of the empirical CVaR objective."""
    z, vals = _cvar_candidates(losses, alpha)
    return float(z[np.argmin(vals)])


@dataclass(frozen=True, eq=False)
class BlockAssignment:
    """Values for the multipliers of one block."""

    lam: np.ndarray
    s: np.ndarray
    t: float
    lam_theta: float
    eta: np.ndarray | None = None

    def scaled(self, factor):
        eta = None if self.eta is None else self.eta * factor
        return BlockAssignment(self.lam * factor, self.s * factor, self.t * factor, self.lam_theta * factor, eta)


@dataclass(frozen=True, eq=False)
class ResidualReport:
    """Signed constraint residuals (feasible where <= 0)."""

    rows: dict

    @property
    def max_residual(self) -> float:
        return max(float(np.max(v)) if np.size(v) else -np.inf for v in self.rows.values())

    @property
    def feasible(self) -> bool:
        return self.max_residual <= FEASIBILITY_TOL


class DRCVaRBlock:
    """DR-CVaR constraint block for one (neighbour, horizon step) pair."""

    def __init__(self, params: AmbiguityParams, samples: ErrorSampleSet, support: SupportPolytope,
                 obstacle: PolyhedralSet):
        if len(samples) != params.n_samples:
            raise ValueError(f"expected {params.n_samples} samples, got {len(samples)}")
        self.params = params
        self.samples = samples
        self.support = support
        self.obstacle = obstacle
        n_m, N = obstacle.n_faces, params.n_samples
        r = support.n_rows
        self.slots = {"lam": slice(0, n_m), "s": slice(n_m, n_m + N), "t": n_m + N, "lam_theta": n_m + N + 1}
        self.n_vars = n_m + N + 2
        if support.bounded:
            self.slots["eta"] = slice(self.n_vars, self.n_vars + N * r)
            self.n_vars += N * r
        self._template = None
        self._mean = None

    @property
    def n_samples(self) -> int:
        return self.params.n_samples

    @property
    def sample_mean(self) -> np.ndarray:
        if self._mean is None:
            self._mean = self.samples.samples.mean(axis=0)
        return self._mean

    def constraint_counts(self) -> dict:
        """Sizes of the constraint system (budget, coupling and cone rows)."""
        N = self.n_samples
        return {
            "variables": self.n_vars,
            "budget_rows": 1,
            "coupling_rows": N,
            "cones": 1 + (N if self.support.bounded else 1),
        }

    def _eta_offsets(self):
        """``h - C w_n`` for every sample, shape (N_s, r)."""
        sup = self.support
        return sup.h[None, :] - self.samples.samples @ sup.C.T

    def _check(self, z_i, z_j, asg):
        z_i = np.asarray(z_i, dtype=float).reshape(3)
        z_j = np.asarray(z_j, dtype=float).reshape(3)
        n_m, N = self.obstacle.n_faces, self.n_samples
        if np.shape(asg.lam) != (n_m,) or np.shape(asg.s) != (N,):
            raise ValueError("assignment dimensions do not match the block")
        if self.support.bounded:
            if asg.eta is None or np.shape(asg.eta) != (N, self.support.n_rows):
                raise ValueError("polytope support needs eta of shape (N_s, r)")
        elif asg.eta is not None:
            raise ValueError("unbounded support takes no eta")
        return z_i, z_j

    def evaluate(self, z_i, z_j, asg: BlockAssignment) -> ResidualReport:
        z_i, z_j = self._check(z_i, z_j, asg)
        p = self.params
        A, b = self.obstacle.A, self.obstacle.b
        W = self.samples.samples
        lam = np.asarray(asg.lam, dtype=float)
        s = np.asarray(asg.s, dtype=float)
        a = A.T @ lam
        rhs = (A @ (z_i - z_j) - b) @ lam - W @ a
        rows = {
            "budget": np.array([asg.lam_theta * p.theta - asg.t * p.alpha + s.mean()]),
            "lam_nonneg": -lam,
            "s_nonneg": -s,
            "lam_theta_nonneg": np.array([-asg.lam_theta]),
            "cone_unit": np.array([np.linalg.norm(a) - 1.0]),
        }
        if self.support.bounded:
            eta = np.asarray(asg.eta, dtype=float)
            rhs = rhs - np.sum(eta * self._eta_offsets(), axis=1)
            rows["eta_nonneg"] = -eta.reshape(-1)
            rows["cone_theta"] = np.linalg.norm(a[None, :] - eta @ self.support.C, axis=1) - asg.lam_theta
        else:
            rows["cone_theta"] = np.array([np.linalg.norm(a) - asg.lam_theta])
        rows["coupling"] = p.d_min + asg.t - s - rhs
        return ResidualReport(rows)

    def risk_program(self, z_i, z_j) -> ConicProgram:
        """Multiplier problem at a fixed trajectory point.

        Maximises ``delta``, the common slack added to every coupling row,
        subject to the rest of the block.  The program is always feasible
        (``lam = 0`` gives ``delta = -d_min``); the block itself is feasible at
        ``(z_i, z_j)`` iff the optimal ``delta`` is >= 0.  Variables are the
        block slots followed by ``delta``.
        """
        z_i = np.asarray(z_i, dtype=float).reshape(3)
        z_j = np.asarray(z_j, dtype=float).reshape(3)
        if self._template is None:
            self._template = self._risk_template()
        G0, h0, q, dims = self._template
        A, b = self.obstacle.A, self.obstacle.b
        N = self.n_samples
        u = (z_i - z_j)[None, :] - self.samples.samples
        g = u @ A.T - b[None, :]  # (N, n_m): A(z_i - z_j - w_n) - b
        t_bound = T_PAD + 2.0 * (np.linalg.norm(u, axis=1).max() + self.params.d_min)
        G = G0.copy()
        G[1: 1 + N, self.slots["lam"]] = -g
        h = h0.copy()
        h[self._t_rows] = t_bound
        return ConicProgram(q=q, G=G, h=h, dims=dims, check=False)

    def _risk_template(self):
        """Risk-program data with the position-dependent entries left at zero."""
        p = self.params
        A = self.obstacle.A
        n_m, N = self.obstacle.n_faces, self.n_samples
        sl = self.slots
        nv = self.n_vars + 1
        i_t, i_lt, i_d = sl["t"], sl["lam_theta"], nv - 1

        G_lin = np.zeros((1 + N, nv))
        G_lin[0, i_lt] = p.theta
        G_lin[0, i_t] = -p.alpha
        G_lin[0, sl["s"]] = 1.0 / N
        bounded = self.support.bounded
        if bounded:
            r = self.support.n_rows
            offs = self._eta_offsets()
        for n in range(N):
            row = G_lin[1 + n]
            row[n_m + n] = -1.0
            row[i_t] = 1.0
            row[i_d] = 1.0
            if bounded:
                row[sl["eta"].start + n * r: sl["eta"].start + (n + 1) * r] = offs[n]
        rhs = np.concatenate([[0.0], np.full(N, -p.d_min)])
        nonneg = [sl["lam"], sl["s"]] + ([sl["eta"]] if bounded else [])
        idx = np.concatenate([np.arange(nv)[s_] for s_ in nonneg])
        G_nn = np.zeros((idx.size, nv))
        G_nn[np.arange(idx.size), idx] = -1.0
        G_box = np.zeros((3, nv))
        G_box[0, i_t] = 1.0
        G_box[1, i_t] = -1.0
        G_box[2, i_lt] = 1.0  # lam_theta <= 1 loses nothing: eta = 0 gives lam_theta = ||A'lam|| <= 1
        h_box = np.array([0.0, 0.0, 1.0])  # t bounds filled per call
        first_box = G_lin.shape[0] + idx.size
        self._t_rows = np.array([first_box, first_box + 1])

        cones_G = []
        cones_h = []
        # ||A'lam|| <= 1
        Gc = np.zeros((4, nv))
        Gc[1:, sl["lam"]] = -A.T
        cones_G.append(Gc)
        cones_h.append(np.array([1.0, 0.0, 0.0, 0.0]))
        if bounded:
            C = self.support.C
            for n in range(N):
                Gc = np.zeros((4, nv))
                Gc[0, i_lt] = -1.0
                Gc[1:, sl["lam"]] = -A.T
                Gc[1:, sl["eta"].start + n * r: sl["eta"].start + (n + 1) * r] = C.T
                cones_G.append(Gc)
                cones_h.append(np.zeros(4))
        else:
            Gc = np.zeros((4, nv))
            Gc[0, i_lt] = -1.0
            Gc[1:, sl["lam"]] = -A.T
            cones_G.append(Gc)
            cones_h.append(np.zeros(4))

        G = np.vstack([G_lin, G_nn, G_box] + cones_G)
        h = np.concatenate([rhs, np.zeros(idx.size), h_box] + cones_h)
        q = np.zeros(nv)
        q[i_d] = -1.0
        dims = ConeDims(l=G_lin.shape[0] + idx.size + 3, q=(4,) * len(cones_G))
        return G, h, q, dims

    def unpack(self, x) -> BlockAssignment:
        """Block assignment from a risk-program solution vector."""
        sl = self.slots
        lam = np.maximum(x[sl["lam"]], 0.0)
        s = np.maximum(x[sl["s"]], 0.0)
        eta = None
        if self.support.bounded:
            eta = np.maximum(x[sl["eta"]], 0.0).reshape(self.n_samples, self.support.n_rows)
        return BlockAssignment(lam, s, float(x[sl["t"]]), max(float(x[sl["lam_theta"]]), 0.0), eta)

    def _offsets(self, lam, eta, z_j):
        """Per-sample constants ``c_n`` and the smallest admissible ``lam_theta``."""
        A, b = self.obstacle.A, self.obstacle.b
        a = A.T @ lam
        c = (np.asarray(z_j, dtype=float)[None, :] + self.samples.samples) @ a + b @ lam
        if self.support.bounded:
            c = c + np.sum(eta * self._eta_offsets(), axis=1)
            lam_theta = float(np.max(np.linalg.norm(a[None, :] - eta @ self.support.C, axis=1)))
        else:
            lam_theta = float(np.linalg.norm(a))
        return a, c, lam_theta

    def position_row(self, lam, eta, z_j):
        """Linear condition ``a'z_i >= rhs`` equivalent to the block for fixed multipliers.

        With ``lam`` and ``eta`` fixed, minimising the budget row over ``t``,
        ``s`` and ``lam_theta`` leaves
        ``a'z_i >= d_min + CVaR_alpha(c) + theta * lam_theta_min / alpha``.
        """
        p = self.params
        a, c, lam_theta = self._offsets(lam, eta, z_j)
        rhs = p.d_min + empirical_cvar(c, p.alpha) + p.theta * lam_theta / p.alpha
        return a, rhs

    def complete(self, lam, eta, z_i, z_j) -> BlockAssignment:
        """Best ``(s, t, lam_theta)`` for fixed ``lam``/``eta`` at the given positions."""
        p = self.params
        a, c, lam_theta = self._offsets(lam, eta, z_j)
        losses = p.d_min + c - a @ np.asarray(z_i, dtype=float)
        t = cvar_minimizer(losses, p.alpha)
        s = np.maximum(losses + t, 0.0)
        return BlockAssignment(np.asarray(lam, dtype=float).copy(), s, t, lam_theta,
                               None if eta is None else np.asarray(eta, dtype=float).copy())


class DeterministicBlock:
    """Nominal duality-based avoidance: ``(A(z_i - z_j) - b)'lam >= d_min``.

    Same interface as :class:`DRCVaRBlock` with ``s``, ``t`` and
    ``lam_theta`` absent (the assignment carries empty/zero values for them).
    """

    def __init__(self, d_min: float, obstacle: PolyhedralSet):
        if not d_min >= 0:
            raise ValueError(f"d_min must be >= 0, got {d_min}")
        self.d_min = float(d_min)
        self.obstacle = obstacle
        self.n_vars = obstacle.n_faces
        self.slots = {"lam": slice(0, obstacle.n_faces)}
        self.support = SupportPolytope.unbounded()

    def constraint_counts(self) -> dict:
        return {"variables": self.n_vars, "budget_rows": 0, "coupling_rows": 1, "cones": 1}

    def evaluate(self, z_i, z_j, asg: BlockAssignment) -> ResidualReport:
        lam = np.asarray(asg.lam, dtype=float)
        if lam.shape != (self.obstacle.n_faces,):
            raise ValueError("assignment dimensions do not match the block")
        A, b = self.obstacle.A, self.obstacle.b
        g = A @ (np.asarray(z_i, dtype=float) - np.asarray(z_j, dtype=float)) - b
        return ResidualReport({
            "coupling": np.array([self.d_min - g @ lam]),
            "lam_nonneg": -lam,
            "cone_unit": np.array([np.linalg.norm(A.T @ lam) - 1.0]),
        })

    def risk_program(self, z_i, z_j) -> ConicProgram:
        A, b = self.obstacle.A, self.obstacle.b
        n_m = self.obstacle.n_faces
        g = A @ (np.asarray(z_i, dtype=float) - np.asarray(z_j, dtype=float)) - b
        nv = n_m + 1
        G = np.zeros((1 + n_m + 4, nv))
        G[0, :n_m] = -g
        G[0, n_m] = 1.0
        G[1: 1 + n_m, :n_m] = -np.eye(n_m)
        G[2 + n_m:, :n_m] = -A.T
        h = np.zeros(G.shape[0])
        h[0] = -self.d_min
        h[1 + n_m] = 1.0
        q = np.zeros(nv)
        q[n_m] = -1.0
        return ConicProgram(q=q, G=G, h=h, dims=ConeDims(l=1 + n_m, q=(4,)), check=False)

    def unpack(self, x) -> BlockAssignment:
        return BlockAssignment(np.maximum(x[: self.n_vars], 0.0), np.zeros(0), 0.0, 0.0)

    def position_row(self, lam, eta, z_j):
        A, b = self.obstacle.A, self.obstacle.b
        a = A.T @ lam
        return a, self.d_min + a @ np.asarray(z_j, dtype=float) + b @ lam

    def complete(self, lam, eta, z_i, z_j) -> BlockAssignment:
        return BlockAssignment(np.asarray(lam, dtype=float).copy(), np.zeros(0), 0.0, 0.0)


def build_drcvar_block(params: AmbiguityParams, samples: ErrorSampleSet, support: SupportPolytope,
                       obstacle: PolyhedralSet) -> DRCVaRBlock:
    return DRCVaRBlock(params, samples, support, obstacle)


def evaluate_block(block, z_i, z_j, assignment: BlockAssignment) -> ResidualReport:
    return block.evaluate(z_i, z_j, assignment)


def sampled_cvar(block: DRCVaRBlock, z_i, z_j, samples: ErrorSampleSet, alpha: float) -> float:
    """Empirical CVaR of ``d_min - dist(z_i, O + z_j + w_n)`` over the samples."""
    z_i = np.asarray(z_i, dtype=float)
    z_j = np.asarray(z_j, dtype=float)
    F = [block.params.d_min - distance(z_i, translate(block.obstacle, z_j + w)) for w in samples.samples]
    return empirical_cvar(F, alpha)


def conservativeness_check(block: DRCVaRBlock, z_i, z_j, assignment: BlockAssignment,
                           samples: ErrorSampleSet, alpha: float) -> bool:
    """Whether the sampled constraint has empirical CVaR <= 1e-6.

    Holds for every feasible assignment; for infeasible ones the result is
    just the evaluation, with no implication either way.
    """
    return sampled_cvar(block, z_i, z_j, samples, alpha) <= CONSERVATIVE_TOL
