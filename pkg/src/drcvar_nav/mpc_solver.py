"""Per-agent receding-horizon problem and its alternating solution.

The finite-horizon problem tracks a reference with a double integrator under
box bounds and one collision block per (neighbour, horizon step).  The block
constraints are bilinear in the agent position and the separating
multipliers, so the problem is solved by alternating two convex
restrictions:

1. trajectory step: with the multipliers fixed every block collapses to one
   linear row on the position (see :meth:`DRCVaRBlock.position_row`), leaving
   a QP in the inputs;
2. risk step: with the trajectory fixed each block's multipliers are chosen to
   maximise the common slack of its coupling rows.

Both steps are :class:`ConicProgram` instances solved by :func:`conic_solve`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import nnls

from .conic import ConeDims, ConicProgram, ConicSolution, conic_solve  # noqa: F401
from .dynamics import LinearAgentModel
from .geometry import project
from .risk import BlockAssignment, FEASIBILITY_TOL

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical_error"

# collision rows are tightened by this much so that solver round-off never
# leaves a returned trajectory outside its own certificate
ROW_MARGIN = 1e-7
# below this ||A'lam|| a risk-step multiplier carries no direction
DEGENERATE_NORM = 1e-6
# exact-penalty weight on collision-row slack (m) and the slack deemed zero
PENALTY = 1e5
SLACK_TOL = 1e-7
# the penalised step only steers the next linearisation, so it is solved loosely
PENALTY_TOL = 1e-6
# extra clearance used when pushing a guess trajectory out of neighbour bodies
PUSH_EXTRA = 0.2
# blocks whose projection-direction row slack exceeds this (m) skip the risk program
SCREEN_SLACK = 0.5


@dataclass(frozen=True, eq=False)
class CollisionTerm:
    """One block of the horizon: neighbour ``neighbor`` at step ``step`` (1..T)."""

    neighbor: object
    step: int
    block: object
    z_j: np.ndarray


@dataclass(eq=False)
class MPCProblem:
    model: LinearAgentModel
    horizon: int
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    x_ref: np.ndarray
    terms: list = field(default_factory=list)
    plan_ref: np.ndarray | None = None
    consistency: float = 0.0

    def __post_init__(self):
        T = int(self.horizon)
        if T < 1:
            raise ValueError(f"horizon must be >= 1, got {T}")
        self.horizon = T
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(6)
        ref = np.asarray(self.x_ref, dtype=float)
        if ref.shape == (6,):
            ref = np.tile(ref, (T, 1))
        if ref.shape != (T, 6):
            raise ValueError(f"reference must have shape ({T}, 6), got {ref.shape}")
        self.x_ref = ref
        for name, M, k in (("Q", self.Q, 6), ("R", self.R, 3)):
            if M.shape != (k, k) or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric {k}x{k} matrix")
            if np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError(f"{name} must be positive definite")
        if not self.consistency >= 0:
            raise ValueError(f"consistency weight must be >= 0, got {self.consistency}")
        if self.plan_ref is not None:
            self.plan_ref = np.asarray(self.plan_ref, dtype=float).reshape(T, 3)
        for term in self.terms:
            if not 1 <= term.step <= T:
                raise ValueError(f"block step {term.step} outside 1..{T}")

    @property
    def neighbors(self):
        return sorted({t.neighbor for t in self.terms}, key=str)


@dataclass(frozen=True, eq=False)
class BilinearTerm:
    """``z_i(step)`` times the ``lam`` slot of block ``index``."""

    index: int
    step: int
    neighbor: object


class AssembledProblem:
    """Condensed matrices of an :class:`MPCProblem`.

    States are eliminated through the dynamics (``x = Phi x0 + Gamma u``) so
    the trajectory step is a QP in the ``3T`` inputs; the full ``9T``-variable
    form with explicit dynamics equalities is available for cross-checks.
    """

    def __init__(self, problem: MPCProblem):
        self.problem = problem
        m = problem.model
        T = problem.horizon
        Ad, Bd = m.Ad, m.Bd
        Phi = np.zeros((6 * T, 6))
        Gam = np.zeros((6 * T, 3 * T))
        powers = [np.eye(6)]
        for _ in range(T):
            powers.append(Ad @ powers[-1])
        for l in range(1, T + 1):
            Phi[6 * (l - 1): 6 * l] = powers[l]
            for k in range(l):
                Gam[6 * (l - 1): 6 * l, 3 * k: 3 * k + 3] = powers[l - 1 - k] @ Bd
        self.Phi, self.Gamma = Phi, Gam
        Qbar = np.kron(np.eye(T), problem.Q)
        Rbar = np.kron(np.eye(T), problem.R)
        self.Qbar, self.Rbar = Qbar, Rbar
        free = Phi @ problem.x0 - problem.x_ref.reshape(-1)
        pos_rows = np.concatenate([np.arange(6 * l, 6 * l + 3) for l in range(T)])
        vel_rows = pos_rows + 3
        self.pos_map = Gam[pos_rows]
        self.pos_free = (Phi @ problem.x0)[pos_rows]
        self.P = 2.0 * (Gam.T @ Qbar @ Gam + Rbar)
        self.q = 2.0 * Gam.T @ Qbar @ free
        self.const = float(free @ Qbar @ free)
        if problem.plan_ref is not None and problem.consistency > 0:
            c = problem.consistency
            dev = self.pos_free - problem.plan_ref.reshape(-1)
            self.P += 2.0 * c * self.pos_map.T @ self.pos_map
            self.q += 2.0 * c * self.pos_map.T @ dev
            self.const += c * float(dev @ dev)
        self.P = 0.5 * (self.P + self.P.T)
        vel_map = Gam[vel_rows]
        vel_free = (Phi @ problem.x0)[vel_rows]
        n = 3 * T
        I = np.eye(n)
        self.G_box = np.vstack([I, -I, vel_map, -vel_map])
        self.h_box = np.concatenate([
            np.full(n, m.a_max), np.full(n, m.a_max), m.v_max - vel_free, m.v_max + vel_free,
        ])
        self.bilinear = [BilinearTerm(i, t.step, t.neighbor) for i, t in enumerate(problem.terms)]

    @property
    def n_inputs(self) -> int:
        return 3 * self.problem.horizon

    @property
    def n_trajectory_vars(self) -> int:
        return 9 * self.problem.horizon

    @property
    def n_risk_vars(self) -> int:
        return sum(t.block.n_vars for t in self.problem.terms)

    def states(self, u) -> np.ndarray:
        return (self.Phi @ self.problem.x0 + self.Gamma @ u).reshape(-1, 6)

    def positions(self, u) -> np.ndarray:
        return (self.pos_free + self.pos_map @ u).reshape(-1, 3)

    def objective(self, u) -> float:
        return float(0.5 * u @ self.P @ u + self.q @ u + self.const)

    def collision_rows(self, rows):
        """Inequalities ``G u <= h`` for ``a'z_i(step) >= rhs`` per term."""
        T = self.problem.horizon
        G = np.zeros((len(rows), 3 * T))
        h = np.zeros(len(rows))
        for r, (term, (a, rhs)) in enumerate(zip(self.problem.terms, rows)):
            sl = slice(3 * (term.step - 1), 3 * term.step)
            G[r] = -a @ self.pos_map[sl]
            h[r] = -(rhs + ROW_MARGIN) + a @ self.pos_free[sl]
        return G, h

    def trajectory_program(self, rows, penalty: float | None = None) -> ConicProgram:
        """Fix-multiplier restriction: QP in the inputs.

        With ``penalty`` set, each collision row gets a slack ``sigma >= 0``
        (appended after the inputs) charged ``penalty * sigma``.
        """
        Gc, hc = self.collision_rows(rows)
        if penalty is None or not len(rows):
            G = np.vstack([self.G_box, Gc])
            h = np.concatenate([self.h_box, hc])
            return ConicProgram(q=self.q, P=self.P, G=G, h=h, dims=ConeDims(l=G.shape[0]), check=False)
        n, r = self.n_inputs, len(rows)
        G = np.zeros((self.G_box.shape[0] + 2 * r, n + r))
        G[: self.G_box.shape[0], :n] = self.G_box
        G[self.G_box.shape[0]: self.G_box.shape[0] + r, :n] = Gc
        G[self.G_box.shape[0]: self.G_box.shape[0] + r, n:] = -np.eye(r)
        G[self.G_box.shape[0] + r:, n:] = -np.eye(r)
        h = np.concatenate([self.h_box, hc, np.zeros(r)])
        P = np.zeros((n + r, n + r))
        P[:n, :n] = self.P
        q = np.concatenate([self.q, np.full(r, penalty)])
        return ConicProgram(q=q, P=P, G=G, h=h, dims=ConeDims(l=G.shape[0]), check=False)

    def full_trajectory_program(self, rows) -> ConicProgram:
        """Same restriction over ``(x_1..x_T, u_0..u_{T-1})`` with dynamics equalities."""
        p = self.problem
        T = p.horizon
        m = p.model
        nx, nu = 6 * T, 3 * T
        Aeq = np.zeros((nx, nx + nu))
        beq = np.zeros(nx)
        for l in range(T):
            Aeq[6 * l: 6 * l + 6, 6 * l: 6 * l + 6] = np.eye(6)
            Aeq[6 * l: 6 * l + 6, nx + 3 * l: nx + 3 * l + 3] = -m.Bd
            if l == 0:
                beq[:6] = m.Ad @ p.x0
            else:
                Aeq[6 * l: 6 * l + 6, 6 * (l - 1): 6 * l] = -m.Ad
        P = np.zeros((nx + nu, nx + nu))
        P[:nx, :nx] = 2.0 * self.Qbar
        P[nx:, nx:] = 2.0 * self.Rbar
        q = np.concatenate([-2.0 * self.Qbar @ p.x_ref.reshape(-1), np.zeros(nu)])
        if p.plan_ref is not None and p.consistency > 0:
            for l in range(T):
                sl = slice(6 * l, 6 * l + 3)
                P[sl, sl] += 2.0 * p.consistency * np.eye(3)
                q[sl] -= 2.0 * p.consistency * p.plan_ref[l]
        rows_G = []
        rows_h = []
        Iu = np.zeros((nu, nx + nu))
        Iu[:, nx:] = np.eye(nu)
        Sv = np.zeros((nu, nx + nu))
        for l in range(T):
            Sv[3 * l: 3 * l + 3, 6 * l + 3: 6 * l + 6] = np.eye(3)
        rows_G += [Iu, -Iu, Sv, -Sv]
        rows_h += [np.full(nu, m.a_max)] * 2 + [np.full(nu, m.v_max)] * 2
        for term, (a, rhs) in zip(p.terms, rows):
            g = np.zeros((1, nx + nu))
            g[0, 6 * (term.step - 1): 6 * (term.step - 1) + 3] = -a
            rows_G.append(g)
            rows_h.append(np.array([-(rhs + ROW_MARGIN)]))
        G = np.vstack(rows_G)
        h = np.concatenate(rows_h)
        return ConicProgram(q=q, P=P, G=G, h=h, A=Aeq, b=beq, dims=ConeDims(l=G.shape[0]), check=False)

    def risk_programs(self, positions) -> list:
        """Fix-trajectory restriction: one multiplier program per block."""
        return [t.block.risk_program(positions[t.step - 1], t.z_j) for t in self.problem.terms]


def assemble(problem: MPCProblem) -> AssembledProblem:
    return AssembledProblem(problem)


@dataclass(eq=False)
class WarmStart:
    """Initial trajectory guess and (optionally) per-block multipliers."""

    inputs: np.ndarray
    positions: np.ndarray | None = None
    multipliers: dict | None = None  # (neighbor, step) -> BlockAssignment


@dataclass(eq=False)
class SolveResult:
    status: str
    states: np.ndarray
    inputs: np.ndarray
    multipliers: list
    objective: float
    outer_iterations: int
    inner_iterations: int
    solve_time: float
    objective_history: list = field(default_factory=list)
    risk_margins: np.ndarray | None = None
    block_residual: float = -np.inf
    dynamics_residual: float = 0.0
    keys: list = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, MAX_ITER)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :3]


def cold_start(problem: MPCProblem) -> WarmStart:
    """Straight line toward the reference at no more than ``v_max`` per axis."""
    T, m = problem.horizon, problem.model
    p0 = problem.x0[:3]
    goal = problem.x_ref[-1, :3]
    step = goal - p0
    dist = float(np.max(np.abs(step))) if step.size else 0.0
    pos = np.empty((T, 3))
    for l in range(1, T + 1):
        frac = 1.0 if dist == 0 else min(1.0, l * m.dt * m.v_max / dist)
        pos[l - 1] = p0 + frac * step
    return WarmStart(inputs=np.zeros((T, 3)), positions=pos, multipliers=None)


def warm_start_shift(previous: SolveResult) -> WarmStart:
    """Shift a solution one step forward, repeating the final step."""
    u = np.asarray(previous.inputs)
    u_new = np.vstack([u[1:], u[-1:]]) if u.shape[0] > 1 else u.copy()
    pos = previous.positions
    pos_new = np.vstack([pos[1:], pos[-1:]]) if pos.shape[0] > 1 else pos.copy()
    mult = None
    if previous.multipliers and previous.keys:
        T = u.shape[0]
        by_key = dict(zip(previous.keys, previous.multipliers))
        mult = {}
        for (nb, step), asg in by_key.items():
            if step >= 2:
                mult[(nb, step - 1)] = asg
        for (nb, step), asg in by_key.items():
            if step == T:
                mult[(nb, T)] = asg
    return WarmStart(inputs=u_new, positions=pos_new, multipliers=mult)


def _nearest_face(obstacle, rel):
    """Unit-normal multiplier on the face whose plane is crossed last."""
    A, b = obstacle.A, obstacle.b
    norms = np.linalg.norm(A, axis=1)
    f = int(np.argmax((A @ rel - b) / norms))
    lam = np.zeros(A.shape[0])
    lam[f] = 1.0 / norms[f]
    return lam


def _direction(term, asg: BlockAssignment, z_i):
    """Multipliers used to linearise a block, rescaled so ``||A'lam|| = 1``."""
    obstacle = term.block.obstacle
    lam = asg.lam
    eta = asg.eta
    nrm = float(np.linalg.norm(obstacle.A.T @ lam))
    if nrm < DEGENERATE_NORM:
        lam = _nearest_face(obstacle, np.asarray(z_i) - term.z_j)
        eta = None if eta is None else np.zeros_like(eta)
    elif nrm < 1.0:
        lam = lam / nrm
        eta = None if eta is None else eta / nrm
    return lam, eta


def _screen(term, z_i):
    """Projection-direction multipliers, kept when the row slack is large.

    Far from the neighbour the slack-maximising multipliers only matter for
    a non-binding row, so the direction from the mean-shifted relative
    position to its projection stands in for a risk-program solve.
    """
    block = term.block
    shift = block.sample_mean if hasattr(block, "samples") else 0.0
    d = np.asarray(z_i, dtype=float) - term.z_j - shift
    obs = block.obstacle
    if obs.box is not None:
        # unit face normals +-R[:, k]: split the local direction by sign
        bx = obs.box
        local = bx.rotation.T @ (d - bx.center)
        local -= np.clip(local, -bx.half_extents, bx.half_extents)
        dist = float(np.sqrt(local @ local))
        if dist <= SCREEN_SLACK:
            return None
        local /= dist
        lam = np.empty(6)
        lam[0::2] = np.maximum(local, 0.0)
        lam[1::2] = np.maximum(-local, 0.0)
    else:
        gap = d - project(d, obs)
        dist = float(np.linalg.norm(gap))
        if dist <= SCREEN_SLACK:
            return None
        A, b = obs.A, obs.b
        norms = np.linalg.norm(A, axis=1)
        active = A @ (d - gap) >= b - 1e-9 * norms
        lam = np.zeros(A.shape[0])
        lam[active], _ = nnls(A[active].T, gap / dist)
    eta = np.zeros((block.n_samples, block.support.n_rows)) if block.support.bounded else None
    a, rhs = block.position_row(lam, eta, term.z_j)
    slack = float(a @ z_i - rhs)
    if slack < SCREEN_SLACK:
        return None
    return BlockAssignment(lam, np.zeros(0), 0.0, 0.0, eta), slack


def _risk_step(terms, positions, tol):
    mults = []
    margins = np.empty(len(terms))
    iters = 0
    for k, term in enumerate(terms):
        screened = _screen(term, positions[term.step - 1])
        if screened is not None:
            mults.append(screened[0])
            margins[k] = screened[1]
            continue
        sol = conic_solve(term.block.risk_program(positions[term.step - 1], term.z_j), tol=tol)
        iters += sol.iterations
        if not sol.ok:
            return None, None, iters, sol.status
        margins[k] = -sol.objective
        mults.append(term.block.unpack(sol.x))
    return mults, margins, iters, None


def _clearance(block):
    return block.params.d_min if hasattr(block, "params") else block.d_min


def push_out(positions, x0, terms, extra: float = PUSH_EXTRA) -> np.ndarray:
    """Move guess points that fall inside a (grown) neighbour body sideways.

    Each offending point is shifted perpendicular to the relative motion, on
    the side it already leans toward; exactly head-on points go to the right
    of the relative velocity.  The result only seeds the first risk step.
    """
    guess = np.array(positions, dtype=float)
    by_nb = {}
    for t in terms:
        by_nb.setdefault(t.neighbor, {})[t.step] = t
    T = guess.shape[0]
    for nb in sorted(by_nb, key=str):
        steps = by_nb[nb]
        for l in sorted(steps):
            term = steps[l]
            obs = term.block.obstacle
            A, b = obs.A, obs.b
            grow = b + (_clearance(term.block) + extra) * np.linalg.norm(A, axis=1)
            rel = guess[l - 1] - term.z_j
            if np.any(A @ rel > grow):
                continue
            prev_i = guess[l - 2] if l >= 2 else x0[:3]
            prev_j = steps[l - 1].z_j if (l - 1) in steps else term.z_j
            if l == 1 and (l + 1) in steps:
                prev_j = 2 * term.z_j - steps[l + 1].z_j
            v = (guess[l - 1] - prev_i) - (term.z_j - prev_j)
            v[2] = 0.0
            side = rel.copy()
            side[2] = 0.0
            nv = np.linalg.norm(v)
            if nv > 1e-9:
                side -= (side @ v) / nv**2 * v
            if np.linalg.norm(side) < 1e-6:
                if nv > 1e-9:
                    side = np.array([v[1], -v[0], 0.0])
                else:
                    side = np.array([0.0, -1.0, 0.0])
            side /= np.linalg.norm(side)
            rate = A @ side
            out = rate > 1e-12
            if not np.any(out):
                continue
            s = np.min((grow[out] - A[out] @ rel) / rate[out])
            guess[l - 1] = term.z_j + rel + s * side
    return guess[:T]


def _alternate(asm, terms, positions, outer_tol, outer_max, inner_tol, penalty):
    """One alternation run from a guess trajectory (risk step first)."""
    history = []
    inner = 0
    u = None
    margins = None
    directions = None
    slack = np.inf
    status, message = MAX_ITER, ""
    outer = 0
    for outer in range(1, outer_max + 1):
        mults, margins, its, err = _risk_step(terms, positions, inner_tol)
        inner += its
        if mults is None:
            status, message = NUMERICAL, f"risk step failed ({err})"
            break
        directions = [_direction(t, a, positions[t.step - 1]) for t, a in zip(terms, mults)]
        rows = [t.block.position_row(lam, eta, t.z_j) for t, (lam, eta) in zip(terms, directions)]
        # hard rows first; the penalised form is slower and only needed when they conflict
        sol = conic_solve(asm.trajectory_program(rows), tol=inner_tol)
        inner += sol.iterations
        if not sol.ok:
            sol = conic_solve(asm.trajectory_program(rows, penalty), tol=max(inner_tol, PENALTY_TOL))
            inner += sol.iterations
        if not sol.ok:
            status, message = NUMERICAL, f"trajectory step ended with {sol.status}"
            break
        n_u = asm.n_inputs
        u = _clip_inputs(sol.x[:n_u], asm.problem.model)
        sigma = np.maximum(sol.x[n_u:], 0.0)
        slack = float(np.max(sigma)) if sigma.size else 0.0
        positions = asm.positions(u)
        history.append(asm.objective(u) + penalty * float(np.sum(sigma)))
        if len(history) >= 2 and abs(history[-1] - history[-2]) < outer_tol:
            status = OPTIMAL
            break
    if u is not None and status != NUMERICAL and slack > SLACK_TOL:
        status, message = INFEASIBLE, f"collision rows violated by up to {slack:.3g} m"
    return dict(status=status, message=message, u=u, history=history, inner=inner, outer=outer,
                margins=margins, directions=directions)


def alternating_solve(problem: MPCProblem, warm_start: WarmStart | None = None, outer_tol: float = 1e-5,
                      outer_max: int = 30, inner_tol: float = 1e-8, penalty: float = PENALTY) -> SolveResult:
    """Alternate risk and trajectory steps until the objective settles.

    The first risk step is taken at the unconstrained tracking trajectory
    pushed out of the neighbour bodies (:func:`push_out`); if that run does
    not produce a feasible plan and a warm start is given, the alternation is
    repeated from the warm-start trajectory and the better feasible run kept.
    Collision rows carry an exact-penalty slack so that a transiently
    inconsistent linearisation does not stop the iteration; a run whose final
    slack is positive is reported as infeasible.
    """
    t0 = time.perf_counter()
    asm = assemble(problem)
    terms = problem.terms
    T = problem.horizon
    keys = [(t.neighbor, t.step) for t in terms]

    free = conic_solve(asm.trajectory_program([]), tol=inner_tol)
    if not free.ok:
        states = asm.states(np.zeros(3 * T))
        return SolveResult(NUMERICAL, states, np.zeros((T, 3)), [], float("nan"), 0, free.iterations,
                           time.perf_counter() - t0, [], None, np.inf, 0.0, keys,
                           f"tracking QP ended with {free.status}")
    u_free = _clip_inputs(free.x, problem.model)
    if not terms:
        J = asm.objective(u_free)
        return SolveResult(OPTIMAL, asm.states(u_free), u_free.reshape(T, 3), [], J, 1, free.iterations,
                           time.perf_counter() - t0, [J], None, -np.inf, 0.0, keys)

    free_pos = asm.positions(u_free)
    clear = [_screen(t, free_pos[t.step - 1]) for t in terms]
    if all(c is not None for c in clear):
        # the tracking optimum already keeps clear of every neighbour
        directions = [(c[0].lam, c[0].eta) for c in clear]
        run = dict(status=OPTIMAL, message="", u=u_free, history=[asm.objective(u_free)], inner=0, outer=1,
                   margins=np.array([c[1] for c in clear]), directions=directions)
    else:
        run = None
    guess = push_out(free_pos, problem.x0, terms) if run is None else None
    if run is None:
        run = _alternate(asm, terms, guess, outer_tol, outer_max, inner_tol, penalty)
    inner = free.iterations + run["inner"]
    if run["status"] in (INFEASIBLE, NUMERICAL) and warm_start is not None and warm_start.positions is not None:
        other = _alternate(asm, terms, np.asarray(warm_start.positions, dtype=float).reshape(T, 3),
                           outer_tol, outer_max, inner_tol, penalty)
        inner += other["inner"]
        if other["status"] in (OPTIMAL, MAX_ITER) or run["u"] is None:
            run = other

    elapsed = time.perf_counter() - t0
    u = run["u"]
    status, message, history = run["status"], run["message"], run["history"]
    if u is None:
        u = np.zeros(3 * T)
        return SolveResult(status, asm.states(u), u.reshape(T, 3), [], float("nan"), run["outer"], inner, elapsed,
                           history, run["margins"], np.inf, 0.0, keys, message)
    states = asm.states(u)
    final = []
    worst = -np.inf
    for term, (lam, eta) in zip(terms, run["directions"]):
        z_i = states[term.step - 1, :3]
        asg = term.block.complete(lam, eta, z_i, term.z_j)
        worst = max(worst, term.block.evaluate(z_i, term.z_j, asg).max_residual)
        final.append(asg)
    if status in (OPTIMAL, MAX_ITER) and worst > FEASIBILITY_TOL:
        status, message = NUMERICAL, f"certificate residual {worst:.3g} above tolerance"
    return SolveResult(status, states, u.reshape(T, 3), final, asm.objective(u), run["outer"], inner, elapsed,
                       history, run["margins"], worst, 0.0, keys, message)


def _clip_inputs(u, model: LinearAgentModel):
    """Remove solver round-off outside the acceleration box."""
    return np.clip(u, -model.a_max, model.a_max)
