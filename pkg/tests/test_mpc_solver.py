import numpy as np
import pytest

from drcvar_nav.conic import conic_solve
from drcvar_nav.dynamics import LinearAgentModel
from drcvar_nav.geometry import make_box, signed_distance, translate
from drcvar_nav.mpc_solver import (
    OPTIMAL,
    CollisionTerm,
    MPCProblem,
    SolveResult,
    alternating_solve,
    assemble,
    cold_start,
    warm_start_shift,
)
from drcvar_nav.oracles import lq_tracking
from drcvar_nav.risk import (
    AmbiguityParams,
    DRCVaRBlock,
    DeterministicBlock,
    ErrorSampleSet,
    SupportPolytope,
    conservativeness_check,
)

MODEL = LinearAgentModel(0.1, a_max=5.0, v_max=2.0)
Q = np.diag([1.0, 1, 1, 0.1, 0.1, 0.1])
R = 0.1 * np.eye(3)
PARAMS = AmbiguityParams(theta=1e-3, alpha=0.1, d_min=0.1, n_samples=10)
BODY = make_box(np.zeros(3), [1.0, 1.0, 1.0])


def drcvar_terms(pred, rng=None, scale=0.05):
    terms = []
    for l in range(1, pred.shape[0] + 1):
        w = np.zeros((10, 3)) if rng is None else rng.normal(size=(10, 3)) * scale
        blk = DRCVaRBlock(PARAMS, ErrorSampleSet(w), SupportPolytope.unbounded(), BODY)
        terms.append(CollisionTerm("j", l, blk, pred[l - 1]))
    return terms


def head_on(T=20, rng=None):
    x0 = np.array([-5.0, 0, 0, 0, 0, 0])
    ref = np.array([5.0, 0, 0, 0, 0, 0])
    pred = np.array([[5.0 - 0.2 * l, 0.0, 0.0] for l in range(1, T + 1)])
    return MPCProblem(MODEL, T, Q, R, x0, ref, drcvar_terms(pred, rng))


def check_dynamics(res: SolveResult, prob: MPCProblem):
    x = prob.x0
    for k in range(prob.horizon):
        x = MODEL.Ad @ x + MODEL.Bd @ res.inputs[k]
        assert np.abs(x - res.states[k]).max() <= 1e-7


def test_structural_counts():
    asm = assemble(head_on())
    assert asm.problem.terms[0].block.n_vars == 18
    assert asm.n_risk_vars == 360
    assert asm.n_trajectory_vars == 9 * 20
    assert len(asm.bilinear) == 20


def test_fix_z_has_no_bilinear_rows():
    prob = head_on(T=5)
    asm = assemble(prob)
    progs = asm.risk_programs(np.zeros((5, 3)) - [3.0, 0, 0])
    # fixed positions enter only as data; one extra variable carries the common slack
    for p, t in zip(progs, prob.terms):
        assert p.n == t.block.n_vars + 1
        assert p.G.shape[0] == p.dims.m


def test_zero_neighbours_is_lq_tracking():
    T = 10
    x0 = np.array([0.2, -0.1, 0.05, 0.0, 0.1, 0.0])
    ref = np.zeros(6)
    prob = MPCProblem(MODEL, T, Q, R, x0, ref)
    res = alternating_solve(prob)
    u_ref = lq_tracking(MODEL.Ad, MODEL.Bd, Q, R, x0, np.tile(ref, (T, 1)))
    np.testing.assert_allclose(res.inputs, u_ref, atol=1e-5)


def test_far_obstacle_matches_lq_tracking():
    T = 10
    x0 = np.array([0.2, -0.1, 0.05, 0.0, 0.1, 0.0])
    pred = np.tile([100.0, 0, 0], (T, 1))
    prob = MPCProblem(MODEL, T, Q, R, x0, np.zeros(6), drcvar_terms(pred))
    res = alternating_solve(prob)
    assert res.status == OPTIMAL
    u_ref = lq_tracking(MODEL.Ad, MODEL.Bd, Q, R, x0, np.zeros((T, 6)))
    np.testing.assert_allclose(res.inputs, u_ref, atol=1e-5)


def test_condensed_matches_full_form():
    prob = head_on(T=8)
    asm = assemble(prob)
    a = np.array([0.0, 1.0, 0.0])
    rows = [(a, 0.02 * t.step) for t in prob.terms]
    cond = conic_solve(asm.trajectory_program(rows), tol=1e-10)
    full = conic_solve(asm.full_trajectory_program(rows), tol=1e-10)
    assert cond.ok and full.ok
    np.testing.assert_allclose(full.x[6 * 8:], cond.x, atol=1e-5)
    np.testing.assert_allclose(full.x[: 6 * 8], asm.states(cond.x).reshape(-1), atol=1e-5)


def test_first_risk_step_pushes_on_facing_face():
    blk = DRCVaRBlock(PARAMS, ErrorSampleSet.zeros(10), SupportPolytope.unbounded(), BODY)
    z_i, z_j = np.array([-3.0, 0.1, 0.0]), np.zeros(3)
    sol = conic_solve(blk.risk_program(z_i, z_j))
    asg = blk.unpack(sol.x)
    facing = int(np.argmin(BODY.A[:, 0]))
    assert asg.lam[facing] > 1e-3
    others = np.delete(asg.lam, facing)
    assert np.all(others < 1e-6)
    assert blk.evaluate(z_i, z_j, asg).feasible


def test_head_on_solution_is_certified(rng):
    prob = head_on(rng=rng)
    res = alternating_solve(prob, cold_start(prob))
    assert res.ok
    check_dynamics(res, prob)
    assert res.block_residual <= 1e-7
    for t, asg in zip(prob.terms, res.multipliers):
        z_i = res.positions[t.step - 1]
        assert t.block.evaluate(z_i, t.z_j, asg).max_residual <= 1e-7
        assert conservativeness_check(t.block, z_i, t.z_j, asg, t.block.samples, PARAMS.alpha)
    # the plan keeps clear of the predicted body
    gaps = [signed_distance(res.positions[t.step - 1], translate(BODY, t.z_j)) for t in prob.terms]
    assert min(gaps) > 0


def test_deterministic_blocks_certified():
    T = 10
    pred = np.array([[2.0 - 0.2 * l, 0.0, 0.0] for l in range(1, T + 1)])
    terms = [CollisionTerm("j", l, DeterministicBlock(0.1, BODY), pred[l - 1]) for l in range(1, T + 1)]
    prob = MPCProblem(MODEL, T, Q, R, [-2.0, 0.05, 0, 0.5, 0, 0], [4.0, 0, 0, 0, 0, 0], terms)
    res = alternating_solve(prob)
    assert res.ok
    check_dynamics(res, prob)
    for t, asg in zip(terms, res.multipliers):
        assert t.block.evaluate(res.positions[t.step - 1], t.z_j, asg).max_residual <= 1e-7


def test_objective_history_non_increasing(rng):
    res = alternating_solve(head_on(rng=rng))
    h = np.asarray(res.objective_history)
    assert np.all(np.diff(h) <= 1e-6 * (1 + np.abs(h[:-1])))


def test_warm_start_shift_and_steady_state():
    T = 6
    goal = np.array([1.0, 2.0, 3.0, 0, 0, 0])
    prob = MPCProblem(MODEL, T, Q, R, goal, goal)
    res = alternating_solve(prob)
    warm = warm_start_shift(res)
    np.testing.assert_allclose(warm.inputs, 0.0, atol=1e-9)
    np.testing.assert_allclose(warm.positions, np.tile(goal[:3], (T, 1)), atol=1e-9)


def test_warm_start_shift_horizon_one():
    prob = MPCProblem(MODEL, 1, Q, R, np.zeros(6), [1.0, 0, 0, 0, 0, 0])
    res = alternating_solve(prob)
    warm = warm_start_shift(res)
    np.testing.assert_array_equal(warm.inputs, res.inputs)
    np.testing.assert_array_equal(warm.positions, res.positions)


def test_cold_start_straight_line():
    prob = MPCProblem(MODEL, 20, Q, R, np.zeros(6), [10.0, 0, 0, 0, 0, 0])
    ws = cold_start(prob)
    assert ws.multipliers is None and np.all(ws.inputs == 0)
    np.testing.assert_allclose(ws.positions[:, 0], 0.2 * np.arange(1, 21))
    assert np.all(ws.positions[:, 1:] == 0)


def test_problem_validation():
    with pytest.raises(ValueError):
        MPCProblem(MODEL, 0, Q, R, np.zeros(6), np.zeros(6))
    with pytest.raises(ValueError):
        MPCProblem(MODEL, 5, -Q, R, np.zeros(6), np.zeros(6))
    with pytest.raises(ValueError):
        MPCProblem(MODEL, 5, Q, R, np.zeros(6), np.zeros((4, 6)))
    blk = DeterministicBlock(0.1, BODY)
    with pytest.raises(ValueError):
        MPCProblem(MODEL, 5, Q, R, np.zeros(6), np.zeros(6), [CollisionTerm("j", 6, blk, np.zeros(3))])
