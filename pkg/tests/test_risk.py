import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drcvar_nav.conic import conic_solve
from drcvar_nav.geometry import distance, make_box, translate
from drcvar_nav.oracles import cvar_grid
from drcvar_nav.risk import (
    AmbiguityParams,
    BlockAssignment,
    DeterministicBlock,
    ErrorSampleSet,
    SupportPolytope,
    build_drcvar_block,
    conservativeness_check,
    empirical_cvar,
    evaluate_block,
    sampled_cvar,
)

BOX = make_box(np.zeros(3), np.ones(3))
W4 = np.array([[0.1, 0.0, 0.0], [-0.2, 0.1, 0.0], [0.05, -0.1, 0.02], [0.0, 0.2, -0.1]])
CUBE_SUPPORT = SupportPolytope.polytope(np.vstack([np.eye(3), -np.eye(3)]), np.full(6, 2.0))


def block(theta=0.01, alpha=0.1, d_min=0.1, W=W4, support=None):
    W = np.asarray(W, dtype=float)
    return build_drcvar_block(AmbiguityParams(theta, alpha, d_min, len(W)), ErrorSampleSet(W),
                              support or SupportPolytope.unbounded(), BOX)


def test_cvar_examples():
    assert empirical_cvar([0.0, 2.0], 0.5) == pytest.approx(2.0)
    assert empirical_cvar([0.7] * 5, 0.3) == pytest.approx(0.7)
    x = np.array([0.3, -1.0, 2.5, 0.1])
    assert empirical_cvar(x, 1.0) == pytest.approx(x.mean())
    with pytest.raises(ValueError):
        empirical_cvar([], 0.5)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=25), st.sampled_from([0.05, 0.1, 0.5, 1.0]))
def test_cvar_matches_grid(x, alpha):
    assert empirical_cvar(x, alpha) == pytest.approx(cvar_grid(x, alpha), abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=25))
def test_cvar_bounds(x):
    # between the mean and the maximum, non-increasing in alpha
    vals = [empirical_cvar(x, a) for a in (0.05, 0.1, 0.5, 1.0)]
    assert np.mean(x) - 1e-9 <= vals[-1] and vals[0] <= max(x) + 1e-9
    assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("kw", [dict(theta=-1), dict(alpha=0), dict(alpha=1.5), dict(d_min=-0.1), dict(n_samples=0)])
def test_params_invalid(kw):
    base = dict(theta=0.1, alpha=0.1, d_min=0.1, n_samples=2)
    base.update(kw)
    with pytest.raises(ValueError):
        AmbiguityParams(**base)


def test_structural_counts():
    b = block(W=np.zeros((2, 3)))
    assert b.constraint_counts() == {"variables": 10, "budget_rows": 1, "coupling_rows": 2, "cones": 2}
    bp = block(W=np.zeros((2, 3)), support=CUBE_SUPPORT)
    assert bp.n_vars == 10 + 2 * 6
    assert bp.constraint_counts()["cones"] == 3
    assert block(W=np.zeros((10, 3))).n_vars == 18


def test_sample_count_mismatch():
    with pytest.raises(ValueError):
        build_drcvar_block(AmbiguityParams(0, 0.1, 0.1, 3), ErrorSampleSet(np.zeros((2, 3))),
                           SupportPolytope.unbounded(), BOX)


def test_zero_assignment_residuals():
    b = block(d_min=0.5)
    asg = BlockAssignment(np.zeros(6), np.zeros(4), 0.0, 0.0)
    rep = evaluate_block(b, [3.0, 0, 0], np.zeros(3), asg)
    np.testing.assert_allclose(rep.rows["coupling"], 0.5)
    assert not rep.feasible


def test_cone_violation():
    b = block()
    lam = np.zeros(6)
    lam[0] = 0.6
    asg = BlockAssignment(2 * lam, np.zeros(4), 0.0, 2.0)
    assert evaluate_block(b, [3.0, 0, 0], np.zeros(3), asg).rows["cone_unit"][0] == pytest.approx(0.2)


def test_theta_zero_budget():
    b = block(theta=0.0)
    asg = BlockAssignment(np.zeros(6), np.array([1.0, 0, 0, 0]), 0.5, 123.0)
    assert evaluate_block(b, np.zeros(3), np.zeros(3), asg).rows["budget"][0] == pytest.approx(-0.05 + 0.25)


# maximal common slack of the coupling rows, from an independent conic solver
FROZEN_SLACK = [((0.01, 0.1, 0.1), 1.2), ((0.0, 1.0, 0.1), 1.4125), ((0.05, 0.5, 0.2), 1.125)]


@pytest.mark.parametrize("params,slack", FROZEN_SLACK)
def test_risk_program_frozen(params, slack):
    b = block(*params)
    zi = np.array([2.5, 0.4, 0.0])
    sol = conic_solve(b.risk_program(zi, np.zeros(3)))
    assert sol.ok
    assert -sol.objective == pytest.approx(slack, abs=1e-6)
    asg = b.unpack(sol.x)
    assert evaluate_block(b, zi, np.zeros(3), asg).feasible
    # the linearised row reproduces the slack
    a, rhs = b.position_row(asg.lam, asg.eta, np.zeros(3))
    assert a @ zi - rhs == pytest.approx(slack, abs=1e-6)


def test_complete_is_feasible_iff_row_holds(rng):
    b = block()
    lam = np.zeros(6)
    lam[0] = 1.0
    a, rhs = b.position_row(lam, None, np.zeros(3))
    for x in (rhs + 0.01, rhs - 0.01):
        zi = np.array([x, 0.0, 0.0])
        ok = evaluate_block(b, zi, np.zeros(3), b.complete(lam, None, zi, np.zeros(3))).feasible
        assert ok == (a @ zi >= rhs)


def _solve_assignment(b, zi, zj):
    sol = conic_solve(b.risk_program(zi, zj))
    if not sol.ok or -sol.objective < 0:
        return None
    asg = b.unpack(sol.x)
    return asg if evaluate_block(b, zi, zj, asg).feasible else None


def test_conservativeness_random(rng):
    checked = 0
    for trial in range(60):
        W = rng.normal(size=(5, 3)) * rng.uniform(0.0, 0.5)
        support = CUBE_SUPPORT if trial % 3 == 0 else None
        if support is not None:
            W = np.clip(W, -1.9, 1.9)
        b = block(10 ** rng.uniform(-4, -1), rng.choice([0.05, 0.1, 0.5, 1.0]), 0.1, W, support)
        zi, zj = rng.normal(size=3) * 3, rng.normal(size=3) * 0.3
        asg = _solve_assignment(b, zi, zj)
        if asg is None:
            continue
        checked += 1
        assert conservativeness_check(b, zi, zj, asg, b.samples, b.params.alpha)
    assert checked > 20


def test_conservativeness_single_sample():
    b = block(theta=0.0, alpha=0.5, W=np.zeros((1, 3)))
    zi = np.array([4.0, 0, 0])
    asg = _solve_assignment(b, zi, np.zeros(3))
    assert conservativeness_check(b, zi, np.zeros(3), asg, b.samples, 0.5)
    assert sampled_cvar(b, zi, np.zeros(3), b.samples, 0.5) == pytest.approx(0.1 - 3.0)


def test_nested_theta_and_alpha(rng):
    for _ in range(40):
        W = rng.normal(size=(4, 3)) * 0.2
        zi = rng.normal(size=3) * 3
        b_hi = block(theta=0.05, alpha=0.1, W=W)
        asg = _solve_assignment(b_hi, zi, np.zeros(3))
        if asg is None:
            continue
        assert evaluate_block(block(theta=0.01, alpha=0.1, W=W), zi, np.zeros(3), asg).feasible
        if asg.t >= 0:
            assert evaluate_block(block(theta=0.05, alpha=0.5, W=W), zi, np.zeros(3), asg).feasible


def test_polytope_support_agrees_with_unbounded_for_wide_support(rng):
    wide = SupportPolytope.polytope(np.vstack([np.eye(3), -np.eye(3)]), np.full(6, 50.0))
    for _ in range(30):
        W = rng.normal(size=(4, 3)) * 0.3
        zi = rng.normal(size=3) * 2.5
        s_u = -conic_solve(block(W=W).risk_program(zi, np.zeros(3))).objective
        s_p = -conic_solve(block(W=W, support=wide).risk_program(zi, np.zeros(3))).objective
        assert (s_u >= 0) == (s_p >= -1e-7) or abs(s_u) < 1e-6
        assert s_p >= s_u - 1e-6  # the bounded block is never more restrictive


def test_deterministic_block_matches_margin():
    d = DeterministicBlock(0.1, BOX)
    sol = conic_solve(d.risk_program([3.0, 0.5, 0.0], np.zeros(3)))
    assert -sol.objective == pytest.approx(2.0 - 0.1, abs=1e-7)
    asg = d.unpack(sol.x)
    assert d.evaluate([3.0, 0.5, 0.0], np.zeros(3), asg).feasible


def test_drcvar_reduces_to_deterministic():
    zi = np.array([1.7, -2.2, 0.0])
    zero = block(theta=0.0, alpha=1.0, W=np.zeros((3, 3)))
    det = DeterministicBlock(0.1, BOX)
    s1 = -conic_solve(zero.risk_program(zi, np.zeros(3))).objective
    s2 = -conic_solve(det.risk_program(zi, np.zeros(3))).objective
    assert s1 == pytest.approx(s2, abs=1e-7)
    assert s2 == pytest.approx(distance(zi, BOX) - 0.1, abs=1e-7)


def test_sampled_cvar_uses_translated_bodies():
    b = block(theta=0.0, alpha=1.0, W=np.array([[0.5, 0, 0], [-0.5, 0, 0]]))
    zi = np.array([3.0, 0, 0])
    ref = np.mean([0.1 - distance(zi, translate(BOX, w)) for w in b.samples.samples])
    assert sampled_cvar(b, zi, np.zeros(3), b.samples, 1.0) == pytest.approx(ref)
