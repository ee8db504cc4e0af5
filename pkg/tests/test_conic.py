import numpy as np
import pytest
from scipy.optimize import linprog

from drcvar_nav.conic import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    ConeDims,
    ConicProgram,
    conic_solve,
)
from drcvar_nav.oracles import soc_projection

# reference optimum from an external conic solver (gap tolerance 1e-12),
# instance built from default_rng(7) as below
FROZEN_QP_OBJECTIVE = 0.47375577938112157
FROZEN_QP_X = np.array([1.2710520667, 1.1143059784, -0.0727180401, 0.0791813186, -0.0352868487,
                        1.054484622, -0.2598391007, 0.8579564772, -0.9720667079, -0.1927459126])


def test_scalar_quadratic():
    sol = conic_solve(ConicProgram(q=[-2.0], P=[[2.0]], G=np.zeros((0, 1)), h=[], dims=ConeDims()))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)


def test_linear_over_soc():
    # (1, x) in the cone: |x| <= 1
    G = np.array([[0.0], [-1.0]])
    sol = conic_solve(ConicProgram(q=[1.0], G=G, h=[1.0, 0.0], dims=ConeDims(q=(2,))))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(-1.0, abs=1e-7)


def test_random_qp_three_cones():
    rng = np.random.default_rng(7)
    n = 10
    M = rng.normal(size=(n, n))
    P = M @ M.T / n + np.eye(n)
    q = rng.normal(size=n) * 3
    c = rng.normal(size=n)
    sol = conic_solve(ConicProgram(q=q, P=P, G=-np.eye(n), h=c, dims=ConeDims(q=(3, 4, 3))))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(FROZEN_QP_OBJECTIVE, abs=1e-4)
    np.testing.assert_allclose(sol.x, FROZEN_QP_X, atol=1e-5)


def test_soc_projection_matches_closed_form(rng):
    for _ in range(20):
        v = rng.normal(size=4) * 2
        prog = ConicProgram(q=-2 * v, P=2 * np.eye(4), G=-np.eye(4), h=np.zeros(4), dims=ConeDims(q=(4,)))
        np.testing.assert_allclose(conic_solve(prog).x, soc_projection(v), atol=1e-6)


def test_lp_against_highs(rng):
    for _ in range(20):
        k = 4
        x_in = rng.normal(size=k)
        G = np.vstack([np.eye(k), -np.eye(k), rng.normal(size=(3, k))])
        h = np.concatenate([x_in + 1, 1 - x_in, G[2 * k:] @ x_in + 0.5])
        q = rng.normal(size=k)
        ref = linprog(q, A_ub=G, b_ub=h, bounds=[(None, None)] * k, method="highs")
        sol = conic_solve(ConicProgram(q=q, G=G, h=h, dims=ConeDims(l=G.shape[0])))
        assert sol.objective == pytest.approx(ref.fun, abs=1e-6)


def test_equality_constraints():
    # min x'x s.t. x0 + x1 = 2
    sol = conic_solve(ConicProgram(q=[0, 0], P=2 * np.eye(2), G=np.zeros((0, 2)), h=[], dims=ConeDims(),
                                   A=[[1.0, 1.0]], b=[2.0]))
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-7)


def test_infeasible_detected():
    # x <= -1 and x >= 1
    sol = conic_solve(ConicProgram(q=[1.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0], dims=ConeDims(l=2)))
    assert sol.status == INFEASIBLE
    assert not sol.ok


def test_unbounded_detected():
    sol = conic_solve(ConicProgram(q=[1.0], G=[[1.0]], h=[0.0], dims=ConeDims(l=1)))
    assert sol.status == UNBOUNDED


def test_program_validation():
    with pytest.raises(ValueError):
        ConeDims(l=-1)
    with pytest.raises(ValueError):
        ConicProgram(q=[1.0], G=[[1.0]], h=[0.0, 1.0], dims=ConeDims(l=1))
    with pytest.raises(ValueError):
        ConicProgram(q=[1.0, 0.0], P=[[1.0, 0.0], [0.0, -1.0]], G=np.zeros((0, 2)), h=[], dims=ConeDims())
    with pytest.raises(ValueError):
        ConicProgram(q=[1.0, 0.0], P=[[1.0, 1.0], [0.0, 1.0]], G=np.zeros((0, 2)), h=[], dims=ConeDims())
