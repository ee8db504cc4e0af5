import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drcvar_nav.geometry import (
    GeometryError,
    PolyhedralSet,
    contains,
    distance,
    dual_margin,
    make_box,
    project,
    signed_distance,
    translate,
)
from drcvar_nav.oracles import projection_distance, random_obstacle, random_rotation

UNIT = make_box(np.zeros(3), np.ones(3))


def test_unit_box_rows():
    A = np.vstack([np.eye(3)[k] * s for k in range(3) for s in (1, -1)])
    np.testing.assert_array_equal(UNIT.A, A)
    np.testing.assert_array_equal(UNIT.b, np.ones(6))
    assert UNIT.n_faces == 6


def test_shifted_box_offsets():
    box = make_box([3.0, 0.0, 0.0], np.ones(3))
    np.testing.assert_allclose(box.b, [4, -2, 1, 1, 1, 1])
    np.testing.assert_allclose(translate(UNIT, [3.0, 0.0, 0.0]).b, [4, -2, 1, 1, 1, 1])


def test_prism_faces():
    prism = make_box(np.zeros(3), [1.0, 1.0, 100.0])
    assert contains(prism, [0.99, -0.99, 50.0])
    assert not contains(prism, [1.01, 0.0, 0.0])


@pytest.mark.parametrize("half,rot", [([0, 1, 1], None), ([1, -1, 1], None), ([1, 1, 1], np.diag([1, 1, 2.0]))])
def test_make_box_rejects(half, rot):
    with pytest.raises(GeometryError):
        make_box(np.zeros(3), half, rot)


def test_polyhedron_validation():
    with pytest.raises(GeometryError):
        PolyhedralSet(np.eye(3), np.ones(3))  # too few faces
    with pytest.raises(GeometryError):
        PolyhedralSet(np.vstack([np.eye(3), [[1, 1, 1]]]), np.ones(4))  # unbounded
    with pytest.raises(GeometryError):
        PolyhedralSet(np.vstack([np.eye(3), -np.eye(3)]), np.r_[-np.ones(3), -np.ones(3)])  # empty
    with pytest.raises(GeometryError):
        PolyhedralSet(np.vstack([np.zeros(3), np.eye(3), -np.eye(3)]), np.ones(7))
    box = PolyhedralSet(np.vstack([np.eye(3), -np.eye(3)]), np.r_[1, 2, 3, 1, 2, 3.0])
    np.testing.assert_allclose(box.bounds, [[-1, -2, -3], [1, 2, 3]], atol=1e-7)


def test_contains():
    assert contains(UNIT, np.zeros(3))
    assert not contains(UNIT, [2.0, 0, 0])
    assert contains(UNIT, [1.0, 0, 0])


def test_translate_membership(rng):
    box = make_box(rng.normal(size=3), rng.uniform(0.5, 2, 3), random_rotation(rng))
    v = rng.normal(size=3)
    moved = translate(box, v)
    np.testing.assert_array_equal(moved.A, box.A)
    pts = rng.normal(size=(1000, 3)) * 3
    assert [contains(moved, p) for p in pts] == [contains(box, p - v) for p in pts]
    same = translate(box, np.zeros(3))
    np.testing.assert_array_equal(same.b, box.b)


def test_distance_examples():
    assert distance([3.0, 0, 0], UNIT) == pytest.approx(2.0, abs=1e-12)
    assert distance([0.2, 0.1, -0.3], UNIT) == 0.0
    assert distance([2.0, 2.0, 0], UNIT) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_signed_distance_inside():
    assert signed_distance([0.5, 0, 0], UNIT) == pytest.approx(-0.5)
    assert signed_distance([3.0, 0, 0], UNIT) == pytest.approx(2.0)


def test_general_polytope_projection(rng):
    for _ in range(30):
        obs = random_obstacle(rng)
        p = rng.normal(size=3) * 4
        ref = projection_distance(p, obs.A, obs.b)
        assert distance(p, obs) == pytest.approx(ref, abs=1e-6)
        if ref > 0:
            assert contains(obs, project(p, obs), tol=1e-7)


def test_distance_zero_iff_contains(rng):
    for _ in range(200):
        obs = random_obstacle(rng)
        p = rng.normal(size=3) * 2
        assert (distance(p, obs) == 0.0) == contains(obs, p)


def test_box_clamp_formula(rng):
    for _ in range(200):
        half = rng.uniform(0.1, 2, 3)
        c = rng.normal(size=3)
        p = rng.normal(size=3) * 3
        ref = np.linalg.norm(np.maximum(np.abs(p - c) - half, 0.0))
        assert distance(p, make_box(c, half)) == pytest.approx(ref, abs=1e-12)


def test_translation_equivariance(rng):
    for _ in range(50):
        obs = random_obstacle(rng)
        p, v = rng.normal(size=3) * 3, rng.normal(size=3)
        assert distance(p, translate(obs, v)) == pytest.approx(distance(p - v, obs), abs=1e-9)


def test_dual_margin_examples():
    m, lam = dual_margin([3.0, 0, 0], UNIT)
    assert m == pytest.approx(2.0, abs=1e-7)
    assert lam[0] == pytest.approx(1.0, abs=1e-6)
    assert np.all(np.abs(lam[1:]) < 1e-6)
    m, lam = dual_margin([0.1, 0.2, 0.0], UNIT)
    assert m == 0.0
    np.testing.assert_array_equal(lam, 0.0)


def test_dual_margin_multiplier_conditions(rng):
    for _ in range(100):
        box = make_box(rng.normal(size=3), rng.uniform(0.3, 2, 3), random_rotation(rng))
        d = rng.normal(size=3)
        p = box.box.center + d / np.linalg.norm(d) * rng.uniform(3, 6)
        m, lam = dual_margin(p, box)
        assert m == pytest.approx(distance(p, box), abs=1e-6)
        assert np.all(lam >= -1e-7)
        assert np.linalg.norm(box.A.T @ lam) <= 1 + 1e-7


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(0.1, 3), min_size=3, max_size=3))
def test_dual_margin_property(p, half):
    box = make_box(np.zeros(3), half)
    m, _ = dual_margin(p, box)
    assert m == pytest.approx(distance(p, box), abs=1e-6)


def test_pickle_round_trip():
    import pickle

    s = make_box([1.0, 2.0, 3.0], [0.5, 1.0, 1.5])
    t = pickle.loads(pickle.dumps(s))
    np.testing.assert_array_equal(t.A, s.A)
    np.testing.assert_array_equal(t.b, s.b)
    assert t.box is not None and t.n_faces == 6
    with pytest.raises(AttributeError):
        t.b = None
