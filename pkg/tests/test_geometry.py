import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from microlam import geometry as geo
from microlam.errors import Degenerate, Singular

SQ = geo.rect(0, 0, 1, 1)


def random_convex(rng, k=6):
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    r = rng.uniform(0.3, 1.0)
    c = rng.uniform(-0.5, 0.5, 2)
    return geo.convex_poly(c + r * np.column_stack([np.cos(ang), np.sin(ang)]))


def test_area_examples():
    assert geo.area([[0, 0], [1, 0], [0, 1]]) == 0.5
    assert geo.area(geo.empty()) == 0
    assert geo.area(SQ) == 1


def test_convex_poly_normalises_orientation():
    P = geo.convex_poly(SQ[::-1])
    assert geo.signed_area(P) > 0
    assert geo.is_convex(P)


def test_clip_examples():
    assert abs(geo.area(geo.clip(SQ, SQ)) - 1) < 1e-14
    assert abs(geo.area(geo.clip(SQ, SQ + 0.5)) - 0.25) < 1e-14
    assert len(geo.clip(SQ, SQ + 3)) == 0


def test_clip_commutative_and_monte_carlo():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.6, 1.6, size=(100_000, 2))
    box = 3.2 ** 2
    for _ in range(100):
        P, Q = random_convex(rng), random_convex(rng)
        a1 = geo.area(geo.clip(P, Q))
        a2 = geo.area(geo.clip(Q, P))
        assert abs(a1 - a2) <= 1e-12
        assert a1 <= min(geo.area(P), geo.area(Q)) + 1e-10
        hit = geo.contains(P, pts) & geo.contains(Q, pts)
        p = hit.mean()
        se = np.sqrt(max(p * (1 - p), 1.0 / len(pts)) / len(pts)) * box
        assert abs(p * box - a1) <= 3 * se


def test_clip_batch_matches_clip():
    rng = np.random.default_rng(1)
    Q = random_convex(rng)
    tris = rng.uniform(-1, 1, size=(200, 3, 2))
    tris[geo.tri_areas(tris) < 0] = tris[geo.tri_areas(tris) < 0][:, ::-1]
    V, cnt = geo.clip_batch(tris, Q)
    got = geo.poly_areas(V, cnt)
    want = [geo.area(geo.clip(t, Q)) for t in tris]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_fan_triangulate_examples():
    T = np.array([[0.0, 0], [1, 0], [0, 1]])
    assert len(geo.fan_triangulate(T)) == 1
    quad = geo.convex_poly([[0, 0], [2, 0], [2, 1], [0, 1.5]])
    tris = geo.fan_triangulate(quad)
    assert len(tris) == 2
    assert abs(sum(geo.area(t) for t in tris) - geo.area(quad)) < 1e-12
    ang = np.arange(6) * np.pi / 3
    hexa = np.column_stack([np.cos(ang), np.sin(ang)])
    tris = geo.fan_triangulate(hexa)
    assert len(tris) == 4
    assert abs(sum(geo.area(t) for t in tris) - 1.5 * np.sqrt(3)) < 1e-10
    for i in range(4):
        for j in range(i + 1, 4):
            assert geo.area(geo.clip(tris[i], tris[j])) <= 1e-12
    with pytest.raises(Degenerate):
        geo.fan_triangulate(np.zeros((2, 2)))


def test_affine_map_examples():
    np.testing.assert_allclose(geo.affine_map_poly(SQ, np.eye(2), [0, 0]), SQ)
    assert abs(geo.area(geo.affine_map_poly(SQ, 0.5 * np.eye(2), [1, 1])) - 0.25) < 1e-15
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert abs(geo.area(geo.affine_map_poly(SQ, R, [0, 0])) - 1) < 1e-15
    with pytest.raises(Singular):
        geo.affine_map_poly(SQ, np.diag([1.0, -1.0]), [0, 0])


def test_sliver_is_empty():
    assert len(geo.convex_poly([[0, 0], [1, 0], [0.5, 1e-15]])) == 0


@settings(max_examples=100, deadline=None)
@given(hst.floats(0.1, 5), hst.floats(-1, 1), hst.floats(-1, 1))
def test_affine_scaling_area(s, bx, by):
    P = geo.affine_map_poly(SQ, s * np.eye(2), [bx, by])
    assert abs(geo.area(P) - s * s) < 1e-10 * s * s
    assert geo.is_convex(P)
