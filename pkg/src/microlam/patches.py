"""Replacement patches: piecewise-affine maps on a rhombus with affine boundary data.

Both constructions share one nine-cell layout on the rhombus with vertices
(-1, 0), (1, 0), (0, h), (0, -h).  Four interior vertices (+-a, +-b) cut it
into an upper band (three triangles), a middle band (two triangles and a
rectangle) and a lower band.  In a frame where the target rank-one direction
is the q-axis, a cell's perturbation is written (p, q, w) with matrix
``[[p, q - w], [q + w, -p]]``.  Across an edge with tangent angle t the jump must be
parallel to ``ell(t) = (sin 2t, -cos 2t, 1)``, and outside the rhombus the
perturbation vanishes.  Imposing mirror and point symmetry leaves a single
free amplitude once (a, b, h) are fixed, which gives the closed forms below.
"""
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import strain as st
from .errors import AlreadyInWell, Infeasible, TooCloseToBoundary

# cell order used throughout: upper band, middle band, lower band
CELL_NAMES = ("UL", "UM", "UR", "AL", "AM1", "AM2", "AR", "LL", "LM", "LR")
# value class of each triangle (the two AM triangles share one value)
CELL_CLASS = np.array([0, 1, 2, 3, 4, 4, 5, 6, 7, 8])
# vertex indices: L, R, T, B, P1, P2, Q1, Q2
TRIS = np.array([
    [0, 4, 2],
    [4, 5, 2],
    [5, 1, 2],
    [0, 6, 4],
    [4, 6, 7],
    [4, 7, 5],
    [5, 7, 1],
    [0, 3, 6],
    [6, 3, 7],
    [7, 3, 1],
])
BOUNDARY_VERTS = np.array([0, 1, 2, 3])


def ell(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.sin(2 * theta), -np.cos(2 * theta), np.ones_like(theta)], axis=-1)


def layout_vertices(a, b, h):
    return np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, h], [0.0, -h],
                     [-a, b], [a, b], [-a, -b], [a, -b]])


def class_values(a, b, h, w1):
    """Perturbations (p, q, w) of the nine value classes; broadcasts over inputs.

    Returns an array of shape (..., 9, 3) ordered UL, UM, UR, AL, AM, AR, LL, LM, LR.
    """
    a, b, h, w1 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, h, w1)))
    alpha = np.arctan(h)
    ul = w1[..., None] * ell(alpha)
    t_lp = np.arctan2(b, 1 - a)
    t_tp = np.arctan2(b - h, -a)
    al = ul - (ul[..., 0] / np.sin(2 * t_lp))[..., None] * ell(t_lp)
    um = ul - (ul[..., 0] / np.sin(2 * t_tp))[..., None] * ell(t_tp)
    q4 = 0.5 * ((um[..., 1] + um[..., 2]) + (al[..., 1] - al[..., 2]))
    w4 = 0.5 * ((um[..., 1] + um[..., 2]) - (al[..., 1] - al[..., 2]))
    am = np.stack([np.zeros_like(q4), q4, w4], axis=-1)
    ur = ul * np.array([-1.0, 1.0, 1.0])
    return np.stack([ul, um, ur, al, am, al, ur, um, ul], axis=-2)


def band_ratio(a, b, h):
    """q-value of the side middle cells per unit amplitude w1."""
    c0 = 1.0 - a
    return -(c0 + b * h) * (b - h * c0) / (b * c0 * (1.0 + h * h))


def solve_b(a, h, r):
    """Positive b with band_ratio(a, b, h) = r (r > 0); vectorised."""
    a, h, r = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, h, r)))
    c0 = 1.0 - a
    beta = c0 * (1.0 - h * h + r * (1.0 + h * h))
    disc = np.sqrt(beta * beta + 4.0 * h * h * c0 * c0)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(beta >= 0, 2.0 * h * c0 * c0 / (beta + disc), (disc - beta) / (2.0 * h))
    return b


def layout_areas(a, b, h):
    X = layout_vertices(a, b, h)
    return geo.tri_areas(X[TRIS])


def _rot(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def _orientation(u):
    """Rotation angle and sign so that the canonical q-axis maps to sign * u.

    Of the two admissible layouts (laminate normal along n or along n rotated by
    a right angle) the one whose normal has the smaller angle in [0, pi) is used.
    """
    phi0 = 0.5 * (np.arctan2(u[1], u[0]) - np.pi / 2)
    best = None
    for k, sgn in ((0, 1.0), (1, -1.0)):
        phi = phi0 + k * np.pi / 2
        n = np.array([-np.sin(phi), np.cos(phi)])
        ang = np.arctan2(n[1], n[0]) % np.pi
        if best is None or ang < best[0] - 1e-15:
            best = (ang, phi, sgn)
    return best[1], best[2]


@dataclass(frozen=True)
class PatchCombinatorics:
    """Vertex positions, triangle incidences and per-cell gradient constraints.

    ``constraints[j]`` is ``("fixed", F)`` for a prescribed full gradient,
    ``("sym", S)`` for a prescribed symmetric part with free skew part, or
    ``("free", None)``.
    """
    vertices: np.ndarray
    tris: np.ndarray
    boundary: np.ndarray
    constraints: tuple


@dataclass
class Patch:
    domain: np.ndarray
    vertices: np.ndarray
    tris: np.ndarray
    grads: np.ndarray
    disp: np.ndarray
    new_eps: float
    kind: str = ""
    labels: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def cells(self):
        return [(self.vertices[t], self.grads[j]) for j, t in enumerate(self.tris)]

    def offsets(self):
        """beta_j with u(x) = grads[j] x + beta_j on cell j."""
        P0 = self.vertices[self.tris[:, 0]]
        return self.disp[self.tris[:, 0]] - np.einsum("nij,nj->ni", self.grads, P0)


def _grad_operator(X, tri):
    """Rows mapping the six vertex displacements of a triangle to vec(grad u)."""
    P = X[tri]
    E = np.array([P[1] - P[0], P[2] - P[0]]).T
    Einv = np.linalg.inv(E)
    # grad u = [u1 - u0, u2 - u0] @ Einv
    D = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    W = D.T @ Einv  # (3, 2): vertex weights per spatial derivative
    G = np.zeros((4, 6))
    for comp in range(2):
        for der in range(2):
            for v in range(3):
                G[2 * comp + der, 2 * v + comp] = W[v, der]
    return G


def solve_patch(comb, M, domain, new_eps=0.0, tol=1e-8):
    """Solve for vertex displacements meeting the constraints and u = Mx on the boundary."""
    M = np.asarray(M, dtype=float)
    X = np.asarray(comb.vertices, dtype=float)
    nv = len(X)
    rows, rhs = [], []
    for j, tri in enumerate(comb.tris):
        kind, val = comb.constraints[j]
        G = _grad_operator(X, tri)
        full = np.zeros((4, 2 * nv))
        for v in range(3):
            full[:, 2 * tri[v]:2 * tri[v] + 2] = G[:, 2 * v:2 * v + 2]
        if kind == "fixed":
            rows.append(full)
            rhs.append(np.asarray(val, dtype=float).reshape(4))
        elif kind == "sym":
            S = np.asarray(val, dtype=float)
            rows.append(np.array([full[0], full[3], 0.5 * (full[1] + full[2])]))
            rhs.append(np.array([S[0, 0], S[1, 1], 0.5 * (S[0, 1] + S[1, 0])]))
    bnd = np.asarray(comb.boundary)
    free = np.setdiff1d(np.arange(nv), bnd)
    U = np.zeros((nv, 2))
    U[bnd] = X[bnd] @ M.T
    if rows:
        A = np.vstack(rows)
        y = np.concatenate(rhs)
        cols_b = np.concatenate([[2 * v, 2 * v + 1] for v in bnd]).astype(int)
        cols_f = np.concatenate([[2 * v, 2 * v + 1] for v in free]).astype(int) if len(free) else np.zeros(0, int)
        y = y - A[:, cols_b] @ U[bnd].reshape(-1)
        if len(cols_f):
            sol, *_ = np.linalg.lstsq(A[:, cols_f], y, rcond=None)
            U[free] = sol.reshape(-1, 2)
            res = A[:, cols_f] @ sol - y
        else:
            res = -y
        scale = max(1.0, np.max(np.abs(y)))
        if np.max(np.abs(res)) > tol * scale:
            raise Infeasible(f"compatibility residual {np.max(np.abs(res)):.3e}")
    elif len(free):
        U[free] = X[free] @ M.T
    grads = np.empty((len(comb.tris), 2, 2))
    for j, tri in enumerate(comb.tris):
        P = X[tri]
        E = np.array([P[1] - P[0], P[2] - P[0]]).T
        dU = np.array([U[tri[1]] - U[tri[0]], U[tri[2]] - U[tri[0]]]).T
        grads[j] = dU @ np.linalg.inv(E)
    return Patch(domain=np.asarray(domain, dtype=float), vertices=X, tris=np.asarray(comb.tris),
                 grads=grads, disp=U, new_eps=new_eps)


def _realise(M, a, b, h, vals, phi, sgn, new_eps, kind):
    """Build the Patch for canonical class values rotated by phi."""
    R = _rot(phi)
    Xc = layout_vertices(a, b, h)
    X = Xc @ R.T
    pert = st.pq_to_matrix(sgn * vals[:, :2], sgn * vals[:, 2])
    pert = R @ pert @ R.T
    cell_pert = pert[CELL_CLASS]
    sym_M = st.sym(M)
    cons = tuple(("sym", sym_M + st.sym(P)) for P in cell_pert)
    comb = PatchCombinatorics(vertices=X, tris=TRIS, boundary=BOUNDARY_VERTS, constraints=cons)
    domain = X[[0, 3, 1, 2]]
    patch = solve_patch(comb, M, domain, new_eps=new_eps)
    patch.kind = kind
    patch.labels = CELL_CLASS.copy()
    patch.info.update(a=float(a), b=float(b), h=float(h), phi=float(phi))
    return patch


# ---------------------------------------------------------------- diamond

def _order(lam):
    return np.argsort(-np.asarray(lam), kind="stable")


def _diamond_grid(lam, h, a_rel, ef):
    """Evaluate the diamond family on a grid; returns (ratio, minlam, b, w1)."""
    i, j, k = _order(lam)
    d = 1.0 - lam[i]
    L = np.linalg.norm(st.WELLS_PQ[i] - st.WELLS_PQ[j])
    eta = ef * d
    qa = (lam[j] - eta) * L
    qb = -(lam[i] - eta) * L
    a = a_rel * h
    w1 = -qb / np.cos(2 * np.arctan(h))
    b = solve_b(a, h, qa / w1)
    vals = class_values(a, b, h, w1)
    u = st.WELLS_PQ[i] - st.WELLS_PQ[j]
    u = u / np.linalg.norm(u)
    perp = np.array([u[1], -u[0]])
    m = lam @ st.WELLS_PQ
    Z = m + vals[..., 0:1] * perp + vals[..., 1:2] * u
    bl = st.barycentric_pq(Z)
    ratio = (1.0 - bl.max(-1)).max(-1) / d
    minlam = bl.min(-1).min(-1)
    ok = (b > 0) & (b < h * (1 - a)) & (a < 1) & (qa > 0)
    ratio = np.where(ok & (minlam >= 0), ratio, np.inf)
    return ratio, minlam, b, w1


def diamond_parameters(lam, sigma=0.55, h_max=0.2, h_min=1e-7):
    """Choose (h, a, b, w1, eta) so every cell contracts by at least sigma.

    h is halved from h_max until some member of the family meets the bound on
    a refined grid search.  Among those members the one whose cells stay
    furthest from the hull boundary is kept, which keeps later generations
    away from very thin diamonds.  Returns a dict; ``ratio`` is the achieved
    factor.
    """
    lam = np.asarray(lam, dtype=float)
    i, j, k = _order(lam)
    d = 1.0 - lam[i]
    ef_hi = lam[j] / d

    def score(r, ml):
        return np.where(r <= sigma, -ml, 1.0 + r)

    best = None
    h = h_max
    while h >= h_min:
        A, E = np.meshgrid(np.geomspace(0.05, 20.0, 33), np.linspace(0.0, ef_hi, 34)[1:-1])
        ra, de = A[0, 1] / A[0, 0], E[1, 0] - E[0, 0]
        for _ in range(4):
            r, ml, b, w1 = _diamond_grid(lam, h, A, E)
            idx = np.unravel_index(np.argmin(score(r, ml)), r.shape)
            a0, e0 = A[idx], E[idx]
            A, E = np.meshgrid(a0 * np.geomspace(1 / ra, ra, 9),
                               np.clip(np.linspace(e0 - de, e0 + de, 9), 1e-9, ef_hi * (1 - 1e-9)))
            ra, de = ra ** 0.25, de / 4
        r, ml, b, w1 = _diamond_grid(lam, h, A, E)
        idx = np.unravel_index(np.argmin(score(r, ml)), r.shape)
        cand = dict(h=h, a=float(A[idx] * h), b=float(b[idx]), w1=float(w1[idx]),
                    eta_frac=float(E[idx]), ratio=float(r[idx]), min_lam=float(ml[idx]))
        if best is None or cand["ratio"] < best["ratio"]:
            best = cand
        if cand["ratio"] <= sigma:
            return cand
        h *= 0.5
    return best


def diamond(M, eps, sigma=0.55):
    """Rhombus patch whose cells are all closer to the wells by the factor sigma.

    The laminate runs between points on the line through e(M) parallel to the
    edge joining the largest and second largest barycentric coordinates.
    """
    M = np.asarray(M, dtype=float)
    lam = st.barycentric(st.sym(M))
    if st.dist_to_K(M) <= 1e-10 or 1.0 - lam.max() <= 1e-10:
        raise AlreadyInWell("e(M) already lies in a well")
    if np.min(lam) <= 0:
        raise TooCloseToBoundary(f"e(M) with coordinates {lam} is not interior")
    par = diamond_parameters(lam, sigma)
    if not np.isfinite(par["ratio"]) or par["ratio"] > sigma:
        raise TooCloseToBoundary(f"no diamond meets factor {sigma} (best {par['ratio']:.4f})")
    i, j, k = _order(lam)
    u = st.WELLS_PQ[i] - st.WELLS_PQ[j]
    u /= np.linalg.norm(u)
    phi, sgn = _orientation(u)
    vals = class_values(par["a"], par["b"], par["h"], par["w1"])
    patch = _realise(M, par["a"], par["b"], par["h"], vals, phi, sgn, 0.5 * eps, "diamond")
    patch.info.update(ratio=par["ratio"], eta_frac=par["eta_frac"], wells=(int(i) + 1, int(j) + 1))
    return patch


# ---------------------------------------------------------------- rectangle scheme

def nearest_well(M, eps0=0.0):
    return st.dist_to_wells(st.sym(M), eps0)[3] - 1


def _rect_grid(lam, i, h, a):
    m = lam @ st.WELLS_PQ
    u = st.WELLS_PQ[i] - m
    d = np.linalg.norm(u)
    u = u / d
    perp = np.array([u[1], -u[0]])
    b = h / (4.0 * (1.0 - a))
    w1 = d / band_ratio(a, b, h)
    vals = class_values(a, b, h, w1)
    Z = m + vals[..., 0:1] * perp + vals[..., 1:2] * u
    bl = st.barycentric_pq(Z)
    others = np.delete(bl, [3, 5], axis=-2)
    return others.min(axis=(-1, -2)), b, w1


def rectangle_parameters(lam, i, h_max=0.2, h_min=1e-7, keep=0.5):
    """Pick (h, a) so that every non-well value keeps min coordinate >= keep * min(lam)."""
    lam = np.asarray(lam, dtype=float)
    target = keep * lam.min()
    a_grid = np.linspace(0.01, 0.28, 28)
    h = h_max
    best = None
    while h >= h_min:
        mins, b, w1 = _rect_grid(lam, i, h, a_grid)
        idx = int(np.argmax(mins))
        cand = dict(h=h, a=float(a_grid[idx]), b=float(b[idx]), w1=float(w1[idx]), min_lam=float(mins[idx]))
        if best is None or cand["min_lam"] > best["min_lam"]:
            best = cand
        if cand["min_lam"] >= target:
            return cand
        h *= 0.5
    return best


def conti_rectangle(M, eps0, eps, keep=0.5):
    """Patch with exactly one quarter of its area in the well nearest to e(M).

    The remaining four values lie inside the hull; some are pushed away from
    the chosen well to balance the mean.  The patch domain is a rhombus, which
    is a parallelogram of the same lattice type as the covering grid.
    """
    M = np.asarray(M, dtype=float)
    lam = st.barycentric(st.sym(M))
    if st.dist_to_K(M) <= 1e-10:
        raise AlreadyInWell("e(M) already lies in a well")
    if np.min(lam) < 100.0 * eps0:
        raise TooCloseToBoundary(f"min coordinate {np.min(lam):.3e} below 100 * eps0 = {100 * eps0:.3e}")
    i = nearest_well(M, eps0)
    par = rectangle_parameters(lam, i, keep=keep)
    if par["min_lam"] <= 0:
        raise TooCloseToBoundary("pushed-out values leave the hull at every aspect ratio")
    m = lam @ st.WELLS_PQ
    u = st.WELLS_PQ[i] - m
    u /= np.linalg.norm(u)
    phi, sgn = _orientation(u)
    vals = class_values(par["a"], par["b"], par["h"], par["w1"])
    patch = _realise(M, par["a"], par["b"], par["h"], vals, phi, sgn, 0.5 * eps, "rectangle")
    # the two side middle cells sit exactly in the well
    Sw = st.wells()[i]
    for j in (3, 6):
        G = patch.grads[j]
        patch.grads[j] = Sw + st.skew(G)
    patch.info.update(well=int(i), min_lam=par["min_lam"])
    return patch


def patch_residuals(patch, M):
    """Continuity and boundary residuals of a patch (max over edges/vertices)."""
    X, T, G = patch.vertices, patch.tris, patch.grads
    beta = patch.offsets()
    cont = 0.0
    for j, tri in enumerate(T):
        for v in tri:
            u = G[j] @ X[v] + beta[j]
            cont = max(cont, float(np.max(np.abs(u - patch.disp[v]))))
    bnd = float(np.max(np.abs(patch.disp[BOUNDARY_VERTS] - X[BOUNDARY_VERTS] @ np.asarray(M).T)))
    return cont, bnd
