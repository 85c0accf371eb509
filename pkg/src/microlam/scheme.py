"""Iteration driver: cover every active cell, replace the good pieces, repeat.

A Field stores triangles with an affine map ``u(x) = F x + c`` on each.
Cells are kept in canonical lineage order: children follow their parent's
position, pieces first and remainder triangles after.
"""
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import covering as cv
from . import geometry as geo
from . import patches as pt
from . import strain as st
from .errors import (AlreadyInWell, BoundaryDatum, Infeasible, InvariantViolation,
                     MicrolamError, TooCloseToBoundary)

STATE_VERSION = 1
ACTIVE, FROZEN, FAILED = 0, 1, 2


@dataclass
class Field:
    omega: np.ndarray
    M: np.ndarray
    tri: np.ndarray
    F: np.ndarray
    c: np.ndarray
    eps: np.ndarray
    status: np.ndarray
    lineage: list
    k: int = 0
    eps0: float = 0.0
    unresolved_area: float = 0.0
    history: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.tri)

    @property
    def frozen(self):
        return self.status == FROZEN

    def areas(self):
        return geo.tri_areas(self.tri)

    def bary(self):
        return st.barycentric(st.sym(self.F))

    def copy(self):
        return Field(self.omega.copy(), self.M.copy(), self.tri.copy(), self.F.copy(), self.c.copy(),
                     self.eps.copy(), self.status.copy(), list(self.lineage), self.k, self.eps0,
                     self.unresolved_area, list(self.history))


def default_eps0(M):
    """Half of the largest eps0 allowed by the margin condition min(lam) >= 100 eps0."""
    return float(np.min(st.barycentric(st.sym(M)))) / 200.0


def init(omega, M, eps0=None):
    omega = geo.convex_poly(omega)
    if len(omega) != 3:
        raise BoundaryDatum("omega must be a nondegenerate triangle")
    M = np.asarray(M, dtype=float)
    lam = st.barycentric(st.sym(M))
    if np.min(lam) <= 1e-12 or abs(st.trace(M)) > 1e-10:
        raise BoundaryDatum(f"e(M) must lie in the open hull (coordinates {lam})")
    if eps0 is None or eps0 == "auto":
        eps0 = default_eps0(M)
    status = np.array([FROZEN if st.dist_to_K(M) <= 1e-10 else ACTIVE])
    return Field(omega=omega, M=M, tri=omega[None].copy(), F=M[None].copy(), c=np.zeros((1, 2)),
                 eps=np.array([float(eps0)]), status=status, lineage=["0"], k=0, eps0=float(eps0))


class PatchCache:
    """Memoised patches keyed by strain; children of equal parents share them."""

    def __init__(self, scheme, sigma=0.55):
        self.scheme = scheme
        self.sigma = sigma
        self.store = {}

    def get(self, F, eps):
        S = st.sym(F)
        key = tuple(np.round([S[0, 0], S[0, 1], S[1, 1], eps], 12).tolist())
        if key not in self.store:
            try:
                if self.scheme == "diamond":
                    P = pt.diamond(S, eps, self.sigma)
                else:
                    P = pt.conti_rectangle(S, eps, eps)
                pert = P.grads - S
                beta = P.offsets()
                self.store[key] = (P, pert, beta)
            except (TooCloseToBoundary, AlreadyInWell, Infeasible) as err:
                self.store[key] = err
        return self.store[key]


def _estimate_cells(tris, shapes, ntri):
    """Rough upper estimate of the cells a cover of each triangle produces.

    The count is driven by the perimeter to inradius ratio of the triangle in
    lattice coordinates of its patch domain; the constant was calibrated on
    covers with the default target and depth.
    """
    A = np.stack([shapes[:, 1] - shapes[:, 0], shapes[:, 3] - shapes[:, 0]], axis=2)
    Tl = np.einsum("nij,nkj->nki", np.linalg.inv(A), tris)
    a = np.abs(geo.tri_areas(Tl))
    per = np.linalg.norm(np.roll(Tl, -1, axis=1) - Tl, axis=2).sum(axis=1)
    aspect = per * per / (2.0 * a)
    return 16.0 * aspect * (ntri + 1)


def _replace(Fd, idx, entry, v, max_depth):
    """Children arrays for one parent cell."""
    P, pert, beta = entry
    T = Fd.tri[idx]
    C = cv.cover(T, P.domain, v, max_depth)
    Fp, cp, ep = Fd.F[idx], Fd.c[idx], Fd.eps[idx]
    n = len(C.scales)
    Xt = P.vertices[P.tris]
    tris = [(C.shifts[:, None, None, :] + C.scales[:, None, None, None] * Xt[None]).reshape(-1, 3, 2)]
    Fs = [np.broadcast_to(Fp + pert, (n,) + pert.shape).reshape(-1, 2, 2)]
    cs = [(cp + C.scales[:, None, None] * beta[None] - np.einsum("jab,nb->nja", pert, C.shifts)).reshape(-1, 2)]
    es = [np.full(n * len(pert), P.new_eps)]
    rem = np.array(C.remainder).reshape(-1, 3, 2)
    tris.append(rem)
    Fs.append(np.broadcast_to(Fp, (len(rem), 2, 2)))
    cs.append(np.broadcast_to(cp, (len(rem), 2)))
    es.append(np.full(len(rem), ep))
    return (np.concatenate(tris), np.concatenate(Fs), np.concatenate(cs), np.concatenate(es),
            n * len(pert), C)


def _threads():
    try:
        return max(1, int(os.environ.get("MICROLAM_THREADS", "1")))
    except ValueError:
        return 1


def step(Fd, scheme, v=0.75, max_depth=5, min_cell_area=None, max_cells=200_000, cache=None,
         sigma=0.55):
    """One iteration.  Returns the new Field; ``history[-1]`` describes the step.

    Active cells are processed in order of decreasing area.  Cells below
    ``min_cell_area`` and cells that would push the field beyond ``max_cells``
    keep their map and are reported as unresolved.
    """
    if scheme not in ("rectangle", "diamond"):
        raise ValueError(f"unknown scheme {scheme!r}")
    cache = cache or PatchCache(scheme, sigma)
    area_omega = geo.area(Fd.omega)
    if min_cell_area is None:
        min_cell_area = 1e-8 * area_omega
    areas = Fd.areas()
    active = np.flatnonzero(Fd.status == ACTIVE)
    order = active[np.lexsort((active, -areas[active]))]
    small = order[areas[order] < min_cell_area]
    order = order[areas[order] >= min_cell_area]
    small_area = float(areas[small].sum())
    entries = [cache.get(Fd.F[i], Fd.eps[i]) for i in order]
    bad = np.array([isinstance(e, MicrolamError) for e in entries], dtype=bool)
    failed = set(order[bad].tolist())
    cand = [(i, e) for i, e, b in zip(order, entries, bad) if not b]
    if cand:
        shapes = np.stack([e[0].domain for _, e in cand])
        ntri = np.array([len(e[1]) for _, e in cand])
        est = _estimate_cells(Fd.tri[[i for i, _ in cand]], shapes, ntri)
    else:
        est = np.zeros(0)

    def work(item):
        idx, entry = item
        return idx, _replace(Fd, idx, entry, v, max_depth)

    # cells are taken largest first while their estimated growth fits the
    # budget; a cover that still overflows is discarded
    total = Fd.n
    budget_area = 0.0
    items = []
    for (idx, entry), e in zip(cand, est):
        if total + e > max_cells:
            budget_area += areas[idx]
            continue
        total += e
        items.append((idx, entry))
    nthreads = _threads()
    if nthreads > 1 and len(items) > 1:
        with ThreadPoolExecutor(nthreads) as ex:
            out = list(ex.map(work, items))
    else:
        out = [work(it) for it in items]
    total = Fd.n
    results = {}
    covers_short = 0
    for idx, res in out:
        grow = len(res[0]) - 1
        if total + grow > max_cells:
            budget_area += areas[idx]
            continue
        total += grow
        results[idx] = res
        covers_short += int(res[5].flagged)

    status = Fd.status.copy()
    if failed:
        status[list(failed)] = FAILED
    tris, Fs, cs, es, stat, lin = [], [], [], [], [], []
    prev = 0
    for idx in sorted(results):
        tris.append(Fd.tri[prev:idx])
        Fs.append(Fd.F[prev:idx])
        cs.append(Fd.c[prev:idx])
        es.append(Fd.eps[prev:idx])
        stat.append(status[prev:idx])
        lin.extend(Fd.lineage[prev:idx])
        t, Fc, cc, ec, nrep, _ = results[idx]
        tris.append(t)
        Fs.append(Fc)
        cs.append(cc)
        es.append(ec)
        stat.append(np.where(st.dist_to_K(Fc) <= 1e-10, FROZEN, ACTIVE))
        lin.extend(f"{Fd.lineage[idx]}.{j}" for j in range(len(t)))
        prev = idx + 1
    tris.append(Fd.tri[prev:])
    Fs.append(Fd.F[prev:])
    cs.append(Fd.c[prev:])
    es.append(Fd.eps[prev:])
    stat.append(status[prev:])
    lin.extend(Fd.lineage[prev:])
    new = Field(omega=Fd.omega, M=Fd.M, tri=np.concatenate(tris), F=np.concatenate(Fs),
                c=np.concatenate(cs), eps=np.concatenate(es), status=np.concatenate(stat),
                lineage=lin, k=Fd.k + 1, eps0=Fd.eps0, history=list(Fd.history))
    new.unresolved_area = float(small_area + budget_area)
    new.history.append(dict(k=new.k, replaced=len(results), failed=len(failed),
                            small_area=float(small_area), budget_area=float(budget_area),
                            covers_short=covers_short))
    if scheme == "diamond":
        _check_contraction(Fd, new, results, sigma)
    return new


def _check_contraction(old, new, results, sigma):
    for idx, res in results.items():
        nrep = res[4]
        d_par = st.linf_from_bary(st.barycentric(st.sym(old.F[idx])))
        d_child = st.linf_from_bary(st.barycentric(st.sym(res[1][:nrep])))
        if nrep and np.max(d_child) > sigma * d_par + 1e-12:
            raise InvariantViolation(f"cell {old.lineage[idx]} contracted only by "
                                     f"{np.max(d_child) / d_par:.4f}")


# ---------------------------------------------------------------- invariants

def _shapely():
    import shapely
    return shapely


def locate(Fd, pts):
    """Index of the first cell (canonical order) containing each point, -1 outside."""
    shp = _shapely()
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    tree = shp.STRtree(shp.polygons(Fd.tri))
    pi, ci = tree.query(shp.points(pts), predicate="intersects")
    out = np.full(len(pts), np.iinfo(np.int64).max)
    np.minimum.at(out, pi, ci)
    miss = np.flatnonzero(out == np.iinfo(np.int64).max)
    out[miss] = -1
    # points inside omega that fell between cells through rounding
    inside = miss[geo.contains(Fd.omega, pts[miss])] if len(miss) else miss
    if len(inside):
        qi, qc = tree.query_nearest(shp.points(pts[inside]), all_matches=False)
        out[inside[qi]] = qc
    return out


def overlap_pairs(Fd, tol_rel=1e-9):
    """Pairs of cells whose closures meet, found with an STR tree."""
    shp = _shapely()
    polys = shp.polygons(Fd.tri)
    tree = shp.STRtree(polys)
    pairs = tree.query(polys, predicate="intersects")
    keep = pairs[0] < pairs[1]
    return polys, pairs[:, keep]


def check_invariants(Fd, tol=1e-9, overlaps=True):
    """Residuals of the Field invariants; a dict of floats and flags."""
    shp = _shapely()
    out = {}
    a = Fd.areas()
    total = geo.area(Fd.omega)
    out["min_signed_area"] = float(a.min())
    out["area_error"] = float(abs(a.sum() - total) / total)
    diam = geo.diameter(Fd.omega)
    polys = shp.polygons(Fd.tri)
    tree = shp.STRtree(polys)
    pts = Fd.tri.reshape(-1, 2)
    owner = np.repeat(np.arange(Fd.n), 3)
    u_own = np.einsum("nij,nj->ni", Fd.F[owner], pts) + Fd.c[owner]
    pi, ci = tree.query(shp.points(pts), predicate="dwithin", distance=1e-10 * diam)
    u_other = np.einsum("nij,nj->ni", Fd.F[ci], pts[pi]) + Fd.c[ci]
    mism = np.linalg.norm(u_other - u_own[pi], axis=1)
    out["vertex_mismatch"] = float(mism.max()) if len(mism) else 0.0
    # displacement gaps at shared vertices relative to the domain size; zero
    # exactly when every interface satisfies the rank-one jump condition
    out["jump_residual"] = out["vertex_mismatch"] / diam
    on_bnd = ~geo.contains(Fd.omega, pts, margin=1e-10 * diam)
    ub = u_own[on_bnd] - pts[on_bnd] @ Fd.M.T
    out["boundary_residual"] = float(np.abs(ub).max()) if len(ub) else 0.0
    lam = Fd.bary()
    out["min_bary"] = float(lam.min())
    out["max_trace"] = float(np.abs(st.trace(Fd.F)).max())
    dK = st.dist_to_K(Fd.F)
    out["frozen_mismatch"] = int(np.sum((dK <= 1e-10) != (Fd.status == FROZEN)))
    if overlaps:
        pairs = tree.query(polys, predicate="intersects")
        pairs = pairs[:, pairs[0] < pairs[1]]
        if pairs.shape[1]:
            ia = np.concatenate([geo.poly_areas(*geo.clip_pairs(Fd.tri[i], Fd.tri[j]))
                                 for i, j in zip(np.array_split(pairs[0], 1 + pairs.shape[1] // 200_000),
                                                 np.array_split(pairs[1], 1 + pairs.shape[1] // 200_000))])
            out["max_overlap"] = float(ia.max())
        else:
            out["max_overlap"] = 0.0
    ok = (out["area_error"] <= tol and out["min_signed_area"] > 0 and out["jump_residual"] <= tol
          and out["boundary_residual"] <= tol and out["min_bary"] >= -tol
          and out["max_trace"] <= 1e-10 and out["frozen_mismatch"] == 0
          and out.get("max_overlap", 0.0) <= 1e-12 * max(total, 1.0))
    out["ok"] = bool(ok)
    return out


def assert_invariants(Fd, **kw):
    res = check_invariants(Fd, **kw)
    if not res["ok"]:
        raise InvariantViolation(json.dumps(res))
    return res


# ---------------------------------------------------------------- metrics

def elastic_energy(Fd):
    return float(np.sum(Fd.areas() * st.dist_to_K(Fd.F) ** 2))


def _shared_length(Ti, Tj, tol):
    """Length of the common boundary of triangle pairs (n, 3, 2) x (n, 3, 2)."""
    total = np.zeros(len(Ti))
    for e in range(3):
        p0, p1 = Ti[:, e], Ti[:, (e + 1) % 3]
        d = p1 - p0
        L = np.linalg.norm(d, axis=1)
        u = d / np.maximum(L, 1e-300)[:, None]
        for f in range(3):
            q0, q1 = Tj[:, f], Tj[:, (f + 1) % 3]
            off0 = u[:, 0] * (q0[:, 1] - p0[:, 1]) - u[:, 1] * (q0[:, 0] - p0[:, 0])
            off1 = u[:, 0] * (q1[:, 1] - p0[:, 1]) - u[:, 1] * (q1[:, 0] - p0[:, 0])
            on = (np.abs(off0) <= tol) & (np.abs(off1) <= tol)
            s0 = np.einsum("ni,ni->n", q0 - p0, u)
            s1 = np.einsum("ni,ni->n", q1 - p0, u)
            lo = np.maximum(np.minimum(s0, s1), 0.0)
            hi = np.minimum(np.maximum(s0, s1), L)
            total += np.where(on, np.maximum(hi - lo, 0.0), 0.0)
    return total


def bv_surface_energy(Fd):
    """Sum over shared edges of |F1 - F2| times the shared length."""
    shp = _shapely()
    if Fd.n < 2:
        return 0.0
    polys = shp.polygons(Fd.tri)
    tree = shp.STRtree(polys)
    pairs = tree.query(polys, predicate="intersects")
    pairs = pairs[:, pairs[0] < pairs[1]]
    jump = st.frobenius(Fd.F[pairs[0]] - Fd.F[pairs[1]])
    nz = jump > 0
    if not nz.any():
        return 0.0
    i, j = pairs[0][nz], pairs[1][nz]
    shared = _shared_length(Fd.tri[i], Fd.tri[j], 1e-12 * geo.diameter(Fd.omega))
    return float(np.sum(jump[nz] * shared))


def metrics_row(Fd, wall_ms=0.0, energies=True):
    a = Fd.areas()
    total = geo.area(Fd.omega)
    d = st.linf_from_bary(Fd.bary())
    return dict(k=Fd.k, n_cells=Fd.n, frozen_fraction=float(a[Fd.frozen].sum() / total),
                unresolved_area=float(Fd.unresolved_area), max_well_dist=float(d.max()),
                area_weighted_well_dist=float(np.sum(a * d) / total),
                elastic_energy_exact=elastic_energy(Fd),
                bv_energy_exact=bv_surface_energy(Fd) if energies else float("nan"),
                wall_ms=float(wall_ms))


def run(omega, M, scheme, iterations, v=0.75, max_depth=5, min_cell_area=None, eps0=None,
        max_cells=200_000, check=True, sigma=0.55, energies=True):
    """init plus ``iterations`` steps; returns (field, metrics rows)."""
    t0 = time.perf_counter()
    Fd = init(omega, M, eps0)
    rows = [metrics_row(Fd, 1e3 * (time.perf_counter() - t0), energies)]
    cache = PatchCache(scheme, sigma)
    for _ in range(iterations):
        t0 = time.perf_counter()
        Fd = step(Fd, scheme, v, max_depth, min_cell_area, max_cells, cache, sigma)
        if check:
            assert_invariants(Fd, overlaps=False)
        rows.append(metrics_row(Fd, 1e3 * (time.perf_counter() - t0), energies))
    return Fd, rows


# ---------------------------------------------------------------- persistence

def _hex(x):
    return [float(v).hex() for v in np.asarray(x, dtype=float).ravel()]


def _unhex(xs, shape):
    return np.array([float.fromhex(v) for v in xs]).reshape(shape)


def to_json(Fd):
    doc = dict(version=STATE_VERSION, k=Fd.k, eps0=float(Fd.eps0).hex(),
               unresolved_area=float(Fd.unresolved_area).hex(),
               ambient=dict(omega=_hex(Fd.omega), M=_hex(Fd.M)),
               history=Fd.history,
               cells=[dict(id=Fd.lineage[i], v=_hex(Fd.tri[i]), F=_hex(Fd.F[i]), c=_hex(Fd.c[i]),
                           eps=float(Fd.eps[i]).hex(), frozen=bool(Fd.status[i] == FROZEN),
                           failed=bool(Fd.status[i] == FAILED)) for i in range(Fd.n)])
    return json.dumps(doc, separators=(",", ":"), sort_keys=True)


def from_json(text):
    doc = json.loads(text)
    if doc.get("version") != STATE_VERSION:
        raise ValueError(f"unsupported state version {doc.get('version')}")
    cells = doc["cells"]
    n = len(cells)
    status = np.array([FROZEN if c["frozen"] else FAILED if c.get("failed") else ACTIVE for c in cells])
    return Field(omega=_unhex(doc["ambient"]["omega"], (3, 2)), M=_unhex(doc["ambient"]["M"], (2, 2)),
                 tri=np.array([_unhex(c["v"], (3, 2)) for c in cells]).reshape(n, 3, 2),
                 F=np.array([_unhex(c["F"], (2, 2)) for c in cells]).reshape(n, 2, 2),
                 c=np.array([_unhex(c["c"], (2,)) for c in cells]).reshape(n, 2),
                 eps=np.array([float.fromhex(c["eps"]) for c in cells]),
                 status=status, lineage=[c["id"] for c in cells], k=int(doc["k"]),
                 eps0=float.fromhex(doc["eps0"]), unresolved_area=float.fromhex(doc["unresolved_area"]),
                 history=doc.get("history", []))
