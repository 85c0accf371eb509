"""Convex polygon primitives.

Polygons are ``(k, 2)`` float arrays with counter-clockwise vertex order.
An empty polygon is an array of shape ``(0, 2)``.
"""
import numpy as np

from .errors import Degenerate, Singular

EMPTY_AREA = 1e-14


def empty():
    return np.zeros((0, 2))


def signed_area(P):
    P = np.asarray(P, dtype=float)
    if len(P) < 3:
        return 0.0
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def area(P):
    return abs(signed_area(P))


def tri_areas(T):
    """Signed areas of a stack of triangles with shape (n, 3, 2)."""
    T = np.asarray(T, dtype=float)
    u = T[:, 1] - T[:, 0]
    v = T[:, 2] - T[:, 0]
    return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def diameter(P):
    P = np.asarray(P, dtype=float)
    if len(P) < 2:
        return 0.0
    d = P[:, None, :] - P[None, :, :]
    return float(np.sqrt(np.max(np.sum(d * d, axis=-1))))


def _dedupe(P, tol):
    keep = []
    for v in P:
        if not keep or np.max(np.abs(v - keep[-1])) > tol:
            keep.append(v)
    while len(keep) > 1 and np.max(np.abs(keep[0] - keep[-1])) <= tol:
        keep.pop()
    return np.array(keep).reshape(-1, 2)


def convex_poly(vertices):
    """Normalise a vertex list into a ConvexPoly (CCW, no repeated vertices)."""
    P = np.asarray(vertices, dtype=float).reshape(-1, 2)
    scale = max(diameter(P), 1e-300)
    P = _dedupe(P, 1e-12 * scale)
    if len(P) < 3 or area(P) < EMPTY_AREA:
        return empty()
    if signed_area(P) < 0:
        P = P[::-1].copy()
    return P


def is_convex(P, tol=1e-12):
    P = np.asarray(P, dtype=float)
    if len(P) < 3:
        return len(P) == 0
    e = np.roll(P, -1, axis=0) - P
    cr = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    scale = diameter(P)
    return bool(signed_area(P) > 0 and np.all(cr >= -tol * scale ** 2))


def clip(P, Q):
    """Intersection of two convex polygons by successive half-plane clipping."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if len(P) < 3 or len(Q) < 3:
        return empty()
    out = list(P)
    for a, b in zip(Q, np.roll(Q, -1, axis=0)):
        if not out:
            break
        d = b - a
        inp, out = out, []
        s = inp[-1]
        ss = d[0] * (s[1] - a[1]) - d[1] * (s[0] - a[0])
        for e in inp:
            se = d[0] * (e[1] - a[1]) - d[1] * (e[0] - a[0])
            if se >= 0:
                if ss < 0:
                    out.append(s + (e - s) * (ss / (ss - se)))
                out.append(e)
            elif ss >= 0:
                out.append(s + (e - s) * (ss / (ss - se)))
            s, ss = e, se
    if len(out) < 3:
        return empty()
    R = _dedupe(np.array(out), 1e-12 * max(diameter(P), 1e-300))
    if len(R) < 3 or area(R) < EMPTY_AREA:
        return empty()
    return R


def clip_batch(P, Q):
    """Clip many convex polygons (n, k, 2) against one convex polygon Q.

    Returns (V, cnt): padded vertex arrays and per-polygon vertex counts.
    """
    V = np.asarray(P, dtype=float)
    n, k = V.shape[:2]
    cnt = np.full(n, k)
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 2:
        Q = np.broadcast_to(Q, (n,) + Q.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        return _clip_batch(V, cnt, Q)


def clip_pairs(P, Q):
    """Clip convex polygons P[i] (n, k, 2) against Q[i] (n, m, 2) pairwise."""
    return clip_batch(P, Q)


def _clip_batch(V, cnt, Q):
    n = len(V)
    for A, B in zip(np.moveaxis(Q, 1, 0), np.moveaxis(np.roll(Q, -1, axis=1), 1, 0)):
        if n == 0:
            break
        d = (B - A)[:, None, :]
        a = A[:, None, :]
        k = V.shape[1]
        valid = np.arange(k)[None, :] < cnt[:, None]
        sd = d[..., 0] * (V[..., 1] - a[..., 1]) - d[..., 1] * (V[..., 0] - a[..., 0])
        # previous vertex within each polygon (cyclic over its own count)
        prev = (np.arange(k)[None, :] - 1) % np.maximum(cnt[:, None], 1)
        Vs = np.take_along_axis(V, prev[..., None].repeat(2, axis=2), axis=1)
        ss = np.take_along_axis(sd, prev, axis=1)
        e_in = sd >= 0
        s_in = ss >= 0
        t = ss / (ss - sd)
        X = Vs + (V - Vs) * t[..., None]
        cross = valid & (e_in != s_in)
        keep_e = valid & e_in
        out = np.empty((n, 2 * k, 2))
        out[:, 0::2] = X
        out[:, 1::2] = V
        mask = np.empty((n, 2 * k), dtype=bool)
        mask[:, 0::2] = cross
        mask[:, 1::2] = keep_e
        order = np.argsort(~mask, axis=1, kind="stable")
        cnt = mask.sum(axis=1)
        kmax = max(int(cnt.max()), 1)
        V = np.take_along_axis(out, order[:, :kmax, None].repeat(2, axis=2), axis=1)
    return V, cnt


def poly_areas(V, cnt):
    """Areas of padded convex polygons as returned by clip_batch."""
    k = V.shape[1]
    if k == 0:
        return np.zeros(len(V))
    nxt = (np.arange(k)[None, :] + 1) % np.maximum(cnt[:, None], 1)
    W = np.take_along_axis(V, nxt[..., None].repeat(2, axis=2), axis=1)
    valid = np.arange(k)[None, :] < cnt[:, None]
    with np.errstate(invalid="ignore"):
        cr = np.where(valid, V[..., 0] * W[..., 1] - W[..., 0] * V[..., 1], 0.0)
    return np.where(cnt >= 3, 0.5 * np.abs(cr.sum(axis=1)), 0.0)


def fan_triangulate_batch(V, cnt, min_area=EMPTY_AREA):
    """Fan triangles of padded convex polygons; drops triangles below min_area."""
    tris = []
    for m in range(3, V.shape[1] + 1):
        sel = np.flatnonzero(cnt == m)
        if len(sel) == 0:
            continue
        W = V[sel, :m]
        for i in range(1, m - 1):
            tris.append(np.stack([W[:, 0], W[:, i], W[:, i + 1]], axis=1))
    if not tris:
        return np.zeros((0, 3, 2))
    T = np.concatenate(tris)
    return T[tri_areas(T) > min_area]


def fan_triangulate(P):
    """Split a convex polygon into triangles fanned from its first vertex."""
    P = np.asarray(P, dtype=float)
    if len(P) < 3:
        raise Degenerate("polygon has fewer than 3 vertices")
    return [np.array([P[0], P[i], P[i + 1]]) for i in range(1, len(P) - 1)]


def affine_map_poly(P, A, b):
    A = np.asarray(A, dtype=float)
    if np.linalg.det(A) <= 1e-14:
        raise Singular("affine map must be orientation preserving and invertible")
    return np.asarray(P, dtype=float) @ A.T + np.asarray(b, dtype=float)


def contains(P, pts, margin=0.0):
    """True where points lie inside convex P at distance >= margin from its edges."""
    P = np.asarray(P, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ok = np.ones(len(pts), dtype=bool)
    for a, b in zip(P, np.roll(P, -1, axis=0)):
        d = b - a
        L = np.hypot(d[0], d[1])
        sd = (d[0] * (pts[:, 1] - a[1]) - d[1] * (pts[:, 0] - a[0])) / L
        ok &= sd >= margin
    return ok


def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
