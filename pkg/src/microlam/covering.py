"""Greedy dyadic covering of a triangle by rescaled copies of a parallelogram."""
from dataclasses import dataclass

import numpy as np

from . import geometry as geo


@dataclass
class CoverResult:
    good: list
    remainder: np.ndarray
    covered_fraction: float
    scales: np.ndarray
    shifts: np.ndarray
    reached: bool

    @property
    def flagged(self):
        """True when the requested fraction was not reached (TargetUnreachable)."""
        return not self.reached


def _lattice(shape):
    shape = np.asarray(shape, dtype=float)
    origin = shape[0]
    A = np.column_stack([shape[1] - shape[0], shape[3] - shape[0]])
    return origin, A


def _inradius(T):
    a = geo.area(T)
    per = np.sum(np.linalg.norm(np.roll(T, -1, axis=0) - T, axis=1))
    return 2.0 * a / per


def _classify(Tl, corners, margin):
    """Inside / outside flags for squares given by their corners (n, 4, 2)."""
    inside = np.ones(len(corners), dtype=bool)
    outside = np.zeros(len(corners), dtype=bool)
    for a, b in zip(Tl, np.roll(Tl, -1, axis=0)):
        d = b - a
        L = np.hypot(d[0], d[1])
        sd = (d[0] * (corners[..., 1] - a[1]) - d[1] * (corners[..., 0] - a[0])) / L
        inside &= np.all(sd >= margin, axis=1)
        outside |= np.all(sd <= 0, axis=1)
    lo, hi = Tl.min(axis=0), Tl.max(axis=0)
    outside |= np.any(corners.max(axis=1) <= lo, axis=1) | np.any(corners.min(axis=1) >= hi, axis=1)
    return inside, outside & ~inside


def cover(T, shape, v=0.75, max_depth=5):
    """Cover triangle T by dyadic copies of the parallelogram ``shape``.

    The grid lives in lattice coordinates of ``shape`` (the parallelogram
    becomes the unit square) and is anchored at the centroid of T.  Grid cells
    strictly inside T are kept, cells meeting the boundary are split into four
    until the covered fraction reaches ``v`` or ``max_depth`` refinements were
    made.  What is left is clipped against T and fan-triangulated.

    Each good piece is ``shift + scale * shape``.
    """
    T = geo.convex_poly(T)
    origin, A = _lattice(shape)
    Ainv = np.linalg.inv(A)
    cT = T.mean(axis=0)
    Tl = (T - cT) @ Ainv.T
    total = geo.area(T)
    # strictness margin measured in lattice units along each edge normal
    margin_phys = 1e-12 * geo.diameter(T)
    lat_norm = np.linalg.norm(Ainv, 2)
    margin = margin_phys * lat_norm

    s = 2.0 ** np.floor(np.log2(2.0 * _inradius(Tl)))
    lo, hi = Tl.min(axis=0), Tl.max(axis=0)
    ii, jj = np.meshgrid(np.arange(np.floor(lo[0] / s), np.ceil(hi[0] / s)),
                         np.arange(np.floor(lo[1] / s), np.ceil(hi[1] / s)), indexing="ij")
    cand = np.column_stack([ii.ravel(), jj.ravel()])
    unit = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

    good_ij, good_s = [], []
    covered = 0.0
    depth = 0
    while True:
        corners = (cand[:, None, :] + unit[None]) * s
        inside, outside = _classify(Tl, corners, margin)
        if inside.any():
            good_ij.append(cand[inside])
            good_s.append(np.full(inside.sum(), s))
            covered += inside.sum() * s * s * abs(np.linalg.det(A))
        cand = cand[~inside & ~outside]
        if covered >= v * total or depth >= max_depth or len(cand) == 0:
            break
        cand = (2 * cand[:, None, :] + unit[None].astype(int)).reshape(-1, 2)
        s *= 0.5
        depth += 1

    if good_ij:
        gij = np.vstack(good_ij)
        gs = np.concatenate(good_s)
    else:
        gij = np.zeros((0, 2))
        gs = np.zeros(0)
    # lattice corner (i, j) * s maps to cT + A @ (i, j) s; the copy of ``shape``
    # with scale s has its first vertex there
    shifts = cT + (gij * gs[:, None]) @ A.T - gs[:, None] * origin
    good = [sh + sc * np.asarray(shape, dtype=float) for sh, sc in zip(shifts, gs)]

    sq = cT + ((cand[:, None, :] + unit[None]) * s) @ A.T
    V, cnt = geo.clip_batch(sq, T)
    remainder = geo.fan_triangulate_batch(V, cnt, 1e-13 * s * s * abs(np.linalg.det(A)))
    frac = covered / total if total > 0 else 0.0
    return CoverResult(good=good, remainder=remainder, covered_fraction=float(frac),
                       scales=gs, shifts=shifts, reached=bool(frac >= v))
