"""Strain algebra for the hexagonal-to-rhombic three-well problem.

Symmetric trace-free matrices ``[[p, q], [q, -p]]`` are identified with the
point ``(p, q)`` of the plane.  In these coordinates the three wells form an
equilateral triangle centred at the origin, so barycentric coordinates with
respect to the wells are plain affine coordinates.
"""
from typing import NamedTuple

import numpy as np

from .errors import DetPositive, OutsideHull

SQ3 = np.sqrt(3.0)

# wells in (p, q) coordinates, one row per well
WELLS_PQ = np.array([[1.0, 0.0], [-0.5, SQ3 / 2], [-0.5, -SQ3 / 2]])

_BARY_SYS = np.vstack([WELLS_PQ.T, np.ones(3)])
_BARY_INV = np.linalg.inv(_BARY_SYS)


class RankOnePair(NamedTuple):
    a: np.ndarray
    n: np.ndarray


def wells():
    """Return the three well matrices as 2x2 arrays."""
    return tuple(pq_to_matrix(w) for w in WELLS_PQ)


def sym(F):
    F = np.asarray(F, dtype=float)
    return 0.5 * (F + np.swapaxes(F, -1, -2))


def skew(F):
    F = np.asarray(F, dtype=float)
    return 0.5 * (F - np.swapaxes(F, -1, -2))


def matrix_to_pq(F):
    """(p, q) coordinates of the trace-free part of sym(F); works on stacks."""
    F = np.asarray(F, dtype=float)
    p = 0.5 * (F[..., 0, 0] - F[..., 1, 1])
    q = 0.5 * (F[..., 0, 1] + F[..., 1, 0])
    return np.stack([p, q], axis=-1)


def pq_to_matrix(z, omega=0.0):
    """Matrix ``[[p, q - w], [q + w, -p]]`` for strain (p, q) and skew part w."""
    z = np.asarray(z, dtype=float)
    p, q = z[..., 0], z[..., 1]
    omega = np.broadcast_to(np.asarray(omega, dtype=float), p.shape)
    out = np.empty(p.shape + (2, 2))
    out[..., 0, 0] = p
    out[..., 0, 1] = q - omega
    out[..., 1, 0] = q + omega
    out[..., 1, 1] = -p
    return out


def skew_part(F):
    """Scalar w with skew(F) = [[0, -w], [w, 0]]."""
    F = np.asarray(F, dtype=float)
    return 0.5 * (F[..., 1, 0] - F[..., 0, 1])


def trace(F):
    F = np.asarray(F, dtype=float)
    return F[..., 0, 0] + F[..., 1, 1]


def barycentric_pq(z):
    """Barycentric coordinates of points given in (p, q) form; shape (..., 3)."""
    z = np.asarray(z, dtype=float)
    rhs = np.concatenate([z, np.ones(z.shape[:-1] + (1,))], axis=-1)
    return rhs @ _BARY_INV.T


def barycentric(e):
    """Barycentric coordinates of a strain matrix (or stack) w.r.t. the wells."""
    return barycentric_pq(matrix_to_pq(e))


def from_barycentric(lam):
    """Strain matrix sum_i lam_i e^(i)."""
    lam = np.asarray(lam, dtype=float)
    return pq_to_matrix(lam @ WELLS_PQ)


def frobenius(F):
    F = np.asarray(F, dtype=float)
    return np.sqrt(np.sum(F * F, axis=(-2, -1)))


def dist_to_wells(e, eps0=0.0):
    """Frobenius distances to the three wells and the selected nearest index.

    The index is 1-based and is the smallest i whose distance is within
    ``4 * eps0`` of the minimum.
    """
    if eps0 < 0:
        raise ValueError("eps0 must be nonnegative")
    e = sym(e)
    d = np.array([frobenius(e - w) for w in wells()])
    # 1e-12 absorbs rounding in exact ties such as e = 0
    idx = int(np.flatnonzero(d <= d.min() + 4.0 * eps0 + 1e-12)[0]) + 1
    return d[0], d[1], d[2], idx


def dist_to_K(e):
    """Frobenius distance of sym(e) to the nearest well; works on stacks."""
    e = sym(e)
    z = matrix_to_pq(e)
    # trace part is orthogonal to every well
    tr2 = 0.5 * trace(e) ** 2
    dz = z[..., None, :] - WELLS_PQ
    d2 = 2.0 * np.min(np.sum(dz * dz, axis=-1), axis=-1)
    return np.sqrt(d2 + tr2)


def linf_from_bary(lam):
    """min over vertices of the l-infinity gap between lam and that vertex."""
    lam = np.asarray(lam, dtype=float)
    eye = np.eye(3)
    gaps = np.max(np.abs(lam[..., None, :] - eye), axis=-1)
    return np.min(gaps, axis=-1)


def linf_bary_dist_to_wells(e, tol=1e-12):
    lam = barycentric(e)
    if np.min(lam) < -tol:
        raise OutsideHull(f"barycentric coordinates {lam} leave the hull")
    return float(linf_from_bary(lam))


def _canonical(a, n):
    # (a, n) -> (-a, -n) keeps a (.) n and makes the first nonzero entry of a positive
    nz = np.flatnonzero(np.abs(a) > 1e-300)
    if nz.size and a[nz[0]] < 0:
        a, n = -a, -n
    return RankOnePair(a, n)


def _normal_angle(n):
    return np.arctan2(n[1], n[0]) % np.pi


def rank_one_decompose(S, tol=1e-12):
    """Both symmetrised rank-one decompositions S = a (.) n of a 2x2 matrix.

    Returns two ``RankOnePair`` ordered by the angle of n in [0, pi).
    Raises ``DetPositive`` when det S exceeds ``tol``.
    """
    S = sym(S)
    if np.linalg.det(S) > tol:
        raise DetPositive("symmetric part is definite; no rank-one decomposition")
    mu, vec = np.linalg.eigh(S)
    f, g = vec[:, 1], vec[:, 0]
    m1, m2 = max(mu[1], 0.0), min(mu[0], 0.0)
    if m1 == 0.0 and m2 == 0.0:
        e1 = np.array([1.0, 0.0])
        pair = RankOnePair(np.zeros(2), e1)
        return pair, pair
    t = np.arctan2(np.sqrt(-m2), np.sqrt(m1))
    pairs = []
    for sgn in (1.0, -1.0):
        c, s = np.cos(t), sgn * np.sin(t)
        n = c * f + s * g
        a = (m1 / c if c != 0 else 0.0) * f + (m2 / s if s != 0 else 0.0) * g
        pairs.append(_canonical(a, n))
    pairs.sort(key=lambda pr: _normal_angle(pr.n))
    return pairs[0], pairs[1]


def sym_outer(a, n):
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    return 0.5 * (np.outer(a, n) + np.outer(n, a))
