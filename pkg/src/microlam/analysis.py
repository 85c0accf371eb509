"""Probes on Fields: rasterisation, Littlewood-Paley projectors, fractional
norms, the mollified competitor energy, scaling fits and an annulus
Poincare check.

Frequencies are angular: a grid mode ``exp(i xi . x)`` has ``|xi| = 2 pi m / L``
on a periodic box of side ``L``.
"""
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import scheme as sc
from . import strain as st
from .errors import (Degenerate, GridTooCoarse, OutOfRange, ResolutionTooCoarse,
                     SupportViolation)


@dataclass(frozen=True)
class SpectralField:
    """Samples at the pixel centres of an N x N periodic box.

    ``samples`` has shape (N, N, ...) with axis 0 along x and axis 1 along y.
    """

    samples: np.ndarray
    origin: np.ndarray
    side: float

    @property
    def N(self):
        return self.samples.shape[0]

    @property
    def spacing(self):
        return self.side / self.N

    @property
    def box(self):
        x0, y0 = self.origin
        return geo.rect(x0, y0, x0 + self.side, y0 + self.side)

    def points(self):
        return pixel_centres(self.N, self.origin, self.side)

    def like(self, samples):
        return SpectralField(samples, self.origin, self.side)


@dataclass(frozen=True)
class ScalingFitResult:
    mu: float
    slope: float
    intercept: float
    r2: float
    eps: tuple


@dataclass(frozen=True)
class PoincareResult:
    slope: float
    annulus_norms: tuple
    deltas: tuple
    hs: float
    flagged: bool


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def default_box(omega):
    """Square of side 2 diam(omega) centred at the centroid of omega."""
    omega = np.asarray(omega, dtype=float)
    side = 2.0 * geo.diameter(omega)
    return omega.mean(axis=0) - 0.5 * side, side


def pixel_centres(N, origin, side):
    h = side / N
    t = (np.arange(N) + 0.5) * h
    X, Y = np.meshgrid(origin[0] + t, origin[1] + t, indexing="ij")
    return np.stack([X, Y], axis=-1)


def _check_box(omega, origin, side):
    margin = 0.25 * geo.diameter(omega)
    lo = np.asarray(origin) + margin
    hi = np.asarray(origin) + side - margin
    if np.any(omega.min(axis=0) < lo - 1e-12) or np.any(omega.max(axis=0) > hi + 1e-12):
        raise ValueError("box must contain omega with margin 0.25 diam(omega)")


def rasterize(Fd, N, box=None, quantity="grad", supersample=1):
    """Sample the gradient (or ``v = u - M x``) at pixel centres.

    Pixels outside omega get M (for ``grad``) or 0 (for ``v``).  A pixel on a
    shared edge takes the first containing cell in canonical order.  With
    ``supersample = m`` each pixel holds the mean of an m x m box of samples.
    """
    if supersample > 1:
        fine = rasterize(Fd, N * supersample, box, quantity)
        m = supersample
        shp = (N, m, N, m) + fine.samples.shape[2:]
        return fine.like(fine.samples.reshape(shp).mean(axis=(1, 3)))
    if N < 64:
        raise ResolutionTooCoarse(f"N = {N} < 64")
    if not _is_pow2(N):
        raise ValueError(f"N = {N} is not a power of 2")
    origin, side = default_box(Fd.omega) if box is None else box
    origin = np.asarray(origin, dtype=float)
    _check_box(Fd.omega, origin, side)
    P = pixel_centres(N, origin, side).reshape(-1, 2)
    idx = sc.locate(Fd, P)
    inside = idx >= 0
    if quantity == "grad":
        out = np.broadcast_to(Fd.M, (len(P), 2, 2)).copy()
        out[inside] = Fd.F[idx[inside]]
        return SpectralField(out.reshape(N, N, 2, 2), origin, float(side))
    if quantity == "v":
        out = np.zeros((len(P), 2))
        j = idx[inside]
        x = P[inside]
        out[inside] = np.einsum("nij,nj->ni", Fd.F[j] - Fd.M, x) + Fd.c[j]
        return SpectralField(out.reshape(N, N, 2), origin, float(side))
    raise ValueError(f"unknown quantity {quantity!r}")


def inside_mask(S, omega):
    P = S.points().reshape(-1, 2)
    return geo.contains(omega, P).reshape(S.N, S.N)


def raster_elastic_energy(S, omega):
    """Pixel quadrature of the integral of dist^2(e, K) over omega."""
    mask = inside_mask(S, omega)
    return float(np.sum(st.dist_to_K(S.samples[mask]) ** 2) * S.spacing ** 2)


# ---------------------------------------------------------------- spectral

def wavenumbers(N, side):
    k = 2.0 * np.pi * np.fft.fftfreq(N, d=side / N)
    KX, KY = np.meshgrid(k, k, indexing="ij")
    return KX, KY


def nyquist(S):
    return np.pi * S.N / S.side


def bump(r):
    """Smooth radial profile: 1 on r <= 1, 0 on r >= 2."""
    r = np.asarray(r, dtype=float)

    def psi(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = np.exp(-1.0 / t[pos])
        return out

    a = psi(2.0 - r)
    b = psi(r - 1.0)
    return a / (a + b)


def _fft(S):
    return np.fft.fft2(S.samples, axes=(0, 1))


def _ifft(S, F):
    out = np.fft.ifft2(F, axes=(0, 1))
    return S.like(out.real if np.isrealobj(S.samples) else out)


def _expand(m, S):
    return m.reshape(m.shape + (1,) * (S.samples.ndim - 2))


def _multiplier(S, N_freq, kind):
    KX, KY = wavenumbers(S.N, S.side)
    r = np.hypot(KX, KY)
    if kind == "low":
        return bump(r / N_freq)
    if kind == "high":
        return 1.0 - bump(r / N_freq)
    if kind == "band":
        return bump(r / N_freq) - bump(2.0 * r / N_freq)
    raise ValueError(f"unknown projector kind {kind!r}")


def lp_project(S, N_freq, kind="low"):
    """Littlewood-Paley projection P_{<N}, P_{>=N} or P_N of a sampled field."""
    j = np.log2(N_freq)
    if abs(j - round(j)) > 1e-12:
        raise ValueError(f"N_freq = {N_freq} is not dyadic")
    if N_freq > nyquist(S):
        raise OutOfRange(f"N_freq = {N_freq} exceeds the Nyquist frequency {nyquist(S):.4g}")
    m = _multiplier(S, N_freq, kind)
    return _ifft(S, _fft(S) * _expand(m, S))


def l2_norm(S):
    return float(np.sqrt(np.sum(np.abs(S.samples) ** 2)) * S.spacing)


def lp_norm(S, p):
    return float((np.sum(np.abs(S.samples) ** p) * S.spacing ** 2) ** (1.0 / p))


def hs_norm(S, s):
    """L2 norm of the Fourier multiplier (|xi|^2 + 1)^(s/2) applied to S."""
    KX, KY = wavenumbers(S.N, S.side)
    m = (KX * KX + KY * KY + 1.0) ** (0.5 * s)
    F = _fft(S) * _expand(m, S)
    # Parseval on the periodic grid
    return float(np.sqrt(np.sum(np.abs(F) ** 2)) * S.spacing / S.N)


def _bands(S):
    """Dyadic band edges covering the grid: (N0, [2 N0, 4 N0, ..., N_top])."""
    kmin = 2.0 * np.pi / S.side
    kmax = np.sqrt(2.0) * nyquist(S)
    N0 = 2.0 ** np.floor(np.log2(kmin))
    top = int(np.ceil(np.log2(kmax / N0)))
    return N0, [N0 * 2.0 ** j for j in range(1, top + 1)]


def band_norms(S, p=2):
    """(N, ||P_N S||_p) over the dyadic bands plus the low block P_{<N0}."""
    N0, Ns = _bands(S)
    F = _fft(S)
    KX, KY = wavenumbers(S.N, S.side)
    r = np.hypot(KX, KY)
    low = lp_norm(_ifft(S, F * _expand(bump(r / N0), S)), p)
    out = []
    for N in Ns:
        m = bump(r / N) - bump(2.0 * r / N)
        out.append((N, lp_norm(_ifft(S, F * _expand(m, S)), p)))
    return low, out


def besov_norm(S, s, p=2):
    """Inhomogeneous B^s_{p,p} norm through the dyadic Littlewood-Paley sum."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    low, bands = band_norms(S, p)
    total = low ** p + sum(N ** (s * p) * b ** p for N, b in bands)
    return float(total ** (1.0 / p))


def hs_saturation(S, fmin=None, fmax=None):
    """Decay exponent s of ||P_N S||_2 ~ N^-s fitted over the resolved bands.

    This is the largest s for which the H^s norm of S stays bounded under
    refinement of the sampling.
    """
    _, bands = band_norms(S, 2)
    fmin = 4.0 * 2.0 * np.pi / S.side if fmin is None else fmin
    fmax = 0.5 * nyquist(S) if fmax is None else fmax
    sel = [(N, b) for N, b in bands if fmin <= N <= fmax and b > 0]
    if len(sel) < 2:
        raise Degenerate("too few resolved bands for a decay fit")
    x = np.log([N for N, _ in sel])
    y = np.log([b for _, b in sel])
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)


# ---------------------------------------------------------------- cut-off

def smoothstep(t):
    """C^2 monotone ramp from 0 (t <= 0) to 1 (t >= 1) with its derivative."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t), 30.0 * t * t * (1.0 - t) ** 2


def boundary_distance(omega, pts):
    """Distance to the boundary of convex omega (negative outside) and its gradient."""
    omega = np.asarray(omega, dtype=float)
    pts = np.asarray(pts, dtype=float)
    best = np.full(pts.shape[:-1], np.inf)
    grad = np.zeros(pts.shape)
    for a, b in zip(omega, np.roll(omega, -1, axis=0)):
        d = b - a
        n = np.array([-d[1], d[0]]) / np.hypot(d[0], d[1])
        sd = (pts - a) @ n
        closer = sd < best
        best = np.where(closer, sd, best)
        grad[closer] = n
    return best, grad


def cutoff(omega, pts, delta):
    """eta = 1 where dist > 2 delta, 0 where dist < delta; returns (eta, grad eta)."""
    d, n = boundary_distance(omega, pts)
    g, dg = smoothstep((d - delta) / delta)
    return g, (dg / delta)[..., None] * n


def mollified_energy(Fd, eps, N=1024, box=None, p=2, v=None, parts=False):
    """Energy of the competitor eta_delta * P_{<1/eps} v with delta = eps.

    ``v`` may be passed as a precomputed ``rasterize(Fd, N, box, "v")``.
    Returns the integral of dist^p(M + grad w, K) plus eps^p times the
    integral of |grad^2 w|^p over omega, evaluated on the grid.
    """
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if v is None:
        v = rasterize(Fd, N, box, "v")
    Nf = 1.0 / eps
    if Nf > 0.25 * nyquist(v):
        raise GridTooCoarse(f"1/eps = {Nf:.4g} exceeds a quarter of the Nyquist frequency "
                            f"{nyquist(v):.4g}")
    KX, KY = wavenumbers(v.N, v.side)
    K = (KX, KY)
    low = np.fft.ifft2(np.fft.fft2(v.samples, axes=(0, 1)) * bump(np.hypot(KX, KY) / Nf)[..., None],
                       axes=(0, 1)).real
    pts = v.points()
    eta, _ = cutoff(Fd.omega, pts, eps)
    w_hat = np.fft.fft2(eta[..., None] * low, axes=(0, 1))
    # grad[..., i, j] = d w_i / d x_j
    grad = np.stack([np.fft.ifft2(1j * K[j][..., None] * w_hat, axes=(0, 1)).real
                     for j in range(2)], axis=-1)
    hess2 = np.zeros(eta.shape)
    for j in range(2):
        for l in range(2):
            d2 = np.fft.ifft2(-(K[j] * K[l])[..., None] * w_hat, axes=(0, 1)).real
            hess2 += np.sum(d2 * d2, axis=-1)
    mask = geo.contains(Fd.omega, pts.reshape(-1, 2)).reshape(eta.shape)
    dA = v.spacing ** 2
    elastic = float(np.sum(st.dist_to_K(Fd.M + grad[mask]) ** p) * dA)
    surface = float(eps ** p * np.sum(hess2[mask] ** (0.5 * p)) * dA)
    if parts:
        return elastic, surface
    return elastic + surface


def scaling_fit(pairs):
    """Least-squares fit of log energy against log eps; mu = slope / 2."""
    pairs = sorted((float(e), float(E)) for e, E in pairs)
    if len(pairs) < 5:
        raise ValueError("need at least 5 (eps, energy) pairs")
    eps = np.array([e for e, _ in pairs])
    E = np.array([v for _, v in pairs])
    if np.any(E <= 0):
        raise Degenerate("energies must be positive")
    x, y = np.log(eps), np.log(E)
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(res ** 2) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFitResult(mu=float(slope / 2), slope=float(slope), intercept=float(intercept),
                            r2=float(r2), eps=tuple(eps.tolist()))


def poincare_check(test_field, s, deltas, omega, N=1024, box=None):
    """Fitted slope of log ||u||_{L2(annulus)} against log delta.

    The annulus is the set where the distance to the boundary lies in
    (delta, 2 delta].  ``test_field`` is a callable ``f(points) -> values`` or
    a SpectralField.
    """
    omega = geo.convex_poly(omega)
    deltas = sorted(float(d) for d in deltas)
    if len(deltas) < 5:
        raise ValueError("need at least 5 deltas")
    if isinstance(test_field, SpectralField):
        S = test_field
    else:
        origin, side = default_box(omega) if box is None else box
        pts = pixel_centres(N, np.asarray(origin, dtype=float), side)
        S = SpectralField(np.asarray(test_field(pts), dtype=float), np.asarray(origin, float),
                          float(side))
    d, _ = boundary_distance(omega, S.points())
    vals = np.abs(S.samples).reshape(S.N, S.N, -1).max(axis=-1)
    tol = 1e-12 * S.spacing
    if np.any(vals[d < -tol] > 1e-12):
        raise SupportViolation("test field is nonzero outside omega")
    sq = np.abs(S.samples).reshape(S.N, S.N, -1) ** 2
    sq = sq.sum(axis=-1)
    norms = [float(np.sqrt(np.sum(sq[(d > dl) & (d <= 2 * dl)]) * S.spacing ** 2)) for dl in deltas]
    hs = hs_norm(S, s)
    good = [(dl, n) for dl, n in zip(deltas, norms) if n > 0]
    if len(good) < 2:
        return PoincareResult(float("nan"), tuple(norms), tuple(deltas), hs, True)
    slope = np.polyfit(np.log([g[0] for g in good]), np.log([g[1] for g in good]), 1)[0]
    return PoincareResult(float(slope), tuple(norms), tuple(deltas), hs, False)
