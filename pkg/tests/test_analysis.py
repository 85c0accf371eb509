import numpy as np
import pytest

from microlam import analysis as an
from microlam import geometry as geo
from microlam import scheme as sc
from microlam.errors import GridTooCoarse, OutOfRange, ResolutionTooCoarse, SupportViolation

from conftest import OMEGA, preset_matrix


def field(samples, side=1.0):
    return an.SpectralField(np.asarray(samples, dtype=float), np.zeros(2), side)


def mode(N, m, side=1.0):
    P = an.pixel_centres(N, np.zeros(2), side)
    k = 2 * np.pi * np.asarray(m) / side
    return np.cos(P @ k), float(np.hypot(*k))


def test_lp_split_is_identity():
    rng = np.random.default_rng(0)
    S = field(rng.standard_normal((128, 128, 2)))
    lo = an.lp_project(S, 16.0, "low").samples
    hi = an.lp_project(S, 16.0, "high").samples
    assert np.abs(lo + hi - S.samples).max() <= 1e-10


def test_bands_telescope():
    rng = np.random.default_rng(1)
    S = field(rng.standard_normal((128, 128)))
    total = sum(an.lp_project(S, 2.0 ** j, "band").samples for j in range(3, 8))
    diff = an.lp_project(S, 128.0, "low").samples - an.lp_project(S, 4.0, "low").samples
    assert np.abs(total - diff).max() <= 1e-10


def test_lp_rejects():
    S = field(np.zeros((64, 64)))
    with pytest.raises(ValueError):
        an.lp_project(S, 12.0)
    with pytest.raises(OutOfRange):
        an.lp_project(S, 512.0)


@pytest.mark.parametrize("s", [0.0, 0.5, 1.0, 1.7])
def test_single_mode_hs(s):
    u, k0 = mode(128, (3, 5))
    S = field(u)
    expected = (k0 ** 2 + 1) ** (s / 2) * an.l2_norm(S)
    assert abs(an.hs_norm(S, s) - expected) <= 1e-8 * expected
    assert an.l2_norm(S) == pytest.approx(np.sqrt(0.5), rel=1e-12)


def test_parseval():
    rng = np.random.default_rng(2)
    S = field(rng.standard_normal((256, 256)), side=3.0)
    assert abs(an.hs_norm(S, 0.0) - an.l2_norm(S)) <= 1e-10 * an.l2_norm(S)


def test_hs_monotone_in_s():
    rng = np.random.default_rng(3)
    S = field(rng.standard_normal((64, 64)))
    vals = [an.hs_norm(S, s) for s in np.linspace(0, 2, 9)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_besov_single_band():
    u, k0 = mode(256, (0, 6), side=1.0)
    S = field(u)
    assert an.besov_norm(S, 0.0) == pytest.approx(an.l2_norm(S), rel=0.2)
    assert an.besov_norm(S, 1.0) > an.besov_norm(S, 0.5) > an.besov_norm(S, 0.0)


def test_hs_saturation_of_a_jump():
    # a step has band norms decaying like N^-1/2
    N = 1024
    P = an.pixel_centres(N, np.zeros(2), 1.0)
    S = field((P[..., 0] % 1.0 < 0.5).astype(float))
    assert an.hs_saturation(S) == pytest.approx(0.5, abs=0.1)


def test_bump_profile():
    r = np.array([0.0, 1.0, 1.5, 2.0, 3.0])
    b = an.bump(r)
    assert b[0] == 1 and b[1] == 1 and b[3] == 0 and b[4] == 0
    assert b[2] == pytest.approx(0.5)


def test_scaling_fit_recovers_power():
    eps = 2.0 ** -np.arange(3, 9)
    fit = an.scaling_fit([(e, 3.0 * e ** (2 / 3)) for e in eps])
    assert fit.mu == pytest.approx(1 / 3, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    rng = np.random.default_rng(4)
    noisy = an.scaling_fit([(e, 3.0 * e ** (2 / 3) * np.exp(0.01 * rng.standard_normal())) for e in eps])
    assert noisy.mu == pytest.approx(1 / 3, abs=0.02)
    assert noisy.r2 > 0.99


def test_scaling_fit_rejects():
    with pytest.raises(ValueError):
        an.scaling_fit([(0.1, 1.0)] * 4)
    from microlam.errors import Degenerate
    with pytest.raises(Degenerate):
        an.scaling_fit([(2.0 ** -j, 0.0) for j in range(5)])


def edge_product(omega):
    def f(P):
        d = np.ones(P.shape[:-1])
        for a, b in zip(omega, np.roll(omega, -1, axis=0)):
            t = b - a
            n = np.array([-t[1], t[0]]) / np.hypot(*t)
            d = d * np.maximum((P - a) @ n, 0.0)
        return d
    return f


def test_poincare_slope_and_monotone():
    deltas = [2.0 ** -j for j in range(3, 8)]
    res = an.poincare_check(edge_product(OMEGA), 0.5, deltas, OMEGA)
    assert not res.flagged
    assert res.slope >= 0.3
    assert all(b >= a for a, b in zip(res.annulus_norms, res.annulus_norms[1:]))
    assert res.hs > 0


def test_poincare_zero_field_flagged():
    deltas = [2.0 ** -j for j in range(3, 8)]
    res = an.poincare_check(lambda P: np.zeros(P.shape[:-1]), 0.5, deltas, OMEGA, N=256)
    assert res.flagged and all(n == 0 for n in res.annulus_norms)


def test_poincare_support_violation():
    deltas = [2.0 ** -j for j in range(3, 8)]
    with pytest.raises(SupportViolation):
        an.poincare_check(lambda P: np.ones(P.shape[:-1]), 0.5, deltas, OMEGA, N=256)


def test_cutoff():
    pts = np.array([[0.5, 0.01], [0.5, 0.3], [0.5, 0.015]])
    eta, _ = an.cutoff(OMEGA, pts, 0.01)
    assert eta[0] == 0.0 and eta[1] == 1.0 and 0 < eta[2] < 1


def test_rasterize_rules():
    Fd = sc.init(OMEGA, preset_matrix("case-i"))
    with pytest.raises(ResolutionTooCoarse):
        an.rasterize(Fd, 32)
    with pytest.raises(ValueError):
        an.rasterize(Fd, 96)
    S = an.rasterize(Fd, 64)
    assert np.allclose(S.samples, Fd.M)
    v = an.rasterize(Fd, 64, quantity="v")
    assert np.abs(v.samples).max() == 0.0
    with pytest.raises(GridTooCoarse):
        an.mollified_energy(Fd, 2.0 ** -6, v=v)


def test_raster_energy_of_single_cell():
    Fd = sc.init(OMEGA, preset_matrix("case-ii"))
    S = an.rasterize(Fd, 512)
    exact = sc.elastic_energy(Fd)
    assert an.raster_elastic_energy(S, Fd.omega) == pytest.approx(exact, rel=0.01)


def test_mollified_energy_of_affine_field():
    # v = 0 gives the energy of the constant M over omega
    Fd = sc.init(OMEGA, preset_matrix("case-ii"))
    E = an.mollified_energy(Fd, 2.0 ** -3, N=256)
    assert E == pytest.approx(sc.elastic_energy(Fd), rel=0.02)
