import math

import numpy as np
import pytest

from annulusdyn import core, linearize as lz


@pytest.fixture(scope="module")
def family():
    T = core.inner_preset("d1")
    S = core.scattering_preset("d1-kick")
    return lz.ComposedFamily.from_models(T, S), T, S


def test_build_affine_n0(family):
    fam, T, _ = family
    aff = lz.build_affine(fam, T, 0.1, 0, C=math.inf)
    assert np.allclose(aff.A_n, [[1.0, 0.0], [0.1, 1.0]])
    assert np.allclose(aff.b_n, 0.0)


def test_build_affine_blocks(family):
    fam, T, _ = family
    aff = lz.build_affine(fam, T, 0.1, 50, C=math.inf)
    assert np.allclose(aff.A_n, [[6.0, 50.0], [0.1, 1.0]])
    assert abs(np.linalg.det(aff.A_n) - 1.0) < 1e-9


def test_build_affine_range_gate(family):
    fam, T, _ = family
    with pytest.raises(ValueError):
        lz.build_affine(fam, T, 0.1, 10 ** 6)


def test_affine_error_empirical(family):
    """Direct orbit-composition oracle; error is cubic in the box radius here.

    Measured max error at eps=0.1, n=50 over |phi| <= 0.05 is ~4.1e-3.
    """
    fam, T, S = family
    err = lz.affine_error_scan(fam, T, S, 0.1, 50, 0.05, 0.05, samples=300, seed=1)
    assert err <= 5e-3
    err_half = lz.affine_error_scan(fam, T, S, 0.1, 50, 0.025, 0.025, samples=300, seed=1)
    order = math.log(err / err_half) / math.log(2.0)
    assert order >= 1.8


def test_eigen_closed_form():
    sd = lz.eigen_An([1.0], 1.0, 5)  # alpha^(n) = 5
    lam = sd.lambdas[0]
    assert lam == pytest.approx((7 - 3 * math.sqrt(5)) / 2, abs=1e-12)
    assert abs(lam ** 2 - 7 * lam + 1) <= 1e-10
    assert lam * (1 / lam) == pytest.approx(1.0, abs=1e-12)


def test_eigen_rejects_boundary():
    with pytest.raises(lz.NonHyperbolicError):
        lz.eigen_An([1.0], 1.0, 0)  # alpha = 0
    with pytest.raises(lz.NonHyperbolicError):
        lz.eigen_An([-4.0], 1.0, 1)  # alpha = -4
    with pytest.raises(lz.NonHyperbolicError):
        lz.eigen_An([-2.0], 1.0, 1)  # inside the gap


def test_eigen_negative_alpha_branch():
    sd = lz.eigen_An([-5.0], 1.0, 1)
    assert abs(sd.lambdas[0]) < 1.0
    a = sd.alphas_n[0]
    assert abs(sd.lambdas[0] ** 2 - (2 + a) * sd.lambdas[0] + 1) <= 1e-10


def test_eigen_pairing_product(family):
    fam, _, _ = family
    sd = fam.eigen(1e-3, 2000)
    eigs = np.diag(sd.D_n)
    assert np.prod(eigs) == pytest.approx(1.0, abs=1e-9)


def test_diagonalization_at_base_iterate(family):
    fam, _, _ = family
    eps, n = 1e-3, 1500
    sd = fam.eigen(eps, n)
    aff = lz.build_affine(fam, lz._identity_inner(fam), eps, n, C=math.inf)
    M = np.linalg.solve(sd.Q_n, aff.A_n @ sd.Q_n)
    assert np.max(np.abs(M - sd.D_n)) < 1e-9


def test_simultaneous_diag_example(family):
    fam, _, _ = family
    eps, N0 = 1e-3, 5.0
    N_eps = int(N0 / eps)
    r0 = lz.simultaneous_diag(fam, eps, N_eps, N_eps, N0=N0)
    assert r0.residual <= 1e-12
    r100 = lz.simultaneous_diag(fam, eps, N_eps, N_eps + 100, N0=N0)
    assert r100.residual <= 10.0 * (eps * 100 / N0)
    assert r100.ok


def test_simultaneous_diag_slope(family):
    fam, _, _ = family
    eps, N0 = 1e-3, 5.0
    N_eps = int(N0 / eps)
    ks = np.array([10, 16, 25, 40, 63, 100])
    res = [lz.simultaneous_diag(fam, eps, N_eps, N_eps + int(k), N0=N0).residual for k in ks]
    slope = np.polyfit(np.log(ks), np.log(res), 1)[0]
    assert abs(slope - 1.0) <= 0.1


def test_equidistribution_golden_100():
    rep = lz.equidistribution_window([core.GOLDEN_MEAN], 0.38, 100)
    # independent sort-and-scan oracle
    pts = np.sort(np.mod(np.arange(1, 101) * core.GOLDEN_MEAN, 1.0))
    gaps = np.diff(np.concatenate([pts, [pts[0] + 1]]))
    assert rep.radius == pytest.approx(np.max(gaps) / 2, abs=1e-15)
    assert rep.ok


def test_equidistribution_rational():
    rep = lz.equidistribution_window([0.4], 0.38, 10)  # p/q = 2/5
    assert rep.radius == pytest.approx(1.0 / 10.0, abs=1e-12)


def test_equidistribution_golden_1000_bound():
    rep = lz.equidistribution_window([core.GOLDEN_MEAN], 0.38, 1000)
    assert rep.radius <= 1.0 / (0.38 * 1000)


def test_equidistribution_d2_grid():
    rep = lz.equidistribution_window([core.GOLDEN_MEAN, core.SQRT2_MINUS_1], 0.012,
                                     4000, grid=40)
    assert rep.radius <= rep.bound
