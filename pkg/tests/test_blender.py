import math

import numpy as np
import pytest

from annulusdyn import core, blender as bl


EPS, KAPPA, CHI = 1e-3, 0.01, 0.3


@pytest.fixture(scope="module")
def models():
    return core.inner_preset("d1"), core.scattering_preset("d1-kick")


@pytest.fixture(scope="module")
def chart(models):
    T, S = models
    return bl.build_chart(T, S, eps=EPS, kappa=KAPPA, chi=CHI)


@pytest.fixture(scope="module")
def covering(chart):
    return bl.covering_check(chart.box_maps(), 1, 2, grid_res=0.05, r_tol=1e-3)


@pytest.fixture(scope="module")
def toy_maps():
    return [bl.AffineBoxMap(np.array([b]), np.array([[0.5]])) for b in (-0.5, 0.0, 0.5)]


# -- chart construction -----------------------------------------------------

def test_chart_example_quantifiers_nonempty(models):
    T, S = models
    c = bl.build_chart(T, S, eps=1e-3, kappa=1e-2, chi=0.1)
    assert len(c.N_set) > 0


def test_chart_rejects_bad_hierarchy(models):
    T, S = models
    with pytest.raises(bl.ChartError):
        bl.build_chart(T, S, eps=0.5, kappa=0.01, chi=0.1)


def test_chart_rejects_degenerate_torsion(models):
    T, _ = models
    S_shift = core.scattering_preset("d1-shift")  # B = 0
    with pytest.raises(bl.NonHyperbolicError):
        bl.build_chart(T, S_shift, eps=EPS, kappa=KAPPA, chi=CHI)


def test_box_map_roundtrip(chart):
    fm = chart.box_map(chart.N_set[0])
    w = np.array([[0.3, -0.4], [-0.7, 0.2]])
    assert np.max(np.abs(fm.inverse(fm(w)) - w)) < 1e-10


def test_cu_chart_is_involution_conjugate(models, chart):
    """psi_R o (T^n o S) o psi_R equals (S o T^n)^-1; exact for the odd kick preset."""
    T, S = models
    defect = bl.involution_defect(T, S, EPS, chart.N_eps + 7)
    assert defect <= 1e-12


def test_involution_conjugacy_generic_model():
    """Non-odd kick: the conjugacy holds up to the remainder tolerance only.

    PJ(0) = 0 is required (part of the torsion hypothesis) for the mismatch
    to stay quadratic in the angle.
    """
    import math
    T = core.inner_preset("d1")
    pj = core.ComponentFunction.from_spec(
        1, [[{"coef": 0.1, "trig": "sin", "freq": [1], "phase": 0.4},
             {"coef": -0.1 * math.sin(0.4)}]])
    S = core.ScatteringMapModel(d=1, pphi=core.ComponentFunction.zero(1), pj=pj)
    defect = bl.involution_defect(T, S, EPS, 2100, radius=0.01)
    assert defect <= 5.0 * EPS


# -- covering ---------------------------------------------------------------

def test_covering_affine_toy(toy_maps):
    rep = bl.covering_check(toy_maps, 1, 1, grid_res=0.01, r_tol=1e-4)
    assert rep.covered
    assert rep.a == pytest.approx(0.25, abs=0.01)


def test_covering_single_map_fails():
    single = [bl.AffineBoxMap(np.array([0.0]), np.array([[0.5]]))]
    rep = bl.covering_check(single, 1, 1, grid_res=0.01)
    assert not rep.covered
    assert abs(rep.witness[0]) > 0.5


def test_covering_monotone_minimality(toy_maps):
    """Removing any branch either uncovers a cell or collapses the radius a."""
    for k in range(3):
        sub = [m for i, m in enumerate(toy_maps) if i != k]
        rep = bl.covering_check(sub, 1, 1, grid_res=0.01, r_tol=1e-4)
        assert (not rep.covered) or rep.a < 0.25 - 0.02


def test_covering_chart(chart, covering):
    assert covering.covered
    assert covering.a >= 0.1


# -- graph transform --------------------------------------------------------

def test_graph_transform_diagonal_toy():
    toy = bl.AffineBoxMap(np.zeros(2), np.diag([0.5, 2.0]))
    strip = bl.CsStrip.from_callable([-0.2], [0.2], lambda xi: np.array([0.0]))
    out = bl.graph_transform(strip, toy)
    assert out.lo[0] == pytest.approx(-0.4, abs=1e-12)
    assert out.hi[0] == pytest.approx(0.4, abs=1e-12)
    assert np.max(np.abs(out.values)) < 1e-12


def test_graph_transform_lipschitz_composition():
    toy = bl.AffineBoxMap(np.zeros(2), np.diag([0.5, 2.0]))
    strip = bl.CsStrip.from_callable([-0.2], [0.2], lambda xi: 0.1 * xi)
    out = bl.graph_transform(strip, toy)
    assert out.lip() == pytest.approx(0.025, abs=1e-6)


def test_graph_transform_containment_gate():
    toy = bl.AffineBoxMap(np.zeros(2), np.diag([0.5, 2.0]))
    # image xi-range is [-0.5, 0.5]; a strip near +0.8 is outside
    strip = bl.CsStrip.from_callable([0.7], [0.9], lambda xi: np.array([0.0]))
    with pytest.raises(bl.StripError):
        bl.graph_transform(strip, toy)


def test_pullback_count_toy():
    """Width a/16 needs ceil(log2(8)) = 3 pullbacks to reach a/2 at growth 1/2^-1."""
    toy = bl.AffineBoxMap(np.zeros(2), np.diag([0.5, 2.0]))
    a = 0.25
    strip = bl.CsStrip.from_callable([-a / 16], [a / 16], lambda xi: np.array([0.0]))
    count = 0
    while strip.width < a / 2 - 1e-12:
        strip = bl.graph_transform(strip, toy, lam_bar=0.5)
        count += 1
    assert count == 3


# -- fixed points -----------------------------------------------------------

def test_newton_fixed_point_affine():
    toy = bl.AffineBoxMap(np.array([0.3, 0.0]), np.diag([0.5, 2.0]))
    w = bl._newton_fixed_point(toy, np.zeros(2))
    assert np.allclose(w, [0.6, 0.0], atol=1e-10)


def test_fixed_point_eigenvalue_pairing(chart):
    n = chart.N_set[len(chart.N_set) // 2]
    fp = bl.find_fixed_point(chart, n)
    fm = chart.box_map(n)
    assert np.max(np.abs(fm(fp.w[None, :])[0] - fp.w)) < 1e-10
    Jac = fm.jacobian(fp.w)
    eigs = np.linalg.eigvals(Jac)
    assert abs(np.prod(eigs).real - 1.0) < 1e-8
    lam = np.min(np.abs(eigs))
    assert abs(lam * np.max(np.abs(eigs)) - 1.0) < 1e-8


def test_fixed_point_net(chart):
    xs = []
    for n in chart.N_set:
        try:
            fp = bl.find_fixed_point(chart, n, grow_iters=2)
        except bl.FixedPointError:
            continue
        xs.append(fp.w[0])
    xs = np.array(xs).reshape(-1, 1)
    radius = bl._net_radius(xs, 201)
    assert radius <= chart.C * chart.chi + 1e-9


def test_unstable_graph_invariance(chart):
    n = chart.N_set[len(chart.N_set) // 2]
    fp = bl.find_fixed_point(chart, n)
    fm = chart.box_map(n)
    eta = np.linspace(-0.2, 0.2, 9)
    pts = np.stack([fp.unstable.f(eta), eta], axis=1)
    img = fm(pts)
    keep = np.abs(img[:, 1]) <= 1.0
    err = np.abs(img[keep, 0] - fp.unstable.f(img[keep, 1]))
    assert err.max() < 1e-3
    assert fp.unstable.slope() <= 2 * chart.C * chart.chi + 0.1


# -- certification ----------------------------------------------------------

@pytest.fixture(scope="module")
def cs_cert(chart, covering):
    cert, _ = bl.certify_blender(chart, covering=covering, n_probes=60, seed=1)
    return cert


def test_certify_probes(cs_cert, chart):
    assert cs_cert.n_certified == 60
    need = 1.0 / chart.lambda_bar - 1e-6
    for widths in cs_cert.widths_trace:
        for w0, w1 in zip(widths, widths[1:]):
            assert w1 / w0 >= need
            assert w1 > w0


def test_certify_wide_strip_empty_word(cs_cert):
    wide = [p for p in cs_cert.probes if not p.word_ns]
    assert wide, "some probes should start wider than a/2"
    assert all(len(p.widths) == 1 for p in wide)


def test_witness_words_are_forward_words(cs_cert):
    for w in cs_cert.witness_words:
        for g, k in w.letters:
            assert g in ("T", "S") and k >= 1


@pytest.fixture(scope="module")
def cu_setup(models):
    T, S = models
    chart_cu = bl.build_chart(T, S, eps=EPS, kappa=KAPPA, chi=CHI, orientation="cu")
    cov_cu = bl.covering_check(chart_cu.box_maps(), 1, 2, grid_res=0.05, r_tol=1e-3)
    cert_cu, _ = bl.certify_blender(chart_cu, covering=cov_cu, n_probes=60, seed=2)
    return chart_cu, cov_cu, cert_cu


def test_cu_certification(cu_setup):
    chart_cu, cov_cu, cert_cu = cu_setup
    assert cov_cu.covered
    assert cert_cu.n_certified == 60


def test_double_blender(chart, cs_cert, cu_setup):
    chart_cu, _, cert_cu = cu_setup
    rep = bl.certify_double_blender(cs_cert, cert_cu, chart, chart_cu)
    assert rep.ok
    assert rep.angle >= 0.5


def test_intersect_curves_orthogonal():
    t = np.linspace(-1, 1, 41)
    vertical = np.stack([np.zeros_like(t), t], axis=1)
    horizontal = np.stack([t, np.zeros_like(t)], axis=1)
    ok, angle, pt = bl.intersect_curves(vertical, horizontal)
    assert ok
    assert angle == pytest.approx(math.pi / 2, abs=1e-9)
    assert np.allclose(pt, 0.0, atol=1e-9)


def test_intersect_curves_parallel():
    t = np.linspace(-1, 1, 41)
    c1 = np.stack([np.full_like(t, -0.3), t], axis=1)
    c2 = np.stack([np.full_like(t, 0.3), t], axis=1)
    ok, angle, _ = bl.intersect_curves(c1, c2)
    assert not ok
    assert angle < 1e-9
