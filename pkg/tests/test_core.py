import numpy as np
import pytest

from annulusdyn import core
from annulusdyn.core import AnnulusPoint, Word, point


GOLDEN = core.GOLDEN_MEAN


def test_wrap_torus_values():
    assert core.wrap_torus(1.25) == pytest.approx(0.25)
    assert core.wrap_torus(-0.1) == pytest.approx(0.9)
    assert core.wrap_torus(0.5) == pytest.approx(0.5)


def test_wrap_torus_rejects_nonfinite():
    with pytest.raises(ValueError):
        core.wrap_torus([np.nan])
    with pytest.raises(ValueError):
        core.wrap_torus([np.inf])


def test_wrap_torus_random_congruence():
    rng = np.random.default_rng(0)
    x = rng.uniform(-50, 50, size=200)
    w = core.wrap_torus(x)
    assert np.all((0 <= w) & (w < 1))
    assert np.allclose(np.mod(x - w, 1.0), 0.0, atol=1e-9)


def test_apply_inner_d1_affine():
    T = core.inner_preset("d1")
    q = T.apply(0.0, point([0.0], [0.1]))
    assert q.phi[0] == pytest.approx(GOLDEN + 0.1, abs=1e-12)
    assert q.J[0] == pytest.approx(0.1)

    q2 = T.apply(0.0, point([0.5], [0.0]))
    assert q2.phi[0] == pytest.approx(core.wrap_torus(0.5 + GOLDEN), abs=1e-12)
    assert q2.J[0] == pytest.approx(0.0)


def test_apply_inner_d2_affine_shift():
    T = core.inner_preset("d2")
    J = np.array([0.01, 0.02])
    p = point([0.1, 0.2], J)
    q = T.apply(0.0, p)
    expected = core.wrap_torus(np.array([0.1, 0.2]) + T.beta + J)
    assert np.allclose(q.phi, expected, atol=1e-14)
    assert np.allclose(q.J, J)


def test_apply_scattering_examples():
    S = core.scattering_preset("d1-kick")
    p = point([0.25], [0.0])
    q = S.apply(0.01, p)
    assert q.phi[0] == pytest.approx(0.25)
    assert q.J[0] == pytest.approx(0.01 / (2 * np.pi), abs=1e-15)

    # eps = 0 freezes the deformation
    r = S.apply(0.0, point([0.37], [0.22]))
    assert r.phi[0] == pytest.approx(0.37) and r.J[0] == pytest.approx(0.22)

    # PJ(0) = 0
    s = S.apply(0.01, point([0.0], [0.3]))
    assert s.phi[0] == pytest.approx(0.0) and s.J[0] == pytest.approx(0.3)


def test_torsion_matrix_matches_fd():
    S = core.scattering_preset("d1-kick")
    assert S.B[0, 0] == pytest.approx(1.0, abs=1e-8)
    S2 = core.scattering_preset("d2-kick")
    assert np.allclose(S2.B, np.eye(2), atol=1e-8)


def test_word_algebra():
    w = Word((("T", 2), ("S", 1)))
    v = Word((("S", -1),))
    assert (w * v).letters == (("T", 2), ("S", 1), ("S", -1))
    assert (w * v).simplify().letters == (("T", 2),)
    assert w.inverse().letters == (("S", -1), ("T", -2))
    assert w.length == 3
    assert Word().length == 0


def test_apply_word_empty_and_powers():
    gens = core.default_generators(1)
    p = point([0.3], [0.02])
    out = core.apply_word(Word(), gens, 1e-3, p)
    assert core.annulus_dist(out, p) == 0.0

    w3 = Word((("T", 3),))
    out3 = core.apply_word(w3, gens, 1e-3, p)
    manual = p
    for _ in range(3):
        manual = gens["T"].apply(1e-3, manual)
    assert core.annulus_dist(out3, manual) < 1e-14


def test_apply_word_inverse_roundtrip():
    gens = core.default_generators(1)
    p = point([0.13], [0.07])
    w = Word((("S", 1), ("S", -1)))
    out = core.apply_word(w, gens, 0.01, p)
    assert core.annulus_dist(out, p) < 1e-10

    rng = np.random.default_rng(7)
    word = Word((("T", 5), ("S", 1), ("T", -2), ("S", -1), ("T", 1)))
    for _ in range(5):
        q = point(rng.uniform(0, 1, 1), rng.uniform(-0.2, 0.2, 1))
        roundtrip = core.apply_word(word * word.inverse(), gens, 0.01, q)
        assert core.annulus_dist(roundtrip, q) < 1e-9


def test_invert_affine_in_two_steps():
    T = core.inner_preset("d1")
    p = point([0.4], [0.05])
    img = T.apply(0.0, p)
    back = T.apply_inverse(0.0, img)
    assert core.annulus_dist(back, p) < 1e-14


def test_invert_scattering_newton():
    S = core.scattering_preset("d1-kick")
    target = S.apply(0.01, point([0.3], [0.1]))
    q = core.invert_map(lambda x: S.apply(0.01, x), target, tol=1e-12)
    resid = core.annulus_dist(S.apply(0.01, q), target)
    assert resid <= 1e-12


def test_invert_reports_failure():
    # collapse map is not invertible
    def squash(p):
        return AnnulusPoint(p.phi * 0.0, p.J * 0.0)

    with pytest.raises(core.InversionError):
        core.invert_map(squash, point([0.3], [0.2]), max_iter=5)


def test_constant_type_golden():
    rep = core.check_constant_type([GOLDEN], 0.38, 10000)
    assert rep.passed
    assert rep.worst_ratio == pytest.approx(GOLDEN ** 2, abs=1e-9)


def test_constant_type_rational_fails():
    rep = core.check_constant_type([0.5], 0.38, 10)
    assert not rep.passed
    assert rep.witness_k == (2,)
    assert rep.worst_ratio == pytest.approx(0.0, abs=1e-15)


def test_constant_type_sqrt2():
    # worst ratio for sqrt(2)-1 is 2*(sqrt(2)-1)^2 = 0.3431... at k = 2
    rep = core.check_constant_type([core.SQRT2_MINUS_1], 0.34, 10000)
    assert rep.passed
    assert rep.worst_ratio == pytest.approx(2 * core.SQRT2_MINUS_1 ** 2, abs=1e-9)
    assert not core.check_constant_type([core.SQRT2_MINUS_1], 0.41, 10000).passed


def test_symplecticity_sampled():
    gens = core.default_generators(1)
    rng = np.random.default_rng(3)
    for eps in (0.0, 0.01, 0.1):
        for _ in range(10):
            p = point(rng.uniform(0, 1, 1), rng.uniform(-0.3, 0.3, 1))
            for g in ("T", "S"):
                defect = core.symplectic_defect(lambda x, g=g: gens[g].apply(eps, x), p)
                assert defect <= 1e-6


def test_symplecticity_d2():
    gens = core.default_generators(2)
    rng = np.random.default_rng(4)
    for _ in range(5):
        p = point(rng.uniform(0, 1, 2), rng.uniform(-0.2, 0.2, 2))
        assert core.symplectic_defect(lambda x: gens["T"].apply(0.01, x), p) <= 1e-6
        assert core.symplectic_defect(lambda x: gens["S"].apply(0.01, x), p) <= 1e-6


def test_b2_vanishing_structure():
    """Rphi and its first J-derivative, RJ and its first two J-derivatives vanish at J=0."""
    model = core.inner_preset("d1-cubic")
    h = 1e-4
    rng = np.random.default_rng(11)
    for phi in rng.uniform(0, 1, 100):
        phi = np.array([phi])
        z = np.array([0.0])
        assert abs(model.rphi(phi, z, 0.01)[0]) < 1e-12
        assert abs(model.rj(phi, z, 0.01)[0]) < 1e-12
        dphi = (model.rphi(phi, z + h, 0.01)[0] - model.rphi(phi, z - h, 0.01)[0]) / (2 * h)
        assert abs(dphi) < 1e-6
        dj = (model.rj(phi, z + h, 0.01)[0] - model.rj(phi, z - h, 0.01)[0]) / (2 * h)
        d2j = (model.rj(phi, z + h, 0.01)[0] - 2 * model.rj(phi, z, 0.01)[0]
               + model.rj(phi, z - h, 0.01)[0]) / h ** 2
        assert abs(dj) < 1e-6 and abs(d2j) < 1e-6


def test_config_roundtrip():
    cfg = {
        "d": 1,
        "beta": [GOLDEN],
        "A": [[1.0]],
        "gamma": 0.38,
        "eps": 0.002,
        "scattering": [
            {"J": [[{"coef": 0.15915494309189535, "trig": "sin", "freq": [1]}]]}
        ],
    }
    built = core.load_model_config(cfg)
    assert built["eps"] == pytest.approx(0.002)
    S = built["scattering"][0]
    q = S.apply(0.01, point([0.25], [0.0]))
    assert q.J[0] == pytest.approx(0.01 / (2 * np.pi), rel=1e-9)


def test_batch_word_replay_matches_scalar():
    gens = core.default_generators(1)
    w = Word((("T", 12), ("S", 1), ("T", 3), ("S", 1)))
    rng = np.random.default_rng(5)
    phi = rng.uniform(0, 1, (50, 1))
    J = rng.uniform(-0.01, 0.01, (50, 1))
    batch = core.apply_word_batch(w, gens, 1e-3, phi, J)
    for i in range(0, 50, 13):
        single = core.apply_word(w, gens, 1e-3, point(phi[i], J[i]))
        assert core.annulus_dist(point(batch.phi[i], batch.J[i]), single) < 1e-12
