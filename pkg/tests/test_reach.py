import math

import numpy as np
import pytest

from annulusdyn import core, reach as rc
from annulusdyn.core import point


@pytest.fixture(scope="module")
def shear():
    S1 = core.scattering_preset("shear-x")
    S2 = core.scattering_preset("shear-xy")
    return {"S1": S1, "S2": S2}


@pytest.fixture(scope="module")
def default_pair():
    return {"S1": core.scattering_preset("d1-kick"),
            "S2": core.scattering_preset("d1-shift")}


def test_flat_word_lengths():
    assert rc.CommutatorWord((1,)).flat().length == 1
    assert rc.CommutatorWord((1, 2)).flat().length == 4
    assert rc.CommutatorWord((1, 2, 1)).flat().length == 10


def test_flat_word_matches_nested_composition(shear):
    """Evaluating the flat word equals composing the nested commutator maps."""
    eps = 0.07
    p = point([0.21], [0.13])
    # direct four-map composition for the order-2 commutator
    S1, S2 = shear["S1"], shear["S2"]
    q = S1.apply(eps, p)
    q = S2.apply(eps, q)
    q = S1.apply_inverse(eps, q)
    q = S2.apply_inverse(eps, q)
    out = rc.apply_commutator((1, 2), shear, eps, p)
    assert core.annulus_dist(out, q, wrap=False) < 1e-14


def test_shear_commutator_exact(shear):
    out = rc.apply_commutator((1, 2), shear, 0.1, point([0.0], [0.0]))
    assert out.phi[0] == pytest.approx(0.0, abs=1e-14)
    assert out.J[0] == pytest.approx(0.01, abs=1e-14)


def test_self_commutator_is_identity(shear):
    p = point([0.3], [0.2])
    out = rc.apply_commutator((1, 1), shear, 0.1, p)
    assert core.annulus_dist(out, p, wrap=False) < 1e-13


def test_commutator_eps_zero_identity(shear):
    p = point([0.3], [0.2])
    out = rc.apply_commutator((1, 2), shear, 0.0, p)
    assert core.annulus_dist(out, p, wrap=False) == 0.0


def test_scaling_shear_exact(shear):
    fields = [rc.extract_field(shear["S1"]), rc.extract_field(shear["S2"])]
    slope, resid = rc.check_commutator_scaling((1, 2), shear, fields,
                                               point([0.0], [0.0]),
                                               [0.1, 0.05, 0.02])
    assert slope == math.inf
    assert np.max(resid) == 0.0


def test_scaling_default_pair(default_pair):
    fields = [rc.extract_field(default_pair["S1"]),
              rc.extract_field(default_pair["S2"])]
    z = point([0.23], [0.11])
    eps_list = [1e-2, 5e-3, 2e-3]
    s1, _ = rc.check_commutator_scaling((1,), default_pair, fields, z, eps_list)
    assert s1 >= 1.8
    s2, _ = rc.check_commutator_scaling((1, 2), default_pair, fields, z, eps_list)
    assert s2 >= 2.8
    s3, _ = rc.check_commutator_scaling((1, 2, 2), default_pair, fields, z, eps_list)
    assert s3 >= 3.8


def test_lie_rank_bracket_recovers():
    X1 = lambda z: np.array([1.0, 0.0])       # d/dx
    X2 = lambda z: np.array([0.0, z[0]])      # x d/dy
    rep = rc.lie_rank([X1, X2], np.zeros(2), max_depth=2)
    assert rep.ranks[0] == 1
    assert rep.ranks[1] == 2
    assert rep.full_rank
    assert (1, 2) in rep.basis_codes or (2, 1) in rep.basis_codes


def test_lie_rank_canonical():
    fields = [lambda z: np.array([1.0, 0.0]), lambda z: np.array([0.0, 1.0])]
    rep = rc.lie_rank(fields, np.zeros(2), max_depth=0)
    assert rep.ranks == [2] and rep.full_rank


def test_lie_rank_degenerate_family():
    X = lambda z: np.array([1.0, 0.2])
    rep = rc.lie_rank([X, X], np.array([0.1, 0.3]), max_depth=2)
    assert not rep.full_rank
    assert all(r == 1 for r in rep.ranks)


def test_reach_trivial(shear):
    z = point([0.0], [0.0])
    plan = rc.reach_plan(z, z, shear, 0.1)
    assert plan.word.length == 0
    assert plan.final_dist == 0.0


def test_reach_shear_exact(shear):
    plan = rc.reach_plan(point([0.0], [0.0]), point([0.0], [0.05]), shear, 0.1)
    assert plan.final_dist < 1e-12
    assert plan.word.length == 20  # 5 commutator blocks of flat length 4


def test_reach_default_pair_batch(default_pair):
    eps = 0.05
    rng = np.random.default_rng(0)
    for _ in range(8):
        a = point(rng.uniform(0, 1, 1), rng.uniform(-0.3, 0.3, 1))
        b = point(rng.uniform(0, 1, 1), rng.uniform(-0.3, 0.3, 1))
        plan = rc.reach_plan(a, b, default_pair, eps)
        assert plan.K_measured <= 10.0
        # budget bound: length <= C (1/eps)^(max order) per box leg
        boxes = max(1, len(plan.path))
        assert plan.word.length <= 20.0 * (1 / eps) ** 2 * boxes


def test_recurrence_golden():
    """Golden rotation returns: first hit at tolerance 0.02 is n = 34
    (dist 0.0132); n = 89 returns with dist = 0.00502."""
    T = core.inner_preset("d1")
    rec = rc.recurrence_times(T, 1e-3, point([0.2], [0.0]), 0.02, horizon=200)
    assert rec[0] == 34
    assert 89 in rec
    assert abs(core.wrap_signed(89 * core.GOLDEN_MEAN)) == pytest.approx(0.00502, abs=1e-4)


def test_forward_plan_gap_contract(default_pair):
    T = core.inner_preset("d1")
    eps = 0.05
    plan = rc.reach_plan_forward(point([0.1], [0.0]), point([0.3], [0.02]),
                                 T, default_pair, eps, n_star=5)
    assert plan.gaps_ok
    om = plan.omegas()
    L = len(om)
    n_seq = [5 * (L - r) for r in range(1, L)]
    for r in range(1, L):
        assert om[r - 1] - om[r] >= n_seq[r - 1]
    assert om[-1] >= 5
    assert plan.K_measured <= 10.0


def test_forward_plan_empty(default_pair):
    T = core.inner_preset("d1")
    z = point([0.4], [0.1])
    plan = rc.reach_plan_forward(z, z, T, default_pair, 0.05)
    assert plan.blocks == []
    assert plan.word.length == 0


def test_approximate_inverse_replacement():
    """A single inverse x-shift letter is replaced by forward repetitions."""
    T = core.inner_preset("d1")
    S1 = core.scattering_preset("d1-shift")
    eps = 0.05
    p = point([0.37], [0.05])
    k = rc._approx_inverse_reps(T, S1, eps, p, n_star=5, tol=2 * eps)
    seq = p
    for _ in range(k):
        seq = S1.apply(eps, T.apply_n(eps, seq, 5))
    out = T.apply_n(eps, seq, 5)
    target = S1.apply_inverse(eps, p)
    assert core.annulus_dist(out, target) <= 2 * eps
