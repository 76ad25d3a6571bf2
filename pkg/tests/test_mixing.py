import math

import numpy as np
import pytest

from annulusdyn import core, blender as bl, mixing as mx
from annulusdyn.core import Word, point


EPS = 1e-3
RT = math.sqrt(EPS)


@pytest.fixture(scope="module")
def models():
    return core.inner_preset("d1"), core.scattering_preset("d1-kick")


@pytest.fixture(scope="module")
def charts(models):
    T, S = models
    cs = bl.build_chart(T, S, eps=EPS, kappa=0.01, chi=0.3)
    cu = bl.build_chart(T, S, eps=EPS, kappa=0.01, chi=0.3, orientation="cu")
    return cs, cu


@pytest.fixture(scope="module")
def planner(models, charts):
    T, S = models
    return mx.MixPlanner(T, S, EPS, charts[0], charts[1])


def test_calibrated_core_factor(planner):
    assert 0 < planner.c_eps_factor <= 2.0


def test_climb_noop_inside_core(models, planner):
    T, S = models
    p = point([0.3], [0.5 * planner.c_eps])
    w, q, blocks = mx.climb_to_core(T, S, EPS, p, planner.c_eps)
    assert w.length == 0 and not blocks
    assert core.annulus_dist(q, p) == 0.0


def test_climb_block_count_and_replay(models, planner):
    T, S = models
    p = point([0.3], [0.5 * RT])
    w, q, blocks = mx.climb_to_core(T, S, EPS, p, planner.c_eps)
    predicted = 0.5 * RT * math.log(1.0 / EPS) / (2 * EPS)
    assert predicted / 2 <= len(blocks) <= predicted * 2
    assert np.max(np.abs(q.J)) <= planner.c_eps
    replay = core.apply_word(w, {"T": T, "S": S}, EPS, p)
    assert core.annulus_dist(replay, q) < 1e-12


def test_climb_sign_and_monotonicity(models, planner):
    T, S = models
    p = point([0.11], [0.4 * RT])
    _, _, blocks = mx.climb_to_core(T, S, EPS, p, planner.c_eps)
    prev = 0.4 * RT
    for n, q in blocks:
        cur = float(np.max(np.abs(q.J)))
        assert cur < prev  # strict decrease toward the core
        prev = cur
    # for J > 0 every selected kick is negative
    deltas = np.diff([0.4 * RT] + [float(b[1].J[0]) for b in blocks])
    assert np.all(deltas < 0)


def test_approach_zero_when_inside(models, charts):
    T, _ = models
    chart_cu = charts[1]
    w0 = np.array([0.1, 0.1])
    p = chart_cu.to_annulus(w0)
    n, q = mx.approach_blender(T, EPS, p, chart_cu)
    assert n == 0


def test_approach_membership(models, charts):
    T, _ = models
    chart_cu = charts[1]
    p = point([0.4], [0.2 * 0.01 * EPS])
    n, q = mx.approach_blender(T, EPS, p, chart_cu)
    assert np.max(np.abs(chart_cu.from_annulus(q))) <= 0.5


def test_approach_rational_rotation_fails(charts):
    rational = core.InnerMapModel(
        d=1, beta=[0.5], A=[[1.0]],
        rphi=core.ComponentFunction.zero(1), rj=core.ComponentFunction.zero(1),
        gamma=0.0)
    p = point([0.123], [0.0])
    with pytest.raises(mx.MixingError):
        mx.approach_blender(rational, EPS, p, charts[1], n_budget=500)


def test_plan_mix_verifies(models, planner):
    B0 = mx.Ball(point([0.3], [0.5 * RT]), 0.05 * RT)
    B1 = mx.Ball(point([0.7], [-0.5 * RT]), 0.05 * RT)
    plan = planner.plan(B0, B1, seed=5)
    assert plan.verified and plan.hits >= 1
    assert plan.L == plan.word.length
    assert [p for p, _, _ in plan.step_log] == ["climb", "approach", "blend", "exit"]
    # all letters forward over {T, S}
    for g, k in plan.word.letters:
        assert g in ("T", "S") and k >= 1


def test_plan_replay_consistency(models, planner):
    """Replaying each logged segment reproduces the next logged point."""
    T, S = models
    B0 = mx.Ball(point([0.25], [0.4 * RT]), 0.05 * RT)
    B1 = mx.Ball(point([0.6], [-0.3 * RT]), 0.05 * RT)
    plan = planner.plan(B0, B1, seed=7)
    p = B0.center
    for phase, seg, logged in plan.step_log:
        p = core.apply_word(seg, {"T": T, "S": S}, EPS, p)
        assert core.annulus_dist(p, logged) < 1e-8


def test_plan_exact_lengths(models, planner):
    B0 = mx.Ball(point([0.3], [0.5 * RT]), 0.05 * RT)
    B1 = mx.Ball(point([0.7], [-0.5 * RT]), 0.05 * RT)
    Lt = planner.padded_base_length(B0, B1)
    for k in (0, 1, 5):
        plan = planner.plan(B0, B1, seed=5, L_target=Lt + k)
        assert plan.L == Lt + k
        assert plan.verified


def test_plan_trivial_fixed_point_pair(models, charts):
    T, S = models
    chart_cs, chart_cu = charts
    cov = bl.covering_check(chart_cs.box_maps(), 1, 2)
    cert_cs, _ = bl.certify_blender(chart_cs, covering=cov, n_probes=10, seed=3)
    planner = mx.MixPlanner(T, S, EPS, chart_cs, chart_cu, cert_cs=cert_cs)
    P = chart_cs.to_annulus(cert_cs.fixed_point)
    ball = mx.Ball(P, 0.05 * RT)
    plan = planner.plan(ball, ball, seed=1)
    assert plan.verified
    letters = plan.word.simplify().letters
    assert letters == Word((("S", 1), ("T", cert_cs.n_star))).letters


def test_exit_plan_replay(models, charts, planner):
    T, S = models
    target = point([0.7], [-0.5 * RT])
    entry, w_exit, _ = mx.plan_exit(T, S, EPS, target, planner.c_eps, charts[0])
    out = core.apply_word(w_exit, {"T": T, "S": S}, EPS, entry)
    assert core.annulus_dist(out, target) < 1e-10
    assert np.max(np.abs(charts[0].from_annulus(entry))) <= 0.5
