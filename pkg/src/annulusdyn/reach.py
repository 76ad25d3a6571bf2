"""Discrete Ball-Box machinery: commutator words, bracket ranks, reachability.

For close-to-identity maps S_i = id + eps*X_i + O(eps^2), the nested map
commutator with code (i_1, ..., i_n) expands one bracket order per level:

    S_code = id + eps^n * Y_code + O(eps^(n+1)),

and when iterated brackets of the first-order fields span R^{2d}, a grid of
K*eps boxes can be traversed one frame direction at a time, which yields
eps-reachability between arbitrary points.  A forward-only variant trades
map inverses for recurrence returns with strictly decreasing twist gaps.

Bracket sign convention: the paper-style code (i1, i2) means the map
commutator [S_{i2}, S_{i1}] = S_{i2}^-1 S_{i1}^-1 S_{i2} S_{i1}; its exact
shear-toy expansion matches the field bracket [X_{i1}, X_{i2}] (note the
swap), so Y_(code+(i,)) = [Y_code, X_i] here; see the shear-toy test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (AnnulusPoint, InnerMapModel, ScatteringMapModel, Word,
                   annulus_dist, apply_word, point, wrap_signed)


class ReachError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# commutator words
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CommutatorWord:
    """Bracket code iota in {1..m}^n with its flat +-1-exponent word."""

    iota: tuple

    @property
    def order(self) -> int:
        return len(self.iota)

    def flat(self) -> Word:
        """Expand recursively: flat(code + (i,)) = flat . i . flat^-1 . i^-1."""
        w = Word(((f"S{self.iota[0]}", 1),))
        for i in self.iota[1:]:
            g = Word(((f"S{i}", 1),))
            w = w * g * w.inverse() * g.inverse()
        return w

    def inverse_flat(self) -> Word:
        return self.flat().inverse()


def apply_commutator(iota, maps: dict, eps: float, p: AnnulusPoint,
                     tol: float = 1e-13) -> AnnulusPoint:
    """Evaluate the nested map commutator with code iota at p."""
    word = CommutatorWord(tuple(iota)).flat()
    return apply_word(word, maps, eps, p, tol=tol)


# ---------------------------------------------------------------------------
# first-order fields and brackets
# ---------------------------------------------------------------------------

def extract_field(S: ScatteringMapModel, eps_ref: float = 1e-4):
    """First-order field X = (S_eps - id)/eps at eps_ref (exact for
    eps-linear kick families)."""
    def X(z: np.ndarray) -> np.ndarray:
        d = S.d
        p = AnnulusPoint(z[:d], z[d:])
        q = S.apply(eps_ref, p)
        dphi = wrap_signed(q.phi - p.phi) if S.wrap else q.phi - p.phi
        return np.concatenate([dphi, q.J - p.J]) / eps_ref
    return X


def bracket(X, Y, h: float = 1e-5):
    """Numerical Lie bracket [X, Y] = DY X - DX Y via central differences."""
    def Z(z: np.ndarray) -> np.ndarray:
        n = z.shape[0]
        DX = np.empty((n, n))
        DY = np.empty((n, n))
        for j in range(n):
            dz = np.zeros(n)
            dz[j] = h
            DX[:, j] = (X(z + dz) - X(z - dz)) / (2 * h)
            DY[:, j] = (Y(z + dz) - Y(z - dz)) / (2 * h)
        return DY @ X(z) - DX @ Y(z)
    return Z


def field_for_code(fields: list, iota) -> "callable":
    """Nested bracket field Y_iota = [...[X_i1, X_i2], ...] per the module convention."""
    Y = fields[iota[0] - 1]
    for i in iota[1:]:
        Y = bracket(Y, fields[i - 1])
    return Y


def check_commutator_scaling(iota, maps: dict, fields: list, p: AnnulusPoint,
                             eps_list, slope_floor: float | None = None):
    """Log-log slope of |S_iota(z) - z - eps^n Y_iota(z)| against eps.

    Exact commutators give residual 0 and are reported as passing with an
    infinite slope.
    """
    iota = tuple(iota)
    n = len(iota)
    d = p.phi.shape[-1]
    z = np.concatenate([p.phi, p.J])
    Y = field_for_code(fields, iota)(z)
    resid = []
    for eps in eps_list:
        q = apply_commutator(iota, maps, eps, p)
        dphi = wrap_signed(q.phi - p.phi) if _any_wrap(maps) else q.phi - p.phi
        delta = np.concatenate([dphi, q.J - p.J]) - eps ** n * Y
        resid.append(float(np.max(np.abs(delta))))
    resid = np.asarray(resid)
    if np.max(resid) <= 5e-13:
        return math.inf, resid
    eps_arr = np.asarray(list(eps_list), float)
    slope = float(np.polyfit(np.log(eps_arr), np.log(np.maximum(resid, 1e-300)), 1)[0])
    if slope_floor is not None and slope < slope_floor:
        raise ReachError(f"commutator scaling slope {slope:.2f} below {slope_floor}")
    return slope, resid


def _any_wrap(maps: dict) -> bool:
    return any(getattr(m, "wrap", True) for m in maps.values())


# ---------------------------------------------------------------------------
# Lie rank
# ---------------------------------------------------------------------------

@dataclass
class LieRankReport:
    ranks: list           # rank at depth 0, 1, ...
    basis_codes: list     # codes achieving full rank (empty on failure)
    full_rank: bool
    dim: int


def lie_rank(fields: list, z: np.ndarray, max_depth: int = 3,
             svd_tol: float = 1e-8) -> LieRankReport:
    """Rank of the iterated bracket distribution at z, depth by depth.

    Level s adds brackets of the generators with every level-(s-1) element;
    basis codes are chosen greedily as numerical rank increases.
    """
    z = np.asarray(z, float)
    dim = z.shape[0]
    m = len(fields)
    level = [((i + 1,), fields[i]) for i in range(m)]
    pool = list(level)
    vectors = []
    codes = []
    ranks = []

    def current_rank(extra=None):
        vs = vectors + ([extra] if extra is not None else [])
        if not vs:
            return 0
        M = np.stack(vs)
        s = np.linalg.svd(M, compute_uv=False)
        return int(np.sum(s > svd_tol * max(1.0, s[0])))

    for depth in range(max_depth + 1):
        if depth > 0:
            new_level = []
            for code, Y in level:
                for i in range(m):
                    new_level.append((code + (i + 1,), bracket(Y, fields[i])))
            level = new_level
            pool.extend(level)
        for code, Y in level:
            v = Y(z)
            if current_rank(v) > current_rank():
                vectors.append(v)
                codes.append(code)
        ranks.append(current_rank())
        if ranks[-1] >= dim:
            return LieRankReport(ranks=ranks, basis_codes=codes, full_rank=True,
                                 dim=dim)
    return LieRankReport(ranks=ranks, basis_codes=codes,
                         full_rank=ranks[-1] >= dim, dim=dim)


# ---------------------------------------------------------------------------
# reachability planner (signed exponents)
# ---------------------------------------------------------------------------

@dataclass
class ReachPlan:
    word: Word
    path: list            # box centers traversed
    final_dist: float
    K_measured: float
    eps: float


def _dist_vec(a: AnnulusPoint, b: AnnulusPoint, wrap: bool) -> np.ndarray:
    dphi = wrap_signed(a.phi - b.phi) if wrap else a.phi - b.phi
    return np.concatenate([dphi, a.J - b.J])


def reach_plan(z: AnnulusPoint, z_star: AnnulusPoint, maps: dict, eps: float,
               box_K: float = 2.0, max_rounds: int = 8, tol_factor: float = 0.05,
               basis: LieRankReport | None = None,
               fields: list | None = None, max_blocks: int = 10 ** 5) -> ReachPlan:
    """Steer z within K*eps of z_star with signed commutator blocks.

    The segment between the points is covered by boxes of side ~box_K*eps;
    inside each box one moves along the bracket-basis frame, applying each
    basis commutator word ceil(needed/eps^order) times with the appropriate
    sign, and iterates the correction a few rounds.
    """
    wrap = _any_wrap(maps)
    names = sorted(maps)
    if fields is None:
        fields = [extract_field(maps[g]) for g in names]
    d2 = z.phi.shape[-1] * 2

    letters = []
    path = []
    cur = point(np.array(z.phi, float), np.array(z.J, float))
    total = np.linalg.norm(_dist_vec(z_star, cur, wrap))
    n_boxes = max(1, int(math.ceil(total / (box_K * eps))))
    blocks_used = 0
    for leg in range(1, n_boxes + 1):
        frac = leg / n_boxes
        delta_full = _dist_vec(z_star, cur, wrap)
        target = AnnulusPoint(cur.phi + frac_step(delta_full[:d2 // 2], 1.0 / (n_boxes - leg + 1)),
                              cur.J + frac_step(delta_full[d2 // 2:], 1.0 / (n_boxes - leg + 1)))
        path.append(target)
        for _ in range(max_rounds):
            delta = _dist_vec(target, cur, wrap)
            if np.max(np.abs(delta)) <= tol_factor * eps:
                break
            zvec = np.concatenate([cur.phi, cur.J])
            rep = basis if basis is not None else lie_rank(fields, zvec)
            if not rep.full_rank:
                raise ReachError("bracket distribution rank-deficient along the route")
            G = np.stack([field_for_code(fields, code)(zvec) for code in rep.basis_codes],
                         axis=1)
            try:
                y = np.linalg.solve(G, delta)
            except np.linalg.LinAlgError:
                raise ReachError("singular local frame")
            for j, code in enumerate(rep.basis_codes):
                order = len(code)
                reps = int(round(y[j] / eps ** order))
                if reps == 0:
                    continue
                blocks_used += abs(reps)
                if blocks_used > max_blocks:
                    raise ReachError("commutator block budget exceeded")
                w = CommutatorWord(code).flat()
                if reps < 0:
                    w = w.inverse()
                seg = Word(tuple(w.letters * abs(reps)))
                cur = apply_word(seg, maps, eps, cur)
                letters.extend(seg.letters)
    final = float(np.max(np.abs(_dist_vec(z_star, cur, wrap))))
    word = Word(tuple(letters)).simplify()
    return ReachPlan(word=word, path=path, final_dist=final,
                     K_measured=final / eps, eps=eps)


def frac_step(v: np.ndarray, frac: float) -> np.ndarray:
    return v * frac


# ---------------------------------------------------------------------------
# forward-only planner
# ---------------------------------------------------------------------------

@dataclass
class ForwardPlan:
    blocks: list          # (omega_r, iota_r) in application order
    word: Word
    final_dist: float
    K_measured: float
    gaps_ok: bool

    def omegas(self):
        return [b[0] for b in self.blocks]


def recurrence_times(T: InnerMapModel, eps: float, p: AnnulusPoint, tol: float,
                     horizon: int = 10 ** 5, min_n: int = 1):
    """Twist powers with dist(T^n(p), p) <= tol, by vectorized replay."""
    if T.linear:
        ns = np.arange(min_n, horizon + 1)
        beta_eff = T.beta + p.J @ T.A.T
        disp = np.max(np.abs(wrap_signed(np.outer(ns, beta_eff))), axis=1)
        return ns[disp <= tol]
    out = []
    q = p
    for n in range(1, horizon + 1):
        q = T.apply(eps, q)
        if n >= min_n and annulus_dist(q, p, wrap=T.wrap) <= tol:
            out.append(n)
    return np.asarray(out, dtype=int)


def reach_plan_forward(z: AnnulusPoint, z_star: AnnulusPoint, T: InnerMapModel,
                       maps: dict, eps: float, n_seq=None, n_star: int = 5,
                       return_tol: float | None = None,
                       horizon: int = 10 ** 5,
                       plan: ReachPlan | None = None) -> ForwardPlan:
    """Convert a signed commutator plan into forward blocks T^omega o S_iota.

    Each forward letter gets a twist gap chosen among near-return times so
    the extra rotation is harmless; each inverse letter S^-1 is replaced by
    k repetitions of (S o T^{n_star}) plus a trailing T^{n_star}, with k
    found by recurrence of the composite.  The emitted gaps omega satisfy
    omega_{r-1} - omega_r >= n_r for the requested strictly decreasing n_r
    and omega_{L-1} >= n_star.
    """
    if plan is None:
        plan = reach_plan(z, z_star, maps, eps)
    if return_tol is None:
        return_tol = 0.5 * eps
    gens = {**maps, "T": T}

    sletters = []
    for g, k in plan.word.letters:
        sletters.extend([(g, 1 if k > 0 else -1)] * abs(k))

    # pass 1: replace inverses, collect per-block (iota, minimum gap m_r)
    iotas = []
    min_gap = []
    cur = point(np.array(z.phi, float), np.array(z.J, float))
    for g, sgn in sletters:
        if sgn > 0:
            iotas.append(g)
            min_gap.append(0)
            cur = maps[g].apply(eps, cur)
        else:
            k = _approx_inverse_reps(T, maps[g], eps, cur, n_star,
                                     tol=2.0 * eps, k_max=horizon)
            # sequence: (S T^{n*})^k then T^{n*}: blocks (g, n*) x (k-1), (g, 2 n*)
            for j in range(k):
                iotas.append(g)
                min_gap.append(n_star if j < k - 1 else 2 * n_star)
            cur = apply_word(
                Word(tuple([(g, 1), ("T", n_star)] * k + [("T", n_star)])),
                gens, eps, cur)
    L = len(iotas)
    if L == 0:
        return ForwardPlan(blocks=[], word=Word(), final_dist=float(
            np.max(np.abs(_dist_vec(z_star, cur, _any_wrap(maps))))),
            K_measured=0.0, gaps_ok=True)
    if n_seq is None:
        n_seq = [n_star + (L - 1 - r) for r in range(1, L)]
    if len(n_seq) < L - 1:
        raise ReachError("n_seq shorter than the plan")

    # pass 2/3: recurrence candidates per block and last-first gap assignment;
    # the per-return tolerance is widened when the recurrence landscape at
    # some action value is too sparse for the horizon
    omegas = None
    for widen in range(5):
        slack = (return_tol / L) * 2 ** widen
        rec_sets = []
        qpt = point(np.array(z.phi, float), np.array(z.J, float))
        feasible = True
        for r in range(L):
            qpt = maps[iotas[r]].apply(eps, qpt)
            rec = recurrence_times(T, eps, qpt, slack, horizon=horizon)
            if rec.shape[0] == 0:
                feasible = False
                break
            rec_sets.append(rec)
            qpt = T.apply_n(eps, qpt, min_gap[r]) if min_gap[r] else qpt
        if not feasible:
            continue
        omegas = [0] * L
        omega_next = None
        for r in range(L - 1, -1, -1):
            floor = n_star if r == L - 1 else omega_next + n_seq[r]
            floor = max(floor, min_gap[r] if min_gap[r] else n_star)
            cand = min_gap[r] + rec_sets[r]
            cand = cand[cand >= floor]
            if cand.shape[0] == 0:
                omegas = None
                break
            omegas[r] = int(cand[0])
            omega_next = omegas[r]
        if omegas is not None:
            break
    if omegas is None:
        raise ReachError("gap contract unsatisfiable within horizon")

    letters = []
    for r in range(L):
        letters += [(iotas[r], 1), ("T", omegas[r])]
    word = Word(tuple(letters))
    out = apply_word(word, gens, eps,
                     point(np.array(z.phi, float), np.array(z.J, float)))
    final = float(np.max(np.abs(_dist_vec(z_star, out, _any_wrap(maps)))))
    gaps_ok = all(omegas[r - 1] - omegas[r] >= n_seq[r - 1] for r in range(1, L)) \
        and omegas[L - 1] >= n_star
    return ForwardPlan(blocks=list(zip(omegas, iotas)), word=word,
                       final_dist=final, K_measured=final / eps, gaps_ok=gaps_ok)


def _approx_inverse_reps(T, S, eps, p: AnnulusPoint, n_star: int,
                         tol: float, k_max: int = 10 ** 5) -> int:
    """k such that T^{n*} (S T^{n*})^k ~ S^-1 at p, by incremental replay."""
    target = S.apply_inverse(eps, p)
    wrap = getattr(S, "wrap", True)
    cur = p
    best = (math.inf, 0)
    for k in range(1, k_max + 1):
        cur = S.apply(eps, T.apply_n(eps, cur, n_star))
        dist = annulus_dist(T.apply_n(eps, cur, n_star), target, wrap=wrap)
        if dist <= tol:
            return k
        if dist < best[0]:
            best = (dist, k)
    raise ReachError(f"approximate-inverse recurrence failed (best {best})")
