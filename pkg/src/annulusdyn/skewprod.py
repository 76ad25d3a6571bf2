"""Skew-product dynamics over the shift on (N x {1..m})^Z with decaying remainders.

One fiber step applies a kicked twist block with a symbol-dependent
correction,

    F_omega(z) = T^{omega_0} ( (S_{iota_0} + R_omega)(z) ),

where |R_omega|_C1 <= C * lambda_bar^{min(omega_0, omega_1)}.  Sequences are
finite windows of a bi-infinite symbol string; the symbol ``inf`` is allowed
at window ends (Moser compactification) and the exponent rule saturates:
lambda_bar^inf = 0, so the boundary map at omega_0 = inf is the bare kick.

The synthetic remainder family used here is one admissible choice: a hashed
unit-C^1 trig field scaled by the decay bound and damped by 1/(2(1+omega_0)),
which makes the one-step comparison inequalities hold with the family's own
constant for unit twist matrices.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .core import (AnnulusPoint, InnerMapModel, ScatteringMapModel, Word,
                   annulus_dist, apply_word, invert_map, point, wrap_signed,
                   wrap_torus)
from . import reach as rc

INF = math.inf


class SkewError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# symbol sequences
# ---------------------------------------------------------------------------

@dataclass
class SymbolSequence:
    """Finite window of a bi-infinite sequence over (N u {inf}) x {1..m}.

    Symbols are (omega_k, iota_k) for k in [k_min, k_max] relative to the
    current time; the cursor marks time 0 and shifting moves it without
    reallocating interior symbols.
    """

    symbols: list
    k_min: int
    cursor: int = 0

    def __post_init__(self):
        for j, (w, i) in enumerate(self.symbols):
            interior = 0 < j < len(self.symbols) - 1
            if w == INF and interior:
                raise SkewError("inf symbol allowed only at window ends")
            if w != INF and (w < 0 or int(w) != w):
                raise SkewError(f"bad twist exponent {w}")

    @property
    def k_max(self) -> int:
        return self.k_min + len(self.symbols) - 1

    def symbol(self, k: int):
        """Symbol at relative time k; out-of-window times read as (inf, 1)."""
        j = self.cursor + k - self.k_min
        if 0 <= j < len(self.symbols):
            return self.symbols[j]
        return (INF, 1)

    def in_window(self, k: int) -> bool:
        return self.k_min <= self.cursor + k <= self.k_max

    def shifted(self, steps: int = 1) -> "SymbolSequence":
        return SymbolSequence(self.symbols, self.k_min, self.cursor + steps)

    def spliced(self, at: int, blocks: list) -> "SymbolSequence":
        """Insert (omega, iota) blocks after relative position ``at``."""
        j = self.cursor + at - self.k_min + 1
        if not (0 <= j <= len(self.symbols)):
            raise SkewError("splice position outside the window")
        new = list(self.symbols[:j]) + list(blocks) + list(self.symbols[j:])
        return SymbolSequence(new, self.k_min, self.cursor)

    def to_text(self) -> str:
        def fmt(w, i):
            return f"{'inf' if w == INF else int(w)}:{i}"
        left = [fmt(*s) for k, s in enumerate(self.symbols)
                if self.k_min + k < self.cursor]
        right = [fmt(*s) for k, s in enumerate(self.symbols)
                 if self.k_min + k >= self.cursor]
        return "(" + ", ".join(left) + " ; " + ", ".join(right) + ")"

    @staticmethod
    def from_text(text: str) -> "SymbolSequence":
        body = text.strip().strip("()")
        left, _, right = body.partition(";")

        def parse(part):
            out = []
            for tok in part.split(","):
                tok = tok.strip()
                if not tok or tok == "...":
                    continue
                w, _, i = tok.partition(":")
                out.append((INF if w.strip() == "inf" else int(w), int(i)))
            return out
        lsyms, rsyms = parse(left), parse(right)
        return SymbolSequence(lsyms + rsyms, k_min=-len(lsyms), cursor=0)


# ---------------------------------------------------------------------------
# synthetic remainder family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RemainderFamily:
    """R_omega(z) = C lbar^{min(w0,w1)} g(w0) u(z; hash of the local window).

    u is a unit-C^1 trig field keyed by the kick indices within
    locality_depth of the cursor, with the influence of the off-cursor
    indices weighted by the decaying powers lbar^{w}; g(w) = 1/(2(1+w))
    absorbs the twist shear in the one-step comparison bounds.
    """

    C: float
    lambda_bar: float
    seed: int = 0
    locality_depth: int = 1
    d: int = 1

    def _unit_field(self, key):
        digest = hashlib.sha256(repr((key, self.seed)).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        phases = rng.uniform(0, 2 * math.pi, 2 * self.d)
        signs = rng.choice([-1.0, 1.0], 2 * self.d)
        return phases, signs

    def _u(self, key, phi):
        phases, signs = self._unit_field(key)
        amp = 1.0 / (2 * math.pi)
        out = np.empty(phi.shape[:-1] + (2 * self.d,))
        for i in range(self.d):
            out[..., i] = signs[i] * amp * np.sin(2 * math.pi * phi[..., i] + phases[i])
            out[..., self.d + i] = signs[self.d + i] * amp * np.sin(
                2 * math.pi * phi[..., i] + phases[self.d + i])
        return out

    def amplitude(self, seq: SymbolSequence) -> float:
        w0 = seq.symbol(0)[0]
        w1 = seq.symbol(1)[0]
        mn = min(w0, w1)
        if mn == INF:
            return 0.0
        damping = 0.5 if w0 == INF else 1.0 / (2.0 * (1.0 + w0))
        return self.C * self.lambda_bar ** mn * damping

    def value(self, seq: SymbolSequence, phi, J):
        """R_omega at (phi, J); output split as (dphi, dJ)."""
        phi = np.asarray(phi, float)
        a = self.amplitude(seq)
        if a == 0.0:
            z = np.zeros(phi.shape)
            return z, z.copy()
        q = self.locality_depth
        total = self._u(("iota", seq.symbol(0)[1], 0), phi)
        for j in range(1, q + 1):
            # influence of off-cursor kick indices decays with the product of
            # the intervening twist exponents including the endpoint's own
            wR = np.prod([_sat_pow(self.lambda_bar, seq.symbol(k)[0])
                          for k in range(1, j + 1)])
            wL = np.prod([_sat_pow(self.lambda_bar, seq.symbol(-k)[0])
                          for k in range(0, j + 1)])
            total = total + wR * self._u(("iota", seq.symbol(j)[1], j), phi)
            total = total + wL * self._u(("iota", seq.symbol(-j)[1], -j), phi)
        total = total / (1.0 + 2 * q)
        return a * total[..., :self.d], a * total[..., self.d:]


def _sat_pow(base: float, expo) -> float:
    return 0.0 if expo == INF else base ** expo


# ---------------------------------------------------------------------------
# skew steps
# ---------------------------------------------------------------------------

def kick_with_remainder(seq: SymbolSequence, S: ScatteringMapModel, eps: float,
                        family: RemainderFamily | None, p: AnnulusPoint) -> AnnulusPoint:
    q = S.apply(eps, p)
    if family is None:
        return q
    dphi, dJ = family.value(seq, p.phi, p.J)
    return AnnulusPoint(wrap_torus(q.phi + dphi), q.J + dJ)


def skew_step(seq: SymbolSequence, z: AnnulusPoint, T: InnerMapModel,
              S_list: list, eps: float, family: RemainderFamily | None = None):
    """One fiber step: apply S_{iota_0} + R and then T^{omega_0}; shift the symbols."""
    if not seq.in_window(0):
        raise SkewError("symbol window exhausted; extend the sequence")
    w0, i0 = seq.symbol(0)
    if w0 == INF:
        raise SkewError("omega_0 = inf: use boundary_map")
    q = kick_with_remainder(seq, S_list[i0 - 1], eps, family, z)
    q = T.apply_n(eps, q, int(w0))
    return seq.shifted(1), q


def boundary_map(seq: SymbolSequence, z: AnnulusPoint, S_list: list, eps: float,
                 family: RemainderFamily | None = None) -> AnnulusPoint:
    """Compactified limit map at omega_0 = inf: the kick with the limit remainder."""
    w0, i0 = seq.symbol(0)
    if w0 != INF:
        raise SkewError("boundary_map requires omega_0 = inf")
    return kick_with_remainder(seq, S_list[i0 - 1], eps, family, z)


def skew_orbit(seq: SymbolSequence, z: AnnulusPoint, T, S_list, eps,
               family=None, steps: int = 1):
    out = [z]
    for _ in range(steps):
        seq, z = skew_step(seq, z, T, S_list, eps, family)
        out.append(z)
    return seq, out


def skew_step_backward(seq: SymbolSequence, z: AnnulusPoint, T: InnerMapModel,
                       S_list: list, eps: float,
                       family: RemainderFamily | None = None):
    """Inverse fiber step: undo T^{omega_-1} then the kick at position -1."""
    prev = seq.shifted(-1)
    if not prev.in_window(0):
        raise SkewError("symbol window exhausted; extend the sequence")
    w, i = prev.symbol(0)
    if w == INF:
        raise SkewError("omega = inf at the backward step")
    q = T.apply_n(eps, z, -int(w))
    S = S_list[i - 1]
    if family is None:
        return prev, S.apply_inverse(eps, q)
    back = invert_map(lambda x: kick_with_remainder(prev, S, eps, family, x),
                      q, tol=1e-12, wrap=T.wrap)
    return prev, back


# ---------------------------------------------------------------------------
# comparison inequalities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    diff: float
    bound: float
    ok: bool


def check_comparison(seqA: SymbolSequence, seqB: SymbolSequence, z: AnnulusPoint,
                     n: int, T, S_list, eps, family: RemainderFamily,
                     backward: bool = False) -> ComparisonReport:
    """Fiber distance of the paired orbits against the decay bound.

    Forward: the sequences agree at times k <= n, n+1 forward steps are
    compared, and the bound is C lbar^{min(omega_{n+1}, omega'_{n+1})}.
    Backward (mirror): agreement at k >= -n, n backward steps (using the
    agreeing symbols -1..-n), bound read at the first differing time -n-1.
    """
    rng_check = range(seqA.k_min, n + 1) if not backward else range(-n, seqA.k_max + 1)
    for k in rng_check:
        if seqA.symbol(k) != seqB.symbol(k):
            raise SkewError(f"sequences disagree at time {k} inside the agreement range")
    a, b = seqA, seqB
    za = zb = z
    if not backward:
        for _ in range(n + 1):
            a, za = skew_step(a, za, T, S_list, eps, family)
            b, zb = skew_step(b, zb, T, S_list, eps, family)
        wA = seqA.symbol(n + 1)[0]
        wB = seqB.symbol(n + 1)[0]
    else:
        for _ in range(n):
            a, za = skew_step_backward(a, za, T, S_list, eps, family)
            b, zb = skew_step_backward(b, zb, T, S_list, eps, family)
        wA = seqA.symbol(-n - 1)[0]
        wB = seqB.symbol(-n - 1)[0]
    diff = annulus_dist(za, zb, wrap=T.wrap)
    bound = family.C * _sat_pow(family.lambda_bar, min(wA, wB))
    return ComparisonReport(diff=diff, bound=bound, ok=diff <= bound)


# ---------------------------------------------------------------------------
# transport and blender words in the skew product
# ---------------------------------------------------------------------------

def word_to_blocks(word: Word):
    """Group a forward {T, S_i} word into (omega, iota) blocks plus the
    leading bare twist power (to be absorbed by the preceding symbol)."""
    lead = 0
    blocks = []
    pending = None  # iota awaiting its omega
    for g, k in word.simplify().letters:
        if k < 0:
            raise SkewError("skew blocks need a forward word")
        if g == "T":
            if pending is None:
                if blocks:
                    w, i = blocks[-1]
                    blocks[-1] = (w + k, i)
                else:
                    lead += k
            else:
                blocks.append((k, pending))
                pending = None
        else:
            idx = 1 if g == "S" else int(g[1:])
            for _ in range(k):
                if pending is not None:
                    blocks.append((0, pending))
                pending = idx
    if pending is not None:
        blocks.append((0, pending))
    return lead, blocks


@dataclass
class TransportResult:
    spliced: SymbolSequence
    blocks: list
    replay_dist: float
    K_eps: float
    gaps_ok: bool
    ok: bool


def skew_transport(B, B_star, seq: SymbolSequence, n: int, T, S_list, eps,
                   family: RemainderFamily | None, K_tol: float = 2.0,
                   n_star: int = 5, samples: int = 8, seed: int = 0) -> TransportResult:
    """Splice a forward reachability plan into the sequence after time n and
    confirm by replay that some point of B reaches B_star within K eps.

    The plan is built from the n+1-step image of the ball center under the
    unmodified sequence; the splice's first gap is the largest, so the
    remainder mismatch of that last pre-splice step is negligible.
    """
    zc = B.center
    sq = seq
    for _ in range(n + 1):
        sq, zc = skew_step(sq, zc, T, S_list, eps, family)
    maps = {f"S{i + 1}": S for i, S in enumerate(S_list)}
    plan = rc.reach_plan_forward(zc, B_star.center, T, maps, eps, n_star=n_star)
    blocks = [(w, int(i[1:])) for (w, i) in plan.blocks]
    spliced = seq.spliced(n, blocks)

    # replay through the skew dynamics: steps up to n, then the plan blocks
    rng = np.random.default_rng(seed)
    total = n + 1 + len(blocks)
    off = rng.normal(size=(samples, 2 * T.d))
    off = off / np.linalg.norm(off, axis=1, keepdims=True)
    off = off * (B.radius * rng.uniform(0, 1, (samples, 1)))
    off[0] = 0.0
    zz = AnnulusPoint(wrap_torus(B.center.phi[None, :] + off[:, :T.d]),
                      B.center.J[None, :] + off[:, T.d:])
    sq = spliced
    for _ in range(total):
        sq, zz = skew_step(sq, zz, T, S_list, eps, family)
    dphi = np.abs(wrap_signed(zz.phi - B_star.center.phi[None, :]))
    dJ = np.abs(zz.J - B_star.center.J[None, :])
    best = float(np.min(np.maximum(dphi.max(axis=1), dJ.max(axis=1))))
    gaps = [b[0] for b in blocks]
    gaps_ok = all(gaps[r - 1] - gaps[r] >= 0 for r in range(1, len(gaps)))
    return TransportResult(spliced=spliced, blocks=blocks, replay_dist=best,
                           K_eps=best / eps, gaps_ok=plan.gaps_ok,
                           ok=best <= K_tol * max(plan.final_dist, eps))


@dataclass
class SkewBlenderResult:
    lead: int
    blocks: list
    hits: int
    samples: int
    ok: bool


def skew_blender_words(B0, B1, seq: SymbolSequence, n: int, planner, T, S_list,
                       eps, family: RemainderFamily | None,
                       n_samples: int = 2000, seed: int = 0) -> SkewBlenderResult:
    """Convert a verified mixing word into symbol blocks, splice, and replay.

    The mixing word is planned from the n+1-step image of the ball center;
    its leading twist run merges into the template symbol at time n, so the
    spliced sequence is grammatical.  The mixing planner must emit twist
    runs long enough that the remainder corrections stay below the ball
    radius; with zero remainder the replay reduces exactly to the plain word.
    """
    from .mixing import Ball
    zc = B0.center
    sq = seq
    for _ in range(n + 1):
        sq, zc = skew_step(sq, zc, T, S_list, eps, family)
    plan = planner.plan(Ball(zc, B0.radius), B1, seed=seed)
    lead, blocks = word_to_blocks(plan.word)
    if lead:
        w_n, i_n = seq.symbol(n)
        if w_n == INF:
            raise SkewError("cannot absorb the leading twist power at an inf symbol")
        j = seq.cursor + n - seq.k_min
        syms = list(seq.symbols)
        syms[j] = (w_n + lead, i_n)
        seq = SymbolSequence(syms, seq.k_min, seq.cursor)
    spliced = seq.spliced(n, blocks)

    rng = np.random.default_rng(seed)
    total = n + 1 + len(blocks)
    off = rng.normal(size=(n_samples, 2 * T.d))
    off = off / np.linalg.norm(off, axis=1, keepdims=True)
    off = off * (B0.radius * rng.uniform(0, 1, (n_samples, 1)) ** (1 / (2 * T.d)))
    zz = AnnulusPoint(wrap_torus(B0.center.phi[None, :] + off[:, :T.d]),
                      B0.center.J[None, :] + off[:, T.d:])
    sq = spliced
    for _ in range(total):
        sq, zz = skew_step(sq, zz, T, S_list, eps, family)
    dphi = wrap_signed(zz.phi - B1.center.phi[None, :])
    dJ = zz.J - B1.center.J[None, :]
    dist2 = np.sum(dphi ** 2, axis=1) + np.sum(dJ ** 2, axis=1)
    hits = int(np.sum(dist2 <= B1.radius ** 2))
    return SkewBlenderResult(lead=lead, blocks=blocks, hits=hits,
                             samples=n_samples, ok=hits >= 1)
