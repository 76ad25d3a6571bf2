"""Model spaces, torus arithmetic and the parametric map families.

Phase space is the annulus T^d x R^d with angle coordinates ``phi`` taken
mod 1 in [0, 1) and action coordinates ``J``.  Two parametric families act
on it:

* an inner twist map  T_eps : (phi, J) -> (phi + beta + A J + Rphi, J + RJ)
* near-identity kick maps  S_eps : (phi, J) -> (phi + eps*Pphi, J + eps*PJ)

The remainder/kick components are closed-form trig-polynomial expressions so
models are picklable, exactly reproducible and cheap to evaluate in batch.
Plain R^{2d} toys (no angle wrap) are supported through ``wrap=False``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

GOLDEN_MEAN = (math.sqrt(5.0) - 1.0) / 2.0
SQRT2_MINUS_1 = math.sqrt(2.0) - 1.0


# ---------------------------------------------------------------------------
# torus arithmetic
# ---------------------------------------------------------------------------

def wrap_torus(x):
    """Reduce angle coordinates mod 1 into the fundamental domain [0, 1)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite angle coordinates")
    return np.mod(x, 1.0)


def wrap_signed(x):
    """Reduce mod 1 into [-1/2, 1/2); the signed representative of a torus difference."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite angle coordinates")
    return np.mod(x + 0.5, 1.0) - 0.5


def torus_dist(x, y):
    """Componentwise max distance on T^d (min over integer shifts)."""
    return float(np.max(np.abs(wrap_signed(np.asarray(x) - np.asarray(y)))))


# ---------------------------------------------------------------------------
# points
# ---------------------------------------------------------------------------

class AnnulusPoint(NamedTuple):
    """A point (phi, J); arrays may carry leading batch dimensions."""

    phi: np.ndarray
    J: np.ndarray


def point(phi, J) -> AnnulusPoint:
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    J = np.atleast_1d(np.asarray(J, dtype=float))
    return AnnulusPoint(phi, J)


def pack(p: AnnulusPoint) -> np.ndarray:
    return np.concatenate([np.atleast_1d(p.phi), np.atleast_1d(p.J)], axis=-1)


def unpack(z: np.ndarray, d: int) -> AnnulusPoint:
    z = np.asarray(z, dtype=float)
    return AnnulusPoint(z[..., :d], z[..., d:])


def annulus_dist(p: AnnulusPoint, q: AnnulusPoint, wrap: bool = True) -> float:
    """Max-norm distance; angles compared modulo 1 when wrap is set."""
    if wrap:
        dphi = np.abs(wrap_signed(p.phi - q.phi))
    else:
        dphi = np.abs(p.phi - q.phi)
    dJ = np.abs(p.J - q.J)
    return float(max(np.max(dphi), np.max(dJ)))


# ---------------------------------------------------------------------------
# closed-form component functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One product term: coef * eps^e * prod J_i^m_i * prod phi_i^p_i * trig(2 pi k.phi + phase).

    ``trig`` is "sin", "cos" or None (no oscillatory factor).  ``phi_pows``
    is meant for plain-R^d toys; on the torus it would not be periodic.
    """

    coef: float
    eps_pow: int = 0
    j_pows: tuple = ()
    trig: str | None = None
    freq: tuple = ()
    phase: float = 0.0
    phi_pows: tuple = ()

    def value(self, phi, J, eps):
        out = self.coef * (eps ** self.eps_pow if self.eps_pow else 1.0)
        out = out * np.ones(phi.shape[:-1])
        for i, m in enumerate(self.j_pows):
            if m:
                out = out * J[..., i] ** m
        for i, m in enumerate(self.phi_pows):
            if m:
                out = out * phi[..., i] ** m
        if self.trig is not None:
            arg = TWO_PI * np.tensordot(phi, np.asarray(self.freq, dtype=float), axes=([-1], [0])) + self.phase
            out = out * (np.sin(arg) if self.trig == "sin" else np.cos(arg))
        return out

    def d_phi(self, phi, J, eps, i: int):
        """Exact partial derivative with respect to phi_i."""
        base = self.coef * (eps ** self.eps_pow if self.eps_pow else 1.0)
        base = base * np.ones(phi.shape[:-1])
        for k, m in enumerate(self.j_pows):
            if m:
                base = base * J[..., k] ** m
        poly = np.ones(phi.shape[:-1])
        dpoly = np.zeros(phi.shape[:-1])
        for k, m in enumerate(self.phi_pows):
            if m:
                poly = poly * phi[..., k] ** m
        if i < len(self.phi_pows) and self.phi_pows[i]:
            m = self.phi_pows[i]
            dpoly = m * phi[..., i] ** (m - 1)
            for k, mk in enumerate(self.phi_pows):
                if mk and k != i:
                    dpoly = dpoly * phi[..., k] ** mk
        if self.trig is None:
            return base * dpoly
        arg = TWO_PI * np.tensordot(phi, np.asarray(self.freq, dtype=float), axes=([-1], [0])) + self.phase
        tr = np.sin(arg) if self.trig == "sin" else np.cos(arg)
        dtr = np.cos(arg) if self.trig == "sin" else -np.sin(arg)
        ki = self.freq[i] if i < len(self.freq) else 0.0
        return base * (dpoly * tr + poly * TWO_PI * ki * dtr)

    def d_J(self, phi, J, eps, i: int):
        """Exact partial derivative with respect to J_i."""
        if i >= len(self.j_pows) or not self.j_pows[i]:
            return np.zeros(phi.shape[:-1])
        out = self.coef * (eps ** self.eps_pow if self.eps_pow else 1.0)
        out = out * self.j_pows[i] * J[..., i] ** (self.j_pows[i] - 1)
        for k, m in enumerate(self.j_pows):
            if m and k != i:
                out = out * J[..., k] ** m
        for k, m in enumerate(self.phi_pows):
            if m:
                out = out * phi[..., k] ** m
        if self.trig is not None:
            arg = TWO_PI * np.tensordot(phi, np.asarray(self.freq, dtype=float), axes=([-1], [0])) + self.phase
            out = out * (np.sin(arg) if self.trig == "sin" else np.cos(arg))
        return out


def _term_from_dict(d: int, spec: dict) -> Term:
    return Term(
        coef=float(spec["coef"]),
        eps_pow=int(spec.get("eps_pow", 0)),
        j_pows=tuple(spec.get("j_pows", [0] * d)),
        trig=spec.get("trig"),
        freq=tuple(spec.get("freq", [0] * d)),
        phase=float(spec.get("phase", 0.0)),
        phi_pows=tuple(spec.get("phi_pows", [0] * d)),
    )


@dataclass(frozen=True)
class ComponentFunction:
    """Closed-form map (phi, J, eps) -> R^d, one term list per output component."""

    d: int
    terms: tuple = ()  # tuple of d tuples of Term

    @staticmethod
    def zero(d: int) -> "ComponentFunction":
        return ComponentFunction(d, tuple(() for _ in range(d)))

    @staticmethod
    def from_spec(d: int, spec: Sequence[Sequence[dict]] | None) -> "ComponentFunction":
        if spec is None:
            return ComponentFunction.zero(d)
        if len(spec) != d:
            raise ValueError(f"component spec needs {d} entries, got {len(spec)}")
        return ComponentFunction(
            d, tuple(tuple(_term_from_dict(d, t) for t in comp) for comp in spec)
        )

    @property
    def is_zero(self) -> bool:
        return all(len(c) == 0 for c in self.terms)

    def __call__(self, phi, J, eps):
        phi = np.asarray(phi, dtype=float)
        J = np.asarray(J, dtype=float)
        out = np.zeros(phi.shape)
        for i, comp in enumerate(self.terms):
            for term in comp:
                out[..., i] += term.value(phi, J, eps)
        return out

    def jac_phi(self, phi, J, eps):
        """Exact Jacobian d(output_i)/d(phi_j), shape (..., d, d)."""
        phi = np.asarray(phi, dtype=float)
        J = np.asarray(J, dtype=float)
        out = np.zeros(phi.shape + (self.d,))
        for i, comp in enumerate(self.terms):
            for term in comp:
                for j in range(self.d):
                    out[..., i, j] += term.d_phi(phi, J, eps, j)
        return out

    def jac_J(self, phi, J, eps):
        """Exact Jacobian d(output_i)/d(J_j), shape (..., d, d)."""
        phi = np.asarray(phi, dtype=float)
        J = np.asarray(J, dtype=float)
        out = np.zeros(phi.shape + (self.d,))
        for i, comp in enumerate(self.terms):
            for term in comp:
                for j in range(self.d):
                    out[..., i, j] += term.d_J(phi, J, eps, j)
        return out


# ---------------------------------------------------------------------------
# map models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InnerMapModel:
    """Twist map T_eps with constant-type rotation beta and symmetric twist matrix A."""

    d: int
    beta: np.ndarray
    A: np.ndarray
    rphi: ComponentFunction
    rj: ComponentFunction
    gamma: float = 0.0
    wrap: bool = True

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        if self.A.shape != (self.d, self.d):
            raise ValueError("A must be d x d")
        if not np.allclose(self.A, self.A.T, atol=1e-12):
            raise ValueError("A must be symmetric")
        if abs(np.linalg.det(self.A)) < 1e-14:
            raise ValueError("A must be invertible")

    @property
    def linear(self) -> bool:
        return self.rphi.is_zero and self.rj.is_zero

    def apply(self, eps: float, p: AnnulusPoint) -> AnnulusPoint:
        phi, J = np.asarray(p.phi, float), np.asarray(p.J, float)
        phi_new = phi + self.beta + J @ self.A.T + self.rphi(phi, J, eps)
        J_new = J + self.rj(phi, J, eps)
        if self.wrap:
            phi_new = wrap_torus(phi_new)
        return AnnulusPoint(phi_new, J_new)

    def apply_inverse(self, eps: float, p: AnnulusPoint, tol: float = 1e-12) -> AnnulusPoint:
        if self.linear:
            phi, J = p.phi, p.J
            phi_old = phi - self.beta - J @ self.A.T
            if self.wrap:
                phi_old = wrap_torus(phi_old)
            return AnnulusPoint(phi_old, J.copy() if isinstance(J, np.ndarray) else J)
        return invert_map(lambda q: self.apply(eps, q), p, tol=tol, wrap=self.wrap)

    def apply_n(self, eps: float, p: AnnulusPoint, n: int) -> AnnulusPoint:
        """n-fold application (n may be negative); O(1) for the linear family."""
        if n == 0:
            return AnnulusPoint(np.asarray(p.phi, float).copy(), np.asarray(p.J, float).copy())
        if self.linear:
            phi = p.phi + n * self.beta + n * (p.J @ self.A.T)
            if self.wrap:
                phi = wrap_torus(phi)
            return AnnulusPoint(phi, np.asarray(p.J, float).copy())
        q = p
        step = (lambda x: self.apply(eps, x)) if n > 0 else (lambda x: self.apply_inverse(eps, x))
        for _ in range(abs(n)):
            q = step(q)
        return q

    def jacobian(self, eps: float, p: AnnulusPoint) -> np.ndarray:
        """Exact derivative at a single point, shape (2d, 2d)."""
        d = self.d
        phi = np.asarray(p.phi, float)
        J = np.asarray(p.J, float)
        D = np.zeros((2 * d, 2 * d))
        D[:d, :d] = np.eye(d) + self.rphi.jac_phi(phi, J, eps)
        D[:d, d:] = self.A + self.rphi.jac_J(phi, J, eps)
        D[d:, :d] = self.rj.jac_phi(phi, J, eps)
        D[d:, d:] = np.eye(d) + self.rj.jac_J(phi, J, eps)
        return D


@dataclass(frozen=True)
class ScatteringMapModel:
    """Close-to-identity symplectic kick S_eps; B is the angle Jacobian of PJ at the origin."""

    d: int
    pphi: ComponentFunction
    pj: ComponentFunction
    B: np.ndarray = None
    wrap: bool = True

    def __post_init__(self):
        if self.B is None:
            object.__setattr__(self, "B", self.fd_torsion_matrix())
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))

    def fd_torsion_matrix(self, h: float = 1e-6) -> np.ndarray:
        """Finite-difference D_phi PJ(0, 0) at eps = 0."""
        B = np.zeros((self.d, self.d))
        J0 = np.zeros(self.d)
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = h
            B[:, j] = (self.pj(e, J0, 0.0) - self.pj(-e, J0, 0.0)) / (2 * h)
        return B

    @property
    def kick_only(self) -> bool:
        """True when Pphi = 0 and PJ depends on phi only: the inverse is closed form."""
        if not self.pphi.is_zero:
            return False
        return all(
            all(not any(t.j_pows) for t in comp) for comp in self.pj.terms
        )

    @property
    def triangular(self) -> bool:
        """Pphi constant and PJ a function of phi only: exact closed-form inverse."""
        pphi_const = all(
            all(not any(t.j_pows) and not any(t.phi_pows) and t.trig is None
                for t in comp)
            for comp in self.pphi.terms)
        pj_phi_only = all(
            all(not any(t.j_pows) for t in comp) for comp in self.pj.terms)
        return pphi_const and pj_phi_only

    def apply(self, eps: float, p: AnnulusPoint) -> AnnulusPoint:
        phi, J = np.asarray(p.phi, float), np.asarray(p.J, float)
        phi_new = phi + eps * self.pphi(phi, J, eps)
        J_new = J + eps * self.pj(phi, J, eps)
        if self.wrap:
            phi_new = wrap_torus(phi_new)
        return AnnulusPoint(phi_new, J_new)

    def apply_inverse(self, eps: float, p: AnnulusPoint, tol: float = 1e-12) -> AnnulusPoint:
        if self.kick_only:
            J_old = p.J - eps * self.pj(np.asarray(p.phi, float), p.J, eps)
            return AnnulusPoint(np.asarray(p.phi, float).copy(), J_old)
        if self.triangular:
            phi = np.asarray(p.phi, float)
            phi_old = phi - eps * self.pphi(phi, p.J, eps)
            if self.wrap:
                phi_old = wrap_torus(phi_old)
            J_old = p.J - eps * self.pj(phi_old, p.J, eps)
            return AnnulusPoint(phi_old, J_old)
        return invert_map(lambda q: self.apply(eps, q), p, tol=tol, wrap=self.wrap)

    def apply_n(self, eps: float, p: AnnulusPoint, n: int) -> AnnulusPoint:
        q = p
        step = (lambda x: self.apply(eps, x)) if n > 0 else (lambda x: self.apply_inverse(eps, x))
        for _ in range(abs(n)):
            q = step(q)
        return q

    def jacobian(self, eps: float, p: AnnulusPoint) -> np.ndarray:
        """Exact derivative at a single point, shape (2d, 2d)."""
        d = self.d
        phi = np.asarray(p.phi, float)
        J = np.asarray(p.J, float)
        D = np.eye(2 * d)
        D[:d, :d] += eps * self.pphi.jac_phi(phi, J, eps)
        D[:d, d:] += eps * self.pphi.jac_J(phi, J, eps)
        D[d:, :d] += eps * self.pj.jac_phi(phi, J, eps)
        D[d:, d:] += eps * self.pj.jac_J(phi, J, eps)
        return D


# ---------------------------------------------------------------------------
# Newton inversion
# ---------------------------------------------------------------------------

class InversionError(RuntimeError):
    def __init__(self, residual):
        super().__init__(f"Newton inversion did not converge, residual {residual:.3e}")
        self.residual = residual


def _residual_vec(f_val: AnnulusPoint, target: AnnulusPoint, wrap: bool) -> np.ndarray:
    dphi = f_val.phi - target.phi
    if wrap:
        dphi = wrap_signed(dphi)
    return np.concatenate([dphi, f_val.J - target.J])


def invert_map(
    f: Callable[[AnnulusPoint], AnnulusPoint],
    target: AnnulusPoint,
    x0: AnnulusPoint | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
    wrap: bool = True,
) -> AnnulusPoint:
    """Solve f(q) = target by damped Newton with finite-difference Jacobian.

    The finite-difference step is 1e-6 * max(1, |q|); on residual increase the
    Newton step is halved.  Raises InversionError after max_iter iterations.
    """
    d = np.atleast_1d(target.phi).shape[-1]
    q = pack(x0 if x0 is not None else target).astype(float)
    tvec = target
    res = _residual_vec(f(unpack(q, d)), tvec, wrap)
    rnorm = np.linalg.norm(res)
    for _ in range(max_iter):
        if rnorm <= tol:
            p = unpack(q, d)
            return AnnulusPoint(wrap_torus(p.phi) if wrap else p.phi, p.J)
        h = 1e-6 * max(1.0, float(np.linalg.norm(q)))
        Jac = np.empty((2 * d, 2 * d))
        for j in range(2 * d):
            dq = np.zeros(2 * d)
            dq[j] = h
            rp = _residual_vec(f(unpack(q + dq, d)), tvec, wrap)
            rm = _residual_vec(f(unpack(q - dq, d)), tvec, wrap)
            Jac[:, j] = (rp - rm) / (2 * h)
        try:
            step = np.linalg.solve(Jac, res)
        except np.linalg.LinAlgError:
            raise InversionError(rnorm)
        scale = 1.0
        for _ in range(30):
            res_new = _residual_vec(f(unpack(q - scale * step, d)), tvec, wrap)
            rnorm_new = np.linalg.norm(res_new)
            if rnorm_new < rnorm or rnorm_new <= tol:
                break
            scale *= 0.5
        q = q - scale * step
        res, rnorm = res_new, rnorm_new
    if rnorm <= tol:
        p = unpack(q, d)
        return AnnulusPoint(wrap_torus(p.phi) if wrap else p.phi, p.J)
    raise InversionError(rnorm)


# ---------------------------------------------------------------------------
# words over the generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Word:
    """Finite composition of generators: letters (gen_id, exponent), applied left to right."""

    letters: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple((g, int(k)) for g, k in self.letters))

    def __mul__(self, other: "Word") -> "Word":
        return Word(self.letters + other.letters)

    def inverse(self) -> "Word":
        return Word(tuple((g, -k) for g, k in reversed(self.letters)))

    def simplify(self) -> "Word":
        out = []
        for g, k in self.letters:
            if k == 0:
                continue
            if out and out[-1][0] == g:
                merged = out[-1][1] + k
                if merged == 0:
                    out.pop()
                else:
                    out[-1] = (g, merged)
            else:
                out.append((g, k))
        return Word(tuple(out))

    @property
    def length(self) -> int:
        """Number of elementary map applications."""
        return sum(abs(k) for _, k in self.letters)

    def to_text(self) -> str:
        return " ".join(f"{g}^{k}" if k != 1 else g for g, k in self.letters) or "id"


def apply_word(word: Word, generators: dict, eps: float, p: AnnulusPoint, tol: float = 1e-12) -> AnnulusPoint:
    """Apply the composition encoded by word; exponent -1 uses the numerically inverted map."""
    q = p
    for gid, k in word.letters:
        gen = generators[gid]
        q = gen.apply_n(eps, q, k) if hasattr(gen, "apply_n") else _apply_repeat(gen, eps, q, k, tol)
    return q


def _apply_repeat(gen, eps, q, k, tol):
    for _ in range(abs(k)):
        q = gen.apply(eps, q) if k > 0 else gen.apply_inverse(eps, q, tol)
    return q


def apply_word_batch(word: Word, generators: dict, eps: float, phi: np.ndarray, J: np.ndarray):
    """Vectorized word replay over a batch of points, shape (n, d)."""
    p = AnnulusPoint(np.asarray(phi, float), np.asarray(J, float))
    for gid, k in word.letters:
        gen = generators[gid]
        if hasattr(gen, "apply_n") and (isinstance(gen, InnerMapModel) and gen.linear):
            p = gen.apply_n(eps, p, k)
        else:
            step = (lambda x: gen.apply(eps, x)) if k > 0 else (lambda x: gen.apply_inverse(eps, x))
            for _ in range(abs(k)):
                p = step(p)
    return p


# ---------------------------------------------------------------------------
# arithmetic condition on the rotation vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantTypeReport:
    passed: bool
    gamma: float
    worst_ratio: float
    witness_k: tuple
    Kmax: int


def check_constant_type(beta, gamma: float, Kmax: int, chunk: int = 2 ** 20) -> ConstantTypeReport:
    """Scan |beta.k - l| >= gamma |k|^:-d for all 0 < |k|_inf <= Kmax (l the nearest integer).

    Returns the worst ratio |beta.k - l| * |k|_inf^d and its witness k.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    d = beta.shape[0]
    if Kmax < 1:
        raise ValueError("Kmax must be >= 1")
    worst = math.inf
    witness = None
    if d == 1:
        k = np.arange(1, Kmax + 1, dtype=float)
        for start in range(0, k.shape[0], chunk):
            kk = k[start:start + chunk]
            x = beta[0] * kk
            dist = np.abs(x - np.round(x))
            ratio = dist * kk
            i = int(np.argmin(ratio))
            if ratio[i] < worst:
                worst = float(ratio[i])
                witness = (int(kk[i]),)
    else:
        rng = np.arange(-Kmax, Kmax + 1)
        grids = np.meshgrid(*([rng] * d), indexing="ij")
        K = np.stack([g.ravel() for g in grids], axis=1).astype(float)
        sup = np.max(np.abs(K), axis=1)
        K = K[sup > 0]
        sup = sup[sup > 0]
        for start in range(0, K.shape[0], chunk):
            kk = K[start:start + chunk]
            ss = sup[start:start + chunk]
            x = kk @ beta
            dist = np.abs(x - np.round(x))
            ratio = dist * ss ** d
            i = int(np.argmin(ratio))
            if ratio[i] < worst:
                worst = float(ratio[i])
                witness = tuple(int(v) for v in kk[i])
    return ConstantTypeReport(worst >= gamma, gamma, worst, witness, Kmax)


# ---------------------------------------------------------------------------
# symplecticity helper
# ---------------------------------------------------------------------------

def standard_symplectic_matrix(d: int) -> np.ndarray:
    Jm = np.zeros((2 * d, 2 * d))
    Jm[:d, d:] = np.eye(d)
    Jm[d:, :d] = -np.eye(d)
    return Jm


def fd_jacobian(f: Callable[[AnnulusPoint], AnnulusPoint], p: AnnulusPoint, wrap: bool = True) -> np.ndarray:
    """Centered finite-difference Jacobian of an annulus map at p."""
    z = pack(p)
    d = np.atleast_1d(p.phi).shape[-1]
    h = 1e-6 * max(1.0, float(np.linalg.norm(z)))
    Jac = np.empty((2 * d, 2 * d))
    for j in range(2 * d):
        dz = np.zeros(2 * d)
        dz[j] = h
        fp = f(unpack(z + dz, d))
        fm = f(unpack(z - dz, d))
        dphi = fp.phi - fm.phi
        if wrap:
            dphi = wrap_signed(dphi)
        Jac[:, j] = np.concatenate([dphi, fp.J - fm.J]) / (2 * h)
    return Jac


def symplectic_defect(f, p: AnnulusPoint, wrap: bool = True) -> float:
    """|D^T J D - J| for the finite-difference Jacobian D of f at p."""
    d = np.atleast_1d(p.phi).shape[-1]
    D = fd_jacobian(f, p, wrap=wrap)
    Jm = standard_symplectic_matrix(d)
    return float(np.max(np.abs(D.T @ Jm @ D - Jm)))


# ---------------------------------------------------------------------------
# presets and config loading
# ---------------------------------------------------------------------------

def inner_preset(name: str) -> InnerMapModel:
    if name == "d1":
        return InnerMapModel(
            d=1, beta=[GOLDEN_MEAN], A=[[1.0]],
            rphi=ComponentFunction.zero(1), rj=ComponentFunction.zero(1), gamma=0.38,
        )
    if name == "d1-cubic":
        # nonzero remainders with the required vanishing structure at J = 0
        rphi = ComponentFunction.from_spec(1, [[{"coef": 0.05, "j_pows": [2], "trig": "cos", "freq": [1]}]])
        rj = ComponentFunction.from_spec(1, [[{"coef": 0.05, "j_pows": [3], "trig": "sin", "freq": [1]}]])
        return InnerMapModel(d=1, beta=[GOLDEN_MEAN], A=[[1.0]], rphi=rphi, rj=rj, gamma=0.38)
    if name == "d2":
        return InnerMapModel(
            d=2, beta=[GOLDEN_MEAN, SQRT2_MINUS_1], A=np.eye(2),
            rphi=ComponentFunction.zero(2), rj=ComponentFunction.zero(2), gamma=0.012,
        )
    raise KeyError(f"unknown inner preset {name!r}")


def scattering_preset(name: str) -> ScatteringMapModel:
    if name == "d1-kick":
        pj = ComponentFunction.from_spec(1, [[{"coef": 1.0 / TWO_PI, "trig": "sin", "freq": [1]}]])
        return ScatteringMapModel(d=1, pphi=ComponentFunction.zero(1), pj=pj)
    if name == "d1-shift":
        pphi = ComponentFunction.from_spec(1, [[{"coef": 0.25}]])
        return ScatteringMapModel(d=1, pphi=pphi, pj=ComponentFunction.zero(1))
    if name == "d2-kick":
        pj = ComponentFunction.from_spec(2, [
            [{"coef": 1.0 / TWO_PI, "trig": "sin", "freq": [1, 0]}],
            [{"coef": 1.0 / TWO_PI, "trig": "sin", "freq": [0, 1]}],
        ])
        return ScatteringMapModel(d=2, pphi=ComponentFunction.zero(2), pj=pj)
    if name == "shear-x":
        # (x, y) -> (x + eps, y) on plain R^2
        pphi = ComponentFunction.from_spec(1, [[{"coef": 1.0}]])
        return ScatteringMapModel(d=1, pphi=pphi, pj=ComponentFunction.zero(1), wrap=False)
    if name == "shear-xy":
        # (x, y) -> (x, y + eps x) on plain R^2
        pj = ComponentFunction.from_spec(1, [[{"coef": 1.0, "phi_pows": [1]}]])
        return ScatteringMapModel(d=1, pphi=ComponentFunction.zero(1), pj=pj, wrap=False)
    raise KeyError(f"unknown scattering preset {name!r}")


def default_generators(d: int = 1) -> dict:
    """The reference generator family {T, S} (plus S2 shift map for transport work)."""
    if d == 1:
        return {"T": inner_preset("d1"), "S": scattering_preset("d1-kick"),
                "S2": scattering_preset("d1-shift")}
    if d == 2:
        return {"T": inner_preset("d2"), "S": scattering_preset("d2-kick")}
    raise ValueError("presets exist for d = 1, 2 only")


def load_model_config(source) -> dict:
    """Build models from a declarative config (dict, JSON text or file path).

    Keys: d, beta, A, gamma, eps, wrap, inner_remainders {phi, J},
    scattering: list of {phi, J, B}.  Unset remainders default to zero.
    """
    if isinstance(source, (str,)):
        try:
            cfg = json.loads(source)
        except json.JSONDecodeError:
            with open(source) as fh:
                cfg = json.load(fh)
    else:
        cfg = dict(source)
    if "preset" in cfg:
        d = 2 if cfg["preset"] == "d2" else 1
        gens = default_generators(d)
        return {"inner": gens["T"], "scattering": [gens[k] for k in gens if k != "T"],
                "eps": float(cfg.get("eps", 1e-3)), "d": d}
    d = int(cfg["d"])
    wrap = bool(cfg.get("wrap", True))
    rem = cfg.get("inner_remainders", {})
    inner = InnerMapModel(
        d=d, beta=cfg["beta"], A=cfg["A"],
        rphi=ComponentFunction.from_spec(d, rem.get("phi")),
        rj=ComponentFunction.from_spec(d, rem.get("J")),
        gamma=float(cfg.get("gamma", 0.0)), wrap=wrap,
    )
    scats = []
    for s in cfg.get("scattering", []):
        scats.append(ScatteringMapModel(
            d=d,
            pphi=ComponentFunction.from_spec(d, s.get("phi")),
            pj=ComponentFunction.from_spec(d, s.get("J")),
            B=np.asarray(s["B"], float) if "B" in s else None,
            wrap=wrap,
        ))
    return {"inner": inner, "scattering": scats, "eps": float(cfg.get("eps", 1e-3)), "d": d}
