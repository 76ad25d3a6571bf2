"""Affine approximation and spectral analysis of the composed maps T^n o S.

Near (phi, J) = (0, 0) the composition of n twist steps after one kick is the
affine map b_n + A_n (phi, J) with

    b_n = (wrap(n beta), 0),      A_n = [[I + n*eps*A*B, n*A], [eps*B, I]].

For n*eps beyond a model threshold the matrix A_n is hyperbolic with simple
spectrum given by a closed-form quadratic in the eigenvalues of n*eps*A*B;
eigenvalues are always computed from that quadratic so the symplectic pairing
(lambda, 1/lambda) is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InnerMapModel, ScatteringMapModel, point, wrap_signed, wrap_torus


class NonHyperbolicError(ValueError):
    pass


@dataclass(frozen=True)
class ComposedFamily:
    """Matrices of the family n -> T^n o S and the hyperbolicity threshold N0."""

    d: int
    A: np.ndarray
    B: np.ndarray
    alphas: np.ndarray  # eigenvalues of A B (simple, real, nonzero)
    Q: np.ndarray       # diagonalizer of A B
    N0: float

    @staticmethod
    def from_models(inner: InnerMapModel, scattering: ScatteringMapModel,
                    margin: float = 0.5, grid_step: float = 0.01) -> "ComposedFamily":
        A = np.asarray(inner.A, float)
        B = np.asarray(scattering.B, float)
        AB = A @ B
        vals, vecs = np.linalg.eig(AB)
        if np.max(np.abs(vals.imag)) > 1e-10:
            raise NonHyperbolicError("A B has non-real spectrum")
        vals = vals.real
        if np.min(np.abs(vals)) < 1e-12:
            raise NonHyperbolicError("A B has a zero eigenvalue")
        if vals.shape[0] > 1 and np.min(np.abs(np.diff(np.sort(vals)))) < 1e-10:
            raise NonHyperbolicError("A B spectrum is not simple")
        order = np.argsort(vals)
        vals = vals[order]
        Q = vecs.real[:, order]
        Q = Q / np.linalg.norm(Q, axis=0)
        N0 = _n0_threshold(vals, margin=margin, step=grid_step)
        return ComposedFamily(d=A.shape[0], A=A, B=B, alphas=vals, Q=Q, N0=N0)

    def eigen(self, eps: float, n: int) -> "SpectralData":
        return eigen_An(self.alphas, eps, n, Q=self.Q, B=self.B)


def _n0_threshold(alphas: np.ndarray, margin: float = 0.5, step: float = 0.01,
                  xmax: float = 1e3) -> float:
    """Least n*eps on a grid with every alpha_i * (n eps) outside [-4 - margin, margin]."""
    lo, hi = -4.0 - margin, margin
    x = step
    while x <= xmax:
        a = alphas * x
        if np.all((a < lo) | (a > hi)):
            return x
        x += step
    raise NonHyperbolicError("no hyperbolic iterate range found on grid")


@dataclass(frozen=True)
class AffineApprox:
    n: int
    eps: float
    b_n: np.ndarray
    A_n: np.ndarray
    error_bound_spec: dict

    def __call__(self, phi, J):
        d = self.b_n.shape[0] // 2
        z = np.concatenate([np.atleast_1d(phi), np.atleast_1d(J)], axis=-1)
        out = self.b_n + z @ self.A_n.T
        return out[..., :d], out[..., d:]


def build_affine(family: ComposedFamily, inner: InnerMapModel, eps: float, n: int,
                 C: float | None = None) -> AffineApprox:
    """Translation and matrix of the affine approximation of T^n o S near the origin."""
    if C is None:
        C = 10.0 * family.N0
    if n * eps > C + 1e-12:
        raise ValueError(f"n*eps = {n * eps:.3g} exceeds configured range C = {C:.3g}")
    d = family.d
    A_n = np.zeros((2 * d, 2 * d))
    A_n[:d, :d] = np.eye(d) + n * eps * family.A @ family.B
    A_n[:d, d:] = n * family.A
    A_n[d:, :d] = eps * family.B
    A_n[d:, d:] = np.eye(d)
    if abs(np.linalg.det(A_n) - 1.0) > 1e-9:
        raise AssertionError("affine block matrix is not symplectic")
    b_n = np.concatenate([wrap_torus(n * np.asarray(inner.beta)), np.zeros(d)])
    spec = {"phi": "O(n eps |phi|^2, eps, eps |phi|)", "J": "O(eps |phi|^2, eps^2)"}
    return AffineApprox(n=n, eps=eps, b_n=b_n, A_n=A_n, error_bound_spec=spec)


@dataclass(frozen=True)
class SpectralData:
    n: int
    eps: float
    alphas_n: np.ndarray   # n*eps*alpha_i
    lambdas: np.ndarray    # |lambda_i| < 1 branch
    D_n: np.ndarray        # diag(lambdas, 1/lambdas)
    Q_n: np.ndarray | None


def eigen_An(alphas, eps: float, n: int, Q=None, B=None) -> SpectralData:
    """Closed-form eigenvalues of A_n from lambda^2 - (2 + alpha) lambda + 1 = 0.

    Requires every alpha_i^(n) = n*eps*alpha_i outside [-4, 0]; the returned
    lambdas are the modulus < 1 branch so (lambda, 1/lambda) pairing is exact.
    """
    alphas = np.atleast_1d(np.asarray(alphas, float))
    a_n = n * eps * alphas
    if np.any((a_n >= -4.0 - 1e-15) & (a_n <= 1e-15)):
        raise NonHyperbolicError(f"alpha^(n) in [-4, 0]: {a_n}")
    disc = np.sqrt(a_n ** 2 + 4.0 * a_n)
    lam_minus = (a_n + 2.0 - disc) / 2.0
    lam_plus = (a_n + 2.0 + disc) / 2.0
    lam = np.where(np.abs(lam_minus) < 1.0, lam_minus, lam_plus)
    resid = lam ** 2 - (2.0 + a_n) * lam + 1.0
    if np.max(np.abs(resid)) > 1e-10:
        raise AssertionError("eigenvalue quadratic residual too large")
    d = alphas.shape[0]
    D_n = np.diag(np.concatenate([lam, 1.0 / lam]))
    Q_n = None
    if Q is not None and B is not None:
        Q = np.asarray(Q, float)
        B = np.asarray(B, float)
        Dl = np.diag(lam)
        Q_n = np.zeros((2 * d, 2 * d))
        Q_n[:d, :d] = Q
        Q_n[:d, d:] = Q
        Q_n[d:, :d] = eps * B @ Q @ np.linalg.inv(Dl - np.eye(d))
        Q_n[d:, d:] = eps * B @ Q @ np.linalg.inv(np.linalg.inv(Dl) - np.eye(d))
    return SpectralData(n=n, eps=eps, alphas_n=a_n, lambdas=lam, D_n=D_n, Q_n=Q_n)


@dataclass(frozen=True)
class SimDiagResult:
    n: int
    N_eps: int
    residual: float
    delta: float
    bound: float
    ok: bool


def simultaneous_diag(family: ComposedFamily, eps: float, N_eps: int, n: int,
                      c_slack: float = 10.0, N0: float | None = None) -> SimDiagResult:
    """Off-diagonal residual of A_n in the frame diagonalizing A_{N_eps}.

    Returns |Q_{N_eps}^-1 A_n Q_{N_eps} - D_n|_inf and the slack bound
    c * delta with delta = eps * (n - N_eps) / N0.
    """
    if not (N_eps <= n):
        raise ValueError("need N_eps <= n")
    if N0 is None:
        N0 = family.N0
    base = family.eigen(eps, N_eps)
    if base.Q_n is None or abs(np.linalg.det(base.Q_n)) < 1e-14:
        raise NonHyperbolicError("Q_{N_eps} is singular")
    target = family.eigen(eps, n)
    aff = build_affine(family, _identity_inner(family), eps, n, C=math.inf)
    M = np.linalg.solve(base.Q_n, aff.A_n @ base.Q_n)
    residual = float(np.max(np.abs(M - target.D_n)))
    delta = eps * (n - N_eps) / N0
    bound = c_slack * delta
    return SimDiagResult(n=n, N_eps=N_eps, residual=residual, delta=delta,
                         bound=bound, ok=residual <= bound or n == N_eps)


def _identity_inner(family: ComposedFamily) -> InnerMapModel:
    from .core import ComponentFunction
    return InnerMapModel(d=family.d, beta=np.zeros(family.d), A=family.A,
                         rphi=ComponentFunction.zero(family.d),
                         rj=ComponentFunction.zero(family.d))


@dataclass(frozen=True)
class EquidistReport:
    N: int
    radius: float
    bound: float
    ok: bool
    worst_point: np.ndarray


def equidistribution_window(beta, gamma: float, N: int, grid: int = 64,
                            n_min: int = 1) -> EquidistReport:
    """Covering radius of the rotation orbit {wrap(n beta)}_{n <= N} on T^d.

    d = 1 uses the exact sorted-gap scan; d >= 2 scans a regular grid.  The
    reported bound is 1 / (gamma * N^(1/d)).
    """
    beta = np.atleast_1d(np.asarray(beta, float))
    d = beta.shape[0]
    ns = np.arange(n_min, N + 1)
    pts = wrap_torus(np.outer(ns, beta))
    bound = 1.0 / (gamma * N ** (1.0 / d))
    if d == 1:
        xs = np.sort(pts[:, 0])
        gaps = np.diff(np.concatenate([xs, [xs[0] + 1.0]]))
        i = int(np.argmax(gaps))
        radius = float(gaps[i] / 2.0)
        worst = np.array([np.mod(xs[i] + gaps[i] / 2.0, 1.0)])
    else:
        axes = [np.linspace(0, 1, grid, endpoint=False) for _ in range(d)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        radius = -1.0
        worst = mesh[0]
        chunk = 4096
        for s in range(0, mesh.shape[0], chunk):
            xs = mesh[s:s + chunk]
            diff = np.abs(wrap_signed(xs[:, None, :] - pts[None, :, :]))
            dist = np.min(np.max(diff, axis=2), axis=1)
            j = int(np.argmax(dist))
            if dist[j] > radius:
                radius = float(dist[j])
                worst = xs[j]
    return EquidistReport(N=N, radius=radius, bound=bound, ok=radius <= bound,
                          worst_point=worst)


def affine_error_scan(family: ComposedFamily, inner: InnerMapModel,
                      scattering: ScatteringMapModel, eps: float, n: int,
                      phi_radius: float, J_radius: float, samples: int = 200,
                      seed: int = 0) -> float:
    """Max distance between T^n o S and its affine approximation over a box at the origin.

    Independent oracle: composes the true maps orbit-wise.
    """
    rng = np.random.default_rng(seed)
    aff = build_affine(family, inner, eps, n, C=math.inf)
    d = family.d
    worst = 0.0
    for _ in range(samples):
        phi = rng.uniform(-phi_radius, phi_radius, d)
        J = rng.uniform(-J_radius, J_radius, d)
        q = scattering.apply(eps, point(phi, J))
        q = inner.apply_n(eps, q, n)
        phi_a, J_a = aff(phi, J)
        err = max(np.max(np.abs(wrap_signed(q.phi - phi_a))), np.max(np.abs(q.J - J_a)))
        worst = max(worst, float(err))
    return worst
