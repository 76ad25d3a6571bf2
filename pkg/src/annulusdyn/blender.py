"""Blender charts and symbolic cs/cu/double blender certification.

The chart Psi = Q_{N_eps} S_{kappa,chi} straightens the maps F_n = T^n o S
(n in an admissible set N_set) into near-diagonal box maps on [-1,1]^{2d}:
contraction in xi, expansion in eta, translations forming a fine net of the
xi-face.  Certification then follows the constructive two-branch loop: a
cs-strip either already crosses the unstable manifold of one of the
well-distributed fixed points, or it is pulled back through a covering
branch, which grows its width by at least 1/lambda_bar.

The cu orientation reuses the same machinery: conjugating the inverse maps
(S o T^n)^-1 by the angle involution phi -> -phi yields box maps of the same
near-diagonal form, and "unstable" objects of those maps are stable objects
of the forward dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (AnnulusPoint, InnerMapModel, ScatteringMapModel, Word,
                   point, wrap_signed)
from .linearize import ComposedFamily, NonHyperbolicError, eigen_An


class ChartError(RuntimeError):
    pass


class StripError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# unwrapped composed maps (angles tracked on the universal cover)
# ---------------------------------------------------------------------------

def _kick(scattering: ScatteringMapModel, eps, phi, J, sign=+1):
    if sign > 0:
        return (phi + eps * scattering.pphi(phi, J, eps),
                J + eps * scattering.pj(phi, J, eps))
    if not scattering.kick_only:
        out = scattering.apply_inverse(eps, AnnulusPoint(np.mod(phi, 1.0), J))
        # recover the unwrapped representative
        return phi + wrap_signed(out.phi - phi), out.J
    return phi, J - eps * scattering.pj(phi, J, eps)


def _twist_n(inner: InnerMapModel, eps, phi, J, n: int):
    if inner.linear:
        return phi + n * inner.beta + n * (J @ inner.A.T), J
    step = 1 if n > 0 else -1
    for _ in range(abs(n)):
        if step > 0:
            phi, J = (phi + inner.beta + J @ inner.A.T + inner.rphi(phi, J, eps),
                      J + inner.rj(phi, J, eps))
        else:
            out = inner.apply_inverse(eps, AnnulusPoint(np.mod(phi, 1.0), J))
            phi, J = phi + wrap_signed(out.phi - phi), out.J
    return phi, J


def forward_Fn(inner, scattering, eps, n, phi, J):
    """T^n o S on the universal cover."""
    phi, J = _kick(scattering, eps, phi, J, +1)
    return _twist_n(inner, eps, phi, J, n)


def inverse_Fn(inner, scattering, eps, n, phi, J):
    """(T^n o S)^-1 = S^-1 o T^-n on the universal cover."""
    phi, J = _twist_n(inner, eps, phi, J, -n)
    return _kick(scattering, eps, phi, J, -1)


def forward_Fn_tilde(inner, scattering, eps, n, phi, J):
    """S o T^n on the universal cover."""
    phi, J = _twist_n(inner, eps, phi, J, n)
    return _kick(scattering, eps, phi, J, +1)


def inverse_Fn_tilde(inner, scattering, eps, n, phi, J):
    """(S o T^n)^-1 = T^-n o S^-1 on the universal cover."""
    phi, J = _kick(scattering, eps, phi, J, -1)
    return _twist_n(inner, eps, phi, J, -n)


def _twist_jacobian_n(inner: InnerMapModel, eps, p: AnnulusPoint, n: int) -> np.ndarray:
    """Exact derivative of T^n at p (n >= 0)."""
    d = inner.d
    if inner.linear:
        D = np.eye(2 * d)
        D[:d, d:] = n * inner.A
        return D
    D = np.eye(2 * d)
    q = p
    for _ in range(n):
        D = inner.jacobian(eps, q) @ D
        q = inner.apply(eps, q)
    return D


def annulus_jacobian_Fn(inner, scattering, eps, n, p: AnnulusPoint) -> np.ndarray:
    """Exact derivative of T^n o S at p."""
    Ds = scattering.jacobian(eps, p)
    q = scattering.apply(eps, p)
    return _twist_jacobian_n(inner, eps, q, n) @ Ds


def annulus_jacobian_Fn_tilde(inner, scattering, eps, n, p: AnnulusPoint) -> np.ndarray:
    """Exact derivative of S o T^n at p."""
    Dt = _twist_jacobian_n(inner, eps, p, n)
    q = inner.apply_n(eps, p, n)
    return scattering.jacobian(eps, q) @ Dt


# ---------------------------------------------------------------------------
# box maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineBoxMap:
    """Toy affine map b + M w on [-1,1]^m, exact inverse."""

    b: np.ndarray
    M: np.ndarray

    def __call__(self, w):
        return np.asarray(self.b) + np.asarray(w) @ np.asarray(self.M).T

    def inverse(self, w):
        return np.linalg.solve(np.asarray(self.M), (np.asarray(w) - np.asarray(self.b)).T).T


@dataclass(frozen=True)
class ChartBoxMap:
    """Psi-conjugated branch map of the chart for one admissible iterate n."""

    chart: "BlenderChart"
    n: int

    def _to_annulus(self, w):
        z = np.asarray(w, float) @ self.chart.Psi.T
        d = self.chart.d
        phi, J = z[..., :d], z[..., d:]
        if self.chart.orientation == "cu":
            phi = -phi
        return phi, J

    def _to_box(self, phi, J):
        if self.chart.orientation == "cu":
            phi = -phi
        phi = wrap_signed(phi)
        z = np.concatenate([phi, J], axis=-1)
        return z @ self.chart.Psi_inv.T

    def __call__(self, w):
        c = self.chart
        phi, J = self._to_annulus(w)
        if c.orientation == "cs":
            phi, J = forward_Fn(c.inner, c.scattering, c.eps, self.n, phi, J)
        else:
            phi, J = inverse_Fn_tilde(c.inner, c.scattering, c.eps, self.n, phi, J)
        return self._to_box(phi, J)

    def inverse(self, w):
        c = self.chart
        phi, J = self._to_annulus(w)
        if c.orientation == "cs":
            phi, J = inverse_Fn(c.inner, c.scattering, c.eps, self.n, phi, J)
        else:
            phi, J = forward_Fn_tilde(c.inner, c.scattering, c.eps, self.n, phi, J)
        return self._to_box(phi, J)

    def jacobian(self, w: np.ndarray) -> np.ndarray:
        """Exact derivative at w via the analytic map Jacobians, conjugated by
        the chart (naive box-coordinate differencing would amplify roundoff by
        1/(eps*kappa))."""
        c = self.chart
        d = c.d
        phi0, J0 = self._to_annulus(np.asarray(w, float)[None, :])
        z = AnnulusPoint(phi0[0], J0[0])
        if c.orientation == "cs":
            Dann = annulus_jacobian_Fn(c.inner, c.scattering, c.eps, self.n, z)
        else:
            # derivative of the inverse branch = inverse of the forward
            # derivative at the image point
            phi1, J1 = inverse_Fn_tilde(c.inner, c.scattering, c.eps, self.n,
                                        phi0, J0)
            Dfwd = annulus_jacobian_Fn_tilde(c.inner, c.scattering, c.eps, self.n,
                                             AnnulusPoint(phi1[0], J1[0]))
            Dann = np.linalg.inv(Dfwd)
        R = np.eye(2 * d)
        if c.orientation == "cu":
            R[:d, :d] = -np.eye(d)
        return c.Psi_inv @ R @ Dann @ R @ c.Psi


# ---------------------------------------------------------------------------
# the chart
# ---------------------------------------------------------------------------

@dataclass
class BlenderChart:
    inner: InnerMapModel
    scattering: ScatteringMapModel
    eps: float
    kappa: float
    chi: float
    orientation: str
    family: ComposedFamily
    N_eps: int
    Psi: np.ndarray
    Psi_inv: np.ndarray
    S_scale: np.ndarray
    N_set: list
    b_tilde: dict
    lambda_bar: float
    lambda_min: float
    net_radius: float
    C_translations: float
    C: float

    @property
    def d(self) -> int:
        return self.family.d

    def box_map(self, n: int) -> ChartBoxMap:
        return ChartBoxMap(self, n)

    def box_maps(self) -> list:
        return [ChartBoxMap(self, n) for n in self.N_set]

    def spectral(self, n: int):
        return self.family.eigen(self.eps, n)

    def to_annulus(self, w) -> AnnulusPoint:
        z = np.asarray(w, float) @ self.Psi.T
        d = self.d
        phi, J = z[..., :d], z[..., d:]
        if self.orientation == "cu":
            phi = -phi
        return AnnulusPoint(np.mod(phi, 1.0), J)

    def from_annulus(self, p: AnnulusPoint):
        phi = np.asarray(p.phi, float)
        if self.orientation == "cu":
            phi = -phi
        phi = wrap_signed(phi)
        z = np.concatenate([phi, np.asarray(p.J, float)], axis=-1)
        return z @ self.Psi_inv.T


def build_chart(inner: InnerMapModel, scattering: ScatteringMapModel, eps: float,
                kappa: float, chi: float, orientation: str = "cs",
                N_star_cap: int = 10 ** 6, net_grid: int = 201,
                b_xi_max: float = 1.0, coupling_cap: float = 1.0,
                alpha_start: float = 2.0) -> BlenderChart:
    """Assemble the straightening chart and the admissible iterate set.

    N_set keeps the iterates n in [N_eps, N_eps + N_star] whose translation
    lands inside the xi-face; the achieved net radius over [-1,1]^d divided
    by chi is the measured constant C.  The simultaneous-diagonalization error
    of branch n scales like eps*(n - N_eps)/(N0*chi), so the window is also
    capped where that exceeds coupling_cap.
    """
    if orientation not in ("cs", "cu"):
        raise ValueError("orientation must be 'cs' or 'cu'")
    if not (0 < eps < kappa < chi < 1):
        raise ChartError(f"quantifier hierarchy violated: eps={eps} kappa={kappa} chi={chi}")
    family = ComposedFamily.from_models(inner, scattering)
    d = family.d
    # Start the window above the bare hyperbolicity threshold: branch-to-branch
    # expansion spread must dominate the simultaneous-diagonalization coupling,
    # and both scale with the window start alpha = n*eps*|alpha_i|.
    n_start = max(family.N0, alpha_start / float(np.min(np.abs(family.alphas))))
    N_eps = int(math.ceil(n_start / eps))
    gamma = inner.gamma if inner.gamma > 0 else 0.1
    N_star = int(min((1.0 / (gamma * chi * kappa)) ** d, N_star_cap))
    if coupling_cap is not None:
        N_star = min(N_star, int(coupling_cap * N_eps * eps * chi / eps))
    base = family.eigen(eps, N_eps)
    S_scale = np.diag(np.concatenate([np.full(d, kappa), np.full(d, kappa / chi)]))
    Psi = base.Q_n @ S_scale
    if abs(np.linalg.det(Psi)) < 1e-300:
        raise ChartError("chart matrix is singular")
    Psi_inv = np.linalg.inv(Psi)

    beta = np.asarray(inner.beta, float)
    ns = np.arange(N_eps, N_eps + N_star + 1)
    t = wrap_signed(np.outer(ns, beta))
    b_all = np.concatenate([t, np.zeros_like(t)], axis=1) @ Psi_inv.T
    keep = np.max(np.abs(b_all[:, :d]), axis=1) <= b_xi_max
    N_set = [int(n) for n in ns[keep]]
    if not N_set:
        raise ChartError("net construction failed: no admissible iterates in budget")
    b_tilde = {int(n): b_all[i] for i, n in enumerate(ns) if keep[i]}

    lams = [np.abs(family.eigen(eps, n).lambdas) for n in N_set]
    lambda_bar = float(max(np.max(l) for l in lams))
    lambda_min = float(min(np.min(l) for l in lams))

    bx = np.stack([b_tilde[n][:d] for n in N_set])
    net_radius = _net_radius(bx, net_grid)
    if net_radius > 0.5:
        raise ChartError(f"net construction failed: radius {net_radius:.3f}")
    C_tr = net_radius / chi
    chart = BlenderChart(
        inner=inner, scattering=scattering, eps=eps, kappa=kappa, chi=chi,
        orientation=orientation, family=family, N_eps=N_eps, Psi=Psi,
        Psi_inv=Psi_inv, S_scale=S_scale, N_set=N_set, b_tilde=b_tilde,
        lambda_bar=lambda_bar, lambda_min=lambda_min, net_radius=net_radius,
        C_translations=C_tr, C=C_tr,
    )
    # the measured constant C also covers the fixed-point net: for d = 1 the
    # actual Newton fixed points are cheap, otherwise use affine estimates
    fx = []
    for n in N_set:
        D = family.eigen(eps, n).D_n
        est = np.linalg.solve(np.eye(2 * d) - D, b_tilde[n])
        if np.max(np.abs(est)) > 1.02:
            continue
        if d == 1:
            try:
                est = _newton_fixed_point(chart.box_map(n), est)
            except FixedPointError:
                continue
            if np.max(np.abs(est)) > 1.0 + 1e-9:
                continue
        fx.append(est[:d])
    if fx:
        C_fix = _net_radius(np.stack(fx), net_grid) / chi
        chart.C = max(C_tr, C_fix)
    return chart


def _net_radius(pts: np.ndarray, grid: int) -> float:
    """Covering radius (sup-norm) of pts over [-1,1]^d on a regular grid."""
    d = pts.shape[1]
    axes = [np.linspace(-1, 1, grid) for _ in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    worst = 0.0
    for s in range(0, mesh.shape[0], 8192):
        xs = mesh[s:s + 8192]
        dist = np.min(np.max(np.abs(xs[:, None, :] - pts[None, :, :]), axis=2), axis=1)
        worst = max(worst, float(np.max(dist)))
    return worst


def involution_defect(inner, scattering, eps, n, samples=50, radius=0.02, seed=0) -> float:
    """Max distance between psi_R o (T^n o S) o psi_R and (S o T^n)^-1 near the origin."""
    rng = np.random.default_rng(seed)
    d = inner.d
    worst = 0.0
    for _ in range(samples):
        phi = rng.uniform(-radius, radius, d)
        J = rng.uniform(-radius * eps, radius * eps, d)
        a_phi, a_J = forward_Fn(inner, scattering, eps, n, -phi, J)
        a_phi = -a_phi
        b_phi, b_J = inverse_Fn_tilde(inner, scattering, eps, n, phi, J)
        err = max(np.max(np.abs(wrap_signed(a_phi - b_phi))), np.max(np.abs(a_J - b_J)))
        worst = max(worst, float(err))
    return worst


# ---------------------------------------------------------------------------
# covering property
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoveringReport:
    covered: bool
    a: float
    grid_res: float
    witness: np.ndarray | None


def _in_box(w, tol=1e-9):
    return np.all(np.abs(w) <= 1.0 + tol, axis=-1)


def covering_check(maps: list, dim_xi: int, dim_total: int, grid_res: float = 0.05,
                   r_tol: float = 1e-3, samples_per_axis: int = 3) -> CoveringReport:
    """Verify D = [-1,1]^m is covered by the branch images, and measure the
    largest radius a such that every horizontal a-rectangle inside D lies in a
    single image.

    Membership z in f(D) is tested through the branch inverse.  The radius is
    found by bisection over a center grid; rectangles are sampled on their
    xi-edges.
    """
    axes = [np.arange(-1, 1 + 1e-12, grid_res) for _ in range(dim_total)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim_total)

    covered_mask = np.zeros(mesh.shape[0], dtype=bool)
    for f in maps:
        todo = ~covered_mask
        if not np.any(todo):
            break
        covered_mask[todo] |= _in_box(f.inverse(mesh[todo]))
    covered = bool(np.all(covered_mask))
    witness = None if covered else mesh[int(np.argmin(covered_mask))]

    offsets = np.linspace(-1.0, 1.0, samples_per_axis)
    grids = np.meshgrid(*([offsets] * dim_xi), indexing="ij")
    unit_offsets = np.stack([g.ravel() for g in grids], axis=1)  # (k, dim_xi)

    def all_rects_contained(r: float) -> bool:
        centers = mesh[np.max(np.abs(mesh[:, :dim_xi]), axis=1) <= 1.0 - r + 1e-12]
        if centers.shape[0] == 0:
            return True
        pts = np.repeat(centers[:, None, :], unit_offsets.shape[0], axis=1).copy()
        pts[:, :, :dim_xi] += r * unit_offsets[None, :, :]
        flat = pts.reshape(-1, dim_total)
        ok = np.zeros(centers.shape[0], dtype=bool)
        for f in maps:
            inside = _in_box(f.inverse(flat)).reshape(centers.shape[0], -1)
            ok |= np.all(inside, axis=1)
            if np.all(ok):
                return True
        return bool(np.all(ok))

    lo, hi = 0.0, 1.0
    if not all_rects_contained(0.0):
        return CoveringReport(covered=covered, a=0.0, grid_res=grid_res, witness=witness)
    while hi - lo > r_tol:
        mid = 0.5 * (lo + hi)
        if all_rects_contained(mid):
            lo = mid
        else:
            hi = mid
    return CoveringReport(covered=covered, a=lo, grid_res=grid_res, witness=witness)


# ---------------------------------------------------------------------------
# cs-strips and the graph transform
# ---------------------------------------------------------------------------

@dataclass
class CsStrip:
    """Graph eta = h(xi) over an axis box U, |dh/dxi| <= 1, values in [-1,1]^d."""

    lo: np.ndarray
    hi: np.ndarray
    nodes: np.ndarray   # (m,) xi-nodes per axis (d = 1) or tensor grid axes
    values: np.ndarray  # (m, d) for d = 1; (m1, ..., md, d) generally

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> float:
        return float(np.min((self.hi - self.lo) / 2.0))

    @property
    def center(self) -> np.ndarray:
        return (self.hi + self.lo) / 2.0

    def h(self, xi):
        xi = np.asarray(xi, float)
        if self.d == 1:
            return np.stack([np.interp(xi[..., 0], self.nodes, self.values[:, 0])], axis=-1)
        from scipy.interpolate import RegularGridInterpolator
        interp = RegularGridInterpolator(
            tuple(self.nodes), self.values, bounds_error=False, fill_value=None)
        return interp(xi)

    def lip(self) -> float:
        if self.d == 1:
            dh = np.diff(self.values[:, 0]) / np.diff(self.nodes)
            return float(np.max(np.abs(dh))) if dh.size else 0.0
        grads = np.gradient(self.values, *self.nodes, axis=tuple(range(self.d)))
        return float(max(np.max(np.abs(g)) for g in grads))

    @staticmethod
    def from_callable(lo, hi, fn, d: int = 1, m: int = 33) -> "CsStrip":
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        if d == 1:
            nodes = np.linspace(lo[0], hi[0], m)
            vals = np.stack([np.atleast_1d(fn(np.array([x])))[:1] for x in nodes])
            return CsStrip(lo, hi, nodes, vals.reshape(m, 1))
        axes = tuple(np.linspace(lo[i], hi[i], m) for i in range(d))
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.apply_along_axis(fn, -1, mesh)
        return CsStrip(lo, hi, axes, vals)


def random_probe_strip(rng, a: float, d: int = 1, m: int = 33,
                       width_min: float | None = None) -> CsStrip:
    """Random cubic graph clipped to Lipschitz bound 1 and range [-1,1]."""
    if width_min is None:
        width_min = a / 20.0
    w = rng.uniform(width_min, a)
    c = rng.uniform(-1 + w, 1 - w, d)
    coeffs = rng.uniform(-1, 1, (4, d))

    def fn(xi):
        s = xi - c
        val = coeffs[0] * 0.5 + coeffs[1] * s + coeffs[2] * s ** 2 + coeffs[3] * s ** 3
        return val

    strip = CsStrip.from_callable(c - w, c + w, fn, d=d, m=m)
    lip = strip.lip()
    amp = float(np.max(np.abs(strip.values)))
    scale = min(1.0, 0.95 / max(lip, 1e-12), 0.9 / max(amp, 1e-12))
    strip.values = strip.values * scale
    return strip


def strip_contained(strip: CsStrip, fmap, tol: float = 1e-9) -> bool:
    """Is the strip inside the image fmap(D)?  Tested through the inverse."""
    if strip.d != 1:
        raise NotImplementedError("containment sampling implemented for d = 1")
    xi = strip.nodes.reshape(-1, 1)
    pts = np.concatenate([xi, strip.values], axis=1)
    return bool(np.all(_in_box(fmap.inverse(pts), tol)))


def graph_transform(strip: CsStrip, fmap: ChartBoxMap, lam_bar: float | None = None,
                    m: int = 33) -> CsStrip:
    """Pull a cs-strip back through one branch: strip' = F_n^{-1}(strip).

    Requires the strip to lie in the branch image.  When lam_bar is given the
    output domain is the interval of width exactly (1/lam_bar) * width(strip)
    centered in the true preimage; solvability on that domain is what is
    verified, so the certified width growth is 1/lam_bar per pullback.  With
    lam_bar = None the full preimage domain is returned.
    """
    if strip.d != 1:
        raise NotImplementedError("graph transform implemented for d = 1")
    if not strip_contained(strip, fmap):
        raise StripError("strip is not contained in the branch image")
    xi = strip.nodes.reshape(-1, 1)
    pts = np.concatenate([xi, strip.values], axis=1)
    pre = fmap.inverse(pts)
    xi_new, eta_new = pre[:, 0], pre[:, 1:]
    order = np.argsort(xi_new)
    xi_new, eta_new = xi_new[order], eta_new[order]
    if np.any(np.diff(xi_new) <= 0):
        raise StripError("pullback is not a graph over xi")
    if np.max(np.abs(eta_new)) > 1.0 + 1e-9:
        raise StripError("pullback leaves the eta box")
    if lam_bar is None:
        lo, hi = float(xi_new[0]), float(xi_new[-1])
    else:
        half = strip.width / lam_bar
        mid = 0.5 * (xi_new[0] + xi_new[-1])
        lo, hi = mid - half, mid + half
        if lo < xi_new[0] - 1e-12 or hi > xi_new[-1] + 1e-12:
            raise StripError("preimage too short for 1/lambda_bar width growth")
    nodes = np.linspace(lo, hi, m)
    vals = np.interp(nodes, xi_new, eta_new[:, 0]).reshape(m, 1)
    out = CsStrip(np.array([lo]), np.array([hi]), nodes, vals)
    if out.lip() > 1.0 + 1e-6:
        raise StripError(f"Lipschitz bound violated: {out.lip():.3f}")
    return out


# ---------------------------------------------------------------------------
# fixed points and local invariant graphs
# ---------------------------------------------------------------------------

@dataclass
class InvariantGraph:
    """Graph xi = f(eta) (kind 'u') or eta = f(xi) (kind 's') over [-1,1]^d."""

    kind: str
    nodes: np.ndarray
    values: np.ndarray

    def f(self, s):
        return np.interp(np.asarray(s, float), self.nodes, self.values[:, 0])

    def slope(self) -> float:
        df = np.diff(self.values[:, 0]) / np.diff(self.nodes)
        return float(np.max(np.abs(df)))


@dataclass
class FixedPointData:
    n: int
    w: np.ndarray
    eigenvalues: np.ndarray
    unstable: InvariantGraph
    stable: InvariantGraph


class FixedPointError(RuntimeError):
    pass


def _newton_fixed_point(fmap, w0, tol=1e-13, max_iter=60):
    w = np.asarray(w0, float).copy()
    m = w.shape[0]
    for _ in range(max_iter):
        r = fmap(w[None, :])[0] - w
        if np.max(np.abs(r)) < tol:
            return w
        h = 1e-7
        Jac = np.empty((m, m))
        for j in range(m):
            dw = np.zeros(m)
            dw[j] = h
            Jac[:, j] = (fmap((w + dw)[None, :])[0] - fmap((w - dw)[None, :])[0]) / (2 * h)
        try:
            step = np.linalg.solve(Jac - np.eye(m), -r)
        except np.linalg.LinAlgError:
            raise FixedPointError("singular Newton system")
        w = w + step
    raise FixedPointError("Newton did not converge to a fixed point")


def _fd_jacobian_box(fmap, w, h=1e-7):
    if hasattr(fmap, "jacobian"):
        return fmap.jacobian(w)
    m = w.shape[0]
    Jac = np.empty((m, m))
    for j in range(m):
        dw = np.zeros(m)
        dw[j] = h
        Jac[:, j] = (fmap((w + dw)[None, :])[0] - fmap((w - dw)[None, :])[0]) / (2 * h)
    return Jac


def find_fixed_point(chart: BlenderChart, n: int, m_nodes: int = 33,
                     grow_iters: int = 60) -> FixedPointData:
    """Newton fixed point of the branch map F_n in D with its local W^u/W^s graphs.

    W^u is grown as a graph xi = f(eta) over [-1,1]^d by forward graph
    iteration; W^s as eta = f(xi) using the inverse branch.
    """
    if n not in chart.b_tilde:
        raise FixedPointError(f"iterate {n} not admissible")
    if chart.d != 1:
        raise NotImplementedError("fixed-point machinery implemented for d = 1")
    fmap = chart.box_map(n)
    D_n = chart.spectral(n).D_n
    b = chart.b_tilde[n]
    w0 = np.linalg.solve(np.eye(2 * chart.d) - D_n, b)
    w = _newton_fixed_point(fmap, w0)
    if np.max(np.abs(w)) > 1.0 + 1e-9:
        raise FixedPointError("fixed point escapes the box")
    Jac = _fd_jacobian_box(fmap, w)
    eigs = np.linalg.eigvals(Jac)
    if np.any(np.abs(np.abs(eigs) - 1.0) < 1e-4):
        raise FixedPointError("fixed point is not hyperbolic")

    unstable = _grow_graph(fmap, w, kind="u", m_nodes=m_nodes, iters=grow_iters)
    stable = _grow_graph(fmap, w, kind="s", m_nodes=m_nodes, iters=grow_iters)
    return FixedPointData(n=n, w=w, eigenvalues=np.sort(np.abs(eigs)),
                          unstable=unstable, stable=stable)


def _grow_graph(fmap, w_fix, kind: str, m_nodes: int, iters: int, tol=1e-12):
    """Iterate the graph transform to the invariant graph through the fixed point.

    kind 'u': graph xi = f(eta), grown with the forward branch (eta expands);
    kind 's': graph eta = f(xi), grown with the inverse branch.  The graph
    starts as the linear eigenvector segment and its domain expands under the
    dynamics until it covers [-1, 1].
    """
    apply_map = (lambda p: fmap(p)) if kind == "u" else (lambda p: fmap.inverse(p))
    par, out = (1, 0) if kind == "u" else (0, 1)

    Jac = _fd_jacobian_box(fmap, np.asarray(w_fix, float))
    if kind == "s":
        Jac = np.linalg.inv(Jac)
    vals_e, vecs_e = np.linalg.eig(Jac)
    k = int(np.argmax(np.abs(vals_e)))
    v = vecs_e[:, k].real
    if abs(v[par]) < 1e-12:
        raise FixedPointError("expanding direction degenerate in the parametrizing slot")
    slope = v[out] / v[par]

    span = 0.02
    nodes = w_fix[par] + np.linspace(-span, span, m_nodes)
    vals = w_fix[out] + slope * (nodes - w_fix[par])
    prev = None
    for _ in range(iters):
        pts = np.zeros((m_nodes, 2))
        pts[:, par] = nodes
        pts[:, out] = vals
        img = apply_map(pts)
        s_img, v_img = img[:, par], img[:, out]
        order = np.argsort(s_img)
        s_img, v_img = s_img[order], v_img[order]
        lo = max(-1.0, float(s_img[0]))
        hi = min(1.0, float(s_img[-1]))
        new_nodes = np.linspace(lo, hi, m_nodes)
        new_vals = np.interp(new_nodes, s_img, v_img)
        full = lo <= -1.0 + 1e-12 and hi >= 1.0 - 1e-12
        if full and prev is not None and prev[0]:
            if np.max(np.abs(new_vals - prev[1])) < tol:
                nodes, vals = new_nodes, new_vals
                break
        prev = (full, new_vals)
        nodes, vals = new_nodes, new_vals
    return InvariantGraph(kind=kind, nodes=nodes, values=vals.reshape(-1, 1))


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

@dataclass
class ProbeRecord:
    widths: list
    word_ns: list
    n_star: int
    intersection: np.ndarray


@dataclass
class BlenderCertificate:
    orientation: str
    fixed_point: np.ndarray
    n_star: int
    witness_words: list
    covering_a: float
    widths_trace: list
    probes: list
    fixed_points: dict
    lambda_bar: float

    @property
    def n_certified(self) -> int:
        return len(self.probes)


class CertificationError(RuntimeError):
    pass


def _chain_word(ns: list, orientation: str) -> Word:
    """Forward annulus word realizing a pullback chain (deepest branch first)."""
    letters = []
    if orientation == "cs":
        for n in reversed(ns):
            letters += [("S", 1), ("T", n)]
    else:
        for n in ns:
            letters += [("T", n), ("S", 1)]
    return Word(tuple(letters))


def _intersect_strip_graph(strip: CsStrip, graph: InvariantGraph, iters: int = 60):
    """Solve xi = f(h(xi)) in U by contraction; None when it leaves the domain."""
    xi = float(strip.center[0])
    for _ in range(iters):
        eta = strip.h(np.array([xi]))[0]
        xi_new = float(graph.f(eta))
        if abs(xi_new - xi) < 1e-13:
            xi = xi_new
            break
        xi = xi_new
    if strip.lo[0] - 1e-12 <= xi <= strip.hi[0] + 1e-12:
        eta = float(strip.h(np.array([xi]))[0])
        if abs(eta) <= 1.0 + 1e-9:
            return np.array([xi, eta])
    return None


def certify_blender(chart: BlenderChart, covering: CoveringReport | None = None,
                    n_probes: int = 200, seed: int = 0, depth_cap: int = 100,
                    m_nodes: int = 33, fixed_point_subset: int | None = None):
    """Run the two-branch certification loop over random probe strips.

    Every probe must terminate with a transversal intersection of its pulled
    back strip with W^u(z_{n_*}) for some well-distributed fixed point; the
    recorded widths must grow by at least 1/lambda_bar per pullback.
    """
    if chart.d != 1:
        raise NotImplementedError("certification implemented for d = 1")
    maps = {n: chart.box_map(n) for n in chart.N_set}
    if covering is None:
        covering = covering_check(list(maps.values()), chart.d, 2 * chart.d)
    if not covering.covered or covering.a <= 0:
        raise CertificationError("covering property fails; cannot certify")
    a = covering.a

    ns_fp = chart.N_set
    if fixed_point_subset is not None and len(ns_fp) > fixed_point_subset:
        idx = np.linspace(0, len(ns_fp) - 1, fixed_point_subset).astype(int)
        ns_fp = [ns_fp[i] for i in idx]
    fixed_points = {}
    for n in ns_fp:
        try:
            fixed_points[n] = find_fixed_point(chart, n, m_nodes=m_nodes)
        except FixedPointError:
            continue
    if not fixed_points:
        raise CertificationError("no hyperbolic fixed points found")

    rng = np.random.default_rng(seed)
    probes = []
    for _ in range(n_probes):
        strip = random_probe_strip(rng, a, d=1, m=m_nodes)
        rec = _certify_one(chart, maps, fixed_points, strip, a, depth_cap)
        probes.append(rec)

    n_star = max(set(p.n_star for p in probes), key=[p.n_star for p in probes].count)
    cert = BlenderCertificate(
        orientation=chart.orientation,
        fixed_point=fixed_points[n_star].w,
        n_star=n_star,
        witness_words=[_chain_word(p.word_ns, chart.orientation) for p in probes],
        covering_a=a,
        widths_trace=[p.widths for p in probes],
        probes=probes,
        fixed_points=fixed_points,
        lambda_bar=chart.lambda_bar,
    )
    return cert, covering


def _certify_one(chart, maps, fixed_points, strip, a, depth_cap) -> ProbeRecord:
    widths = [strip.width]
    word_ns = []
    for _ in range(depth_cap):
        if strip.width >= a / 2.0 - 1e-12:
            hit = _try_intersections(strip, fixed_points)
            if hit is None:
                raise CertificationError(
                    f"wide strip (width {strip.width:.4f}) misses all unstable graphs")
            n_star, pt = hit
            return ProbeRecord(widths=widths, word_ns=word_ns, n_star=n_star, intersection=pt)
        out = None
        for n in _containing_branches(chart, maps, strip):
            try:
                out = graph_transform(strip, maps[n], lam_bar=chart.lambda_bar)
            except StripError:
                continue
            word_ns.append(n)
            break
        if out is None:
            raise CertificationError(
                f"no branch admits a certified pullback at width {strip.width:.4f}"
                " (quantifier misconfiguration)")
        strip = out
        widths.append(strip.width)
    raise CertificationError("pullback budget exceeded (quantifier misconfiguration)")


def _containing_branches(chart, maps, strip):
    """Nearest-translation branches containing the strip, strongest contraction first,
    so the pullback width growth has slack over 1/lambda_bar."""
    c = float(strip.center[0])
    cands = sorted(chart.N_set, key=lambda n: abs(chart.b_tilde[n][0] - c))
    containing = [n for n in cands[:12] if strip_contained(strip, maps[n])]
    return sorted(containing,
                  key=lambda n: float(np.min(np.abs(chart.spectral(n).lambdas))))


def _try_intersections(strip, fixed_points):
    c = float(strip.center[0])
    for n in sorted(fixed_points, key=lambda n: abs(float(fixed_points[n].unstable.f(strip.h(strip.center)[0])) - c)):
        pt = _intersect_strip_graph(strip, fixed_points[n].unstable)
        if pt is not None:
            return n, pt
    return None


# ---------------------------------------------------------------------------
# double blender
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoubleBlenderReport:
    ok: bool
    angle: float
    point_cs_box: np.ndarray | None
    point_annulus: AnnulusPoint | None


def _graph_curve_cs_coords(cert: BlenderCertificate, chart: BlenderChart,
                           cs_chart: BlenderChart):
    """Sample the certificate's unstable graph and express it in cs-box coordinates."""
    g = cert.fixed_points[cert.n_star].unstable
    eta = g.nodes
    w = np.stack([g.values[:, 0], eta], axis=1)
    if chart.orientation == cs_chart.orientation:
        return w
    pts = chart.to_annulus(w)
    return cs_chart.from_annulus(pts)


def principal_angle(t1: np.ndarray, t2: np.ndarray) -> float:
    u1 = t1 / np.linalg.norm(t1)
    u2 = t2 / np.linalg.norm(t2)
    c = abs(float(u1 @ u2))
    return math.acos(min(1.0, c))


def intersect_curves(curve1: np.ndarray, curve2: np.ndarray, angle_floor: float = 1e-2,
                     gap_tol: float = 5e-2):
    """Closest transversal crossing of two sampled planar curves.

    Returns (ok, angle, point); ok requires the local linear refinement to
    close the gap within gap_tol inside the box and the tangents to meet at a
    principal angle above the floor.
    """
    d2 = ((curve1[:, None, :] - curve2[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)

    def tangent(curve, k):
        k0, k1 = max(0, k - 1), min(curve.shape[0] - 1, k + 1)
        return curve[k1] - curve[k0]

    t1, t2 = tangent(curve1, i), tangent(curve2, j)
    angle = principal_angle(t1, t2)
    A = np.stack([t1, -t2], axis=1)
    rhs = curve2[j] - curve1[i]
    st, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    p1 = curve1[i] + st[0] * t1
    p2 = curve2[j] + st[1] * t2
    gap = float(np.linalg.norm(p1 - p2))
    inside = np.max(np.abs(p1)) <= 1.0 + 1e-6
    ok = bool(inside and gap <= gap_tol and angle >= angle_floor)
    return ok, angle, (p1 if ok else None)


def certify_double_blender(cs_cert: BlenderCertificate, cu_cert: BlenderCertificate,
                           cs_chart: BlenderChart, cu_chart: BlenderChart,
                           angle_floor: float = 1e-2) -> DoubleBlenderReport:
    """Intersect W^u(P^cs) with W^s(P^cu) in the chart overlap and test transversality.

    Both manifolds live as 'unstable' graphs of their own box dynamics; the cu
    one is mapped through the involution into cs-box coordinates, so the check
    is a curve intersection with a principal-angle floor.
    """
    curve_cs = _graph_curve_cs_coords(cs_cert, cs_chart, cs_chart)
    curve_cu = _graph_curve_cs_coords(cu_cert, cu_chart, cs_chart)
    ok, angle, p1 = intersect_curves(curve_cs, curve_cu, angle_floor)
    ann = cs_chart.to_annulus(p1) if ok else None
    return DoubleBlenderReport(ok=ok, angle=angle, point_cs_box=p1, point_annulus=ann)
