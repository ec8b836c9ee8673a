"""Discrete layer potentials on a smooth closed boundary and open crack arcs.

Boundary densities live on 2n equispaced parameter nodes; the weakly
singular log kernel is integrated with the classical trig-exact splitting.

Crack densities live on m Chebyshev angles s_i, q = cos s, and come in two
parity classes that need different quadrature:

  * "even": values of a function smooth in q (trace sums, flux data).
    sigma * J is odd across the tips (J(s) = |z'(cos s)| sin s), so these
    integrals use the sine-span weights and sine resampling of sigma * J.
  * "odd": jump-type densities mu = sin(s) * (smooth in q).  mu * J is
    even across the tips, so the plain midpoint rule is the spectrally
    correct one, and resampling interpolates the sine series of mu itself.

Using one rule for both drops the crack quadrature to algebraic order.

Sign conventions: Gamma(x, y) = -(1/2 pi) log|x - y|; the double layer
kernel is d Gamma / d nu(source); crack normals point into the + side.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .curves import Crack, ClosedCurve
from .quadrature import (
    cheb_angles,
    midpoint_weight,
    sin_quad_weights,
    cos_coeff_matrix,
    sin_coeff_matrix,
    sin_eval_matrix,
    sin_series_deriv_matrix,
    cos_series_deriv_matrix,
    modal_log_tables,
    kress_log_matrix,
)

INV2PI = 1.0 / (2.0 * np.pi)
INV4PI = 1.0 / (4.0 * np.pi)

FINE_CAP = 4096


def fundamental(x, y) -> np.ndarray:
    """Gamma(x, y) = -(1/2 pi) log |x - y|."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float),
                       axis=-1)
    return -INV2PI * np.log(r)


def fundamental_grad(x, y) -> np.ndarray:
    """grad_x Gamma(x, y) = -(1/2 pi) (x - y) / |x - y|^2."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r2 = (d**2).sum(axis=-1, keepdims=True)
    return -INV2PI * d / r2


# -- grids --------------------------------------------------------------------


@dataclass
class BoundaryGrid:
    """2n equispaced nodes t_j = j pi / n on a smooth closed curve."""

    curve: ClosedCurve
    n: int
    t: np.ndarray = field(init=False, repr=False)
    points: np.ndarray = field(init=False, repr=False)
    speeds: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    kappa: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.t = np.arange(2 * self.n) * np.pi / self.n
        self.points = self.curve.point(self.t)
        v = self.curve.velocity(self.t)
        acc = self.curve.accel(self.t)
        self.speeds = np.linalg.norm(v, axis=-1)
        self.normals = self.curve.normal(self.t)
        cross = v[:, 0] * acc[:, 1] - v[:, 1] * acc[:, 0]
        self.kappa = cross / self.speeds**3
        # w @ f ~ int_dOmega f dsigma
        self.w = (np.pi / self.n) * self.speeds

    @property
    def size(self) -> int:
        return 2 * self.n

    def spacing(self) -> float:
        return float(np.pi * self.speeds.max() / self.n)


@dataclass
class CrackGrid:
    """m Chebyshev-angle nodes on one crack, with impedance samples."""

    crack: Crack
    m: int
    s: np.ndarray = field(init=False, repr=False)
    q: np.ndarray = field(init=False, repr=False)
    points: np.ndarray = field(init=False, repr=False)
    speed_q: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    kappa: np.ndarray = field(init=False, repr=False)
    J: np.ndarray = field(init=False, repr=False)
    w_odd: np.ndarray = field(init=False, repr=False)
    wJ: np.ndarray = field(init=False, repr=False)
    gp: np.ndarray = field(init=False, repr=False)
    gm: np.ndarray = field(init=False, repr=False)
    pp: np.ndarray = field(init=False, repr=False)
    pm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cu = self.crack.curve
        self._tree = None
        self.s = cheb_angles(self.m)
        self.q = np.cos(self.s)
        self.points = cu.point(self.q)
        self.speed_q = cu.speed(self.q)
        self.normals = cu.normal(self.q)
        self.kappa = cu.curvature(self.q)
        self.J = cu.angle_jacobian(self.s)
        self.w_odd = sin_quad_weights(self.m)
        # wJ @ f ~ int_Sigma f dsigma
        self.wJ = self.w_odd * self.J
        imp = self.crack.impedance
        self.gp = np.broadcast_to(np.asarray(imp.plus(self.q), dtype=float),
                                  self.q.shape).astype(float)
        self.gm = np.broadcast_to(np.asarray(imp.minus(self.q), dtype=float),
                                  self.q.shape).astype(float)
        self.pp = 0.5 * (self.gp + self.gm)
        self.pm = 0.5 * (self.gp - self.gm)

    def distances(self, pts) -> np.ndarray:
        """Distance from pts to the arc (polyline proxy, cached tree)."""
        if self._tree is None:
            poly = self.crack.curve.point(np.linspace(-1.0, 1.0, 2048))
            self._tree = cKDTree(poly)
        d, _ = self._tree.query(np.atleast_2d(np.asarray(pts, dtype=float)))
        return d


# -- boundary self operators ---------------------------------------------------


def single_layer_boundary(bg: BoundaryGrid) -> np.ndarray:
    """Nodal single layer on the closed boundary, log-split quadrature."""
    d = bg.points[:, None, :] - bg.points[None, :, :]
    r2 = (d**2).sum(-1)
    tdiff = bg.t[:, None] - bg.t[None, :]
    s2 = 4.0 * np.sin(0.5 * tdiff) ** 2
    np.fill_diagonal(r2, 1.0)
    np.fill_diagonal(s2, 1.0)
    smooth = -INV4PI * np.log(r2 / s2)
    np.fill_diagonal(smooth, -INV4PI * np.log(bg.speeds**2))
    KR = kress_log_matrix(bg.n)
    return (-INV4PI * KR + midpoint_weight(bg.n) * smooth) * bg.speeds


def double_layer_boundary(bg: BoundaryGrid) -> np.ndarray:
    """Nodal double layer K on the boundary; smooth kernel, diag -kappa/(4 pi)."""
    d = bg.points[:, None, :] - bg.points[None, :, :]
    r2 = (d**2).sum(-1)
    np.fill_diagonal(r2, 1.0)
    ker = INV2PI * (d * bg.normals[None, :, :]).sum(-1) / r2
    np.fill_diagonal(ker, -bg.kappa / (4.0 * np.pi))
    return ker * bg.w


# -- boundary layers evaluated at points ---------------------------------------


@functools.lru_cache(maxsize=16)
def trig_upsample_matrix(n_from: int, n_to: int) -> np.ndarray:
    """Trigonometric interpolation between equispaced periodic grids."""
    spec = np.fft.rfft(np.eye(n_from), axis=0)
    if n_from % 2 == 0 and n_to > n_from:
        spec[n_from // 2] *= 0.5
    out = np.fft.irfft(spec, n=n_to, axis=0) * (n_to / n_from)
    out.flags.writeable = False
    return out


# temporaries in the chunked evaluators stay under ~100 MB
_EVAL_BLOCK = 12_000_000


def _pts_chunks(npts: int, ncols: int):
    step = max(64, _EVAL_BLOCK // max(ncols, 1))
    for lo in range(0, npts, step):
        yield slice(lo, min(lo + step, npts))


def _boundary_kernels(bg: BoundaryGrid, pts: np.ndarray):
    d = pts[:, None, :] - bg.points[None, :, :]
    r2 = (d**2).sum(-1)
    return d, r2


def boundary_eval_matrices(bg: BoundaryGrid, pts, factor: int = 1):
    """(S, D) mapping nodal boundary densities to layer values at pts."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    src = bg if factor <= 1 else BoundaryGrid(bg.curve, bg.n * factor)
    U = None if factor <= 1 else trig_upsample_matrix(bg.size, src.size)
    S = np.empty((pts.shape[0], bg.size))
    D = np.empty_like(S)
    for sl in _pts_chunks(pts.shape[0], src.size):
        d, r2 = _boundary_kernels(src, pts[sl])
        Ss = (-INV4PI * np.log(r2)) * src.w
        Ds = (INV2PI * (d * src.normals[None, :, :]).sum(-1) / r2) * src.w
        S[sl] = Ss if U is None else Ss @ U
        D[sl] = Ds if U is None else Ds @ U
    return S, D


def boundary_grad_matrices(bg: BoundaryGrid, pts, factor: int = 1):
    """(GS, GD), shapes (N, 2, 2n): gradients of the layers at pts."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    src = bg if factor <= 1 else BoundaryGrid(bg.curve, bg.n * factor)
    U = None if factor <= 1 else trig_upsample_matrix(bg.size, src.size)
    GS = np.empty((pts.shape[0], 2, bg.size))
    GD = np.empty_like(GS)
    for sl in _pts_chunks(pts.shape[0], 4 * src.size):
        d, r2 = _boundary_kernels(src, pts[sl])
        Gs = -INV2PI * d / r2[..., None] * src.w[None, :, None]
        dn = (d * src.normals[None, :, :]).sum(-1)
        Gd = INV2PI * (src.normals[None, :, :] / r2[..., None]
                       - 2.0 * dn[..., None] * d / (r2**2)[..., None])
        Gd = Gd * src.w[None, :, None]
        Gs = np.swapaxes(Gs, 1, 2)
        Gd = np.swapaxes(Gd, 1, 2)
        GS[sl] = Gs if U is None else Gs @ U
        GD[sl] = Gd if U is None else Gd @ U
    return GS, GD


def boundary_eval_factor(bg: BoundaryGrid, pts, target: float = 4.0,
                         cap: int = 64) -> int:
    """Upsampling factor so node spacing stays below dist/target at pts."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = float(bg.curve.boundary_distance(pts).min())
    if d <= 0:
        return cap
    return int(np.clip(np.ceil(target * bg.spacing() / d), 1, cap))


def boundary_factor_bins(bg: BoundaryGrid, pts, target: float = 4.0,
                         cap: int = 64):
    """Group points by the power-of-two upsampling factor they need.

    Yields (mask, factor); bulk points away from the boundary land in the
    factor-1 bin so only the collar pays for the fine grid.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dist = np.maximum(bg.curve.boundary_distance(pts), 1e-300)
    need = np.maximum(target * bg.spacing() / dist, 1.0)
    fac = np.minimum(2.0 ** np.ceil(np.log2(need)), cap).astype(int)
    for f in np.unique(fac):
        yield fac == f, int(f)


def crack_fine_bins(cg: CrackGrid, pts, target: float = 6.0,
                    cap: int = FINE_CAP):
    """Group points by the fine-grid size their crack distance demands."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dist = np.maximum(cg.distances(pts), 1e-300)
    need = target * cg.crack.curve.length / dist
    k = np.ceil(np.log2(np.maximum(need / cg.m, 1.0)))
    fine = np.clip(cg.m * 2.0**k, cg.m, cap).astype(int)
    for f in np.unique(fine):
        yield fine == f, int(f)


# -- crack self operators -------------------------------------------------------


def log_chi_matrix(cg: CrackGrid) -> np.ndarray:
    """log of chi(t, s) = |z(cos t) - z(cos s)|^2 / (cos t - cos s)^2."""
    d = cg.points[:, None, :] - cg.points[None, :, :]
    r2 = (d**2).sum(-1)
    dq = cg.q[:, None] - cg.q[None, :]
    np.fill_diagonal(r2, 1.0)
    np.fill_diagonal(dq, 1.0)
    out = np.log(r2 / dq**2)
    np.fill_diagonal(out, 2.0 * np.log(cg.speed_q))
    return out


def _crack_weights(cg: CrackGrid, parity: str) -> np.ndarray:
    if parity == "even":
        return cg.wJ
    return midpoint_weight(cg.m) * cg.J


def single_layer_crack_self(cg: CrackGrid, parity: str = "even") -> np.ndarray:
    """On-arc single layer; modal log table plus smooth chi correction."""
    C, L = modal_log_tables(cg.m)
    if parity == "even":
        A = -INV2PI * (L @ sin_coeff_matrix(cg.m))
        A = A - INV4PI * log_chi_matrix(cg) * cg.w_odd
    else:
        A = -INV2PI * (C @ cos_coeff_matrix(cg.m))
        A = A - INV4PI * midpoint_weight(cg.m) * log_chi_matrix(cg)
    return A * cg.J


def double_layer_crack_self(cg: CrackGrid, parity: str = "odd") -> np.ndarray:
    """On-arc double layer K; continuous kernel with diag kappa/(4 pi)."""
    d = cg.points[:, None, :] - cg.points[None, :, :]
    r2 = (d**2).sum(-1)
    np.fill_diagonal(r2, 1.0)
    ker = INV2PI * (d * cg.normals[None, :, :]).sum(-1) / r2
    np.fill_diagonal(ker, cg.kappa / (4.0 * np.pi))
    return ker * _crack_weights(cg, parity)


def adjoint_layer_crack_self(cg: CrackGrid, parity: str = "even") -> np.ndarray:
    """On-arc adjoint double layer K'; same diagonal limit as K."""
    d = cg.points[:, None, :] - cg.points[None, :, :]
    r2 = (d**2).sum(-1)
    np.fill_diagonal(r2, 1.0)
    ker = -INV2PI * (d * cg.normals[:, None, :]).sum(-1) / r2
    np.fill_diagonal(ker, cg.kappa / (4.0 * np.pi))
    return ker * _crack_weights(cg, parity)


def hyper_layer_crack_self(cg: CrackGrid) -> np.ndarray:
    """Hypersingular operator via the tangential-derivative identity.

    T mu = (1/J) d/dt [ int Gamma(z(t), z(s)) mu'(s) ds ]; the flat-log part
    collapses to the exact mode map a_k -> -k a_k sin(kt) / (2J), and the
    smooth chi part is differentiated spectrally.  The inner integrand is
    even across the endpoints, so the midpoint rule is the right one there.
    """
    m = cg.m
    k = np.arange(1, m + 1)
    Tmod = -(sin_eval_matrix(cg.s, m) * k) @ sin_coeff_matrix(m) \
        / (2.0 * cg.J[:, None])
    Dmu = sin_series_deriv_matrix(m)
    G = -INV4PI * midpoint_weight(m) * (log_chi_matrix(cg) @ Dmu)
    Tsm = (cos_series_deriv_matrix(m) @ G) / cg.J[:, None]
    return Tmod + Tsm


# -- crack layers evaluated at points -------------------------------------------


def crack_min_distance(cg: CrackGrid, pts) -> float:
    return float(cg.distances(pts).min())


def crack_fine_size(cg: CrackGrid, pts, target: float = 6.0,
                    cap: int = FINE_CAP) -> int:
    """Fine-grid size so the quadrature resolves the nearest evaluation point."""
    dmin = crack_min_distance(cg, pts)
    L = cg.crack.curve.length
    if dmin <= 0:
        return cap
    return int(np.clip(np.ceil(target * L / dmin), cg.m, cap))


def _crack_resample(cg: CrackGrid, fine: int, parity: str):
    """Matrix taking nodal density values to (density * J) on the fine grid.

    Even densities are interpolated through the sine series of sigma * J;
    odd ones through the sine series of mu, with J applied on the fine grid.
    """
    sf = cheb_angles(fine)
    B = sin_eval_matrix(sf, cg.m) @ sin_coeff_matrix(cg.m)
    if parity == "even":
        R = B * cg.J
    else:
        Jf = cg.crack.curve.angle_jacobian(sf)
        R = Jf[:, None] * B
    return sf, R


def _fine_weights(fine: int, parity: str) -> np.ndarray:
    if parity == "even":
        return sin_quad_weights(fine)
    return np.full(fine, midpoint_weight(fine))


def crack_eval_matrices(cg: CrackGrid, pts, fine: int | None = None,
                        parity: str = "even"):
    """(S, D) mapping nodal crack densities to layer values at pts.

    Densities are resampled through their sine series, so nearby targets
    only need a finer quadrature, not a finer solve.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if fine is None:
        fine = crack_fine_size(cg, pts)
    sf, R = _crack_resample(cg, fine, parity)
    qf = np.cos(sf)
    zf = cg.crack.curve.point(qf)
    nf = cg.crack.curve.normal(qf)
    wf = _fine_weights(fine, parity)
    S = np.empty((pts.shape[0], cg.m))
    D = np.empty_like(S)
    for sl in _pts_chunks(pts.shape[0], fine):
        d = pts[sl, None, :] - zf[None, :, :]
        r2 = (d**2).sum(-1)
        S[sl] = ((-INV4PI * np.log(r2)) * wf) @ R
        D[sl] = ((INV2PI * (d * nf[None, :, :]).sum(-1) / r2) * wf) @ R
    return S, D


def crack_grad_matrices(cg: CrackGrid, pts, fine: int | None = None,
                        parity: str = "even"):
    """(GS, GD), shapes (N, 2, m): gradients of the crack layers at pts."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if fine is None:
        fine = crack_fine_size(cg, pts)
    sf, R = _crack_resample(cg, fine, parity)
    qf = np.cos(sf)
    zf = cg.crack.curve.point(qf)
    nf = cg.crack.curve.normal(qf)
    wf = _fine_weights(fine, parity)
    GS = np.empty((pts.shape[0], 2, cg.m))
    GD = np.empty_like(GS)
    for sl in _pts_chunks(pts.shape[0], 4 * fine):
        d = pts[sl, None, :] - zf[None, :, :]
        r2 = (d**2).sum(-1)
        Gs = (-INV2PI * d / r2[..., None]) * wf[None, :, None]
        dn = (d * nf[None, :, :]).sum(-1)
        Gd = INV2PI * (nf[None, :, :] / r2[..., None]
                       - 2.0 * dn[..., None] * d / (r2**2)[..., None])
        Gd = Gd * wf[None, :, None]
        GS[sl] = np.swapaxes(Gs, 1, 2) @ R
        GD[sl] = np.swapaxes(Gd, 1, 2) @ R
    return GS, GD


def crack_field_matrices(cg: CrackGrid, pts, fine: int | None = None):
    """(S_even, S_odd, D_odd) with one kernel pass.

    These are the three blocks a solved field needs: the single layer acts
    on both parity classes of psi, the double layer only on the jump mu.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if fine is None:
        fine = crack_fine_size(cg, pts)
    sf, Re = _crack_resample(cg, fine, "even")
    _, Ro = _crack_resample(cg, fine, "odd")
    qf = np.cos(sf)
    zf = cg.crack.curve.point(qf)
    nf = cg.crack.curve.normal(qf)
    we = _fine_weights(fine, "even")
    wo = _fine_weights(fine, "odd")
    Se = np.empty((pts.shape[0], cg.m))
    So = np.empty_like(Se)
    Do = np.empty_like(Se)
    for sl in _pts_chunks(pts.shape[0], fine):
        d = pts[sl, None, :] - zf[None, :, :]
        r2 = (d**2).sum(-1)
        ks = -INV4PI * np.log(r2)
        kd = INV2PI * (d * nf[None, :, :]).sum(-1) / r2
        Se[sl] = (ks * we) @ Re
        So[sl] = (ks * wo) @ Ro
        Do[sl] = (kd * wo) @ Ro
    return Se, So, Do


def crack_field_grads(cg: CrackGrid, pts, fine: int | None = None):
    """(GS_even, GS_odd, GD_odd), each (N, 2, m); see crack_field_matrices."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if fine is None:
        fine = crack_fine_size(cg, pts)
    sf, Re = _crack_resample(cg, fine, "even")
    _, Ro = _crack_resample(cg, fine, "odd")
    qf = np.cos(sf)
    zf = cg.crack.curve.point(qf)
    nf = cg.crack.curve.normal(qf)
    we = _fine_weights(fine, "even")
    wo = _fine_weights(fine, "odd")
    GSe = np.empty((pts.shape[0], 2, cg.m))
    GSo = np.empty_like(GSe)
    GDo = np.empty_like(GSe)
    for sl in _pts_chunks(pts.shape[0], 4 * fine):
        d = pts[sl, None, :] - zf[None, :, :]
        r2 = (d**2).sum(-1)
        gs = -INV2PI * d / r2[..., None]
        dn = (d * nf[None, :, :]).sum(-1)
        gd = INV2PI * (nf[None, :, :] / r2[..., None]
                       - 2.0 * dn[..., None] * d / (r2**2)[..., None])
        gst = np.swapaxes(gs, 1, 2)
        GSe[sl] = (gst * we) @ Re
        GSo[sl] = (gst * wo) @ Ro
        GDo[sl] = (np.swapaxes(gd, 1, 2) * wo) @ Ro
    return GSe, GSo, GDo


def normal_project(G: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Contract (N, 2, k) gradient matrices with per-point normals (N, 2)."""
    return np.einsum("icj,ic->ij", G, normals)
