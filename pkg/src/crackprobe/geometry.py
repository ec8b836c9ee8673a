"""A-priori class bookkeeping and crack-comparison metrics.

Implements the Hausdorff distance on sampled curves, the exterior reachable
set V_l (tube-plus-terminal-cone construction on a uniform grid) and the
l-distance, the Hausdorff variant restricted to crack points that lie on the
boundary of V_l.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.spatial.distance import directed_hausdorff

from .curves import ClosedCurve, CrackCurve


@dataclass(frozen=True)
class AprioriData:
    """A-priori class constants: all geometric statements are relative to these."""

    r0: float
    M: float
    D: float
    gamma_bar: float
    alpha: float
    n: int = 2

    def __post_init__(self):
        for name in ("r0", "M", "D"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma_bar < 0:
            raise ValueError("gamma_bar must be >= 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.n != 2:
            raise ValueError("n must be 2 (planar implementation)")

    @property
    def aperture(self) -> float:
        """Default cone aperture ratio A = 1/(2M)."""
        return 1.0 / (2.0 * self.M)

    @property
    def delta_geo(self) -> float:
        """Default geometric sampling resolution."""
        return 1e-3 * self.r0


@dataclass(frozen=True)
class ConeParams:
    """Terminal cone: base radius l, height A*l along the axis."""

    A: float
    l: float

    def __post_init__(self):
        if self.A <= 0 or self.l <= 0:
            raise ValueError("cone parameters A and l must be positive")

    @property
    def height(self) -> float:
        return self.A * self.l

    @property
    def reach(self) -> float:
        """Maximum base offset of the terminal corridor behind a vertex."""
        return (self.A + 2.0) * self.l


def sample_curve(curve, spacing: float, max_points: int = 200_000) -> np.ndarray:
    """Points along the curve, uniform in arc length at the given spacing."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    t0, t1 = curve.param_range
    dense = np.linspace(t0, t1, 4096, endpoint=not curve.closed)
    pts = curve.point(dense)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    gaps = int(min(max(np.ceil(arc[-1] / spacing), 2), max_points))
    targets = np.linspace(0.0, arc[-1], gaps + 1, endpoint=not curve.closed)
    t = np.interp(targets, arc, dense)
    return curve.point(t)


def hausdorff_distance(S1: np.ndarray, S2: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two sampled point sets."""
    S1 = np.asarray(S1, dtype=float)
    S2 = np.asarray(S2, dtype=float)
    if S1.size == 0 or S2.size == 0:
        raise ValueError("hausdorff_distance: empty point set")
    d12 = directed_hausdorff(S1, S2)[0]
    d21 = directed_hausdorff(S2, S1)[0]
    return max(d12, d21)


# -- reachable set ------------------------------------------------------------


@dataclass
class ReachableSet:
    """Grid realization of V_l with its tube core and frontier cone vertices."""

    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray          # V_l = tube | vertices
    tube_mask: np.ndarray
    cone: ConeParams
    r: float
    cell: float
    anchor_points: np.ndarray  # (N, 2) frontier cone vertices Q
    anchor_axes: np.ndarray    # (N, 2) unit axes from Q back toward the base
    _tree: cKDTree | None = field(default=None, repr=False)

    def _points(self) -> np.ndarray:
        ii, jj = np.nonzero(self.mask)
        return np.column_stack([self.xs[jj], self.ys[ii]])

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self._points())
        return self._tree

    def distance(self, pts) -> np.ndarray:
        """Distance from pts to the nearest V_l grid point."""
        d, _ = self.tree().query(np.atleast_2d(np.asarray(pts, dtype=float)))
        return d

    def membership_tol(self) -> float:
        """How close a point must come to V_l to count as lying on its boundary."""
        return 1.5 * np.sqrt(2.0) * self.cell

    def on_boundary(self, pts, tol: float | None = None) -> np.ndarray:
        tol = self.membership_tol() if tol is None else tol
        return self.distance(pts) <= tol

    def coverage(self, pts) -> float:
        """Fraction of pts lying inside V_l (nearest-cell test)."""
        return float(np.mean(self.distance(pts) <= 0.75 * self.cell * np.sqrt(2)))


def reachable_set(dom: ClosedCurve, cracks, cone: ConeParams, r: float,
                  grid_n: int = 384, bbox=None, n_dirs: int = 64,
                  ) -> ReachableSet:
    """Reachable set V_l: tube flood fill from the exterior shell Gamma_r
    plus a terminal-cone admissibility test on the frontier.

    The tube keeps clearance l from both cracks; path points stay in Omega
    union its closed r-collar.  A frontier grid point v is a cone vertex if
    some axis direction admits a base point z = v - beta*d, A*l <= beta <=
    cone.reach, landing in the tube, such that the swept region (cone of
    opening 1/A up to height A*l, then a radius-l corridor out to z) contains
    no crack sample.  The swept-region test is exact against the sampled
    cracks and nested across l, which makes the grid realization monotone:
    shrinking l enlarges V_l.  Path containment along the terminal corridor
    is enforced at the base and vertex only (exact for convex domains).
    """
    if r <= 0:
        raise ValueError("r must be positive")
    cracks = [c for c in cracks if c is not None]

    bpoly = dom.polyline(4096)
    if bbox is None:
        lo = bpoly.min(axis=0) - (r + cone.l + cone.height)
        hi = bpoly.max(axis=0) + (r + cone.l + cone.height)
    else:
        lo = np.asarray(bbox[0], dtype=float)
        hi = np.asarray(bbox[1], dtype=float)
    xs = np.linspace(lo[0], hi[0], grid_n)
    ys = np.linspace(lo[1], hi[1], grid_n)
    cell = max(xs[1] - xs[0], ys[1] - ys[0])

    spacing = cell
    crack_pts = (np.vstack([sample_curve(c, spacing, max_points=40_000)
                            for c in cracks]) if cracks else None)
    if crack_pts is not None:
        clearance = cKDTree(bpoly).query(crack_pts)[0].min()
        if r >= clearance:
            raise ValueError(
                f"r = {r} reaches past the crack clearance {clearance:.4g} "
                "to the outer boundary")

    X, Y = np.meshgrid(xs, ys)
    P = np.column_stack([X.ravel(), Y.ravel()])
    if crack_pts is not None:
        crack_tree = cKDTree(crack_pts)
        dist_crack = crack_tree.query(P)[0].reshape(grid_n, grid_n)
    else:
        crack_tree = None
        dist_crack = np.full((grid_n, grid_n), np.inf)

    inside = dom.contains(P).reshape(grid_n, grid_n)
    bdist = dom.boundary_distance(P).reshape(grid_n, grid_n)
    allowed = inside | (bdist <= r)          # Omega union its r-collar
    traversable = allowed & (dist_crack >= cone.l)

    labels, _ = ndimage.label(traversable)
    shell = traversable & ~inside & (np.abs(bdist - r) <= 1.5 * cell)
    seed_labels = np.unique(labels[shell])
    seed_labels = seed_labels[seed_labels > 0]
    if seed_labels.size == 0:
        raise ValueError("exterior shell Gamma_r is not traversable at this l")
    tube = np.isin(labels, seed_labels)

    vertex_mask = np.zeros_like(tube)
    anchors_q = []
    anchors_axis = []
    if crack_tree is not None:
        band_iters = max(int(np.ceil(cone.reach / cell)) + 1, 1)
        band = ndimage.binary_dilation(tube, iterations=band_iters)
        # only the near-crack frontier can host new vertices
        band &= ~tube & allowed & (dist_crack < cone.l)
        ii, jj = np.nonzero(band)
        # tile-sort so each chunk is spatially tight for the KD ball query
        tile = np.lexsort((jj // 16, ii // 16))
        ii, jj = ii[tile], jj[tile]
        cand = np.column_stack([xs[jj], ys[ii]])
        ang = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        betas = np.arange(cone.height, cone.reach + cell, cell)

        def grid_lookup(pts):
            bi = np.round((pts[..., 1] - ys[0]) / (ys[1] - ys[0])).astype(int)
            bj = np.round((pts[..., 0] - xs[0]) / (xs[1] - xs[0])).astype(int)
            okb = (bi >= 0) & (bi < grid_n) & (bj >= 0) & (bj < grid_n)
            return np.where(okb, tube[np.clip(bi, 0, grid_n - 1),
                                      np.clip(bj, 0, grid_n - 1)], False)

        ok_any = np.zeros(len(cand), dtype=bool)
        best_axis = np.zeros((len(cand), 2))
        chunk = 128
        for a in range(0, len(cand), chunk):
            v = cand[a:a + chunk]
            center = 0.5 * (v.min(axis=0) + v.max(axis=0))
            rad = (np.linalg.norm(v - center, axis=1).max()
                   + float(np.hypot(cone.reach, cone.l + spacing)))
            near = crack_tree.query_ball_point(center, rad)
            beta_free = np.full((len(v), n_dirs), np.inf)
            if near:
                w = crack_pts[near]
                rel = v[:, None, :] - w[None, :, :]        # (C, S, 2)
                tau = rel @ dirs.T                         # (C, S, D)
                perp2 = (rel**2).sum(-1)[..., None] - tau**2
                radius = np.minimum(tau / cone.A, cone.l) + 0.5 * spacing
                block = (tau > 1e-12) & (perp2 < radius**2)
                beta_free = np.where(block, tau, np.inf).min(axis=1)
            z = (v[:, None, None, :]
                 - betas[None, None, :, None] * dirs[None, :, None, :])
            z_ok = grid_lookup(z)                          # (C, D, B)
            usable = z_ok & (betas[None, None, :] <= beta_free[..., None])
            dir_ok = usable.any(axis=-1)                   # (C, D)
            got = dir_ok.any(axis=-1)
            ok_any[a:a + chunk] = got
            first = np.argmax(dir_ok, axis=-1)
            best_axis[a:a + chunk] = -dirs[first]          # vertex -> base
        vertex_mask[ii[ok_any], jj[ok_any]] = True
        anchors_q = cand[ok_any]
        anchors_axis = best_axis[ok_any]

    mask = tube | vertex_mask
    anchors_q = np.asarray(anchors_q, dtype=float).reshape(-1, 2)
    anchors_axis = np.asarray(anchors_axis, dtype=float).reshape(-1, 2)
    return ReachableSet(xs=xs, ys=ys, mask=mask, tube_mask=tube, cone=cone,
                        r=r, cell=cell, anchor_points=anchors_q,
                        anchor_axes=anchors_axis)


def l_distance(S1: CrackCurve, S2: CrackCurve, vl: ReachableSet,
               spacing: float | None = None) -> float:
    """Hausdorff variant restricted to crack points on the boundary of V_l.

    A directed term whose restriction is empty contributes 0.
    """
    spacing = 2.0 * vl.cell if spacing is None else spacing
    P1 = sample_curve(S1, spacing)
    P2 = sample_curve(S2, spacing)
    on1 = vl.on_boundary(P1)
    on2 = vl.on_boundary(P2)
    t1 = cKDTree(P1)
    t2 = cKDTree(P2)
    d12 = float(t2.query(P1[on1])[0].max()) if on1.any() else 0.0
    d21 = float(t1.query(P2[on2])[0].max()) if on2.any() else 0.0
    return max(d12, d21)


# -- scenario sanity ----------------------------------------------------------


def geometry_report(dom: ClosedCurve, cracks, apriori: AprioriData) -> dict:
    """Clearance/regularity diagnostics of a crack configuration.

    Records which a-priori hypotheses hold; callers decide how strict to be.
    """
    report: dict = {"n_cracks": len(cracks)}
    bpoly = dom.polyline(4096)
    bt = cKDTree(bpoly)
    q = np.linspace(-1.0, 1.0, 1001)
    clearances = []
    curvature = []
    lengths = []
    tips_inside = []
    for crack in cracks:
        curve = crack.curve if hasattr(crack, "curve") else crack
        pts = curve.point(q)
        clearances.append(float(bt.query(pts)[0].min()))
        curvature.append(float(np.max(np.abs(curve.curvature(q)))))
        lengths.append(curve.length)
        tips_inside.append(bool(np.all(dom.contains(curve.tips()))))
    report["crack_boundary_clearance"] = min(clearances) if clearances else None
    report["max_curvature"] = max(curvature) if curvature else None
    report["crack_lengths"] = lengths
    report["tips_inside"] = all(tips_inside) if tips_inside else True
    if len(cracks) == 2:
        c0 = cracks[0].curve if hasattr(cracks[0], "curve") else cracks[0]
        c1 = cracks[1].curve if hasattr(cracks[1], "curve") else cracks[1]
        report["inter_crack_hausdorff"] = hausdorff_distance(
            c0.point(q), c1.point(q))
    if clearances:
        report["clearance_ge_r0"] = min(clearances) >= apriori.r0
    if curvature:
        report["curvature_le_M"] = max(curvature) <= apriori.M / apriori.r0
    if lengths:
        report["length_le_D"] = max(lengths) <= apriori.D
    gammas = [c.impedance.max_value() for c in cracks if hasattr(c, "impedance")]
    if gammas:
        report["impedance_le_bound"] = max(gammas) <= apriori.gamma_bar
    return report
