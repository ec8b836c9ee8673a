"""Probe function f(y, w): boundary-data form, crack-integral form, and the
identity connecting them, plus blow-up scans, reconstruction and impedance
recovery built on top of it.

Two routes to the same number:

  * f_from_dn pairs the pole-field traces against the difference of two
    discrete boundary maps (all that measurements provide);
  * f_from_cracks evaluates the three crack integrals directly from the
    one-sided trace data of the two fields, split over Sigma1 minus Sigma2,
    Sigma2 minus Sigma1 and the overlap.

They must agree for poles held away from the cracks; that cross-check is the
module's central invariant.  The reconstruction scan replaces the unknown
crack field by the crack-free pole field on both slots, which turns f(y, y)
into a bounded data-driven indicator that peaks on the crack; the threshold
front it yields then seeds a least-squares fit of a segment crack against
the measured map itself.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .curves import Crack, CrackCurve, Impedance
from .dnmap import BoundaryBasis, DiscreteBoundaryMap, assemble_map
from .forward import ForwardSolver, Solution
from .geometry import ReachableSet, hausdorff_distance, sample_curve
from .potentials import fundamental
from .quadrature import (
    cos_coeff_matrix,
    gauss_panels,
    graded_edges,
    sin_coeff_matrix,
)
from .singular import POSITION_TOL, EnlargedDomain, RobinField, robin_function

SCAN_MODES = ("data-driven", "crack-integral")
HOMOGENEOUS_TOL = 1e-12
EDGE_GAP = 1e-13


# -- probe paths and profiles ---------------------------------------------------


@dataclass(frozen=True)
class ProbePath:
    """A ladder of probe points y_k = anchor + h_k * axis, h_k decreasing."""

    anchor: np.ndarray
    axis: np.ndarray
    ladder: np.ndarray

    def __post_init__(self):
        anchor = np.asarray(self.anchor, dtype=float).reshape(2)
        axis = np.asarray(self.axis, dtype=float).reshape(2)
        nrm = float(np.linalg.norm(axis))
        if nrm == 0.0:
            raise ValueError("probe axis must be a nonzero vector")
        ladder = np.asarray(self.ladder, dtype=float).ravel()
        if ladder.size == 0:
            raise ValueError("ladder must contain at least one offset")
        if np.any(ladder <= 0.0):
            raise ValueError("ladder offsets must be positive")
        if np.any(np.diff(ladder) >= 0.0):
            raise ValueError("ladder must be strictly decreasing")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "axis", axis / nrm)
        object.__setattr__(self, "ladder", ladder)

    @classmethod
    def geometric(cls, anchor, axis, h0: float, rungs: int,
                  ratio: float = 0.5) -> "ProbePath":
        if rungs < 1:
            raise ValueError("need at least one rung")
        if not 0.0 < ratio < 1.0:
            raise ValueError("ladder ratio must lie in (0, 1)")
        return cls(anchor, axis, h0 * ratio ** np.arange(rungs))

    def points(self) -> np.ndarray:
        return self.anchor + self.ladder[:, None] * self.axis

    def validate(self, env: EnlargedDomain, cracks=(),
                 min_dist: float = POSITION_TOL) -> np.ndarray:
        """Check every rung lies in the enlarged domain, off the cracks."""
        pts = self.points()
        if not bool(np.all(env.omega_tilde.contains(pts))):
            raise ValueError("probe path leaves the enlarged domain")
        for ck in cracks:
            d = _crack_distance(ck.curve, pts)
            if float(np.min(d)) < min_dist:
                raise ValueError("probe path touches a crack")
        return pts


@dataclass
class IndicatorProfile:
    """Sampled f(y(h), y(h)) along one probe path."""

    anchor: np.ndarray
    axis: np.ndarray
    h: np.ndarray
    values: np.ndarray
    mode: str
    failed_at: int | None = None
    note: str = ""

    def __post_init__(self):
        if self.mode not in SCAN_MODES:
            raise ValueError(f"mode must be one of {SCAN_MODES}")
        self.h = np.asarray(self.h, dtype=float).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.h.shape != self.values.shape:
            raise ValueError("h and values must have matching lengths")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")
        if self.h.size and (np.any(self.h <= 0.0)
                            or np.any(np.diff(self.h) >= 0.0)):
            raise ValueError("profile offsets must be positive and decreasing")

    @property
    def samples(self) -> list:
        return list(zip(self.h.tolist(), self.values.tolist()))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def coarse_median(self, frac: float = 1.0 / 3.0,
                      min_rungs: int = 2) -> float:
        """Median |f| over the coarse (largest-h) rungs; threshold base."""
        if self.values.size == 0:
            return 0.0
        k = min(max(min_rungs, int(np.ceil(frac * self.values.size))),
                self.values.size)
        return float(np.median(np.abs(self.values[:k])))


# -- crack trace interpolation ---------------------------------------------------


class _CrackTrace:
    """One-sided traces of a field on a crack, through its parity series.

    A and B are the cosine/sine coefficient vectors of the trace sum and
    jump densities in the angle of the SOLVER's crack parameter; param_map
    sends the original q to that parameter (identity unless the field was
    solved on a regraded copy).  The optional pole adds the exact log part,
    and shift is the gauge constant baked into the full field; one-sided
    fluxes come from the impedance conditions the field satisfies, which
    see the field with the shift removed.
    """

    def __init__(self, crack: Crack, A: np.ndarray, B: np.ndarray,
                 param_map=None, pole=None, shift: float = 0.0):
        self.crack = crack
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.m = self.A.size
        self.param_map = param_map if param_map is not None else (lambda q: q)
        self.pole = None if pole is None else np.asarray(pole, dtype=float)
        self.shift = float(shift)

    def at(self, q) -> dict:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        sig = np.clip(np.asarray(self.param_map(q), dtype=float), -1.0, 1.0)
        s0 = np.arccos(sig)
        ka = np.arange(self.m)
        kb = np.arange(1, self.m + 1)
        even = 0.5 * (np.cos(np.outer(s0, ka)) @ self.A)
        odd = 0.5 * (np.sin(np.outer(s0, kb)) @ self.B)
        vp = even + odd
        vm = even - odd
        curve = self.crack.curve
        pts = curve.point(q)
        if self.pole is not None:
            base = fundamental(pts, self.pole) + self.shift
            vp = vp + base
            vm = vm + base
        gp = np.broadcast_to(
            np.asarray(self.crack.impedance.plus(q), dtype=float), q.shape)
        gm = np.broadcast_to(
            np.asarray(self.crack.impedance.minus(q), dtype=float), q.shape)
        return {
            "points": pts,
            "normals": curve.normal(q),
            "plus": vp,
            "minus": vm,
            "flux_plus": gp * (vp - self.shift),
            "flux_minus": -gm * (vm - self.shift),
        }


class _FieldView:
    """Uniform face the crack-integral engine sees: traces + field eval."""

    def __init__(self, cracks, traces, pole, eval_fn, grad_fn):
        self.cracks = list(cracks)
        self.traces = list(traces)
        self.pole = pole
        self.eval = eval_fn
        self.grad = grad_fn

    @classmethod
    def from_robin(cls, fld: RobinField) -> "_FieldView":
        m = fld.solver.m
        CM, SM = cos_coeff_matrix(m), sin_coeff_matrix(m)
        traces = []
        for i, ck in enumerate(fld.cracks_input):
            traces.append(_CrackTrace(
                ck, CM @ fld.corrector.a[i], SM @ fld.corrector.mu[i],
                param_map=(lambda q, _i=i: fld.solver_param(_i, q)),
                pole=fld.pole, shift=fld.shift))
        return cls(fld.cracks_input, traces, np.asarray(fld.pole, float),
                   fld.eval, fld.grad)

    @classmethod
    def from_solution(cls, sol: Solution) -> "_FieldView":
        m = sol.solver.m
        CM, SM = cos_coeff_matrix(m), sin_coeff_matrix(m)
        traces = []
        for i, cg in enumerate(sol.solver.cgs):
            rp, rm = sol.rho[i]
            if max(np.max(np.abs(rp)), np.max(np.abs(rm))) > HOMOGENEOUS_TOL:
                raise ValueError(
                    "crack integrals need homogeneous crack data")
            traces.append(_CrackTrace(cg.crack, CM @ sol.a[i], SM @ sol.mu[i]))
        return cls([cg.crack for cg in sol.solver.cgs], traces, None,
                   sol.eval, sol.grad)


# -- geometric split of the crack sets -------------------------------------------


def _crack_distance(curve: CrackCurve, pts, samples: int = 2048) -> np.ndarray:
    qs = np.linspace(-1.0, 1.0, samples)
    tree = cKDTree(curve.point(qs))
    d, _ = tree.query(np.atleast_2d(np.asarray(pts, dtype=float)))
    return d


def _view_pack(view: _FieldView, samples: int = 2048):
    """KDTree over dense samples of all cracks of a view, with back-pointers."""
    if not view.cracks:
        return None
    qs = np.linspace(-1.0, 1.0, samples)
    pts, cidx, cpar = [], [], []
    for j, ck in enumerate(view.cracks):
        pts.append(ck.curve.point(qs))
        cidx.append(np.full(samples, j, dtype=int))
        cpar.append(qs)
    return (cKDTree(np.vstack(pts)), np.concatenate(cidx),
            np.concatenate(cpar))


def _split_intervals(curve: CrackCurve, pack, tol: float,
                     samples: int = 1024) -> list:
    """Partition [-1, 1] into (qa, qb, near) runs against the other crack set.

    near means distance <= tol everywhere on the piece; transition points
    are bisected to machine resolution of the distance level set.
    """
    tree = pack[0]
    qs = np.linspace(-1.0, 1.0, samples)
    d, _ = tree.query(curve.point(qs))
    near = d <= tol

    def is_near(q: float) -> bool:
        dd, _ = tree.query(curve.point(np.array([q])))
        return bool(dd[0] <= tol)

    cuts = [-1.0]
    flags = [bool(near[0])]
    for k in range(samples - 1):
        if near[k] == near[k + 1]:
            continue
        lo, hi = float(qs[k]), float(qs[k + 1])
        for _ in range(45):
            mid = 0.5 * (lo + hi)
            if is_near(mid) == near[k]:
                lo = mid
            else:
                hi = mid
        cuts.append(0.5 * (lo + hi))
        flags.append(bool(near[k + 1]))
    cuts.append(1.0)
    return [(cuts[i], cuts[i + 1], flags[i])
            for i in range(len(flags)) if cuts[i + 1] - cuts[i] > 1e-12]


def _newton_refine(curve: CrackCurve, pts: np.ndarray,
                   q: np.ndarray) -> np.ndarray:
    """Sharpen seeded nearest-point parameters via (z - p) . z' = 0."""
    q = q.copy()
    for _ in range(3):
        dz = curve.point(q) - pts
        v = curve.velocity(q)
        den = (np.einsum("ij,ij->i", v, v)
               + np.einsum("ij,ij->i", dz, curve.accel(q)))
        den = np.where(den <= 0.0, np.inf, den)
        q = np.clip(q - np.einsum("ij,ij->i", dz, v) / den, -1.0, 1.0)
    return q


def _correspond(view: _FieldView, pack, pts: np.ndarray):
    """Nearest (crack index, parameter) on the view for each point."""
    tree, cidx, cpar = pack
    _, k = tree.query(pts)
    j = cidx[k]
    q = cpar[k].copy()
    for jj in np.unique(j):
        sel = j == jj
        q[sel] = _newton_refine(view.cracks[jj].curve, pts[sel], q[sel])
    return q, j


def _traces_at(view: _FieldView, q: np.ndarray, j: np.ndarray) -> dict:
    out = None
    for jj in np.unique(j):
        sel = j == jj
        t = view.traces[jj].at(q[sel])
        if out is None:
            out = {k: np.zeros((len(q),) + v.shape[1:]) for k, v in t.items()}
        for k, v in t.items():
            out[k][sel] = v
    return out


def _foot(curve: CrackCurve, p: np.ndarray):
    qs = np.linspace(-1.0, 1.0, 2049)
    d = np.linalg.norm(curve.point(qs) - p, axis=-1)
    q0 = float(_newton_refine(curve, p[None], np.array([qs[np.argmin(d)]]))[0])
    return q0, float(np.linalg.norm(curve.point(q0) - p))


def _pole_feet(curve: CrackCurve, poles) -> list:
    feet = []
    for p in poles:
        if p is None:
            continue
        q0, dist = _foot(curve, np.asarray(p, dtype=float))
        if 0.0 < dist < 0.3 * curve.length:
            feet.append((q0, max(dist / float(curve.speed(q0)), 1e-12)))
    return feet


def _interval_rule(curve: CrackCurve, qa: float, qb: float, npanels: int,
                   nper: int, feet) -> tuple:
    """Gauss panels on [qa, qb]: tip-graded ends, dyadic refinement at the
    parameter feet of nearby poles (log-singular factors in the integrand)."""
    span = qb - qa
    # grade both ends: tips carry the sqrt jump densities, interior split
    # points sit a split-tolerance away from another crack's tip, where the
    # partner field has an r^{-1/2} gradient layer
    edges = graded_edges(qa, qb, npanels, 3.0, "both")
    extra = []
    for q0, dq in feet:
        if q0 < qa - 0.5 * span or q0 > qb + 0.5 * span:
            continue
        lad = dq * 2.0 ** np.arange(48)
        lad = lad[lad < 2.0 * span]
        cand = np.concatenate([q0 - lad[::-1], [q0], q0 + lad])
        cand = cand[(cand > qa) & (cand < qb)]
        if cand.size:
            extra.append(cand)
    if extra:
        edges = np.unique(np.concatenate([edges, *extra]))
        edges = edges[np.concatenate([[True], np.diff(edges) > EDGE_GAP])]
        edges[0], edges[-1] = qa, qb
    return gauss_panels(edges, nper)


# -- the crack-integral engine ----------------------------------------------------


def _crack_form(view1: _FieldView, view2: _FieldView, split_tol: float,
                npanels: int | None = None, nper: int = 10) -> dict:
    """Three-piece crack integral of the pairing identity.

    only1 integrates u2 [d_nu u1] - [u1] d_nu u2 over Sigma1 minus Sigma2,
    only2 its role-swapped mirror, and overlap the bracket difference
    [u2 d_nu1 u1]_1 - [u1 d_nu2 u2]_2 on the common part, with the second
    field's faces mapped onto the first crack's orientation.

    The tolerance is clamped from below: points of one crack closer to the
    other than the near-field evaluation can resolve must count as overlap,
    or the off-crack field values under the integrand degrade.
    """
    lengths = [ck.curve.length for v in (view1, view2) for ck in v.cracks]
    if lengths:
        split_tol = max(split_tol, 5e-4 * min(lengths))
    pack1 = _view_pack(view1)
    pack2 = _view_pack(view2)
    poles = [view1.pole, view2.pole]
    parts = {"only1": 0.0, "only2": 0.0, "overlap": 0.0}

    for i, ck in enumerate(view1.cracks):
        curve = ck.curve
        ivals = (_split_intervals(curve, pack2, split_tol) if pack2
                 else [(-1.0, 1.0, False)])
        feet = _pole_feet(curve, poles)
        base_np = npanels or max(12, 3 * view1.traces[i].m // 16)
        for qa, qb, near in ivals:
            np_i = max(6, int(np.ceil(base_np * (qb - qa) / 2.0)))
            nodes, wq = _interval_rule(curve, qa, qb, np_i, nper, feet)
            t1 = view1.traces[i].at(nodes)
            meas = wq * curve.speed(nodes)
            psi1 = t1["flux_plus"] - t1["flux_minus"]
            if not near:
                v2 = view2.eval(t1["points"])
                dn2 = np.einsum("ij,ij->i", view2.grad(t1["points"]),
                                t1["normals"])
                mu1 = t1["plus"] - t1["minus"]
                parts["only1"] += float(meas @ (v2 * psi1 - mu1 * dn2))
            else:
                q2, j2 = _correspond(view2, pack2, t1["points"])
                t2 = _traces_at(view2, q2, j2)
                s = np.sign(np.einsum("ij,ij->i", t1["normals"],
                                      t2["normals"]))
                s[s == 0.0] = 1.0
                pos = s > 0.0
                u2p = np.where(pos, t2["plus"], t2["minus"])
                u2m = np.where(pos, t2["minus"], t2["plus"])
                f2p = np.where(pos, t2["flux_plus"], -t2["flux_minus"])
                f2m = np.where(pos, t2["flux_minus"], -t2["flux_plus"])
                integ = (u2p * t1["flux_plus"] - u2m * t1["flux_minus"]
                         - (t1["plus"] * f2p - t1["minus"] * f2m))
                parts["overlap"] += float(meas @ integ)

    for j, ck in enumerate(view2.cracks):
        curve = ck.curve
        ivals = (_split_intervals(curve, pack1, split_tol) if pack1
                 else [(-1.0, 1.0, False)])
        feet = _pole_feet(curve, poles)
        base_np = npanels or max(12, 3 * view2.traces[j].m // 16)
        for qa, qb, near in ivals:
            if near:
                continue   # the overlap is charged once, on the first crack
            np_j = max(6, int(np.ceil(base_np * (qb - qa) / 2.0)))
            nodes, wq = _interval_rule(curve, qa, qb, np_j, nper, feet)
            t2 = view2.traces[j].at(nodes)
            meas = wq * curve.speed(nodes)
            psi2 = t2["flux_plus"] - t2["flux_minus"]
            mu2 = t2["plus"] - t2["minus"]
            v1 = view1.eval(t2["points"])
            dn1 = np.einsum("ij,ij->i", view1.grad(t2["points"]),
                            t2["normals"])
            parts["only2"] += float(meas @ (mu2 * dn1 - v1 * psi2))
    return parts


def _default_split_tol(views) -> float:
    lengths = [ck.curve.length for v in views for ck in v.cracks]
    return 2e-3 * min(lengths) if lengths else 1.0


# -- the two faces of f ------------------------------------------------------------


def _same_curve(c1, c2) -> bool:
    if c1 is c2:
        return True
    t = np.array([0.0, 1.3, 2.9, 4.4])
    return bool(np.allclose(c1.point(t), c2.point(t), atol=1e-12))


def _check_dn_pair(M1: DiscreteBoundaryMap, M2: DiscreteBoundaryMap,
                   basis: BoundaryBasis) -> None:
    M1.compatible(M2)
    if M1.kind != "DN" or M1.patch is not None:
        raise ValueError("probe pairing needs global DN maps")
    if basis.signature() != M1.basis_sig:
        raise ValueError("basis does not match the maps")


def f_from_dn(M1: DiscreteBoundaryMap, M2: DiscreteBoundaryMap,
              R1: RobinField, R2: RobinField, basis: BoundaryBasis,
              y=None, w=None, interior_ok: bool = False) -> float:
    """f(y, w) from boundary data: pair the pole-field traces on the
    measured boundary against the difference of the two discrete maps.

    y, w are optional cross-checks against the field poles.  The identity
    lives on poles OUTSIDE the measured domain; poles inside the probed
    region are a heuristic continuation and must be flagged by interior_ok.
    """
    _check_dn_pair(M1, M2, basis)
    if not _same_curve(R1.env.base, R2.env.base):
        raise ValueError("fields live on different base domains")
    if not _same_curve(basis.bg.curve, R1.env.base):
        raise ValueError("basis grid does not live on the field domain")
    for label, fld, given in (("y", R1, y), ("w", R2, w)):
        pole = np.asarray(fld.pole, dtype=float)
        if given is not None and not np.allclose(
                np.asarray(given, dtype=float), pole, atol=POSITION_TOL):
            raise ValueError(f"{label} does not match the field pole")
        if float(fld.env.base.boundary_distance(pole[None])[0]) \
                <= POSITION_TOL:
            raise ValueError(f"pole {label} sits on the measured boundary")
        if bool(fld.env.base.contains(pole[None])[0]) and not interior_ok:
            raise ValueError(
                f"pole {label} lies inside the measured domain; "
                "pass interior_ok=True for the heuristic regime")
    c = basis.pairing(R1.eval(basis.bg.points))
    d = basis.pairing(R2.eval(basis.bg.points))
    return float(d @ ((M1.matrix - M2.matrix) @ c))


def trace_half_norm(m: DiscreteBoundaryMap, coeffs: np.ndarray) -> float:
    """Sobolev trial norm of a coefficient vector in the map's own frame."""
    return float(np.linalg.norm(m.rfac @ np.asarray(coeffs, dtype=float)))


def f_from_cracks(field1: RobinField, field2: RobinField,
                  split_tol: float | None = None,
                  npanels: int | None = None, parts: bool = False):
    """f(y, w) by direct crack integration of the two pole fields.

    field1 carries the first configuration and the pole y, field2 the
    second and w.  Either configuration may be crack-free.  Poles may sit
    near a crack (the quadrature refines toward their feet) but not on one.
    """
    if not _same_curve(field1.env.base, field2.env.base):
        raise ValueError("fields live on different base domains")
    view1 = _FieldView.from_robin(field1)
    view2 = _FieldView.from_robin(field2)
    for ck in view2.cracks:
        if _foot(ck.curve, view1.pole)[1] <= POSITION_TOL:
            raise ValueError("pole y lies on a crack of the second family")
    for ck in view1.cracks:
        if _foot(ck.curve, view2.pole)[1] <= POSITION_TOL:
            raise ValueError("pole w lies on a crack of the first family")
    tol = split_tol if split_tol is not None \
        else _default_split_tol((view1, view2))
    out = _crack_form(view1, view2, tol, npanels)
    val = out["only1"] + out["only2"] + out["overlap"]
    return (val, out) if parts else val


def identity_residual(sol1: Solution, sol2: Solution,
                      split_tol: float | None = None,
                      npanels: int | None = None) -> float:
    """Relative defect of the pairing identity on two solved fields.

    LHS pairs (Lambda1 - Lambda2) applied to u1's trace against u2's trace
    on the outer boundary; RHS is the three-piece crack integral.  Both
    solutions must live on the same boundary grid and carry homogeneous
    crack data.
    """
    bg1, bg2 = sol1.solver.bg, sol2.solver.bg
    if bg1.size != bg2.size or not np.allclose(bg1.points, bg2.points):
        raise ValueError("solutions live on different boundary grids")
    view1 = _FieldView.from_solution(sol1)
    view2 = _FieldView.from_solution(sol2)
    cross = sol2.solver.solve_dirichlet(sol1.phi)
    lhs = float(bg1.w @ ((sol1.g - cross.g) * sol2.phi))
    tol = split_tol if split_tol is not None \
        else _default_split_tol((view1, view2))
    out = _crack_form(view1, view2, tol, npanels)
    rhs = out["only1"] + out["only2"] + out["overlap"]
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + np.finfo(float).eps)


# -- indicator scans ----------------------------------------------------------------


def indicator_scan(M1: DiscreteBoundaryMap | None,
                   M2: DiscreteBoundaryMap | None,
                   env: EnlargedDomain, path: ProbePath,
                   basis: BoundaryBasis | None = None,
                   mode: str = "data-driven",
                   cracks1=(), cracks2=(), n: int = 96, m: int = 96,
                   split_tol: float | None = None) -> IndicatorProfile:
    """Sample f(y, y) along a probe path.

    data-driven mode uses the measured maps with the crack-free pole field
    on both slots (one shared solver, one linear solve per rung);
    crack-integral mode rebuilds the true pole fields of the two given
    configurations at every rung and integrates directly.  A failed rung
    truncates the profile and records the failure index.
    """
    if mode not in SCAN_MODES:
        raise ValueError(f"mode must be one of {SCAN_MODES}")
    pts = path.validate(env, cracks=tuple(cracks1) + tuple(cracks2))
    values = []
    failed_at = None
    note = ""
    if mode == "data-driven":
        if M1 is None or M2 is None or basis is None:
            raise ValueError("data-driven scans need both maps and the basis")
        _check_dn_pair(M1, M2, basis)
        dM = M1.matrix - M2.matrix
        shared = ForwardSolver(env.omega_tilde, [], n=n, m=m)
        for k in range(path.ladder.size):
            try:
                fld = robin_function(env, [], pts[k], n=n, m=m,
                                     grade=None, solver=shared)
                c = basis.pairing(fld.eval(basis.bg.points))
                values.append(float(c @ (dM @ c)))
            except (ValueError, ArithmeticError) as exc:
                failed_at, note = k, str(exc)
                break
    else:
        for k in range(path.ladder.size):
            try:
                R1 = robin_function(env, list(cracks1), pts[k], n=n, m=m)
                R2 = robin_function(env, list(cracks2), pts[k], n=n, m=m)
                values.append(f_from_cracks(R1, R2, split_tol=split_tol))
            except (ValueError, ArithmeticError) as exc:
                failed_at, note = k, str(exc)
                break
    kept = path.ladder[:len(values)]
    return IndicatorProfile(path.anchor, path.axis, kept,
                            np.asarray(values), mode, failed_at, note)


# -- reconstruction -------------------------------------------------------------------


def _scan_anchor(anchor, axis, env, basis, dM, shared, h0, rungs, ratio,
                 threshold_factor, margin):
    """Threshold scan along one anchor/axis; shrinks h0 until the ladder
    stays inside the domain with the required boundary margin."""
    h = h0
    pts = None
    for _ in range(12):
        cand = anchor + (h * ratio ** np.arange(rungs))[:, None] * axis
        inside = env.base.contains(cand)
        deep = env.base_distance(cand) >= margin
        if bool(np.all(inside & deep)):
            pts = cand
            break
        h *= ratio
    rec = {"anchor": anchor.tolist(), "axis": axis.tolist(), "hit": False,
           "h": [], "values": [], "above": [], "h_star": None, "front": None}
    if pts is None:
        rec["note"] = "no valid ladder inside the domain"
        return rec
    ladder = h * ratio ** np.arange(rungs)
    values = []
    for k in range(rungs):
        try:
            fld = robin_function(env, [], pts[k], n=shared.n, m=shared.m,
                                 grade=None, solver=shared)
            c = basis.pairing(fld.eval(basis.bg.points))
            values.append(float(c @ (dM @ c)))
        except (ValueError, ArithmeticError) as exc:
            rec["note"] = str(exc)
            break
    values = np.asarray(values)
    ladder = ladder[:values.size]
    rec["h"] = ladder.tolist()
    rec["values"] = values.tolist()
    if values.size == 0:
        return rec
    k_coarse = min(max(2, int(np.ceil(values.size / 3.0))), values.size)
    thresh = threshold_factor * float(np.median(np.abs(values[:k_coarse])))
    above = np.nonzero(np.abs(values) > thresh)[0]
    rec["threshold"] = thresh
    rec["above"] = above.tolist()
    if above.size:
        k_star = int(above[-1])   # smallest exceeding offset
        rec["hit"] = True
        rec["h_star"] = float(ladder[k_star])
        rec["front"] = (anchor + ladder[k_star] * axis).tolist()
    return rec


def _fit_segment_map(M_target: DiscreteBoundaryMap, basis: BoundaryBasis,
                     env: EnlargedDomain, front: np.ndarray,
                     impedance: Impedance, m_fit: int,
                     iters: int = 60) -> tuple:
    """Levenberg-Marquardt fit of a segment crack to the measured map.

    Parameters are the two endpoints; the initial guess is the principal
    line through the threshold front points.  The misfit is the Frobenius
    distance between the candidate map and the measured one, so the stage
    uses nothing beyond the data the scan already had.
    """
    rad = env.base.length / (2.0 * np.pi)
    c = front.mean(axis=0)
    _, _, Vt = np.linalg.svd(front - c)
    d = Vt[0]
    proj = (front - c) @ d
    lo, hi = float(proj.min()), float(proj.max())
    if hi - lo < 0.05 * rad:
        lo, hi = -0.1 * rad, 0.1 * rad
    x = np.concatenate([c + lo * d, c + hi * d])
    inner_margin = 0.02 * rad

    def feasible(xv) -> bool:
        ends = xv.reshape(2, 2)
        if not bool(np.all(env.base.contains(ends))):
            return False
        if float(np.min(env.base.boundary_distance(ends))) < inner_margin:
            return False
        return float(np.linalg.norm(ends[1] - ends[0])) > 0.02 * rad

    def model(xv) -> np.ndarray:
        crk = Crack(CrackCurve.segment(xv[:2], xv[2:]), impedance)
        Mc = assemble_map(basis, [crk], kind="DN", m=m_fit)
        return (Mc.matrix - M_target.matrix).ravel()

    r = model(x)
    cost = float(r @ r)
    cost0 = cost
    lam = 1e-3
    step = 1e-5 * rad
    used = 0
    for it in range(iters):
        used = it + 1
        J = np.empty((r.size, 4))
        for p in range(4):
            xp = x.copy()
            xp[p] += step
            J[:, p] = (model(xp) - r) / step
        JTJ = J.T @ J
        JTr = J.T @ r
        accepted = False
        for _ in range(8):
            try:
                dx = np.linalg.solve(JTJ + lam * np.diag(np.diag(JTJ))
                                     + 1e-30 * np.eye(4), JTr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            xn = x - dx
            if not feasible(xn):
                lam *= 10.0
                continue
            rn = model(xn)
            cn = float(rn @ rn)
            if cn < cost:
                x, r = xn, rn
                drop = (cost - cn) / max(cost, np.finfo(float).tiny)
                cost = cn
                lam = max(lam / 3.0, 1e-14)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if drop < 1e-12 or float(np.linalg.norm(dx)) < 1e-12 * rad:
            break
    return x[:2], x[2:], {"cost0": cost0, "cost": cost, "iters": used}


def reconstruct_crack(M_measured: DiscreteBoundaryMap,
                      M_reference: DiscreteBoundaryMap,
                      env: EnlargedDomain, anchors, axes=None, *,
                      basis: BoundaryBasis,
                      h0: float | None = None, rungs: int = 8,
                      ratio: float = 0.5, threshold_factor: float = 10.0,
                      refine: str | None = "segment",
                      impedance: Impedance | None = None,
                      truth=None, n: int = 96, m: int = 96,
                      threads: int = 1, max_scans: int | None = None,
                      margin: float | None = None) -> dict:
    """Locate a crack from a measured map and its crack-free reference.

    Stage one scans the data-driven indicator along every anchor/axis and
    keeps, per anchor, the smallest offset whose value exceeds the adaptive
    threshold (threshold_factor times the median over the coarse rungs);
    the exceeding points form the front.  Stage two (refine="segment") fits
    a segment crack to the measured map itself, seeded by the principal
    line through the front.  Returns a JSON-ready summary; d_h is filled
    when the true curve is supplied.
    """
    t0 = time.perf_counter()
    _check_dn_pair(M_measured, M_reference, basis)
    if isinstance(anchors, ReachableSet):
        A = np.asarray(anchors.anchor_points, dtype=float)
        X = np.asarray(anchors.anchor_axes, dtype=float)
    else:
        A = np.atleast_2d(np.asarray(anchors, dtype=float))
        if A.size and axes is None:
            raise ValueError("explicit anchors need explicit axes")
        X = np.atleast_2d(np.asarray(axes, dtype=float)) if A.size else A
    if A.size == 0:
        raise ValueError("empty probe anchor set")
    if X.shape != A.shape:
        raise ValueError("anchors and axes must pair up")
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    if max_scans is not None and len(A) > max_scans:
        keep = np.linspace(0, len(A) - 1, max_scans).round().astype(int)
        A, X = A[keep], X[keep]

    rad = env.base.length / (2.0 * np.pi)
    if h0 is None:
        h0 = 0.5 * rad
    if margin is None:
        # keep poles resolvable by the basis: trace peak width ~ distance
        margin = max(0.02 * rad, 3.0 * env.base.length
                     / (2.0 * np.pi * basis.count))
    dM = M_measured.matrix - M_reference.matrix
    shared = ForwardSolver(env.omega_tilde, [], n=n, m=m)
    # warm the shared factorization before fanning out
    robin_function(env, [], env.base.centroid() + np.array([0.13 * rad, 0.0]),
                   n=n, m=m, grade=None, solver=shared)

    def work(i: int) -> dict:
        return _scan_anchor(A[i], X[i], env, basis, dM, shared, h0, rungs,
                            ratio, threshold_factor, margin)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, range(len(A))))
    else:
        records = [work(i) for i in range(len(A))]

    front = np.asarray([r["front"] for r in records if r["hit"]], dtype=float)
    result = {
        "anchors": int(len(A)),
        "hits": int(front.shape[0] if front.size else 0),
        "d_h": None,
        "runtime": 0.0,
        "mode": "data-driven",
        "threshold_factor": float(threshold_factor),
        "rungs": int(rungs),
        "front_points": front.tolist() if front.size else [],
        "estimate": front.tolist() if front.size else [],
        "segment": None,
        "fit": None,
        "scans": records,
    }

    if refine not in (None, "segment"):
        raise ValueError("refine must be None or 'segment'")
    if refine == "segment" and front.shape[0] >= 2:
        imp = impedance if impedance is not None else Impedance.insulating()
        p0, p1, fit = _fit_segment_map(M_measured, basis, env, front, imp, m)
        seg = CrackCurve.segment(p0, p1)
        est = sample_curve(seg, max(seg.length / 256.0, 1e-6))
        result["segment"] = [p0.tolist(), p1.tolist()]
        result["fit"] = fit
        result["estimate"] = est.tolist()

    if truth is not None and result["estimate"]:
        t_pts = np.atleast_2d(np.asarray(truth, dtype=float)) \
            if not hasattr(truth, "point") \
            else sample_curve(truth, max(truth.length / 512.0, 1e-6))
        result["d_h"] = float(hausdorff_distance(
            np.asarray(result["estimate"]), t_pts))
    result["runtime"] = time.perf_counter() - t0
    return result


# -- impedance recovery -----------------------------------------------------------------


def estimate_impedance(sol: Solution, i: int = 0, rho: float | None = None,
                       apriori=None, u_floor: float = 1e-6,
                       offsets=(0.02, 0.04, 0.06),
                       n_samples: int = 33) -> dict:
    """Recover gamma+- along crack i of a solved field as flux / trace.

    Traces come from the solution's parity series; one-sided fluxes are
    measured independently of the solver's Robin closure, by extrapolating
    grad u . nu from three offset curves on each face down to the crack.
    Samples inside the tip windows of width rho (default r0/8 from the
    a-priori data, else an eighth of the length) are not taken; samples
    where |u| drops under u_floor are returned invalid.
    """
    cg = sol.solver.cgs[i]
    curve = cg.crack.curve
    L = curve.length
    if rho is None:
        rho = (apriori.r0 / 8.0) if apriori is not None else L / 8.0
    if not 0.0 < rho < 0.5 * L:
        raise ValueError("tip window must leave room for samples")

    qs = np.linspace(-1.0, 1.0, 4097)
    arc = curve.arclength(qs)
    targets = np.linspace(rho, L - rho, n_samples)
    q = np.interp(targets, arc, qs)

    mloc = sol.solver.m
    A = cos_coeff_matrix(mloc) @ sol.a[i]
    B = sin_coeff_matrix(mloc) @ sol.mu[i]
    s0 = np.arccos(np.clip(q, -1.0, 1.0))
    even = 0.5 * (np.cos(np.outer(s0, np.arange(mloc))) @ A)
    odd = 0.5 * (np.sin(np.outer(s0, np.arange(1, mloc + 1))) @ B)
    u_plus = even + odd
    u_minus = even - odd

    pts = curve.point(q)
    nrm = curve.normal(q)
    offs = np.asarray(offsets, dtype=float) * L
    flux = {}
    for side in (1.0, -1.0):
        F = np.stack([
            np.einsum("ij,ij->i", sol.grad(pts + side * e * nrm), nrm)
            for e in offs])
        coef = np.polyfit(offs, F, deg=min(2, offs.size - 1))
        flux[side] = coef[-1]     # extrapolated to the face

    valid_plus = np.abs(u_plus) >= u_floor
    valid_minus = np.abs(u_minus) >= u_floor
    gp = np.where(valid_plus, flux[1.0] / np.where(valid_plus, u_plus, 1.0),
                  np.nan)
    gm = np.where(valid_minus,
                  -flux[-1.0] / np.where(valid_minus, u_minus, 1.0), np.nan)
    return {
        "q": q,
        "arc": targets,
        "gamma_plus": gp,
        "gamma_minus": gm,
        "valid_plus": valid_plus,
        "valid_minus": valid_minus,
        "median_plus": float(np.median(gp[valid_plus]))
        if np.any(valid_plus) else float("nan"),
        "median_minus": float(np.median(gm[valid_minus]))
        if np.any(valid_minus) else float("nan"),
        "rho": float(rho),
        "offsets": offs.tolist(),
    }


# -- emission ---------------------------------------------------------------------------


def profiles_csv(path: str, profiles) -> None:
    """One row per (profile, rung)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["anchor_x", "anchor_y", "axis_x", "axis_y",
                    "mode", "h", "value"])
        for p in profiles:
            for hk, vk in zip(p.h, p.values):
                w.writerow([f"{p.anchor[0]:.12g}", f"{p.anchor[1]:.12g}",
                            f"{p.axis[0]:.12g}", f"{p.axis[1]:.12g}",
                            p.mode, f"{hk:.12g}", f"{vk:.17g}"])


def impedance_csv(path: str, est: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "arc", "gamma_plus", "valid_plus",
                    "gamma_minus", "valid_minus"])
        for k in range(len(est["q"])):
            w.writerow([f"{est['q'][k]:.12g}", f"{est['arc'][k]:.12g}",
                        f"{est['gamma_plus'][k]:.17g}",
                        int(est["valid_plus"][k]),
                        f"{est['gamma_minus'][k]:.17g}",
                        int(est["valid_minus"][k])])
