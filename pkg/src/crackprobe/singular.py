"""Point-pole Robin fields on an enlarged domain, and flat references.

The field R(., y) is the log singularity Gamma(., y) plus a smooth corrector
that restores the crack impedance conditions and the constant exterior flux
d_nu R = -1/|d Omega~| on the enlarged boundary.  The flat reference R0 is
the half-plane function with constant impedance gamma0 on {x2 = 0}; close to
a crack point the two agree up to Holder-type corrections, which
``asymptotic_report`` measures empirically along a geometric pole ladder.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .curves import (
    ClosedCurve,
    Crack,
    CrackCurve,
    DilatedCurve,
    Impedance,
    sinh_graded_map,
)
from .forward import ABSORPTION_TOL, CrackData, ForwardSolver, Solution
from .potentials import fundamental, fundamental_grad
from .quadrature import cos_coeff_matrix, linear_fit, sin_coeff_matrix

POSITION_TOL = 1e-8
QUAD_EPS = 1e-12          # inner tolerance; the public contract is 1e-10
GRADE_MU_MAX = 2.0 ** 40


# -- enlarged domain -----------------------------------------------------------


@dataclass(frozen=True)
class EnlargedDomain:
    """Original domain plus a strictly larger one carrying the pole field.

    Shell markers (collar, shell, offset level set) are all measured from
    the ORIGINAL boundary; pole paths start on the exterior level set and
    walk inward.
    """

    base: ClosedCurve
    omega_tilde: ClosedCurve

    @classmethod
    def dilate(cls, base: ClosedCurve, factor: float = 1.3) -> "EnlargedDomain":
        if factor <= 1.0:
            raise ValueError("dilation factor must exceed 1")
        c = base.centroid()
        env = cls(base, DilatedCurve(base, float(factor), (c[0], c[1])))
        if env.clearance() <= 0.0:
            raise ValueError("enlarged domain does not strictly contain the base")
        return env

    def clearance(self) -> float:
        """min distance from the base boundary to the enlarged one.

        Negative when some base boundary point escapes, which dilate rejects.
        """
        pts = self.base.polyline(512)
        d = self.omega_tilde.boundary_distance(pts)
        inside = self.omega_tilde.contains(pts)
        if not bool(np.all(inside)):
            return -float(np.max(d[~inside]))
        return float(np.min(d))

    def base_distance(self, pts) -> np.ndarray:
        """Unsigned distance to the original boundary."""
        return self.base.boundary_distance(pts)

    def in_collar(self, pts, r: float) -> np.ndarray:
        """Exterior collar: outside the base domain, within r of it."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (~self.base.contains(pts)) & (self.base_distance(pts) <= r)

    def in_shell(self, pts, r1: float, r2: float) -> np.ndarray:
        """Two-sided shell r1 <= dist(., d Omega) <= r2."""
        d = self.base_distance(np.atleast_2d(np.asarray(pts, dtype=float)))
        return (d >= r1) & (d <= r2)

    def offset_points(self, r: float, count: int = 64) -> np.ndarray:
        """Points on the exterior level set dist(., Omega) = r.

        Built as the outward normal offset of the base boundary; valid while
        r stays below the inward feature size, and r must keep the points
        inside the enlarged domain.
        """
        t = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        pts = self.base.point(t) + r * self.base.normal(t)
        if not bool(np.all(self.omega_tilde.contains(pts))):
            raise ValueError("offset level set leaves the enlarged domain")
        return pts


# -- half-plane reference ------------------------------------------------------


def _halfplane_value_grad(gamma0: float, ys: np.ndarray, xs: np.ndarray):
    """Value and gradient at one point, pole side mapped to {x2 > 0}.

    Pole-side representation: Gamma(x, y) + Gamma(x, y*) + w(d, H) with
    d = x1 - y1, H = x2 + y2 and

        w = (gamma0 / 2 pi) int_0^inf e^{-gamma0 t} log(d^2 + (H+t)^2) dt,

    obtained by closing the Fourier-side solution of the impedance condition
    d_{x2} R0 = gamma0 R0 on {x2 = 0}.  H > 0 on the whole pole side, so the
    integrands are smooth; the substitution t = u / gamma0 puts the decay at
    unit scale for the adaptive quadrature.
    """
    d = xs[0] - ys[0]
    H = xs[1] + ys[1]
    r2 = d * d + (xs[1] - ys[1]) ** 2
    if r2 == 0.0:
        raise ValueError("evaluation point coincides with the pole")
    mirror = np.array([ys[0], -ys[1]])
    val = fundamental(xs, ys) + fundamental(xs, mirror)
    grd = fundamental_grad(xs, ys) + fundamental_grad(xs, mirror)
    if gamma0 > 0.0:
        inv2pi = 1.0 / (2.0 * np.pi)

        def ht(u):
            return H + u / gamma0

        w = quad(lambda u: np.exp(-u) * np.log(d * d + ht(u) ** 2),
                 0.0, np.inf, epsabs=QUAD_EPS, epsrel=QUAD_EPS, limit=400)[0]
        wx = quad(lambda u: np.exp(-u) * d / (d * d + ht(u) ** 2),
                  0.0, np.inf, epsabs=QUAD_EPS, epsrel=QUAD_EPS, limit=400)[0]
        wy = quad(lambda u: np.exp(-u) * ht(u) / (d * d + ht(u) ** 2),
                  0.0, np.inf, epsabs=QUAD_EPS, epsrel=QUAD_EPS, limit=400)[0]
        val = val + inv2pi * w
        grd = grd + np.array([2.0 * inv2pi * wx, 2.0 * inv2pi * wy])
    return float(val), grd


@dataclass(frozen=True)
class HalfSpaceRobin:
    """Flat-interface Robin function: pole in one half plane of {x2 = 0}.

    On the pole side it satisfies Delta R0 = -delta_y with the impedance
    condition read from that side; the poleless side carries the zero field.
    """

    gamma0: float
    pole: tuple[float, float]

    def __post_init__(self):
        if self.gamma0 < 0.0:
            raise ValueError("impedance gamma0 must be >= 0")
        if self.pole[1] == 0.0:
            raise ValueError("pole must lie off the interface")

    def _canonical(self):
        flip = 1.0 if self.pole[1] > 0.0 else -1.0
        return flip, np.array([self.pole[0], flip * self.pole[1]])

    def value(self, x) -> np.ndarray:
        return self.evaluate(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x)[1]

    def evaluate(self, x):
        """(values, gradients) at points x; zero on the poleless side."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        flip, ys = self._canonical()
        vals = np.zeros(pts.shape[0])
        grads = np.zeros_like(pts)
        for i, p in enumerate(pts):
            xs = np.array([p[0], flip * p[1]])
            if xs[1] < 0.0:
                continue
            v, g = _halfplane_value_grad(self.gamma0, ys, xs)
            vals[i] = v
            grads[i] = [g[0], flip * g[1]]
        if single:
            return vals[0], grads[0]
        return vals, grads


def halfspace_robin(gamma0: float, y, x):
    """Value and gradient of the flat-interface Robin function."""
    return HalfSpaceRobin(float(gamma0), (float(y[0]), float(y[1]))).evaluate(x)


# -- pole fields on the enlarged domain ---------------------------------------


def _nearest_param(curve: CrackCurve, y: np.ndarray, samples: int = 4097):
    q = np.linspace(-1.0, 1.0, samples)
    d = np.linalg.norm(curve.point(q) - y, axis=-1)
    i = int(np.argmin(d))
    q0 = float(q[i])
    # Newton on (z - y) . z' sharpens the sampled minimum to machine level,
    # so on-curve poles are detected and grading centers sit exactly
    if 0 < i < samples - 1:
        for _ in range(3):
            dz = curve.point(q0) - y
            v = curve.velocity(q0)
            acc = curve.accel(q0)
            fp = float(v @ v + dz @ acc)
            if fp <= 0.0:
                break
            step = float(dz @ v) / fp
            q0 = float(np.clip(q0 - step, -1.0, 1.0))
    return q0, float(np.linalg.norm(curve.point(q0) - y))


def _graded_crack(crack: Crack, q0: float, mu: float) -> Crack:
    w, dw, ddw = sinh_graded_map(q0, mu)
    imp = crack.impedance
    graded = Impedance(lambda sig: imp.plus(w(np.asarray(sig, dtype=float))),
                       lambda sig: imp.minus(w(np.asarray(sig, dtype=float))),
                       kind=imp.kind + "+graded")
    return Crack(crack.curve.reparametrized(w, dw, ddw), graded)


def _pick_grading(crack: Crack, y: np.ndarray, m: int):
    """Choose a node-clustering map when the pole undercuts the local mesh.

    Returns None, or a dict with the graded crack, the center q0 and the
    inverse parameter map (original q -> graded sigma).
    """
    curve = crack.curve
    q0, dist = _nearest_param(curve, y)
    sin0 = max(np.sqrt(max(1.0 - q0 * q0, 0.0)), np.sin(np.pi / (2.0 * m)))
    spacing = float(curve.speed(q0)) * sin0 * np.pi / m
    if dist >= 3.0 * spacing:
        return None
    speed0 = float(curve.speed(q0))
    mu = 4.0
    while mu < GRADE_MU_MAX:
        a = np.arcsinh(mu * (-1.0 - q0))
        b = np.arcsinh(mu * (1.0 - q0))
        sig_c = -(a + b) / (b - a)
        dw_c = np.cosh(0.5 * (a * (1.0 - sig_c) + b * (1.0 + sig_c))) \
            * (b - a) / (2.0 * mu)
        local = speed0 * dw_c * np.sqrt(max(1.0 - sig_c ** 2, 1e-12)) * np.pi / m
        if local <= dist / 3.0:
            break
        mu *= 2.0
    a = np.arcsinh(mu * (-1.0 - q0))
    b = np.arcsinh(mu * (1.0 - q0))

    def inverse(qv):
        qv = np.asarray(qv, dtype=float)
        return (2.0 * np.arcsinh(mu * (qv - q0)) - (a + b)) / (b - a)

    return {"q0": q0, "mu": float(mu), "crack": _graded_crack(crack, q0, mu),
            "inverse": inverse}


@dataclass
class RobinField:
    """One pole field: exact log part plus a solved corrector.

    Evaluation adds the closed-form singular part to the corrector, so the
    singularity carries no discretization error.  ``shift`` pins the gauge
    (zero boundary mean) in the insulating case and is 0 otherwise.
    """

    env: EnlargedDomain
    pole: np.ndarray
    corrector: Solution
    cracks_input: list
    shift: float = 0.0
    gradings: dict = field(default_factory=dict)

    @property
    def solver(self) -> ForwardSolver:
        return self.corrector.solver

    def eval(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (fundamental(pts, self.pole) + self.corrector.eval(pts)
                + self.shift)

    def grad(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return fundamental_grad(pts, self.pole) + self.corrector.grad(pts)

    def boundary_values(self) -> np.ndarray:
        """Nodal trace of R on the enlarged boundary."""
        bg = self.solver.bg
        return (fundamental(bg.points, self.pole) + self.corrector.phi
                + self.shift)

    def solver_param(self, i: int, q) -> np.ndarray:
        """Original crack parameter q -> parameter of the solver's curve."""
        if i in self.gradings:
            return self.gradings[i]["inverse"](q)
        return np.asarray(q, dtype=float)

    def crack_plus_data(self, i: int, sig: float) -> dict:
        """Trace data of the full field on the + face at solver parameter sig.

        Interpolates the corrector densities through their parity series
        (cosine for the even part, sine for the jump) and adds the exact log
        part.  d_tau is taken along increasing arc length; d_nu uses the
        Robin identity the discrete solution satisfies.
        """
        solver = self.solver
        cg = solver.cgs[i]
        m = solver.m
        sig = float(np.clip(sig, -1.0, 1.0))
        s0 = float(np.arccos(sig))
        A = cos_coeff_matrix(m) @ self.corrector.a[i]
        B = sin_coeff_matrix(m) @ self.corrector.mu[i]
        k_a = np.arange(m)
        k_b = np.arange(1, m + 1)
        v_plus = 0.5 * (A @ np.cos(k_a * s0) + B @ np.sin(k_b * s0))
        dv_ds = 0.5 * (-(A * k_a) @ np.sin(k_a * s0)
                       + (B * k_b) @ np.cos(k_b * s0))
        curve = cg.crack.curve
        z0 = curve.point(sig)
        vel = curve.velocity(sig)
        speed = float(np.linalg.norm(vel))
        sin_s = np.sin(s0)
        jac = speed * sin_s
        gG = fundamental_grad(z0, self.pole)
        dG_ds = float(gG @ vel) * (-sin_s)
        value = float(fundamental(z0, self.pole)) + v_plus + self.shift
        # d(arc)/ds = -J, so the arc-length derivative flips sign
        d_tau = -(dG_ds + dv_ds) / jac if jac > 0.0 else np.nan
        gamma_p = float(cg.crack.impedance.plus(sig))
        return {
            "value": value,
            "d_tau": float(d_tau),
            "d_nu": gamma_p * value,
            "point": z0,
            "tangent": vel / speed,
            "normal": np.asarray(curve.normal(sig), dtype=float),
            "gamma_plus": gamma_p,
        }


def robin_function(env: EnlargedDomain, cracks, y, n: int = 96, m: int = 96,
                   grade: str | None = "auto",
                   solver: ForwardSolver | None = None) -> RobinField:
    """Build the pole field R(., y) on the enlarged domain.

    The corrector solves the crack problem with Neumann datum
    -1/|d Omega~| - d_n Gamma and crack data canceling Gamma's impedance
    defect.  Poles closer to a crack than a few local mesh widths trigger a
    sinh-graded reparametrization of that crack (grade="auto"); pass
    grade=None to forbid it, e.g. when reusing a shared solver for poles
    known to be far away.
    """
    cracks = [cracks] if isinstance(cracks, Crack) else list(cracks)
    y = np.asarray(y, dtype=float)
    if y.shape != (2,):
        raise ValueError("pole must be a point in the plane")
    if not bool(np.all(env.omega_tilde.contains(y[None]))):
        raise ValueError("pole must lie inside the enlarged domain")
    if float(env.omega_tilde.boundary_distance(y[None])[0]) <= POSITION_TOL:
        raise ValueError("pole too close to the enlarged boundary")

    gradings = {}
    solver_cracks = list(cracks)
    for i, ck in enumerate(cracks):
        _, dist = _nearest_param(ck.curve, y)
        if dist <= POSITION_TOL:
            raise ValueError("pole lies on a crack")
        if grade == "auto":
            g = _pick_grading(ck, y, m)
            if g is not None:
                gradings[i] = g
                solver_cracks[i] = g["crack"]

    if solver is None or gradings:
        solver = ForwardSolver(env.omega_tilde, solver_cracks, n=n, m=m)
    L = solver.bg.w.sum()

    def g_datum(t):
        pts = solver.bg.curve.point(t)
        nrm = solver.bg.curve.normal(t)
        return (-1.0 / L
                - np.sum(fundamental_grad(pts, y) * nrm, axis=-1))

    data = []
    for ck in solver_cracks:
        gp, gm = ck.impedance.plus, ck.impedance.minus

        def rho_p(q, _c=ck.curve, _g=gp):
            pts = _c.point(q)
            nrm = _c.normal(q)
            return (_g(q) * fundamental(pts, y)
                    - np.sum(fundamental_grad(pts, y) * nrm, axis=-1))

        def rho_m(q, _c=ck.curve, _g=gm):
            pts = _c.point(q)
            nrm = _c.normal(q)
            return (np.sum(fundamental_grad(pts, y) * nrm, axis=-1)
                    + _g(q) * fundamental(pts, y))

        data.append(CrackData(rho_p, rho_m))

    corrector = solver.solve_neumann(g_datum, data or None)
    shift = 0.0
    if solver.total_absorption() < ABSORPTION_TOL:
        bg = solver.bg
        shift = -float(bg.w @ (fundamental(bg.points, y) + corrector.phi)) / L
    return RobinField(env, y, corrector, cracks, shift, gradings)


# -- empirical asymptotics -----------------------------------------------------


def _differenced_exponent(h: np.ndarray, e: np.ndarray):
    """Exponent of the h-dependent part of e ~ C + A h^beta.

    Consecutive differences cancel the constant; for the exact model the
    log-log slope of |e_k - e_{k+1}| equals beta.
    """
    d = np.abs(np.diff(e))
    keep = d > 0.0
    if keep.sum() < 2:
        return float("nan"), float("nan"), float("nan")
    slope, _, r2 = linear_fit(np.log(h[:-1][keep]), np.log(d[keep]))
    resid = _fit_rms(np.log(h[:-1][keep]), np.log(d[keep]))
    return slope, r2, resid


def _fit_rms(x: np.ndarray, y: np.ndarray) -> float:
    slope, icpt, _ = linear_fit(x, y)
    return float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))


def _param_at_arc_offset(curve: CrackCurve, q0: float, delta: float) -> float:
    grid = np.linspace(-1.0, 1.0, 8193)
    arc = curve.arclength(grid)
    target = float(curve.arclength(q0)) + delta
    if target <= arc[0] or target >= arc[-1]:
        raise ValueError("arc offset leaves the crack")
    return float(np.interp(target, arc, grid))


def asymptotic_report(seed: RobinField, crack_index: int = 0,
                      x0_q: float = 0.0, r0: float | None = None,
                      rungs: int = 6, alpha: float = 1.0,
                      alpha_tilde: float = 0.5) -> dict:
    """Measure how fast the pole field approaches its flat reference.

    Along the ladder y_k = x0 + h_k nu (ratio 1/2, h_0 = r0/8) the report
    fits log-log exponents for

      * |R - R0| at the foot point x0: fitted on consecutive differences,
        so the smooth background the flat model cannot reproduce (an O(1)
        offset between the two regular parts) drops out;
      * |grad R| and |grad R - grad R0| at the companion crack point one h
        to the side, where the pole term shows its full |z - y|^{-1} rate.

    The seed field only supplies geometry and resolution; its own pole is
    ignored.  Each rung rebuilds the field with auto-grading, which keeps
    the pole at least three local mesh widths off the crack, so all rungs
    are usable; fewer than 6 requested rungs are rejected.
    """
    if rungs < 6:
        raise ValueError("need at least 6 ladder rungs")
    crack = seed.cracks_input[crack_index]
    curve = crack.curve
    x0 = np.asarray(curve.point(x0_q), dtype=float)
    nu0 = np.asarray(curve.normal(x0_q), dtype=float)
    gamma0 = float(crack.impedance.plus(x0_q))

    arc0 = float(curve.arclength(x0_q))
    tip_room = min(arc0, curve.length - arc0)
    if r0 is None:
        r0 = tip_room
    h = r0 * 0.5 ** np.arange(3, 3 + rungs)
    if 2.0 * h[0] >= tip_room:
        raise ValueError("ladder too wide for the tip clearance at x0")

    side = 1.0 if arc0 <= curve.length - arc0 else -1.0
    n, m = seed.solver.n, seed.solver.m

    e_val = np.zeros(rungs)
    g_mag = np.zeros(rungs)
    g_diff = np.zeros(rungs)
    r_vals = np.zeros(rungs)
    mid_field = None
    for k, hk in enumerate(h):
        yk = x0 + hk * nu0
        fld = robin_function(seed.env, seed.cracks_input, yk, n=n, m=m)
        if k == rungs // 2:
            mid_field = fld

        foot = fld.crack_plus_data(crack_index,
                                   fld.solver_param(crack_index, x0_q))
        ref = HalfSpaceRobin(gamma0, (0.0, hk))
        v0, _ = ref.evaluate(np.array([0.0, 0.0]))
        e_val[k] = abs(foot["value"] - v0)
        r_vals[k] = foot["value"]

        qk = _param_at_arc_offset(curve, x0_q, side * hk)
        off = fld.crack_plus_data(crack_index,
                                  fld.solver_param(crack_index, qk))
        dtau = side * off["d_tau"]   # orient along the offset direction
        dnu = off["d_nu"]
        v0o, g0o = ref.evaluate(np.array([hk, 0.0]))
        g_mag[k] = float(np.hypot(dtau, dnu))
        g_diff[k] = float(np.hypot(dtau - g0o[0], dnu - g0o[1]))

    exp_rdiff, r2_rdiff, rms_rdiff = _differenced_exponent(h, e_val)
    exp_grad, _, r2_grad = linear_fit(np.log(h), np.log(g_mag))
    rms_grad = _fit_rms(np.log(h), np.log(g_mag))
    exp_gdiff, r2_gdiff, rms_gdiff = _differenced_exponent(h, g_diff)

    # near-tip gradient constant sup |grad R| r^{1-at} |z-y|^{at}, recorded
    tip_c = 0.0
    near_minus_tip = arc0 <= curve.length - arc0
    for frac in (0.4, 0.2, 0.1, 0.05):
        r_t = frac * tip_room
        target_arc = r_t if near_minus_tip else curve.length - r_t
        q_t = _param_at_arc_offset(curve, x0_q, target_arc - arc0)
        tr = mid_field.crack_plus_data(crack_index,
                                       mid_field.solver_param(crack_index, q_t))
        dist = float(np.linalg.norm(tr["point"] - mid_field.pole))
        grad_mag = float(np.hypot(tr["d_tau"], tr["d_nu"]))
        tip_c = max(tip_c, grad_mag * r_t ** (1.0 - alpha_tilde)
                    * dist ** alpha_tilde)

    return {
        "x0": [float(x0[0]), float(x0[1])],
        "gamma0": gamma0,
        "r0": float(r0),
        "h": h.tolist(),
        "r_minus_r0": e_val.tolist(),
        "r_values": r_vals.tolist(),
        "grad_r": g_mag.tolist(),
        "grad_diff": g_diff.tolist(),
        "exponents": {
            "r_diff": float(exp_rdiff),
            "grad": float(exp_grad),
            "grad_diff": float(exp_gdiff),
        },
        "fits": {
            "r_diff": {"r2": float(r2_rdiff), "rms": float(rms_rdiff)},
            "grad": {"r2": float(r2_grad), "rms": float(rms_grad)},
            "grad_diff": {"r2": float(r2_gdiff), "rms": float(rms_gdiff)},
        },
        "targets": {
            "r_diff": float(alpha),
            "grad": -1.0,
            "grad_diff": float(alpha ** 2 - 1.0),
        },
        "tip_gradient_constant": float(tip_c),
        "rungs": int(rungs),
    }
