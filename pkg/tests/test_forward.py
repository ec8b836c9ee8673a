"""Forward solver tests: kernel oracles, jump relations, manufactured fields."""

import numpy as np
import pytest
from scipy.integrate import quad

from crackprobe.curves import Circle, Crack, CrackCurve, Ellipse, Impedance
from crackprobe.forward import CrackData, ForwardSolver
from crackprobe.potentials import (
    BoundaryGrid,
    CrackGrid,
    boundary_eval_factor,
    boundary_eval_matrices,
    crack_eval_matrices,
    crack_grad_matrices,
    double_layer_boundary,
    double_layer_crack_self,
    adjoint_layer_crack_self,
    hyper_layer_crack_self,
    single_layer_boundary,
    single_layer_crack_self,
)

RNG = np.random.default_rng(7)


# -- manufactured harmonic field ------------------------------------------------

W0 = 0.2 + 0.1j
P_OUT = np.array([1.8, 1.2])


def u_star(pts):
    pts = np.atleast_2d(pts)
    w = pts[..., 0] + 1j * pts[..., 1]
    val = ((w - W0) ** 3).real
    val = val + 2.0 * np.log(np.linalg.norm(pts - P_OUT, axis=-1))
    return val


def grad_u_star(pts):
    pts = np.atleast_2d(pts)
    w = pts[..., 0] + 1j * pts[..., 1]
    fp = 3.0 * (w - W0) ** 2
    g = np.stack([fp.real, -fp.imag], axis=-1)
    d = pts - P_OUT
    g = g + 2.0 * d / (d**2).sum(-1, keepdims=True)
    return g


def smooth_impedance():
    return Impedance(lambda q: 1.5 + 0.8 * np.asarray(q) ** 2,
                     lambda q: 0.3 + 0.2 * (1.0 + np.asarray(q)),
                     kind="smooth")


def curved_crack():
    return CrackCurve.arc((0.05, -0.1), 0.45, -2.4, -0.6)


def manufactured_data(solver):
    """Boundary trace/flux and crack Robin data generated by u_star."""
    bg = solver.bg
    phi = u_star(bg.points)
    gstar = (grad_u_star(bg.points) * bg.normals).sum(-1)
    datas = []
    for cg in solver.cgs:
        cu = cg.crack.curve
        imp = cg.crack.impedance

        def rp(q, cu=cu, imp=imp):
            z = cu.point(q)
            nu = cu.normal(q)
            return (grad_u_star(z) * nu).sum(-1) - imp.plus(q) * u_star(z)

        def rm(q, cu=cu, imp=imp):
            z = cu.point(q)
            nu = cu.normal(q)
            return -(grad_u_star(z) * nu).sum(-1) - imp.minus(q) * u_star(z)

        datas.append(CrackData(rp, rm))
    return phi, gstar, datas


# -- boundary kernels -----------------------------------------------------------


def test_boundary_single_layer_circle_modes():
    bg = BoundaryGrid(Circle(radius=1.0), 48)
    S = single_layer_boundary(bg)
    assert np.max(np.abs(S @ np.ones(bg.size))) < 1e-13
    for k in (1, 2, 5):
        f = np.cos(k * bg.t)
        assert np.max(np.abs(S @ f - f / (2 * k))) < 1e-13
    bg2 = BoundaryGrid(Circle(radius=2.0), 48)
    S2 = single_layer_boundary(bg2)
    want = -2.0 * np.log(2.0)
    assert np.max(np.abs(S2 @ np.ones(bg2.size) - want)) < 1e-12


def test_boundary_double_layer_constant():
    bg = BoundaryGrid(Ellipse(a=1.3, b=0.8), 64)
    K = double_layer_boundary(bg)
    assert np.max(np.abs(K @ np.ones(bg.size) + 0.5)) < 1e-12


def test_boundary_eval_interior_modes():
    bg = BoundaryGrid(Circle(radius=1.0), 48)
    pts = np.array([[0.3, 0.1], [0.0, -0.95], [0.7071, 0.7028]])
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    r = np.linalg.norm(pts, axis=1)
    fac = boundary_eval_factor(bg, pts)
    S, D = boundary_eval_matrices(bg, pts, factor=fac)
    for k in (1, 3):
        got = S @ np.cos(k * bg.t)
        want = r**k * np.cos(k * theta) / (2 * k)
        assert np.max(np.abs(got - want)) < 1e-8
    # double layer of 1 is the winding indicator
    assert np.max(np.abs(D @ np.ones(bg.size) + 1.0)) < 1e-8
    out = np.array([[1.4, 0.2]])
    S, D = boundary_eval_matrices(bg, out)
    assert abs((D @ np.ones(bg.size))[0]) < 1e-12


# -- crack kernels against adaptive quadrature ----------------------------------


def _quad_layer(cu, x, fn, singular_s=None):
    pts = [singular_s] if singular_s is not None else None

    def integrand(s):
        z = cu.point(np.cos(s))
        return fn(s, z)

    val, err = quad(integrand, 0.0, np.pi, points=pts, limit=400,
                    epsabs=1e-12, epsrel=1e-12)
    return val


def test_crack_single_layer_vs_quad():
    # mixed-parity density: smooth-in-q part through the even flavor,
    # jump-type sin(s) part through the odd flavor
    cu = curved_crack()
    cg = CrackGrid(Crack.insulating(cu), 48)
    sig_e = np.exp(np.cos(cg.s))
    sig_o = 0.3 * np.exp(np.cos(cg.s)) * np.sin(cg.s)
    got = single_layer_crack_self(cg, "even") @ sig_e \
        + single_layer_crack_self(cg, "odd") @ sig_o

    def sig_fn(s):
        return np.exp(np.cos(s)) * (1.0 + 0.3 * np.sin(s))

    for idx in (0, 17, 33):
        t = cg.s[idx]
        x = cg.points[idx]

        def fn(s, z, x=x):
            r = np.linalg.norm(z - x)
            return (-np.log(r) / (2 * np.pi)) * sig_fn(s) \
                * cu.angle_jacobian(s)

        want = _quad_layer(cu, x, fn, singular_s=t)
        assert abs(got[idx] - want) < 5e-11


def test_crack_double_and_adjoint_vs_quad():
    cu = curved_crack()
    cg = CrackGrid(Crack.insulating(cu), 48)
    mu = np.sin(cg.s) * (1.0 + 0.2 * np.cos(2 * cg.s))
    K = double_layer_crack_self(cg, "odd")
    Kp = adjoint_layer_crack_self(cg, "odd")
    gotK = K @ mu
    gotKp = Kp @ mu

    def mu_fn(s):
        return np.sin(s) * (1.0 + 0.2 * np.cos(2 * s))

    idx = 21
    t = cg.s[idx]
    x = cg.points[idx]
    nu_x = cg.normals[idx]

    def fnK(s, z, x=x):
        d = x - z
        r2 = (d**2).sum()
        nu = cu.normal(np.cos(s))
        if r2 < 1e-24:
            return cu.curvature(np.cos(s)) / (4 * np.pi) * mu_fn(s) \
                * cu.angle_jacobian(s)
        return (d @ nu) / (2 * np.pi * r2) * mu_fn(s) * cu.angle_jacobian(s)

    def fnKp(s, z, x=x, nu_x=nu_x):
        d = x - z
        r2 = (d**2).sum()
        if r2 < 1e-24:
            return cu.curvature(np.cos(s)) / (4 * np.pi) * mu_fn(s) \
                * cu.angle_jacobian(s)
        return -(d @ nu_x) / (2 * np.pi * r2) * mu_fn(s) * cu.angle_jacobian(s)

    wantK = _quad_layer(cu, x, fnK, singular_s=t)
    wantKp = _quad_layer(cu, x, fnKp, singular_s=t)
    assert abs(gotK[idx] - wantK) < 1e-10
    assert abs(gotKp[idx] - wantKp) < 1e-10

    # even flavor of the adjoint layer on a smooth-in-q density
    sig = np.exp(np.cos(cg.s))
    gotE = (adjoint_layer_crack_self(cg, "even") @ sig)[idx]

    def fnE(s, z, x=x, nu_x=nu_x):
        d = x - z
        r2 = (d**2).sum()
        if r2 < 1e-24:
            return cu.curvature(np.cos(s)) / (4 * np.pi) * np.exp(np.cos(s)) \
                * cu.angle_jacobian(s)
        return -(d @ nu_x) / (2 * np.pi * r2) * np.exp(np.cos(s)) \
            * cu.angle_jacobian(s)

    wantE = _quad_layer(cu, x, fnE, singular_s=t)
    assert abs(gotE - wantE) < 1e-10


def test_crack_layer_jump_relations():
    cu = curved_crack()
    cg = CrackGrid(Crack.insulating(cu), 64)
    mu = np.sin(cg.s) * (1.0 + 0.3 * np.cos(cg.s))
    sigma = np.cos(cg.s) + 1.3
    idx = 30
    z0 = cg.points[idx]
    nu0 = cg.normals[idx]

    # offsets must stay above the fine-grid resolving distance; Richardson
    # in eps removes the remaining O(eps) curvature term
    def jumps(eps):
        pts = np.array([z0 + eps * nu0, z0 - eps * nu0])
        _, D = crack_eval_matrices(cg, pts, fine=4096, parity="odd")
        S, _ = crack_eval_matrices(cg, pts, fine=4096, parity="even")
        GS, _ = crack_grad_matrices(cg, pts, fine=4096, parity="even")
        dmu = D @ mu
        ssig = S @ sigma
        dn = np.einsum("icj,c->ij", GS, nu0) @ sigma
        return dmu[0] - dmu[1], ssig[0] - ssig[1], dn[0] - dn[1]

    j1 = jumps(4e-3)
    j2 = jumps(2e-3)
    jumpD = 2 * j2[0] - j1[0]
    jumpS = 2 * j2[1] - j1[1]
    jumpGS = 2 * j2[2] - j1[2]
    assert abs(jumpD - mu[idx]) < 1e-4
    assert abs(jumpS) < 1e-4
    assert abs(jumpGS + sigma[idx]) < 1e-4


def test_hyper_layer_matches_offset_normal_derivative():
    cu = curved_crack()
    cg = CrackGrid(Crack.insulating(cu), 64)
    mu = np.sin(cg.s) * (1.0 + 0.25 * np.cos(cg.s))
    T = hyper_layer_crack_self(cg)
    want = T @ mu
    # stay away from the tips: the eps expansion degrades as eps/r_tip grows
    idx = [22, 32, 44]
    eps = 2e-3
    for i in idx:
        z0, nu0 = cg.points[i], cg.normals[i]
        offs = np.array([eps, 2 * eps, 4 * eps])
        pts = np.concatenate([z0 + offs[:, None] * nu0,
                              z0 - offs[:, None] * nu0])
        _, GD = crack_grad_matrices(cg, pts, fine=4096, parity="odd")
        dn = np.einsum("icj,c->ij", GD, nu0) @ mu
        # the second normal derivative of D mu jumps across the arc, so the
        # two-sided average is only first order; extrapolate through eps^2
        a = 0.5 * (dn[:3] + dn[3:])
        got = (8 * a[0] - 6 * a[1] + a[2]) / 3
        assert abs(got - want[i]) < 1e-5 * max(1.0, abs(want[i]))


# -- forward solves ---------------------------------------------------------------


def make_solver(impedance=None, n=96, m=80):
    imp = smooth_impedance() if impedance is None else impedance
    crack = Crack(curved_crack(), imp)
    return ForwardSolver(Ellipse(a=1.1, b=0.85), [crack], n=n, m=m)


def test_dirichlet_manufactured():
    solver = make_solver()
    phi, gstar, datas = manufactured_data(solver)
    sol = solver.solve_dirichlet(phi, datas)
    scale = np.max(np.abs(gstar))
    assert np.max(np.abs(sol.g - gstar)) < 1e-8 * scale
    cg = solver.cgs[0]
    ustar_c = u_star(cg.points)
    assert np.max(np.abs(sol.a[0] - 2 * ustar_c)) < 1e-8
    assert np.max(np.abs(sol.mu[0])) < 1e-8
    assert abs(sol.omega) < 1e-8
    pts = np.array([[0.3, 0.2], [-0.5, 0.1], [0.0, 0.55]])
    assert np.max(np.abs(sol.eval(pts) - u_star(pts))) < 1e-9
    assert np.max(np.abs(sol.grad(pts) - grad_u_star(pts))) < 1e-8
    znear = cg.crack.curve.point(0.3) + 0.02 * cg.crack.curve.normal(0.3)
    assert abs(sol.eval(znear)[0] - u_star(znear)[0]) < 1e-7
    bnear = 0.97 * solver.bg.points[11]
    assert abs(sol.eval(bnear)[0] - u_star(bnear)[0]) < 1e-6


def test_neumann_manufactured():
    solver = make_solver()
    phi, gstar, datas = manufactured_data(solver)
    sol = solver.solve_neumann(gstar, datas)
    assert np.max(np.abs(sol.phi - phi)) < 1e-7 * np.max(np.abs(phi))
    pts = np.array([[0.25, -0.2], [-0.4, 0.3]])
    assert np.max(np.abs(sol.eval(pts) - u_star(pts))) < 1e-8


def test_neumann_insulating_manufactured():
    solver = make_solver(Impedance.insulating())
    phi, gstar, datas = manufactured_data(solver)
    sol = solver.solve_neumann(gstar, datas)
    w = solver.bg.w
    shift = w @ phi / w.sum()
    assert np.max(np.abs(sol.phi - (phi - shift))) < 1e-7
    assert np.max(np.abs(sol.mu[0])) < 1e-7


def test_constant_field_insulating():
    crack = Crack.insulating(CrackCurve.segment((-0.5, -0.1), (0.4, 0.2)))
    solver = ForwardSolver(Circle(radius=1.0), [crack], n=64, m=64)
    sol = solver.solve_dirichlet(np.ones(solver.nb))
    assert np.max(np.abs(sol.g)) < 1e-11
    assert np.max(np.abs(sol.mu[0])) < 1e-11
    assert np.max(np.abs(sol.a[0] - 2.0)) < 1e-10
    pts = np.array([[0.1, 0.4], [-0.3, -0.3]])
    assert np.max(np.abs(sol.eval(pts) - 1.0)) < 1e-10


def test_odd_symmetry_zero_trace_sum():
    crack = Crack(CrackCurve.segment((-0.5, 0.0), (0.5, 0.0)),
                  Impedance.constant(2.0))
    solver = ForwardSolver(Circle(radius=1.0), [crack], n=64, m=64)
    sol = solver.solve_dirichlet(np.sin(solver.bg.t))
    assert np.max(np.abs(sol.a[0])) < 1e-10
    assert np.max(np.abs(sol.mu[0])) > 1e-3
    assert abs(sol.total_flux()) < 1e-10


def test_flux_balance():
    solver = make_solver()
    sol = solver.solve_dirichlet(np.cos(2 * solver.bg.t) + 0.5)
    crack_flux = sum(sol.crack_flux(i) for i in range(solver.ncracks))
    assert abs(sol.total_flux() - crack_flux) < 1e-10


def test_energy_identity_against_grid():
    crack = Crack(CrackCurve.arc((0.0, -0.15), 0.5, -2.2, -0.9),
                  Impedance.constant(2.0))
    solver = ForwardSolver(Circle(radius=1.0), [crack], n=96, m=96)
    t = solver.bg.t
    sol = solver.solve_dirichlet(np.sin(t) + 0.3)
    lhs = sol.boundary_pairing()

    # cell-centered grid; the excluded collars around the circle and the
    # crack cost O(delta), so extrapolate the collar width to zero
    ngrid = 600
    cell = 2.0 / ngrid
    xs = (np.arange(ngrid) + 0.5) * cell - 1.0
    X, Y = np.meshgrid(xs, xs)
    P = np.column_stack([X.ravel(), Y.ravel()])
    db = 1.0 - np.linalg.norm(P, axis=1)
    cup = crack.curve.point(np.linspace(-1, 1, 2000))
    from scipy.spatial import cKDTree
    dc = cKDTree(cup).query(P)[0]
    delta = 1.5 * cell
    keep = (db > delta) & (dc > delta)
    G = sol.grad(P[keep])
    e2 = (G**2).sum(1) * cell**2
    E1 = e2.sum()
    sub = (db[keep] > 2 * delta) & (dc[keep] > 2 * delta)
    E2 = e2[sub].sum()
    rhs = (2 * E1 - E2) + sol.crack_energy()
    assert abs(lhs - rhs) < 0.01 * abs(lhs)


def test_self_convergence():
    # insulating tips are sin * analytic: the scheme is spectrally exact
    # and a coarse solve already sits at machine precision
    def phi_fn(t):
        return np.exp(np.cos(t)) + 0.4 * np.sin(2 * t)

    pts = np.array([[0.2, 0.3], [-0.6, -0.2], [0.5, -0.4]])
    ins_c = make_solver(Impedance.insulating(), n=48, m=40)
    ins_f = make_solver(Impedance.insulating(), n=96, m=80)
    vc = ins_c.solve_dirichlet(phi_fn(ins_c.bg.t)).eval(pts)
    vf = ins_f.solve_dirichlet(phi_fn(ins_f.bg.t)).eval(pts)
    assert np.max(np.abs(vc - vf)) < 1e-12

    # absorbing tips carry r^{3/2} log r corrections, so convergence in m
    # is high-order algebraic; check the ladder keeps contracting
    diffs = []
    tips = []
    prev = None
    for n, m in [(48, 40), (96, 80), (128, 112)]:
        sol = make_solver(n=n, m=m).solve_dirichlet(
            phi_fn(BoundaryGrid(Ellipse(a=1.1, b=0.85), n).t))
        cur = (sol.eval(pts), sol.tip_intensity(0))
        if prev is not None:
            diffs.append(np.max(np.abs(cur[0] - prev[0])))
            tips.append(max(abs(cur[1][0] - prev[1][0]),
                            abs(cur[1][1] - prev[1][1])))
        prev = cur
    assert diffs[0] < 1e-7 and diffs[1] < 5e-9
    assert tips[0] < 5e-4 and tips[1] < 1e-4
    assert diffs[1] < 0.25 * diffs[0]


def test_positive_solution():
    crack = Crack(CrackCurve.arc((0.0, -0.15), 0.5, -2.2, -0.9),
                  Impedance.constant(3.0))
    solver = ForwardSolver(Circle(radius=1.0), [crack], n=64, m=64)
    sol = solver.solve_positive()
    assert not sol.degenerate
    xs = np.linspace(-0.95, 0.95, 120)
    X, Y = np.meshgrid(xs, xs)
    P = np.column_stack([X.ravel(), Y.ravel()])
    P = P[np.linalg.norm(P, axis=1) < 0.95]
    cup = crack.curve.point(np.linspace(-1, 1, 800))
    from scipy.spatial import cKDTree
    P = P[cKDTree(cup).query(P)[0] > 0.02]
    assert sol.eval(P).min() > 0.0

    degen = ForwardSolver(Circle(radius=1.0),
                          [Crack.insulating(crack.curve)], n=48, m=48)
    dsol = degen.solve_positive()
    assert dsol.degenerate
    assert np.max(np.abs(dsol.eval(P[:500]) - 1.0)) < 1e-10


def test_two_crack_manufactured():
    c1 = Crack(CrackCurve.arc((0.05, -0.1), 0.45, -2.4, -0.6),
               smooth_impedance())
    c2 = Crack(CrackCurve.segment((-0.35, 0.35), (0.3, 0.5)),
               Impedance.constant(1.0, 0.5))
    solver = ForwardSolver(Ellipse(a=1.1, b=0.85), [c1, c2], n=96, m=72)
    phi, gstar, datas = manufactured_data(solver)
    sol = solver.solve_dirichlet(phi, datas)
    assert np.max(np.abs(sol.g - gstar)) < 1e-7 * np.max(np.abs(gstar))
    for i, cg in enumerate(solver.cgs):
        assert np.max(np.abs(sol.a[i] - 2 * u_star(cg.points))) < 1e-7
        assert np.max(np.abs(sol.mu[i])) < 1e-7


def test_system_conditioning():
    solver = make_solver()
    for kind in ("dirichlet", "neumann"):
        assert np.linalg.cond(solver.system_matrix(kind)) < 1e7
    ins = make_solver(Impedance.insulating(), n=48, m=48)
    for kind in ("dirichlet", "neumann"):
        assert np.linalg.cond(ins.system_matrix(kind)) < 1e7


def test_batch_maps_match_single_solves():
    solver = make_solver(n=64, m=56)
    t = solver.bg.t
    Phi = np.column_stack([np.cos(t), np.sin(2 * t), np.cos(3 * t)])
    G = solver.dirichlet_flux_batch(Phi)
    for j in range(Phi.shape[1]):
        sol = solver.solve_dirichlet(Phi[:, j])
        assert np.max(np.abs(G[:, j] - sol.g)) < 1e-12
    Phi_back = solver.neumann_trace_batch(G)
    for j in range(Phi.shape[1]):
        sol = solver.solve_neumann(G[:, j])
        assert np.max(np.abs(Phi_back[:, j] - sol.phi)) < 1e-12
