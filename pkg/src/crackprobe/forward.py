"""Forward solver for the 2-D crack problem with Robin (impedance) faces.

The solution in Omega minus the crack(s) is represented by its Green
identity: u = S_b[g] - D_b[phi] - S_c[psi] + D_c[mu] + omega, with
g, phi the boundary Cauchy data, psi = [d_nu u] and mu = [u] the crack
jumps, and omega a scalar that borders out the capacity resonance of the
boundary single layer.  The crack Robin conditions

    grad(u+).nu - gamma+ u+ = rho+,   -grad(u-).nu - gamma- u- = rho-

turn psi into P+ a + P- mu + (rho+ + rho-), a = u+ + u-,
P+- = (gamma+ +- gamma-)/2.  Collocating the trace on the outer boundary,
the trace sum on the crack, and the one-sided flux sum on the crack gives a
square dense system; the final row enforces the exact flux balance
int_dOmega g = int_Sigma psi (swapped for a zero-mean row in the
gauge-degenerate pure Neumann case).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .curves import Crack, ClosedCurve
from .potentials import (
    BoundaryGrid,
    CrackGrid,
    boundary_eval_factor,
    boundary_eval_matrices,
    boundary_factor_bins,
    boundary_grad_matrices,
    crack_field_matrices,
    crack_field_grads,
    crack_fine_bins,
    double_layer_boundary,
    normal_project,
    single_layer_boundary,
    adjoint_layer_crack_self,
    double_layer_crack_self,
    hyper_layer_crack_self,
    single_layer_crack_self,
)
from .quadrature import midpoint_weight, sin_coeffs

ABSORPTION_TOL = 1e-10


@dataclass
class CrackData:
    """Inhomogeneous Robin data (rho+, rho-) on one crack, functions of q."""

    rho_plus: Callable
    rho_minus: Callable

    @classmethod
    def zero(cls) -> "CrackData":
        z = lambda q: np.zeros(np.shape(q))
        return cls(z, z)

    def nodal(self, cg: CrackGrid):
        rp = np.broadcast_to(np.asarray(self.rho_plus(cg.q), dtype=float),
                             cg.q.shape).astype(float)
        rm = np.broadcast_to(np.asarray(self.rho_minus(cg.q), dtype=float),
                             cg.q.shape).astype(float)
        return rp, rm


def _as_nodal(data, grid_param, size: int) -> np.ndarray:
    if callable(data):
        out = np.asarray(data(grid_param), dtype=float)
    else:
        out = np.asarray(data, dtype=float)
    if out.shape != (size,):
        out = np.broadcast_to(out, (size,)).astype(float)
    return out


class ForwardSolver:
    """Dense collocation solver for one domain and its cracks.

    Treat the geometry as immutable after construction; operator blocks and
    LU factorizations are cached.
    """

    def __init__(self, domain: ClosedCurve, cracks=(), n: int = 96,
                 m: int = 96):
        self.domain = domain
        self.cracks = list(cracks)
        self.n = n
        self.m = m
        self.bg = BoundaryGrid(domain, n)
        self.cgs = [CrackGrid(c, m) for c in self.cracks]
        self._blocks = None
        self._lu = {}
        self._mat = {}

    # -- layout -----------------------------------------------------------

    @property
    def nb(self) -> int:
        return self.bg.size

    @property
    def ncracks(self) -> int:
        return len(self.cgs)

    def _offsets(self):
        off = []
        base = self.nb
        for _ in self.cgs:
            off.append(base)
            base += 2 * self.m
        return off, base + 1   # total includes the scalar

    def total_absorption(self) -> float:
        return sum(c.impedance.total_absorption(c.curve) for c in self.cracks)

    # -- operator blocks ----------------------------------------------------

    def blocks(self):
        if self._blocks is not None:
            return self._blocks
        bg = self.bg
        B = {
            "S_bb": single_layer_boundary(bg),
            "K_bb": double_layer_boundary(bg),
            "crack": [],
            "cross": {},
        }
        for cg in self.cgs:
            factor = boundary_eval_factor(bg, cg.points)
            S_bc, D_bc = boundary_eval_matrices(bg, cg.points, factor)
            GS, GD = boundary_grad_matrices(bg, cg.points, factor)
            S_cb, S_cb_o, D_cb_o = crack_field_matrices(cg, bg.points)
            B["crack"].append({
                "S_cc": single_layer_crack_self(cg, "even"),
                "S_cc_o": single_layer_crack_self(cg, "odd"),
                "K_cc_o": double_layer_crack_self(cg, "odd"),
                "Kp_cc": adjoint_layer_crack_self(cg, "even"),
                "Kp_cc_o": adjoint_layer_crack_self(cg, "odd"),
                "T_cc": hyper_layer_crack_self(cg),
                "S_bc": S_bc,
                "D_bc": D_bc,
                "Sn_bc": normal_project(GS, cg.normals),
                "Dn_bc": normal_project(GD, cg.normals),
                "S_cb": S_cb,
                "S_cb_o": S_cb_o,
                "D_cb_o": D_cb_o,
            })
        for i, cgi in enumerate(self.cgs):
            for j, cgj in enumerate(self.cgs):
                if i == j:
                    continue
                S, S_o, D_o = crack_field_matrices(cgj, cgi.points)
                GS, GS_o, GD_o = crack_field_grads(cgj, cgi.points)
                B["cross"][(i, j)] = {
                    "S": S,
                    "S_o": S_o,
                    "D_o": D_o,
                    "Sn": normal_project(GS, cgi.normals),
                    "Sn_o": normal_project(GS_o, cgi.normals),
                    "Tn_o": normal_project(GD_o, cgi.normals),
                }
        self._blocks = B
        return B

    # -- system assembly ----------------------------------------------------

    def system_matrix(self, kind: str) -> np.ndarray:
        if kind in self._mat:
            return self._mat[kind]
        if kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown problem kind: {kind!r}")
        B = self.blocks()
        nb = self.nb
        m = self.m
        off, N = self._offsets()
        M = np.zeros((N, N))
        sl_b = slice(0, nb)
        insulating = self.total_absorption() < ABSORPTION_TOL

        if kind == "dirichlet":
            M[sl_b, sl_b] = B["S_bb"]
            M[sl_b, -1] = 1.0
        else:
            M[sl_b, sl_b] = 0.5 * np.eye(nb) + B["K_bb"]
            M[sl_b, -1] = -1.0

        for i, cg in enumerate(self.cgs):
            bi = B["crack"][i]
            ra = slice(off[i], off[i] + m)          # columns of a_i
            rmu = slice(off[i] + m, off[i] + 2 * m)  # columns of mu_i
            sgn = -1.0 if kind == "dirichlet" else 1.0
            M[sl_b, ra] = sgn * bi["S_cb"] * cg.pp
            M[sl_b, rmu] = sgn * (bi["S_cb_o"] * cg.pm - bi["D_cb_o"])
            # rows E2_i and E3_i
            e2 = slice(off[i], off[i] + m)
            e3 = slice(off[i] + m, off[i] + 2 * m)
            gcol = sl_b
            gsgn = -2.0 if kind == "dirichlet" else 2.0
            M[e2, gcol] = gsgn * (bi["S_bc"] if kind == "dirichlet"
                                  else bi["D_bc"])
            M[e3, gcol] = gsgn * (bi["Sn_bc"] if kind == "dirichlet"
                                  else bi["Dn_bc"])
            M[e2, ra] = np.eye(m) + 2.0 * bi["S_cc"] * cg.pp
            M[e2, rmu] = 2.0 * bi["S_cc_o"] * cg.pm - 2.0 * bi["K_cc_o"]
            M[e2, -1] = -2.0
            M[e3, ra] = np.diag(cg.pm) + 2.0 * bi["Kp_cc"] * cg.pp
            M[e3, rmu] = (np.diag(cg.pp) + 2.0 * bi["Kp_cc_o"] * cg.pm
                          - 2.0 * bi["T_cc"])
            for j, cgj in enumerate(self.cgs):
                if j == i:
                    continue
                X = B["cross"][(i, j)]
                ca = slice(off[j], off[j] + m)
                cmu = slice(off[j] + m, off[j] + 2 * m)
                M[e2, ca] = 2.0 * X["S"] * cgj.pp
                M[e2, cmu] = 2.0 * X["S_o"] * cgj.pm - 2.0 * X["D_o"]
                M[e3, ca] = 2.0 * X["Sn"] * cgj.pp
                M[e3, cmu] = 2.0 * X["Sn_o"] * cgj.pm - 2.0 * X["Tn_o"]

        # closing row: flux balance, or zero boundary mean when the pure
        # Neumann problem is gauge degenerate
        if kind == "neumann" and insulating:
            M[-1, sl_b] = self.bg.w
        else:
            if kind == "dirichlet":
                M[-1, sl_b] = self.bg.w
            for i, cg in enumerate(self.cgs):
                M[-1, off[i]:off[i] + m] = -cg.wJ * cg.pp
                M[-1, off[i] + m:off[i] + 2 * m] = \
                    -midpoint_weight(m) * cg.J * cg.pm
        self._mat[kind] = M
        return M

    def _system(self, kind: str):
        if kind not in self._lu:
            self._lu[kind] = lu_factor(self.system_matrix(kind))
        return self._lu[kind]

    # -- right-hand sides ----------------------------------------------------

    def _crack_data_nodal(self, crack_data):
        if crack_data is None:
            crack_data = [None] * self.ncracks
        out = []
        for cg, cd in zip(self.cgs, crack_data):
            if cd is None:
                rp = np.zeros(self.m)
                rm = np.zeros(self.m)
            else:
                rp, rm = cd.nodal(cg)
            out.append((rp, rm))
        return out

    def _psi_data_integral(self, rho) -> float:
        return sum(float(cg.wJ @ (rho[i][0] + rho[i][1]))
                   for i, cg in enumerate(self.cgs))

    def _rhs(self, kind: str, bd_data: np.ndarray, rho) -> np.ndarray:
        """Right-hand side for one nodal boundary datum (phi or g)."""
        B = self.blocks()
        nb = self.nb
        m = self.m
        off, N = self._offsets()
        rhs = np.zeros(N)
        if kind == "dirichlet":
            rhs[:nb] = 0.5 * bd_data + B["K_bb"] @ bd_data
        else:
            rhs[:nb] = B["S_bb"] @ bd_data
        psis = [rho[i][0] + rho[i][1] for i in range(self.ncracks)]
        for i, cg in enumerate(self.cgs):
            bi = B["crack"][i]
            rp, rm = rho[i]
            e2 = slice(off[i], off[i] + m)
            e3 = slice(off[i] + m, off[i] + 2 * m)
            if kind == "dirichlet":
                rhs[:nb] += bi["S_cb"] @ psis[i]
                rhs[e2] = -2.0 * (bi["D_bc"] @ bd_data)
                rhs[e3] = -2.0 * (bi["Dn_bc"] @ bd_data)
            else:
                rhs[:nb] -= bi["S_cb"] @ psis[i]
                rhs[e2] = 2.0 * (bi["S_bc"] @ bd_data)
                rhs[e3] = 2.0 * (bi["Sn_bc"] @ bd_data)
            rhs[e2] -= 2.0 * (bi["S_cc"] @ psis[i])
            rhs[e3] -= 2.0 * (bi["Kp_cc"] @ psis[i]) + (rp - rm)
            for j in range(self.ncracks):
                if j == i:
                    continue
                X = B["cross"][(i, j)]
                rhs[e2] -= 2.0 * (X["S"] @ psis[j])
                rhs[e3] -= 2.0 * (X["Sn"] @ psis[j])
        insulating = self.total_absorption() < ABSORPTION_TOL
        fsum = self._psi_data_integral(rho)
        if kind == "neumann" and insulating:
            rhs[-1] = 0.0
        elif kind == "dirichlet":
            rhs[-1] = fsum
        else:
            rhs[-1] = fsum - self.bg.w @ bd_data
        return rhs

    def _rhs_batch(self, kind: str, BD: np.ndarray) -> np.ndarray:
        """Batch right-hand sides, homogeneous crack data only."""
        B = self.blocks()
        nb = self.nb
        m = self.m
        off, N = self._offsets()
        rhs = np.zeros((N, BD.shape[1]))
        if kind == "dirichlet":
            rhs[:nb] = 0.5 * BD + B["K_bb"] @ BD
        else:
            rhs[:nb] = B["S_bb"] @ BD
        for i in range(self.ncracks):
            bi = B["crack"][i]
            e2 = slice(off[i], off[i] + m)
            e3 = slice(off[i] + m, off[i] + 2 * m)
            if kind == "dirichlet":
                rhs[e2] = -2.0 * (bi["D_bc"] @ BD)
                rhs[e3] = -2.0 * (bi["Dn_bc"] @ BD)
            else:
                rhs[e2] = 2.0 * (bi["S_bc"] @ BD)
                rhs[e3] = 2.0 * (bi["Sn_bc"] @ BD)
        insulating = self.total_absorption() < ABSORPTION_TOL
        if kind == "neumann" and not insulating:
            rhs[-1] = -(self.bg.w @ BD)
        return rhs

    # -- solves ---------------------------------------------------------------

    def _unpack(self, x):
        nb = self.nb
        m = self.m
        off, _ = self._offsets()
        a = [x[off[i]:off[i] + m] for i in range(self.ncracks)]
        mu = [x[off[i] + m:off[i] + 2 * m] for i in range(self.ncracks)]
        return x[:nb], a, mu, float(x[-1])

    def solve_dirichlet(self, phi, crack_data=None) -> "Solution":
        phi = _as_nodal(phi, self.bg.t, self.nb)
        rho = self._crack_data_nodal(crack_data)
        x = lu_solve(self._system("dirichlet"), self._rhs("dirichlet", phi, rho))
        g, a, mu, omega = self._unpack(x)
        return Solution(self, "dirichlet", phi, g, a, mu, omega, rho)

    def solve_neumann(self, g, crack_data=None) -> "Solution":
        g = _as_nodal(g, self.bg.t, self.nb)
        rho = self._crack_data_nodal(crack_data)
        insulating = self.total_absorption() < ABSORPTION_TOL
        if insulating:
            # gauge-degenerate case: project the datum onto the compatible
            # affine slice int g = int psi_data before solving
            deficit = (self.bg.w @ g - self._psi_data_integral(rho)) \
                / self.bg.w.sum()
            gc = g - deficit
        else:
            gc = g
        x = lu_solve(self._system("neumann"), self._rhs("neumann", gc, rho))
        phi, a, mu, omega = self._unpack(x)
        return Solution(self, "neumann", phi, gc, a, mu, omega, rho)

    def solve_positive(self) -> "Solution":
        """Total field with unit inflow d_nu v = 1 on the outer boundary.

        With zero total absorption the datum is incompatible; the degenerate
        convention is v == 1 (flagged), which the representation reproduces
        with phi = 1 and all layers empty.
        """
        if self.total_absorption() < ABSORPTION_TOL:
            sol = Solution(self, "neumann",
                           np.ones(self.nb), np.zeros(self.nb),
                           [2.0 * np.ones(self.m) for _ in self.cgs],
                           [np.zeros(self.m) for _ in self.cgs],
                           0.0, self._crack_data_nodal(None),
                           degenerate=True)
            return sol
        return self.solve_neumann(np.ones(self.nb))

    # batch maps with homogeneous crack data, for boundary-operator columns

    def dirichlet_flux_batch(self, Phi: np.ndarray) -> np.ndarray:
        """Columns phi -> columns g = Lambda phi (homogeneous crack data)."""
        rhs = self._rhs_batch("dirichlet", np.asarray(Phi, dtype=float))
        x = lu_solve(self._system("dirichlet"), rhs)
        return x[:self.nb]

    def neumann_trace_batch(self, G: np.ndarray) -> np.ndarray:
        """Columns g -> columns phi = N g (homogeneous crack data)."""
        G = np.asarray(G, dtype=float)
        if self.total_absorption() < ABSORPTION_TOL:
            G = G - self.bg.w @ G / self.bg.w.sum()
        rhs = self._rhs_batch("neumann", G)
        x = lu_solve(self._system("neumann"), rhs)
        return x[:self.nb]


@dataclass
class Solution:
    """One solved field: boundary Cauchy data plus crack jump densities."""

    solver: ForwardSolver
    kind: str
    phi: np.ndarray
    g: np.ndarray
    a: list
    mu: list
    omega: float
    rho: list
    degenerate: bool = False

    def psi(self, i: int) -> np.ndarray:
        """Flux jump [d_nu u] on crack i, Robin closure included."""
        cg = self.solver.cgs[i]
        rp, rm = self.rho[i]
        return cg.pp * self.a[i] + cg.pm * self.mu[i] + rp + rm

    def plus_trace(self, i: int) -> np.ndarray:
        return 0.5 * (self.a[i] + self.mu[i])

    def minus_trace(self, i: int) -> np.ndarray:
        return 0.5 * (self.a[i] - self.mu[i])

    def total_flux(self) -> float:
        return float(self.solver.bg.w @ self.g)

    def crack_flux(self, i: int) -> float:
        """int_Sigma_i [d_nu u] dsigma, parity-split quadrature."""
        cg = self.solver.cgs[i]
        rp, rm = self.rho[i]
        even = cg.pp * self.a[i] + rp + rm
        odd = cg.pm * self.mu[i]
        return float(cg.wJ @ even
                     + midpoint_weight(cg.m) * (cg.J @ odd))

    def boundary_pairing(self) -> float:
        """int_dOmega phi g, the energy pairing of the Cauchy data."""
        return float(self.solver.bg.w @ (self.phi * self.g))

    def crack_energy(self) -> float:
        """int_Sigma gamma+ (u+)^2 + gamma- (u-)^2.

        Split by parity: a^2 and mu^2 carry the sine-span weights, the
        a mu cross term has an even integrand and takes the midpoint rule.
        """
        out = 0.0
        for i, cg in enumerate(self.solver.cgs):
            a, mu = self.a[i], self.mu[i]
            even = 0.5 * cg.pp * (a**2 + mu**2)
            cross = cg.pm * a * mu
            out += float(cg.wJ @ even
                         + midpoint_weight(cg.m) * (cg.J @ cross))
        return out

    def tip_intensity(self, i: int) -> tuple[float, float]:
        """Jump coefficients c with mu ~ c sqrt(arc distance) at each tip.

        Returned as (tip at q=-1, tip at q=+1).
        """
        ak = sin_coeffs(self.mu[i])
        k = np.arange(1, self.solver.m + 1)
        cu = self.solver.cgs[i].crack.curve
        sp = cu.speed(np.array([-1.0, 1.0]))
        plus = float((k * ak).sum()) * np.sqrt(2.0 / sp[1])
        minus = float(((-1.0) ** (k + 1) * k * ak).sum()) * np.sqrt(2.0 / sp[0])
        return minus, plus

    # -- field evaluation ---------------------------------------------------

    def _accumulate(self, pts, want_grad: bool):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        bg = self.solver.bg
        out = np.zeros((pts.shape[0], 2) if want_grad else pts.shape[0])
        for sel, fac in boundary_factor_bins(bg, pts):
            if want_grad:
                GS, GD = boundary_grad_matrices(bg, pts[sel], fac)
                out[sel] = GS @ self.g - GD @ self.phi
            else:
                S, D = boundary_eval_matrices(bg, pts[sel], fac)
                out[sel] = S @ self.g - D @ self.phi + self.omega
        for i, cg in enumerate(self.solver.cgs):
            rp, rm = self.rho[i]
            psi_e = cg.pp * self.a[i] + rp + rm
            psi_o = cg.pm * self.mu[i]
            for sel, fine in crack_fine_bins(cg, pts):
                if want_grad:
                    GSe, GSo, GDo = crack_field_grads(cg, pts[sel], fine)
                    out[sel] -= GSe @ psi_e + GSo @ psi_o
                    out[sel] += GDo @ self.mu[i]
                else:
                    Se, So, Do = crack_field_matrices(cg, pts[sel], fine)
                    out[sel] -= Se @ psi_e + So @ psi_o
                    out[sel] += Do @ self.mu[i]
        return out

    def eval(self, pts, chunk: int = 20000) -> np.ndarray:
        """Field values at interior points (do not evaluate on the curves)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        parts = [self._accumulate(pts[i:i + chunk], False)
                 for i in range(0, len(pts), chunk)]
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def grad(self, pts, chunk: int = 20000) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        parts = [self._accumulate(pts[i:i + chunk], True)
                 for i in range(0, len(pts), chunk)]
        return np.concatenate(parts) if len(parts) > 1 else parts[0]
