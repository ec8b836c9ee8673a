"""Spectral quadrature kernels shared by the boundary and crack solvers.

Two discretizations live here:

* open arcs (cracks) in the Chebyshev angle s in (0, pi), q = cos s, with
  sin/cos series and exact modal tables for the log kernel;
* smooth closed curves on the equispaced 2n-point grid with the classical
  trigonometric log-splitting weights.
"""

from __future__ import annotations

import functools

import numpy as np
from scipy import fft as _fft

__all__ = [
    "cheb_angles",
    "midpoint_weight",
    "sin_quad_weights",
    "cos_coeffs",
    "sin_coeffs",
    "cos_coeff_matrix",
    "sin_coeff_matrix",
    "cos_eval_matrix",
    "sin_eval_matrix",
    "sin_series_deriv_matrix",
    "cos_series_deriv_matrix",
    "modal_log_tables",
    "modal_log_tables_at",
    "kress_log_matrix",
    "gauss_panels",
    "graded_edges",
    "linear_fit",
]


def cheb_angles(m: int) -> np.ndarray:
    """Chebyshev angles s_i = (2i+1) pi / (2m), strictly inside (0, pi)."""
    i = np.arange(m)
    return (2 * i + 1) * np.pi / (2 * m)


def midpoint_weight(m: int) -> float:
    """Weight of the m-point midpoint rule on (0, pi).

    On the cheb_angles grid this rule is exact for cosine polynomials below
    the aliasing limit, hence spectrally accurate for smooth integrands with
    a smooth EVEN extension across 0 and pi.  For odd extensions it is only
    second order; use sin_quad_weights there.
    """
    return np.pi / m


@functools.lru_cache(maxsize=32)
def sin_quad_weights(m: int) -> np.ndarray:
    """Weights exact on the sine span: w @ f = int_0^pi f for f in span{sin(ks)}.

    int_0^pi sin(ks) ds = 2/k for odd k, 0 for even k.  Crack-density
    integrands carry the arc-length factor J(s) ~ sin s and are odd across
    the endpoints, so this rule (not the midpoint rule) is the spectrally
    accurate choice for them.
    """
    s = cheb_angles(m)
    k = np.arange(1, m + 1)
    # c = integral targets routed through the DST-II coefficient scaling;
    # the last mode carries half weight, mirroring sin_coeffs
    c = np.where(k % 2 == 1, 2.0 / k, 0.0) * (2.0 / m)
    c[-1] *= 0.5
    return _frozen(np.sin(np.outer(s, k)) @ c)


# -- sin/cos series on the Chebyshev angle grid ------------------------------
#
# Conventions (m nodes s_i = cheb_angles(m)):
#   cos series: f_i = sum_{k=0}^{m-1} c_k cos(k s_i)
#   sin series: f_i = sum_{k=1}^{m}   a_k sin(k s_i)
# Both maps values -> coefficients are exact inverses of the evaluations.


def cos_coeffs(values: np.ndarray) -> np.ndarray:
    """Coefficients c_k, k = 0..m-1, of the interpolating cosine series."""
    values = np.asarray(values, dtype=float)
    m = values.shape[-1]
    c = _fft.dct(values, type=2, axis=-1) / m
    c[..., 0] *= 0.5
    return c


def sin_coeffs(values: np.ndarray) -> np.ndarray:
    """Coefficients a_k, k = 1..m, of the interpolating sine series."""
    values = np.asarray(values, dtype=float)
    m = values.shape[-1]
    a = _fft.dst(values, type=2, axis=-1) / m
    a[..., -1] *= 0.5
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@functools.lru_cache(maxsize=32)
def cos_coeff_matrix(m: int) -> np.ndarray:
    """Matrix A with A @ values = cos_coeffs(values). Shape (m, m)."""
    return _frozen(cos_coeffs(np.eye(m)).T.copy())


@functools.lru_cache(maxsize=32)
def sin_coeff_matrix(m: int) -> np.ndarray:
    """Matrix A with A @ values = sin_coeffs(values). Shape (m, m)."""
    return _frozen(sin_coeffs(np.eye(m)).T.copy())


def cos_eval_matrix(t: np.ndarray, m: int) -> np.ndarray:
    """E[i, k] = cos(k t_i) for k = 0..m-1."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.cos(np.outer(t, np.arange(m)))


def sin_eval_matrix(t: np.ndarray, m: int) -> np.ndarray:
    """E[i, j] = sin((j+1) t_i); columns are the modes k = 1..m."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.sin(np.outer(t, np.arange(1, m + 1)))


@functools.lru_cache(maxsize=32)
def sin_series_deriv_matrix(m: int) -> np.ndarray:
    """Nodal d/ds for sine series: values -> (d/ds sum a_k sin(ks)) at nodes."""
    s = cheb_angles(m)
    k = np.arange(1, m + 1)
    dcos = np.cos(np.outer(s, k)) * k
    return _frozen(dcos @ sin_coeff_matrix(m))


@functools.lru_cache(maxsize=32)
def cos_series_deriv_matrix(m: int) -> np.ndarray:
    """Nodal d/dt for cosine series: values -> derivative values at nodes.

    Correct spectral derivative for functions with a smooth even extension
    across t = 0 and t = pi.
    """
    s = cheb_angles(m)
    k = np.arange(1, m)
    dsin = -np.sin(np.outer(s, k)) * k
    return _frozen(dsin @ cos_coeff_matrix(m)[1:])


# -- modal tables for the flat log kernel ------------------------------------
#
# With q = cos t the kernel log|cos t - cos s| is the restriction of the
# log potential to (-1, 1).  Both families of moments are closed-form:
#
#   C_k(t) = int_0^pi log|cos t - cos s| cos(k s) ds
#          = -pi log 2            (k = 0)
#          = -pi cos(k t) / k     (k >= 1)
#
#   L_k(t) = int_0^pi log|cos t - cos s| sin(k s) ds
#          = -[k odd] 2 log2 / k
#            - (4/k) ( A_k(t) + cos(kt) (F_c(t) - C_odd(t))
#                      + sin(kt) F_s(t) + [k odd] / (2k) )
#
# where A_k = (1/2) log cot(t/2) for k even, -(1/2) log(2 sin t) for k odd,
# C_odd = (1/2) log cot(t/2) and F_c, F_s are the partial odd-harmonic sums
# sum_{j odd < k} cos(jt)/j and sin(jt)/j.  Spot values: L_1(pi/2) = -2,
# L_2(pi/3) = -1 - (3/4) log 3.


def modal_log_tables_at(t: np.ndarray, kmax: int) -> tuple[np.ndarray, np.ndarray]:
    """(C, L) log-kernel moments at angles t for modes up to kmax.

    C has columns k = 0..kmax-1, L has columns k = 1..kmax.  t must lie
    strictly inside (0, pi).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    C = np.empty((t.size, kmax))
    C[:, 0] = -np.pi * np.log(2.0)
    if kmax > 1:
        k = np.arange(1, kmax)
        C[:, 1:] = -np.pi * np.cos(np.outer(t, k)) / k

    c_odd = 0.5 * np.log(1.0 / np.tan(t / 2))
    log2sin = np.log(2.0 * np.sin(t))
    L = np.empty((t.size, kmax))
    fc = np.zeros(t.size)
    fs = np.zeros(t.size)
    for k in range(1, kmax + 1):
        odd = k % 2 == 1
        a_k = -0.5 * log2sin if odd else c_odd
        bracket = a_k + np.cos(k * t) * (fc - c_odd) + np.sin(k * t) * fs
        if odd:
            bracket = bracket + 0.5 / k
        lk = -(4.0 / k) * bracket
        if odd:
            lk = lk - 2.0 * np.log(2.0) / k
        L[:, k - 1] = lk
        if odd:
            # j = k enters the partial sums of every later mode
            fc = fc + np.cos(k * t) / k
            fs = fs + np.sin(k * t) / k
    return C, L


@functools.lru_cache(maxsize=32)
def modal_log_tables(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Cached (C, L) tables on the m-point cheb_angles grid, kmax = m."""
    C, L = modal_log_tables_at(cheb_angles(m), m)
    return _frozen(C), _frozen(L)


# -- periodic log quadrature on closed curves --------------------------------


@functools.lru_cache(maxsize=32)
def kress_log_matrix(n: int) -> np.ndarray:
    """Weights R[i, j] for the periodic log kernel on the 2n-point grid.

    sum_j R[i, j] f(t_j) ~= int_0^{2pi} log(4 sin^2((t_i - tau)/2)) f(tau) dtau
    with t_j = j pi / n; exact for trigonometric polynomials of degree < n.
    """
    nn = 2 * n
    d = np.arange(nn) * np.pi / n
    m = np.arange(1, n)
    prof = -(2 * np.pi / n) * (np.cos(np.outer(d, m)) / m).sum(axis=1)
    prof -= (np.pi / n**2) * np.cos(n * d)
    idx = (np.arange(nn)[:, None] - np.arange(nn)[None, :]) % nn
    return _frozen(prof[idx])


# -- composite Gauss panels ---------------------------------------------------


def gauss_panels(edges: np.ndarray, nper: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on the panels defined by sorted edges."""
    edges = np.asarray(edges, dtype=float)
    x, w = np.polynomial.legendre.leggauss(nper)
    a = edges[:-1]
    h = np.diff(edges)
    nodes = (a[:, None] + 0.5 * h[:, None] * (x + 1.0)).ravel()
    weights = (0.5 * h[:, None] * w).ravel()
    return nodes, weights


def graded_edges(a: float, b: float, npanels: int, power: float = 3.0,
                 toward: str = "both") -> np.ndarray:
    """Panel edges on [a, b] graded toward one or both endpoints."""
    u = np.linspace(0.0, 1.0, npanels + 1)
    if toward == "left":
        g = u**power
    elif toward == "right":
        g = 1.0 - (1.0 - u) ** power
    elif toward == "both":
        up = u**power
        g = up / (up + (1.0 - u) ** power)
    else:
        raise ValueError(f"unknown grading side: {toward!r}")
    return a + (b - a) * g


# -- tiny least-squares helper -------------------------------------------------


def linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line y ~ slope * x + intercept; returns (slope, intercept, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ sol
    tot = y - y.mean()
    denom = float(tot @ tot)
    r2 = 1.0 if denom == 0 else 1.0 - float(resid @ resid) / denom
    return float(sol[0]), float(sol[1]), r2
