"""Curve geometry: smooth closed boundaries and open crack arcs.

Cracks are parametrized over q in [-1, 1].  The unit normal
nu = rot90(z') / |z'| points to the left of the travel direction and marks
the + side of the crack everywhere; all jump conventions downstream rely on
this orientation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline


def rot90(v: np.ndarray) -> np.ndarray:
    """Counterclockwise quarter turn: (x, y) -> (-y, x)."""
    out = np.empty_like(np.asarray(v, dtype=float))
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def _as_points(t, fn):
    t = np.asarray(t, dtype=float)
    return fn(t)


# -- closed boundary curves ---------------------------------------------------


class ClosedCurve:
    """Smooth closed curve, counterclockwise, 2*pi-periodic parameter."""

    closed = True
    param_range = (0.0, 2.0 * np.pi)

    def point(self, t):  # pragma: no cover - interface
        raise NotImplementedError

    def velocity(self, t):  # pragma: no cover - interface
        raise NotImplementedError

    def accel(self, t):  # pragma: no cover - interface
        raise NotImplementedError

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(self.velocity(t), axis=-1)

    def normal(self, t) -> np.ndarray:
        """Outward unit normal (counterclockwise parametrization assumed)."""
        v = self.velocity(t)
        return -rot90(v) / np.linalg.norm(v, axis=-1, keepdims=True)

    def polyline(self, n: int = 2048) -> np.ndarray:
        t = np.linspace(*self.param_range, n, endpoint=False)
        return self.point(t)

    def contains(self, pts) -> np.ndarray:
        return points_in_polygon(np.asarray(pts, dtype=float), self.polyline())

    def boundary_distance(self, pts) -> np.ndarray:
        """Unsigned distance to the curve (polyline approximation)."""
        from scipy.spatial import cKDTree

        d, _ = cKDTree(self.polyline(4096)).query(np.asarray(pts, dtype=float))
        return d

    @property
    def length(self) -> float:
        t = np.linspace(*self.param_range, 4096, endpoint=False)
        return float(np.mean(self.speed(t)) * 2.0 * np.pi)

    def centroid(self) -> np.ndarray:
        """Area centroid (shoelace formula on a dense polyline)."""
        p = self.polyline(4096)
        x, y = p[:, 0], p[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        area = 0.5 * cr.sum()
        return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) \
            / (6.0 * area)


@dataclass(frozen=True)
class Circle(ClosedCurve):
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def point(self, t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(self.center)
        return c + self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return self.radius * np.stack([-np.sin(t), np.cos(t)], axis=-1)

    def accel(self, t):
        t = np.asarray(t, dtype=float)
        return self.radius * np.stack([-np.cos(t), -np.sin(t)], axis=-1)

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.linalg.norm(pts - np.asarray(self.center), axis=-1) < self.radius

    def boundary_distance(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.abs(np.linalg.norm(pts - np.asarray(self.center), axis=-1)
                      - self.radius)

    @property
    def length(self) -> float:
        return 2.0 * np.pi * self.radius


@dataclass(frozen=True)
class Ellipse(ClosedCurve):
    center: tuple[float, float] = (0.0, 0.0)
    a: float = 1.0
    b: float = 1.0

    def point(self, t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(self.center)
        return c + np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=-1)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([-self.a * np.sin(t), self.b * np.cos(t)], axis=-1)

    def accel(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([-self.a * np.cos(t), -self.b * np.sin(t)], axis=-1)

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float) - np.asarray(self.center)
        return (pts[..., 0] / self.a) ** 2 + (pts[..., 1] / self.b) ** 2 < 1.0


@dataclass(frozen=True)
class DilatedCurve(ClosedCurve):
    """Base curve scaled by a fixed factor about a fixed center.

    Keeps exact membership/distance queries when the base has them: the
    dilation is inverted analytically instead of re-sampling a polyline.
    """

    base: ClosedCurve
    factor: float
    center: tuple[float, float]

    def point(self, t):
        c = np.asarray(self.center)
        return c + self.factor * (self.base.point(t) - c)

    def velocity(self, t):
        return self.factor * self.base.velocity(t)

    def accel(self, t):
        return self.factor * self.base.accel(t)

    def contains(self, pts):
        c = np.asarray(self.center)
        inner = c + (np.asarray(pts, dtype=float) - c) / self.factor
        return self.base.contains(inner)

    def boundary_distance(self, pts):
        c = np.asarray(self.center)
        inner = c + (np.asarray(pts, dtype=float) - c) / self.factor
        return self.factor * self.base.boundary_distance(inner)

    @property
    def length(self) -> float:
        return self.factor * self.base.length


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Crossing-number point-in-polygon test, vectorized over pts."""
    pts = np.atleast_2d(pts)
    x, y = pts[..., 0], pts[..., 1]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    ycross = (y0 <= y[..., None]) != (y1 <= y[..., None])
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y[..., None] - y0) * (x1 - x0) / (y1 - y0)
    hits = ycross & (xint > x[..., None])
    return hits.sum(axis=-1) % 2 == 1


# -- open crack arcs ----------------------------------------------------------


@dataclass
class CrackCurve:
    """Open arc z(q), q in [-1, 1], with exact first and second derivatives."""

    kind: str
    _z: Callable = field(repr=False)
    _dz: Callable = field(repr=False)
    _ddz: Callable = field(repr=False)

    closed = False
    param_range = (-1.0, 1.0)

    def point(self, q):
        return _as_points(q, self._z)

    def velocity(self, q):
        return _as_points(q, self._dz)

    def accel(self, q):
        return _as_points(q, self._ddz)

    def speed(self, q):
        return np.linalg.norm(self.velocity(q), axis=-1)

    def normal(self, q):
        """Unit normal toward the + side (left of the travel direction)."""
        v = self.velocity(q)
        return rot90(v) / np.linalg.norm(v, axis=-1, keepdims=True)

    def curvature(self, q):
        v = self.velocity(q)
        a = self.accel(q)
        cross = v[..., 0] * a[..., 1] - v[..., 1] * a[..., 0]
        return cross / np.linalg.norm(v, axis=-1) ** 3

    def tips(self) -> np.ndarray:
        return self.point(np.array([-1.0, 1.0]))

    def angle_jacobian(self, s):
        """Arc-length factor J(s) = |z'(cos s)| sin s of the angle variable."""
        s = np.asarray(s, dtype=float)
        return self.speed(np.cos(s)) * np.sin(s)

    def arclength(self, q, n: int = 2048):
        """Arc length from the q = -1 tip, by dense trapezoid quadrature."""
        grid = np.linspace(-1.0, 1.0, n)
        sp = self.speed(grid)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (sp[1:] + sp[:-1])
                                               * np.diff(grid))])
        return np.interp(np.asarray(q, dtype=float), grid, cum)

    @property
    def length(self) -> float:
        return float(self.arclength(1.0))

    # constructors

    @classmethod
    def segment(cls, p0, p1) -> "CrackCurve":
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        mid = 0.5 * (p0 + p1)
        half = 0.5 * (p1 - p0)

        def z(q):
            return mid + np.multiply.outer(q, half)

        def dz(q):
            return np.broadcast_to(half, np.shape(q) + (2,)).copy()

        def ddz(q):
            return np.zeros(np.shape(q) + (2,))

        return cls("segment", z, dz, ddz)

    @classmethod
    def arc(cls, center, radius: float, angle0: float, angle1: float) -> "CrackCurve":
        center = np.asarray(center, dtype=float)
        mid = 0.5 * (angle0 + angle1)
        half = 0.5 * (angle1 - angle0)

        def theta(q):
            return mid + half * np.asarray(q, dtype=float)

        def z(q):
            th = theta(q)
            return center + radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

        def dz(q):
            th = theta(q)
            return radius * half * np.stack([-np.sin(th), np.cos(th)], axis=-1)

        def ddz(q):
            th = theta(q)
            return -radius * half**2 * np.stack([np.cos(th), np.sin(th)], axis=-1)

        return cls("arc", z, dz, ddz)

    @classmethod
    def spline(cls, points) -> "CrackCurve":
        """Natural cubic spline through the given points, chordal parameter."""
        points = np.asarray(points, dtype=float)
        if points.shape[0] < 3:
            raise ValueError("spline crack needs at least 3 points")
        chord = np.concatenate([[0.0],
                                np.cumsum(np.linalg.norm(np.diff(points, axis=0),
                                                         axis=-1))])
        t = 2.0 * chord / chord[-1] - 1.0
        sp = CubicSpline(t, points, axis=0, bc_type="natural")
        d1 = sp.derivative(1)
        d2 = sp.derivative(2)
        return cls("spline", lambda q: sp(q), lambda q: d1(q), lambda q: d2(q))

    # derived curves

    def translated(self, shift) -> "CrackCurve":
        shift = np.asarray(shift, dtype=float)
        base = self
        return CrackCurve(self.kind + "+shift",
                          lambda q: base._z(q) + shift,
                          base._dz, base._ddz)

    def rotated(self, angle: float, about=(0.0, 0.0)) -> "CrackCurve":
        about = np.asarray(about, dtype=float)
        c, s = np.cos(angle), np.sin(angle)
        R = np.array([[c, -s], [s, c]])
        base = self

        def apply(fn, affine):
            def out(q):
                v = fn(q)
                w = v @ R.T
                return w + about if affine else w
            return out

        return CrackCurve(self.kind + "+rot",
                          apply(lambda q: base._z(q) - about, True),
                          apply(base._dz, False),
                          apply(base._ddz, False))

    def bent(self, direction, amplitude: float) -> "CrackCurve":
        """Displaced by amplitude * (1-q^2)^2 along a fixed unit direction.

        The quartic profile pins both tips (value and slope), so bending
        families share endpoints with their base crack.
        """
        e = np.asarray(direction, dtype=float)
        e = e / np.linalg.norm(e)
        base = self

        def z(q):
            q = np.asarray(q, dtype=float)
            return base._z(q) + amplitude * np.multiply.outer((1 - q**2) ** 2, e)

        def dz(q):
            q = np.asarray(q, dtype=float)
            prof = -4.0 * q * (1 - q**2)
            return base._dz(q) + amplitude * np.multiply.outer(prof, e)

        def ddz(q):
            q = np.asarray(q, dtype=float)
            prof = -4.0 + 12.0 * q**2
            return base._ddz(q) + amplitude * np.multiply.outer(prof, e)

        return CrackCurve(self.kind + "+bend", z, dz, ddz)

    def reparametrized(self, w, dw, ddw) -> "CrackCurve":
        """Composition z(w(sigma)) with exact chain-rule derivatives."""
        base = self

        def z(q):
            return base._z(w(np.asarray(q, dtype=float)))

        def dz(q):
            q = np.asarray(q, dtype=float)
            return base._dz(w(q)) * dw(q)[..., None]

        def ddz(q):
            q = np.asarray(q, dtype=float)
            wq = w(q)
            return (base._ddz(wq) * dw(q)[..., None] ** 2
                    + base._dz(wq) * ddw(q)[..., None])

        return CrackCurve(self.kind + "+graded", z, dz, ddz)


def sinh_graded_map(q0: float, mu: float):
    """(w, dw, ddw) mapping [-1,1] onto itself, clustering nodes near q0.

    Larger mu concentrates harder; mu ~ 10 shrinks the local mesh near q0
    by roughly sinh(mu)/mu.
    """
    a = np.arcsinh(mu * (-1.0 - q0))
    b = np.arcsinh(mu * (1.0 - q0))

    def arg(sig):
        sig = np.asarray(sig, dtype=float)
        return 0.5 * (a * (1.0 - sig) + b * (1.0 + sig))

    def w(sig):
        return q0 + np.sinh(arg(sig)) / mu

    def dw(sig):
        return np.cosh(arg(sig)) * (b - a) / (2.0 * mu)

    def ddw(sig):
        return np.sinh(arg(sig)) * ((b - a) / 2.0) ** 2 / mu

    return w, dw, ddw


# -- impedance ----------------------------------------------------------------


@dataclass
class Impedance:
    """Robin coefficients gamma+ and gamma- on a crack, as functions of q."""

    plus: Callable = field(repr=False)
    minus: Callable = field(repr=False)
    kind: str = "const"

    @classmethod
    def constant(cls, gp: float, gm: float | None = None) -> "Impedance":
        gm = gp if gm is None else gm
        if gp < 0 or gm < 0:
            raise ValueError("impedance coefficients must be >= 0")

        def make(v):
            return lambda q: np.full(np.shape(q), float(v))

        return cls(make(gp), make(gm), kind="const")

    @classmethod
    def insulating(cls) -> "Impedance":
        return cls.constant(0.0, 0.0)

    @classmethod
    def from_knots(cls, q_knots, plus_vals, minus_vals) -> "Impedance":
        """Cubic interpolation through knots, clipped at 0 (keeps C^{0,1})."""
        q_knots = np.asarray(q_knots, dtype=float)

        def make(vals):
            vals = np.asarray(vals, dtype=float)
            if np.any(vals < 0):
                raise ValueError("impedance knot values must be >= 0")
            sp = CubicSpline(q_knots, vals, bc_type="natural")
            return lambda q: np.maximum(sp(np.asarray(q, dtype=float)), 0.0)

        return cls(make(plus_vals), make(minus_vals), kind="knots")

    def max_value(self) -> float:
        q = np.linspace(-1.0, 1.0, 513)
        return float(max(np.max(self.plus(q)), np.max(self.minus(q))))

    def total_absorption(self, curve: CrackCurve) -> float:
        """int_Sigma (gamma+ + gamma-) dsigma; ~0 marks the gauge-degenerate case."""
        q = np.linspace(-1.0, 1.0, 1025)
        g = self.plus(q) + self.minus(q)
        return float(np.trapezoid(g * curve.speed(q), q))


@dataclass
class Crack:
    """A crack: open arc plus its Robin impedance pair."""

    curve: CrackCurve
    impedance: Impedance

    @classmethod
    def insulating(cls, curve: CrackCurve) -> "Crack":
        return cls(curve, Impedance.insulating())
