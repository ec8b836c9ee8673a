"""Discrete boundary maps and operator distances in spectral Sobolev frames.

Global D-N and N-D maps, plus local (patch-restricted) compressions, are
assembled column by column from forward solves against an arc-length
trigonometric basis.  Operator distances between two maps are computed as
bilinear-form sups in the H^{1/2} x H^{1/2} (D-N) or H^{-1/2} x H^{-1/2}
(N-D) pairs, realized spectrally with (1 + k^2)^{1/4} weights.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .curves import Crack
from .forward import ForwardSolver
from .potentials import BoundaryGrid

KINDS = ("DN", "ND", "local-DN", "local-ND")

# relative eigenvalue threshold below which cutoff modes are treated as
# linearly dependent and dropped from the patch frame
PATCH_RANK_TOL = 1e-8


def arclength_angle(bg: BoundaryGrid) -> np.ndarray:
    """Arc length along the boundary at the grid nodes, scaled to [0, 2pi).

    The node parameter t is not proportional to arc length on a generic
    curve; the cumulative integral of the speed is computed spectrally.
    """
    sp = bg.speeds
    n = sp.size
    c = np.fft.rfft(sp) / n
    mean = c[0].real
    k = np.arange(1, c.size)
    # antiderivative of the oscillatory part, zero at t = 0
    osc = np.zeros(n)
    for kk, ck in zip(k, c[1:]):
        amp = 2.0 if 2 * kk != n else 1.0
        osc += amp * (ck.real * np.sin(kk * bg.t) -
                      ck.imag * (np.cos(kk * bg.t) - 1.0)) / kk
    s = mean * bg.t + osc
    return 2.0 * np.pi * s / (mean * 2.0 * np.pi)


@dataclass
class BoundaryBasis:
    """Trigonometric modes in arc length, orthonormal in the discrete pairing.

    Mode ordering: constant, then cos/sin pairs of increasing frequency.
    freqs holds the frequency label of each mode; Sobolev weights are
    (1 + k^2)^{1/4} per coefficient (squared norms carry (1 + k^2)^{1/2}).
    """

    bg: BoundaryGrid
    modes: np.ndarray = field(repr=False)
    freqs: np.ndarray = field(repr=False)

    @classmethod
    def trig(cls, bg: BoundaryGrid, count: int = 64) -> "BoundaryBasis":
        if count < 1 or count > bg.size - 2:
            raise ValueError("mode count must lie in [1, nodes - 2]")
        theta = arclength_angle(bg)
        cols = [np.ones(bg.size)]
        freqs = [0]
        k = 1
        while len(cols) < count:
            cols.append(np.cos(k * theta))
            freqs.append(k)
            if len(cols) < count:
                cols.append(np.sin(k * theta))
                freqs.append(k)
            k += 1
        raw = np.stack(cols, axis=1)
        # exact discrete orthonormality; Cholesky keeps the frequency order
        gram = raw.T @ (bg.w[:, None] * raw)
        low = np.linalg.cholesky(gram)
        modes = np.linalg.solve(low, raw.T).T
        return cls(bg, modes, np.asarray(freqs))

    @property
    def count(self) -> int:
        return self.modes.shape[1]

    def pairing(self, values: np.ndarray) -> np.ndarray:
        """L2 boundary pairing of nodal values against every mode."""
        values = np.asarray(values, dtype=float)
        return self.modes.T @ (self.bg.w[:, None] * values) \
            if values.ndim == 2 else self.modes.T @ (self.bg.w * values)

    def synth(self, coeffs: np.ndarray) -> np.ndarray:
        return self.modes @ np.asarray(coeffs, dtype=float)

    def half_weights(self) -> np.ndarray:
        return (1.0 + self.freqs.astype(float) ** 2) ** 0.25

    def signature(self) -> str:
        h = hashlib.sha256()
        h.update(self.modes.astype("<f8").tobytes())
        h.update(self.freqs.astype("<i8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class BoundaryPatch:
    """Boundary portion cut out by the ball of radius rho0 around center."""

    center: tuple
    rho0: float

    def cutoff(self, pts: np.ndarray) -> np.ndarray:
        """Smooth bump equal to 1 at the center, supported in the ball."""
        r = np.linalg.norm(np.atleast_2d(pts) - np.asarray(self.center),
                           axis=-1) / self.rho0
        out = np.zeros(r.shape)
        inside = r < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        return out

    def key(self) -> tuple:
        return (float(self.center[0]), float(self.center[1]),
                float(self.rho0))


def patch_frame(basis: BoundaryBasis, patch: BoundaryPatch,
                zero_mean: bool = False,
                rank_tol: float = PATCH_RANK_TOL) -> np.ndarray:
    """Coefficient frame of the patch subspace, orthonormal columns.

    Global modes are multiplied by the patch cutoff, projected back onto
    the basis span, and re-orthonormalized; near-dependent directions are
    dropped.  With zero_mean the constant component is deflated first, so
    the frame lies in the zero-mean coefficient subspace.
    """
    chi = patch.cutoff(basis.bg.points)
    if np.max(chi) < 1e-12:
        raise ValueError("patch does not meet the boundary")
    coeff = basis.pairing(chi[:, None] * basis.modes)
    if zero_mean:
        coeff[0] = 0.0
    gram = coeff.T @ coeff
    vals, vecs = np.linalg.eigh(gram)
    keep = vals > rank_tol * vals[-1]
    if not np.any(keep):
        raise ValueError("patch frame is empty at this rank tolerance")
    frame = coeff @ (vecs[:, keep] / np.sqrt(vals[keep]))
    # second pass repairs the roundoff the near-null directions pick up
    low = np.linalg.cholesky(frame.T @ frame)
    return np.linalg.solve(low, frame.T).T


@dataclass
class DiscreteBoundaryMap:
    """A K x K (or patch-frame) boundary operator with its norm frame.

    rfac is the upper-triangular factor of the Sobolev Gram of the trial
    space; operator distances are sups of the bilinear form, computed as
    sigma_max(rfac^{-T} (M1 - M2) rfac^{-1}).
    """

    matrix: np.ndarray = field(repr=False)
    kind: str
    freqs: np.ndarray = field(repr=False)
    rfac: np.ndarray = field(repr=False)
    frame: np.ndarray | None = field(default=None, repr=False)
    patch: tuple | None = None
    basis_sig: str = ""
    provenance: str = ""
    defect: float = 0.0

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def compatible(self, other: "DiscreteBoundaryMap") -> None:
        if self.kind != other.kind:
            raise ValueError(f"kind mismatch: {self.kind} vs {other.kind}")
        if self.basis_sig != other.basis_sig:
            raise ValueError("maps assembled on different bases")
        if self.patch != other.patch:
            raise ValueError("maps assembled on different patches")
        if self.matrix.shape != other.matrix.shape:
            raise ValueError("matrix size mismatch")


def _weighted(rfac: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """rfac^{-T} @ mat @ rfac^{-1} without forming the inverse."""
    step = np.linalg.solve(rfac.T, mat)
    return np.linalg.solve(rfac.T, step.T).T


def selfadjoint_defect(m: DiscreteBoundaryMap) -> float:
    """Asymmetry of the bilinear form in the pairing-weighted norm."""
    if m.kind not in ("DN", "ND"):
        raise ValueError("defect is defined for global DN/ND kinds")
    return float(np.linalg.norm(
        _weighted(m.rfac, m.matrix - m.matrix.T), 2))


def op_norm_diff(m1: DiscreteBoundaryMap, m2: DiscreteBoundaryMap) -> float:
    """Operator-norm distance in the Sobolev pair matching the kind."""
    m1.compatible(m2)
    return float(np.linalg.norm(_weighted(m1.rfac, m1.matrix - m2.matrix), 2))


def assemble_map(basis: BoundaryBasis, cracks=(), kind: str = "DN",
                 patch: BoundaryPatch | None = None, m: int = 96,
                 provenance: str = "", fault: str | None = None,
                 ) -> DiscreteBoundaryMap:
    """Assemble a discrete boundary map by forward solves per basis mode.

    Column j is the boundary response (flux for DN kinds, trace for ND
    kinds) to basis mode j, paired back against the basis.  Local kinds
    act on the patch frame; ND kinds act on zero-mean modes.  fault="skew"
    deliberately perturbs the output pairing (defect-detector hook).
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    local = kind.startswith("local")
    if local and patch is None:
        raise ValueError("local kinds need a patch")
    if not local and patch is not None:
        raise ValueError("patch given for a global kind")
    dirichlet = kind.endswith("DN")

    K = basis.count
    if local:
        frame = patch_frame(basis, patch, zero_mean=not dirichlet)
    elif dirichlet:
        frame = np.eye(K)
    else:
        frame = np.eye(K)[:, 1:]  # deflate the constant mode

    bg = basis.bg
    solver = ForwardSolver(bg.curve, list(cracks), n=bg.n, m=m)
    data = basis.synth(frame)
    if dirichlet:
        resp = solver.dirichlet_flux_batch(data)
    else:
        resp = solver.neumann_trace_batch(data)
    if not np.all(np.isfinite(resp)):
        bad = int(np.argwhere(~np.isfinite(resp).all(axis=0))[0, 0])
        raise ArithmeticError(f"column solve failed for mode {bad}")

    w = bg.w
    if fault == "skew":
        w = w * (1.0 + 0.05 * np.sin(bg.t))
    elif fault is not None:
        raise ValueError(f"unknown fault {fault!r}")
    mat = frame.T @ (basis.modes.T @ (w[:, None] * resp))

    wh = basis.half_weights()
    scale = wh if dirichlet else 1.0 / wh
    gram_fac = scale[:, None] * frame
    rfac = np.linalg.qr(gram_fac, mode="r")
    # a fixed sign convention keeps archives bit-reproducible
    sgn = np.sign(np.diag(rfac))
    sgn[sgn == 0] = 1.0
    rfac = sgn[:, None] * rfac

    out = DiscreteBoundaryMap(
        matrix=mat, kind=kind, freqs=basis.freqs.copy(), rfac=rfac,
        frame=frame if local else None,
        patch=patch.key() if patch else None,
        basis_sig=basis.signature(), provenance=provenance)
    out.defect = float(np.linalg.norm(_weighted(rfac, mat - mat.T), 2))
    return out


def compress_map(m: DiscreteBoundaryMap, basis: BoundaryBasis,
                 patch: BoundaryPatch) -> DiscreteBoundaryMap:
    """Compression of a global map onto the patch frame (no new solves)."""
    if m.kind not in ("DN", "ND"):
        raise ValueError("compression starts from a global map")
    dirichlet = m.kind == "DN"
    frame = patch_frame(basis, patch, zero_mean=not dirichlet)
    emb = frame if dirichlet else frame[1:]
    mat = emb.T @ m.matrix @ emb
    wh = basis.half_weights()
    scale = wh if dirichlet else 1.0 / wh
    rfac = np.linalg.qr(scale[:, None] * frame, mode="r")
    sgn = np.sign(np.diag(rfac))
    sgn[sgn == 0] = 1.0
    rfac = sgn[:, None] * rfac
    out = DiscreteBoundaryMap(
        matrix=mat, kind="local-" + m.kind, freqs=m.freqs.copy(), rfac=rfac,
        frame=frame, patch=patch.key(), basis_sig=m.basis_sig,
        provenance=m.provenance)
    out.defect = float(np.linalg.norm(_weighted(rfac, mat - mat.T), 2))
    return out


# -- operator archive -----------------------------------------------------------

MAGIC = b"CPOPMAP1"


def save_map(m: DiscreteBoundaryMap, path: str) -> None:
    """Binary archive plus JSON sidecar; round-trips bit-exactly."""
    header = {
        "kind": m.kind,
        "size": int(m.size),
        "nfreq": int(m.freqs.size),
        "patch": list(m.patch) if m.patch else None,
        "basis_sig": m.basis_sig,
        "provenance": m.provenance,
        "defect": m.defect,
        "frame": m.frame is not None,
    }
    hb = json.dumps(header, sort_keys=True,
                    separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += np.uint64(len(hb)).astype("<u8").tobytes()
    blob += hb
    blob += m.freqs.astype("<i8").tobytes()
    blob += m.matrix.astype("<f8").tobytes()
    blob += m.rfac.astype("<f8").tobytes()
    if m.frame is not None:
        blob += m.frame.astype("<f8").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)
    side = dict(header)
    side["file"] = os.path.basename(path)
    with open(path + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def load_map(path: str) -> DiscreteBoundaryMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError("not an operator archive")
    hlen = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    off = 16 + hlen
    nf = header["nfreq"]
    p = header["size"]
    freqs = np.frombuffer(raw[off:off + 8 * nf], dtype="<i8").copy()
    off += 8 * nf
    mat = np.frombuffer(raw[off:off + 8 * p * p],
                        dtype="<f8").reshape(p, p).copy()
    off += 8 * p * p
    rfac = np.frombuffer(raw[off:off + 8 * p * p],
                         dtype="<f8").reshape(p, p).copy()
    off += 8 * p * p
    frame = None
    if header["frame"]:
        rows = (len(raw) - off) // (8 * p)
        frame = np.frombuffer(raw[off:off + 8 * rows * p],
                              dtype="<f8").reshape(rows, p).copy()
    patch = tuple(header["patch"]) if header["patch"] else None
    return DiscreteBoundaryMap(
        matrix=mat, kind=header["kind"], freqs=freqs, rfac=rfac,
        frame=frame, patch=patch, basis_sig=header["basis_sig"],
        provenance=header["provenance"], defect=header["defect"])
