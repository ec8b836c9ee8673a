"""Boundary-map tests: disk spectrum oracle, norm oracles, archives."""

import numpy as np
import pytest

from crackprobe.curves import Circle, Crack, CrackCurve, Ellipse, Impedance
from crackprobe.dnmap import (
    BoundaryBasis,
    BoundaryPatch,
    arclength_angle,
    assemble_map,
    compress_map,
    load_map,
    op_norm_diff,
    patch_frame,
    save_map,
    selfadjoint_defect,
)
from crackprobe.potentials import BoundaryGrid

RNG = np.random.default_rng(11)


def robin_crack():
    curve = CrackCurve.arc((0.1, -0.05), 0.4, -2.2, -0.7)
    return Crack(curve, Impedance.constant(1.2, 0.6))


def test_arclength_angle_circle_and_ellipse():
    bg = BoundaryGrid(Circle(radius=1.0), 48)
    assert np.max(np.abs(arclength_angle(bg) - bg.t)) < 1e-12
    bge = BoundaryGrid(Ellipse(a=1.2, b=0.7), 48)
    th = arclength_angle(bge)
    assert th[0] == 0.0
    assert np.all(np.diff(th) > 0)
    # total arc length consistent with the quadrature weights
    ds = np.diff(np.append(th, 2 * np.pi)) * bge.w.sum() / (2 * np.pi)
    assert abs(ds.sum() - bge.w.sum()) < 1e-12


def test_basis_orthonormal():
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 64)
    basis = BoundaryBasis.trig(bg, count=40)
    gram = basis.modes.T @ (bg.w[:, None] * basis.modes)
    assert np.max(np.abs(gram - np.eye(40))) < 1e-12
    assert basis.freqs[0] == 0 and basis.freqs[-1] == 20
    with pytest.raises(ValueError):
        BoundaryBasis.trig(bg, count=bg.size)


def test_disk_dn_spectrum():
    # crack-free unit disk: the map is diag(|k|) in the trigonometric basis
    bg = BoundaryGrid(Circle(radius=1.0), 96)
    basis = BoundaryBasis.trig(bg, count=64)
    m = assemble_map(basis, cracks=(), kind="DN")
    d = np.diag(m.matrix)
    assert np.max(np.abs(d - basis.freqs) / np.maximum(basis.freqs, 1)) < 1e-8
    off = m.matrix - np.diag(d)
    assert np.max(np.abs(off)) < 1e-8
    assert m.defect <= 1e-10
    assert selfadjoint_defect(m) == m.defect


def test_degenerate_crack_limit():
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 64)
    basis = BoundaryBasis.trig(bg, count=32)
    m0 = assemble_map(basis, cracks=(), kind="DN")
    tiny = Crack.insulating(CrackCurve.segment((0.2, 0.1), (0.2001, 0.1001)))
    m1 = assemble_map(basis, cracks=[tiny], kind="DN", m=24)
    assert op_norm_diff(m0, m1) < 1e-8


def test_inverse_pair_composition():
    # insulating crack: fluxes balance exactly, so N inverts the zero-mean
    # restriction of the D-N map
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 96)
    basis = BoundaryBasis.trig(bg, count=64)
    crack = Crack.insulating(CrackCurve.arc((0.1, -0.05), 0.4, -2.2, -0.7))
    dn = assemble_map(basis, cracks=[crack], kind="DN", m=64)
    nd = assemble_map(basis, cracks=[crack], kind="ND", m=64)
    comp = nd.matrix @ dn.matrix[1:, 1:]
    assert np.linalg.norm(comp - np.eye(63), 2) <= 1e-7


def test_selfadjoint_defect_refinement_and_fault():
    crack = robin_crack()
    defects = []
    for n, m in ((40, 40), (80, 80)):
        bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), n)
        basis = BoundaryBasis.trig(bg, count=24)
        defects.append(assemble_map(basis, cracks=[crack], kind="DN", m=m)
                       .defect)
    assert defects[1] < 0.5 * defects[0]
    assert defects[1] <= 1e-6

    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 40)
    basis = BoundaryBasis.trig(bg, count=24)
    bad = assemble_map(basis, cracks=[crack], kind="DN", m=40, fault="skew")
    assert bad.defect > 1e-3
    with pytest.raises(ValueError):
        assemble_map(basis, cracks=[crack], kind="DN", m=40, fault="wobble")


def test_nd_defect_and_zero_mean():
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 64)
    basis = BoundaryBasis.trig(bg, count=32)
    nd = assemble_map(basis, cracks=[robin_crack()], kind="ND", m=48)
    assert nd.matrix.shape == (31, 31)
    assert nd.defect <= 1e-6


def test_op_norm_identity_and_impedance_ramp():
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 48)
    basis = BoundaryBasis.trig(bg, count=32)
    curve = CrackCurve.arc((0.1, -0.05), 0.4, -2.2, -0.7)
    base = assemble_map(basis, cracks=[Crack(curve, Impedance.constant(1.0))],
                        kind="DN", m=48)
    assert op_norm_diff(base, base) == 0.0
    eps = []
    for c in (0.4, 0.2, 0.1, 0.05, 0.025):
        pert = assemble_map(
            basis, cracks=[Crack(curve, Impedance.constant(1.0 + c, 1.0))],
            kind="DN", m=48)
        eps.append(op_norm_diff(base, pert))
    eps = np.array(eps)
    assert np.all(eps > 0)
    assert np.all(np.diff(eps) < 0)


def test_op_norm_randomized_oracle():
    # translated crack pair; brute-force sup over random unit inputs plus
    # power iteration must reproduce the SVD value
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 48)
    basis = BoundaryBasis.trig(bg, count=32)
    curve = CrackCurve.arc((0.1, -0.05), 0.4, -2.2, -0.7)
    moved = CrackCurve.arc((0.125, -0.025), 0.4, -2.2, -0.7)
    imp = Impedance.constant(1.0, 0.7)
    m1 = assemble_map(basis, cracks=[Crack(curve, imp)], kind="DN", m=48)
    m2 = assemble_map(basis, cracks=[Crack(moved, imp)], kind="DN", m=48)
    eps = op_norm_diff(m1, m2)

    wh = basis.half_weights()
    A = (m1.matrix - m2.matrix) / wh[:, None] / wh[None, :]
    best, bx = 0.0, None
    for _ in range(200):
        x = RNG.standard_normal(32)
        x /= np.linalg.norm(x)
        v = np.linalg.norm(A @ x)
        if v > best:
            best, bx = v, x
    assert best <= eps * (1 + 1e-12)
    for _ in range(60):
        bx = A.T @ (A @ bx)
        bx /= np.linalg.norm(bx)
    oracle = np.linalg.norm(A @ bx)
    assert abs(eps - oracle) <= 0.05 * eps


def test_op_norm_translation_continuity():
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 48)
    basis = BoundaryBasis.trig(bg, count=32)
    imp = Impedance.constant(1.0, 0.7)

    def shifted(d):
        c = CrackCurve.arc((0.1 + d, -0.05), 0.4, -2.2, -0.7)
        return assemble_map(basis, cracks=[Crack(c, imp)], kind="DN", m=48)

    base = shifted(0.0)
    deltas = np.array([0.01, 0.02, 0.03, 0.04, 0.05])
    eps = np.array([op_norm_diff(base, shifted(d)) for d in deltas])
    assert np.all(np.diff(eps) > 0)
    lip = eps[-1] / deltas[-1]
    gaps = np.abs(np.diff(eps)) / np.diff(deltas)
    assert np.all(gaps <= 2.0 * lip)


def test_local_maps_consistency_and_monotonicity():
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 64)
    basis = BoundaryBasis.trig(bg, count=32)
    x0 = bg.curve.point(0.7)
    patch = BoundaryPatch((float(x0[0]), float(x0[1])), 0.8)
    crack = robin_crack()

    frame = patch_frame(basis, patch)
    assert np.max(np.abs(frame.T @ frame - np.eye(frame.shape[1]))) < 1e-10
    zm = patch_frame(basis, patch, zero_mean=True)
    assert np.max(np.abs(zm[0])) == 0.0

    loc = assemble_map(basis, cracks=[crack], kind="local-DN",
                       patch=patch, m=48)
    glob = assemble_map(basis, cracks=[crack], kind="DN", m=48)
    comp = compress_map(glob, basis, patch)
    assert np.max(np.abs(loc.matrix - comp.matrix)) < 1e-8
    assert op_norm_diff(loc, comp) < 1e-8

    # restricted sup never exceeds the global one
    moved = Crack(CrackCurve.arc((0.13, -0.02), 0.4, -2.2, -0.7),
                  crack.impedance)
    glob2 = assemble_map(basis, cracks=[moved], kind="DN", m=48)
    loc2 = assemble_map(basis, cracks=[moved], kind="local-DN",
                        patch=patch, m=48)
    assert op_norm_diff(loc, loc2) <= op_norm_diff(glob, glob2) * (1 + 1e-10)

    locnd = assemble_map(basis, cracks=[crack], kind="local-ND",
                         patch=patch, m=48)
    globnd = assemble_map(basis, cracks=[crack], kind="ND", m=48)
    compnd = compress_map(globnd, basis, patch)
    assert np.max(np.abs(locnd.matrix - compnd.matrix)) < 1e-8


def test_assemble_validation():
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 48)
    basis = BoundaryBasis.trig(bg, count=16)
    patch = BoundaryPatch((1.1, 0.0), 0.5)
    with pytest.raises(ValueError):
        assemble_map(basis, kind="DtN")
    with pytest.raises(ValueError):
        assemble_map(basis, kind="local-DN")
    with pytest.raises(ValueError):
        assemble_map(basis, kind="DN", patch=patch)
    with pytest.raises(ValueError):
        selfadjoint_defect(assemble_map(basis, kind="local-DN", patch=patch))

    m1 = assemble_map(basis, kind="DN")
    m2 = assemble_map(basis, kind="ND")
    with pytest.raises(ValueError):
        op_norm_diff(m1, m2)
    other = BoundaryBasis.trig(BoundaryGrid(Circle(radius=1.0), 48), count=16)
    with pytest.raises(ValueError):
        op_norm_diff(m1, assemble_map(other, kind="DN"))


def test_archive_roundtrip(tmp_path):
    bg = BoundaryGrid(Ellipse(a=1.1, b=0.85), 48)
    basis = BoundaryBasis.trig(bg, count=24)
    x0 = bg.curve.point(0.7)
    patch = BoundaryPatch((float(x0[0]), float(x0[1])), 0.8)
    for kind, pt in (("DN", None), ("ND", None), ("local-DN", patch)):
        m = assemble_map(basis, cracks=[robin_crack()], kind=kind,
                         patch=pt, m=32, provenance="abc123")
        path = str(tmp_path / f"map-{kind}.bin")
        save_map(m, path)
        back = load_map(path)
        assert back.matrix.tobytes() == m.matrix.tobytes()
        assert back.rfac.tobytes() == m.rfac.tobytes()
        assert back.kind == m.kind and back.patch == m.patch
        assert back.basis_sig == m.basis_sig
        assert back.provenance == "abc123"
        assert back.defect == m.defect
        assert op_norm_diff(back, m) == 0.0
        assert (tmp_path / f"map-{kind}.bin.json").exists()
    bad = tmp_path / "junk.bin"
    bad.write_bytes(b"NOTAMAP!" + b"\0" * 64)
    with pytest.raises(ValueError):
        load_map(str(bad))
