"""Crack-comparison metrics: Hausdorff distance, reachable set, l-distance."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from crackprobe import geometry as ge
from crackprobe.curves import Circle, CrackCurve

DISK = Circle((0.0, 0.0), 1.0)


def brute_hausdorff(P, Q):
    D = np.linalg.norm(P[:, None, :] - Q[None, :, :], axis=-1)
    return max(D.min(axis=1).max(), D.min(axis=0).max())


def test_apriori_validation_names_fields():
    ge.AprioriData(r0=0.25, M=0.5, D=2.0, gamma_bar=1.0, alpha=1.0)
    with pytest.raises(ValueError, match="r0"):
        ge.AprioriData(r0=0.0, M=0.5, D=2.0, gamma_bar=1.0, alpha=1.0)
    with pytest.raises(ValueError, match="gamma_bar"):
        ge.AprioriData(r0=0.25, M=0.5, D=2.0, gamma_bar=-1.0, alpha=1.0)
    with pytest.raises(ValueError, match="alpha"):
        ge.AprioriData(r0=0.25, M=0.5, D=2.0, gamma_bar=1.0, alpha=1.5)
    with pytest.raises(ValueError, match="n"):
        ge.AprioriData(r0=0.25, M=0.5, D=2.0, gamma_bar=1.0, alpha=1.0, n=3)
    assert ge.AprioriData(0.25, 0.5, 2.0, 1.0, 1.0).aperture == 1.0


def test_hausdorff_identity_and_offset():
    seg = CrackCurve.segment((-0.5, 0.0), (0.5, 0.0))
    P = ge.sample_curve(seg, 1e-3)
    assert ge.hausdorff_distance(P, P) == 0.0
    Q = ge.sample_curve(seg.translated((0.0, 0.1)), 1e-3)
    assert_allclose(ge.hausdorff_distance(P, Q), 0.1, atol=2e-3)


def test_hausdorff_rotated_segment_brute_force():
    # unit segment vs its 90 degree rotation about a shared endpoint
    s1 = CrackCurve.segment((0.0, 0.0), (1.0, 0.0))
    s2 = s1.rotated(np.pi / 2, about=(0.0, 0.0))
    P = ge.sample_curve(s1, 1e-4)
    Q = ge.sample_curve(s2, 1e-4)
    d = ge.hausdorff_distance(P, Q)
    Pc = ge.sample_curve(s1, 2e-3)
    Qc = ge.sample_curve(s2, 2e-3)
    assert_allclose(d, brute_hausdorff(Pc, Qc), atol=5e-3)
    assert_allclose(d, 1.0, atol=1e-3)  # farthest point is the free endpoint


def test_hausdorff_symmetry_and_triangle():
    delta = 1e-3
    curves = [
        CrackCurve.segment((-0.4, 0.0), (0.4, 0.0)),
        CrackCurve.segment((-0.4, 0.05), (0.4, 0.1)),
        CrackCurve.arc((0.0, -0.3), 0.5, 0.8, 2.3),
    ]
    samples = [ge.sample_curve(c, delta) for c in curves]
    d01 = ge.hausdorff_distance(samples[0], samples[1])
    d10 = ge.hausdorff_distance(samples[1], samples[0])
    assert d01 == d10
    d02 = ge.hausdorff_distance(samples[0], samples[2])
    d12 = ge.hausdorff_distance(samples[1], samples[2])
    assert d02 <= d01 + d12 + 2 * delta


def test_hausdorff_rejects_empty():
    with pytest.raises(ValueError):
        ge.hausdorff_distance(np.empty((0, 2)), np.zeros((3, 2)))


def test_sample_curve_spacing():
    seg = CrackCurve.segment((0.0, 0.0), (1.0, 0.0))
    P = ge.sample_curve(seg, 0.01)
    gaps = np.linalg.norm(np.diff(P, axis=0), axis=1)
    assert np.max(gaps) <= 0.0101
    C = ge.sample_curve(DISK, 0.01)
    gaps = np.linalg.norm(np.diff(C, axis=0), axis=1)
    assert np.max(gaps) <= 0.0101


def test_reachable_no_cracks_fills_domain():
    cone = ge.ConeParams(A=1.0, l=0.08)
    vl = ge.reachable_set(DISK, [], cone, r=0.1, grid_n=256)
    # the eroded core of the domain is certainly reachable
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, size=(4000, 2))
    pts = pts[np.linalg.norm(pts, axis=1) < 1.0 - cone.l - 0.02]
    assert vl.coverage(pts) >= 0.999


def test_reachable_straight_crack_boundary_membership():
    # every point of a single straight crack registers on the V_l boundary
    crack = CrackCurve.segment((-0.4, 0.0), (0.4, 0.0))
    cone = ge.ConeParams(A=1.0, l=0.06)
    vl = ge.reachable_set(DISK, [crack], cone, r=0.1, grid_n=512)
    P = ge.sample_curve(crack, 5e-3)
    hits = vl.on_boundary(P)
    assert hits.all(), f"{(~hits).sum()} of {hits.size} samples off the boundary"
    # and the crack is never inside V_l
    assert np.all(vl.distance(P) > 0)


def test_reachable_cavity_excluded():
    # two nested C-shaped cracks with a mouth narrower than the tube diameter
    gap = np.deg2rad(10.0)
    outer = CrackCurve.arc((0.0, 0.0), 0.55, gap, 2 * np.pi - gap)
    inner = CrackCurve.arc((0.0, 0.0), 0.45, gap, 2 * np.pi - gap)
    cone = ge.ConeParams(A=1.0, l=0.12)
    vl = ge.reachable_set(DISK, [outer, inner], cone, r=0.1, grid_n=512)
    center = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, -0.1]])
    assert np.all(vl.distance(center) > cone.l)


def test_reachable_monotone_in_l():
    crack = CrackCurve.segment((-0.3, 0.1), (0.3, -0.1))
    bbox = (np.array([-1.5, -1.5]), np.array([1.5, 1.5]))
    kw = dict(r=0.1, grid_n=256, bbox=bbox)
    small = ge.reachable_set(DISK, [crack], ge.ConeParams(1.0, 0.05), **kw)
    large = ge.reachable_set(DISK, [crack], ge.ConeParams(1.0, 0.10), **kw)
    assert np.all(small.mask[large.mask])  # V_{l small} contains V_{l large}


def test_reachable_rejects_bad_shell_radius():
    crack = CrackCurve.segment((-0.2, 0.0), (0.9, 0.0))  # close to the wall
    with pytest.raises(ValueError, match="clearance"):
        ge.reachable_set(DISK, [crack], ge.ConeParams(1.0, 0.05), r=0.5,
                         grid_n=128)


def test_l_distance_identity_and_offset():
    s1 = CrackCurve.segment((-0.4, 0.05), (0.4, 0.05))
    s2 = CrackCurve.segment((-0.4, -0.05), (0.4, -0.05))
    cone = ge.ConeParams(A=1.0, l=0.04)
    vl_same = ge.reachable_set(DISK, [s1, s1], cone, r=0.1, grid_n=384)
    assert ge.l_distance(s1, s1, vl_same) == 0.0

    vl = ge.reachable_set(DISK, [s1, s2], cone, r=0.1, grid_n=384)
    dl = ge.l_distance(s1, s2, vl)
    P1 = ge.sample_curve(s1, 2.0 * vl.cell)
    P2 = ge.sample_curve(s2, 2.0 * vl.cell)
    dh = ge.hausdorff_distance(P1, P2)
    # fully reachable pair: the restriction loses nothing
    assert_allclose(dl, dh, rtol=1e-12)
    assert dl <= dh + 1e-12


def test_l_distance_bounded_by_hausdorff():
    base = CrackCurve.arc((0.0, -0.2), 0.5, 0.9, 2.2)
    cone = ge.ConeParams(A=1.0, l=0.05)
    for amp in (0.02, 0.06):
        other = base.bent((0.0, 1.0), amp)
        vl = ge.reachable_set(DISK, [base, other], cone, r=0.1, grid_n=384)
        dl = ge.l_distance(base, other, vl)
        dh = ge.hausdorff_distance(ge.sample_curve(base, 1e-3),
                                   ge.sample_curve(other, 1e-3))
        assert dl <= dh + 2.5 * vl.cell


def test_geometry_report_fields():
    apriori = ge.AprioriData(r0=0.25, M=2.0, D=3.0, gamma_bar=2.0, alpha=1.0)
    from crackprobe.curves import Crack, Impedance
    cracks = [Crack(CrackCurve.segment((-0.4, 0.0), (0.4, 0.0)),
                    Impedance.constant(1.0)),
              Crack(CrackCurve.arc((0.0, -0.2), 0.5, 1.0, 2.1),
                    Impedance.insulating())]
    rep = ge.geometry_report(DISK, cracks, apriori)
    assert rep["n_cracks"] == 2
    assert rep["tips_inside"]
    assert rep["crack_boundary_clearance"] > 0.3
    assert rep["impedance_le_bound"]
    assert "inter_crack_hausdorff" in rep
