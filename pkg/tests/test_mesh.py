import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfjump import mesh as M


def test_unit_square_counts():
    m = M.generate_mesh(M.rectangle(1.0, 1.0, 0.5))
    assert m.n_elements == 4 and m.n_nodes == 9


def test_refine_band_contract():
    band = M.RefineBand(0.0, 1.0, 0.0, 1.0, 0.25)
    m = M.generate_mesh(M.rectangle(2.0, 1.0, 0.5, [band]))
    left = m.centroids()[:, 0] < 1.0
    assert np.all(m.char_length_h[left] <= 0.25 + 1e-12)
    assert m.char_length_h.max() <= 0.5 + 1e-12


def test_pull_strip_band_resolution():
    ell = 0.04
    pre = M.pull_strip(1.0, 0.5, 0.05, ell / 4, 5 * ell)
    m = M.generate_mesh(pre)
    y = m.centroids()[:, 1]
    inside = np.abs(y - 0.25) < 5 * ell - ell / 4
    assert inside.any()
    assert np.all(m.char_length_h[inside] <= 0.01 + 1e-12)


def test_rectangle_sets_nonempty():
    m = M.generate_mesh(M.rectangle(2.0, 1.0, 0.25))
    for k in ("left", "right", "top", "bottom"):
        assert len(m.node_sets[k]) > 0 and len(m.edge_sets[k]) > 0


def test_pull_strip_halves_disjoint():
    m = M.generate_mesh(M.pull_strip(1.0, 0.5, 0.05, 0.01, 0.05))
    up, lo = set(m.node_sets["left_upper"]), set(m.node_sets["left_lower"])
    assert up and lo and not (up & lo)
    y = m.nodes[:, 1]
    assert np.all(y[list(up)] > 0.25) and np.all(y[list(lo)] < 0.25)


def test_notched_strip_has_slot():
    m = M.generate_mesh(M.pull_strip(1.0, 0.5, 0.05, 0.015, 0.06, notch_length=0.2))
    c = m.centroids()
    in_slot = (c[:, 0] < 0.2) & (np.abs(c[:, 1] - 0.25) < 0.015)
    assert not in_slot.any()
    # the mid-plane nodes on the notch faces are duplicated, none interior to the slot
    left = m.nodes[m.node_sets["left"]]
    assert np.all(np.abs(left[:, 1] - 0.25) > 1e-9)


def test_ct_pins_symmetric():
    pre = M.ct_specimen(W=10.0, h=0.6, h_band=0.25)
    m = M.generate_mesh(pre)
    mid = 0.5 * pre.dim("height")
    up = m.nodes[m.node_sets["upper_pin"]]
    lo = m.nodes[m.node_sets["lower_pin"]]
    assert len(up) > 0 and len(up) == len(lo)
    refl = up.copy()
    refl[:, 1] = 2 * mid - refl[:, 1]
    d = np.linalg.norm(refl[:, None, :] - lo[None, :, :], axis=-1).min(axis=1)
    assert d.max() < 1e-9


def test_hole_plate_hole_set():
    pre = M.hole_plate(4.0, 2.0, [(2.0, 1.0, 0.4)], 0.1)
    m = M.generate_mesh(pre)
    hole = m.nodes[m.node_sets["hole_0"]]
    assert len(hole) > 8
    assert np.allclose(np.hypot(hole[:, 0] - 2.0, hole[:, 1] - 1.0), 0.4, rtol=1e-6)
    # no element centroid inside the hole
    c = m.centroids()
    assert np.all(np.hypot(c[:, 0] - 2.0, c[:, 1] - 1.0) > 0.4)


def test_unknown_kind():
    with pytest.raises(M.MeshError):
        M.generate_mesh(M.GeometryPreset("triangle", {"width": 1, "height": 1}, 0.1))


def test_bad_size():
    with pytest.raises(M.MeshError):
        M.generate_mesh(M.rectangle(1.0, 1.0, -0.1))


def test_boundary_edges_cover_only_boundary():
    m = M.generate_mesh(M.rectangle(1.0, 0.5, 0.1))
    bnd = M.boundary_edges(m.elements)
    a = m.nodes[m.elements[bnd[:, 0], bnd[:, 1]]]
    b = m.nodes[m.elements[bnd[:, 0], (bnd[:, 1] + 1) % 4]]
    mid = 0.5 * (a + b)
    on = (np.isclose(mid[:, 0], 0) | np.isclose(mid[:, 0], 1) | np.isclose(mid[:, 1], 0)
          | np.isclose(mid[:, 1], 0.5))
    assert on.all()
    assert len(bnd) == 2 * (10 + 5)


def test_write_read_roundtrip(tmp_path):
    m = M.generate_mesh(M.pull_strip(1.0, 0.5, 0.1, 0.05, 0.1))
    M.write_mesh(m, tmp_path / "m.txt")
    r = M.read_mesh(tmp_path / "m.txt")
    assert np.array_equal(r.nodes, m.nodes)
    assert np.array_equal(r.elements, m.elements)
    for k in m.node_sets:
        assert np.array_equal(r.node_sets[k], m.node_sets[k])
    for k in m.edge_sets:
        assert np.array_equal(r.edge_sets[k], m.edge_sets[k])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.5, 3.0), st.floats(0.05, 0.5), st.floats(0.2, 0.8))
def test_regeneration_is_identical_and_valid(w, h, size, frac):
    band = M.RefineBand(0.0, w * frac, 0.0, h, size / 2)
    pre = M.rectangle(w, h, size, [band])
    m1, m2 = M.generate_mesh(pre), M.generate_mesh(pre)
    assert np.array_equal(m1.nodes, m2.nodes) and np.array_equal(m1.elements, m2.elements)
    assert np.all(M.corner_jacobians(m1.nodes, m1.elements) > 0)
    assert m1.areas().sum() == pytest.approx(w * h, rel=1e-12)
