import numpy as np
import pytest

from camsplat.scene_io import load_proxy_ply, proxy_arrays
from camsplat.synth import (make_facing_planes, make_plane, make_vds_sphere, read_labels_csv,
                            write_scene)


def test_vds_sphere_labels_follow_z():
    sc = make_vds_sphere(100)
    pa = proxy_arrays(sc.proxy)
    assert [lab == "high" for lab in sc.labels] == (pa.positions[:, 2] >= 0).tolist()
    assert set(pa.vds[pa.positions[:, 2] >= 0]) == {4.0}
    assert set(pa.vds[pa.positions[:, 2] < 0]) == {2.0}


def test_vds_sphere_radial_normals():
    sc = make_vds_sphere(300, radius=2.5)
    pa = proxy_arrays(sc.proxy)
    assert np.max(np.linalg.norm(pa.normals - pa.positions / 2.5, axis=1)) < 1e-9


def test_vds_sphere_equal_scores_still_split():
    with pytest.raises(ValueError):
        make_vds_sphere(100, vds_high=2.0, vds_low=2.0)
    sc = make_vds_sphere(100, vds_high=2.0 + 1e-12, vds_low=2.0)
    assert "high" in sc.labels and "low" in sc.labels


def test_vds_sphere_rejects_tiny():
    with pytest.raises(ValueError):
        make_vds_sphere(7)


def test_plane_four_points():
    sc = make_plane(4)
    pa = proxy_arrays(sc.proxy)
    assert sorted(map(tuple, pa.positions.tolist())) == [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)]
    np.testing.assert_array_equal(pa.normals, np.tile([0, 0, 1.0], (4, 1)))


def test_plane_extent_scales_linearly():
    a = proxy_arrays(make_plane(49, extent=1.0).proxy).positions
    b = proxy_arrays(make_plane(49, extent=3.0).proxy).positions
    np.testing.assert_allclose(b, 3.0 * a, rtol=1e-12)


def test_facing_planes_layout():
    sc = make_facing_planes(gap=0.7, n_points=25)
    pa = proxy_arrays(sc.proxy)
    assert len(pa) == 50
    np.testing.assert_array_equal(pa.positions[:25, 2], 0.0)
    np.testing.assert_array_equal(pa.positions[25:, 2], 0.7)
    assert np.all(pa.normals[:25, 2] == 1) and np.all(pa.normals[25:, 2] == -1)
    with pytest.raises(ValueError):
        make_facing_planes(gap=0.0)


@pytest.mark.parametrize("make", [lambda s: make_vds_sphere(120, seed=s), lambda s: make_plane(50, seed=s),
                                  lambda s: make_facing_planes(0.4, 30, seed=s)])
def test_deterministic_and_ply_roundtrip(make, tmp_path):
    a, b = make(3), make(3)
    pa, pb = proxy_arrays(a.proxy), proxy_arrays(b.proxy)
    np.testing.assert_array_equal(pa.positions, pb.positions)
    write_scene(a, tmp_path)
    back = proxy_arrays(load_proxy_ply(tmp_path / "proxy.ply"))
    np.testing.assert_array_equal(back.positions, pa.positions)
    np.testing.assert_allclose(back.normals, pa.normals, rtol=0, atol=1e-15)  # loader renormalizes
    np.testing.assert_array_equal(back.vds, pa.vds)
    np.testing.assert_array_equal(back.radii, pa.radii)
    assert read_labels_csv(tmp_path / "labels.csv") == a.labels
