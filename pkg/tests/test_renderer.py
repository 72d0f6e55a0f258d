import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camsplat.core import CameraSplat, PointCamera, SplatGlobals, Splats, fibonacci_directions, unit
from camsplat.renderer import (accumulate, composite_front_to_back, footprint, render, render_backward,
                               visibility, write_intensity_csv)

EZ = np.array([0.0, 0.0, 1.0])


def _pc(pos=(0, 0, 0), k=64):
    return PointCamera(pos, EZ, 1.0, np.ones(k, dtype=bool))


def _rot_deg(axis_from, deg):
    """Unit vector at ``deg`` degrees from ``axis_from`` (rotated about a perpendicular)."""
    a = unit(axis_from)
    p = unit(np.cross(a, [1.0, 0.0, 0.0] if abs(a[0]) < 0.9 else [0.0, 1.0, 0.0]))
    t = np.deg2rad(deg)
    return np.cos(t) * a + np.sin(t) * p


def test_visibility_examples():
    g = SplatGlobals(0.1, np.pi / 2, 0.1)
    s = CameraSplat([0, 0, 5], [0, 0, -1])
    assert visibility(s, [0, 0, 0], g) == 1
    off = CameraSplat([0, 0, 5], _rot_deg([0, 0, -1], 46))
    assert visibility(off, [0, 0, 0], g) == 0
    edge = CameraSplat([0, 0, 5], _rot_deg([0, 0, -1], 44.999999))
    assert visibility(edge, [0, 0, 0], g) == 1


def test_footprint_examples():
    g = SplatGlobals(0.2, 1.0, 0.1)
    s = CameraSplat([0, 0, 3], [0, 0, -1])
    assert footprint(EZ, s, [0, 0, 0], g) == 1.0
    assert footprint(_rot_deg(EZ, np.rad2deg(0.2)), s, [0, 0, 0], g) == pytest.approx(np.exp(-0.5), rel=1e-9)
    assert footprint(_rot_deg(EZ, np.rad2deg(0.7)), s, [0, 0, 0], g) == 0.0


def test_single_splat_on_sample():
    basis = fibonacci_directions(64)
    d = basis.directions[10]
    g = SplatGlobals(0.1, 1.0, 0.5)
    img = render(_pc(), [CameraSplat(3 * d, -d)], g, basis)
    assert img.intensities[10] == pytest.approx(0.5, abs=1e-15)


def test_two_coincident_splats():
    basis = fibonacci_directions(64)
    d = basis.directions[3]
    g = SplatGlobals(0.1, 1.0, 0.5)
    img = render(_pc(), [CameraSplat(2 * d, -d), CameraSplat(2 * d, -d)], g, basis)
    assert img.intensities[3] == pytest.approx(0.75, abs=1e-15)


def test_outside_fov_contributes_nothing():
    basis = fibonacci_directions(64)
    g = SplatGlobals(0.3, np.deg2rad(60), 0.5)
    s = CameraSplat([0, 0, 2], _rot_deg([0, 0, -1], 40))
    img = render(_pc(), [s], g, basis)
    assert np.all(img.intensities == 0)


def test_empty_splats_render_zero():
    basis = fibonacci_directions(32)
    img = render(_pc(k=32), [], SplatGlobals(), basis)
    assert np.all(img.intensities == 0)


def test_depth_skip_counter():
    basis = fibonacci_directions(32)
    img = render(_pc(k=32), [CameraSplat([0, 0, 0], EZ), CameraSplat([0, 0, 1], -EZ)], SplatGlobals(), basis,
                 eps_depth=1e-6)
    assert img.n_skipped == 1


def _random_splats(rng, m, radius=3.0):
    c = rng.normal(size=(m, 3))
    c = radius * c / np.linalg.norm(c, axis=1, keepdims=True) * rng.uniform(0.5, 1.5, size=(m, 1))
    # axes roughly toward the origin so most splats are visible
    a = -c / np.linalg.norm(c, axis=1, keepdims=True) + 0.3 * rng.normal(size=(m, 3))
    return Splats(c, a / np.linalg.norm(a, axis=1, keepdims=True), np.zeros(m, bool))


def test_intensity_matches_product_over_contributors():
    rng = np.random.default_rng(0)
    basis = fibonacci_directions(128)
    sp = _random_splats(rng, 12)
    g = SplatGlobals(0.4, 1.5, 0.3)
    img = render(_pc(k=128), sp, g, basis)
    for d in range(128):
        js = img.contributors(d)
        expect = 1.0 - np.prod([1.0 - img.alpha[j, d] for j in js]) if len(js) else 0.0
        assert img.intensities[d] == pytest.approx(expect, abs=1e-9)
        # contributors agree with the scalar reference functions
        for j in js:
            s = CameraSplat(sp.centers[j], sp.axes[j])
            assert visibility(s, [0, 0, 0], g) == 1
            assert img.gauss[j, d] == pytest.approx(footprint(basis.directions[d], s, [0, 0, 0], g), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9))
def test_permutation_invariance_exact(seed, m):
    rng = np.random.default_rng(seed)
    basis = fibonacci_directions(64)
    sp = _random_splats(rng, m)
    g = SplatGlobals(0.5, 2.0, 0.6)
    a = render(_pc(), sp, g, basis).intensities
    perm = rng.permutation(m)
    b = render(_pc(), Splats(sp.centers[perm], sp.axes[perm], sp.frozen[perm]), g, basis).intensities
    assert np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_monotone_and_bounded(seed, m):
    rng = np.random.default_rng(seed)
    basis = fibonacci_directions(64)
    sp = _random_splats(rng, m + 1)
    g = SplatGlobals(0.5, 2.0, 0.95)
    full = render(_pc(), sp, g, basis).intensities
    less = render(_pc(), Splats(sp.centers[:m], sp.axes[:m], sp.frozen[:m]), g, basis).intensities
    assert np.all(full >= less)
    assert np.all((full >= 0) & (full < 1))


def test_alpha_clamp_keeps_intensity_below_one():
    basis = fibonacci_directions(64)
    d = basis.directions[0]
    g = SplatGlobals(0.3, 1.0, 0.999)
    img = render(_pc(), [CameraSplat(2 * d, -d)] * 3, g, basis)
    assert img.alpha.max() == 0.99
    assert img.intensities.max() < 1


def test_front_to_back_equivalence():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        m = rng.integers(1, 20)
        a = rng.uniform(0, 0.99, size=m)
        depth = rng.uniform(0.1, 10, size=m)
        closed = accumulate(a)
        assert abs(composite_front_to_back(a, depth) - closed) <= 1e-12


def _fd_center_grad(pc, sp, g, basis, upstream, h):
    out = np.zeros_like(sp.centers)
    for j in range(len(sp)):
        for c in range(3):
            cp, cm = sp.centers.copy(), sp.centers.copy()
            cp[j, c] += h
            cm[j, c] -= h
            ip = render(pc, Splats(cp, sp.axes, sp.frozen), g, basis).intensities
            im = render(pc, Splats(cm, sp.axes, sp.frozen), g, basis).intensities
            out[j, c] = upstream @ (ip - im) / (2 * h)
    return out


def _stable(pc, sp, g, basis, h):
    """True when no contributor set or clamp flips within +-2h of every centre."""
    base = render(pc, sp, g, basis)
    sig = (base.gauss > 0, base.alpha >= 0.99)
    for j in range(len(sp)):
        for c in range(3):
            for sgn in (-2, 2):
                cc = sp.centers.copy()
                cc[j, c] += sgn * h
                r = render(pc, Splats(cc, sp.axes, sp.frozen), g, basis)
                if not (np.array_equal(r.gauss > 0, sig[0]) and np.array_equal(r.alpha >= 0.99, sig[1])):
                    return False
    return True


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(2024)
    basis = fibonacci_directions(256)
    pc = _pc(k=256)
    g = SplatGlobals(0.3, 1.6, 0.4)
    h = 1e-5 * 3.0
    checked = 0
    while checked < 100:
        sp = _random_splats(rng, 3)
        if not _stable(pc, sp, g, basis, h):
            continue
        upstream = rng.normal(size=256)
        img = render(pc, sp, g, basis)
        ana = render_backward(img, upstream, pc, sp, g)
        fd = _fd_center_grad(pc, sp, g, basis, upstream, h)
        scale = np.abs(fd).max() + 1e-8
        assert np.max(np.abs(ana - fd)) / scale < 1e-4
        checked += 1


def test_backward_zero_tangential_at_peak():
    basis = fibonacci_directions(64)
    d = basis.directions[5]
    g = SplatGlobals(0.2, 1.0, 0.3)
    sp = [CameraSplat(2 * d, -d)]
    pc = _pc()
    img = render(pc, sp, g, basis)
    up = np.zeros(64)
    up[5] = 1.0
    grad = render_backward(img, up, pc, sp, g)[0]
    assert np.linalg.norm(grad - (grad @ d) * d) < 1e-12


def test_backward_independent_of_frozen_flag():
    rng = np.random.default_rng(3)
    basis = fibonacci_directions(64)
    sp = _random_splats(rng, 4)
    fz = Splats(sp.centers, sp.axes, np.ones(4, bool))
    g, pc = SplatGlobals(0.4, 2.0, 0.3), _pc()
    up = rng.normal(size=64)
    a = render_backward(render(pc, sp, g, basis), up, pc, sp, g)
    b = render_backward(render(pc, fz, g, basis), up, pc, fz, g)
    np.testing.assert_array_equal(a, b)


def test_backward_rejects_mismatch():
    basis = fibonacci_directions(32)
    g, pc = SplatGlobals(), _pc(k=32)
    sp = [CameraSplat([0, 0, 2], -EZ)]
    img = render(pc, sp, g, basis)
    with pytest.raises(ValueError):
        render_backward(img, np.ones(32), pc, [CameraSplat([0, 0, 2.1], -EZ)], g)


def test_intensity_csv(tmp_path):
    basis = fibonacci_directions(16)
    img = render(_pc(k=16), [CameraSplat([0, 0, 2], -EZ)], SplatGlobals(0.5, 1.0, 0.5), basis)
    write_intensity_csv(img, basis, tmp_path / "i.csv")
    rows = (tmp_path / "i.csv").read_text().splitlines()
    assert rows[0] == "direction,wx,wy,wz,intensity" and len(rows) == 17
    assert float(rows[1].split(",")[4]) == img.intensities[0]
