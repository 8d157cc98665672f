import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparseview import synth
from sparseview.depthmap import DepthMap
from sparseview.errors import DegenerateRange, SparseViewError
from sparseview.geometry import Camera, CameraIntrinsics, CameraPose
from sparseview.occlusion import (
    DiffusionInpainter, ExternalInpainter, OcclusionConfig, OcclusionMaskSet, filter_background_points,
    get_inpainter, inpaint, local_foreground_mask, slice_depth, sobel_magnitude,
)


def _naive_sobel(d):
    h, w = d.shape
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], float)
    ky = kx.T
    p = np.pad(d, 1, mode="edge")
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    for y in range(h):
        for x in range(w):
            win = p[y:y + 3, x:x + 3]
            gx[y, x] = (win * kx).sum()
            gy[y, x] = (win * ky).sum()
    m = np.hypot(gx, gy)
    return m / m.max() if m.max() > 0 else m


def _square_map(h=60, w=80, near=1.0, far=10.0, box=(20, 40, 30, 50)):
    d = np.full((h, w), far)
    y0, y1, x0, x1 = box
    d[y0:y1, x0:x1] = near
    truth = np.zeros((h, w), bool)
    truth[y0:y1, x0:x1] = True
    return DepthMap(d, None), truth


def test_sobel_constant_zero():
    assert not sobel_magnitude(DepthMap(np.full((9, 9), 3.0), None)).any()


def test_sobel_step():
    d = np.ones((10, 12))
    d[:, 6:] = 4.0
    m = sobel_magnitude(DepthMap(d, None))
    assert np.all(m[:, 5] == 1.0) and np.all(m[:, 6] == 1.0)
    assert not m[:, :4].any() and not m[:, 8:].any()


def test_sobel_naive_oracle(rng):
    d = rng.uniform(1, 5, (14, 17))
    np.testing.assert_allclose(sobel_magnitude(DepthMap(d, None)), _naive_sobel(d), atol=1e-12)


@given(seed=st.integers(0, 2 ** 32 - 1), dy=st.integers(-3, 3), dx=st.integers(-3, 3))
def test_sobel_translation_equivariance(seed, dy, dx):
    rng = np.random.default_rng(seed)
    d = np.full((30, 30), 5.0)
    d[8:22, 8:22] = rng.uniform(1, 4, (14, 14))
    shifted = np.roll(np.roll(d, dy, 0), dx, 1)
    a = sobel_magnitude(DepthMap(d, None))
    b = sobel_magnitude(DepthMap(shifted, None))
    np.testing.assert_allclose(np.roll(np.roll(a, dy, 0), dx, 1)[5:25, 5:25], b[5:25, 5:25], atol=1e-12)


def test_slice_quartiles():
    ramp = DepthMap(np.linspace(0.0, 1.0, 101)[None, :] + 1.0, None)
    s = slice_depth(ramp, 4)
    assert s[0, 0] == 0 and s[0, -1] == 3
    assert list(np.bincount(s[0])) == [25, 25, 25, 26]


def test_slice_bimodal():
    d, truth = _square_map()
    s = slice_depth(d, 2)
    assert np.all(s[truth] == 0) and np.all(s[~truth] == 1)


def test_slice_brute_force(rng):
    vals = rng.uniform(2, 9, (20, 25))
    valid = rng.uniform(size=vals.shape) > 0.2
    d = DepthMap(np.where(valid, vals, 0), valid)
    s = slice_depth(d, 7)
    lo, hi = vals[valid].min(), vals[valid].max()
    w = (hi - lo) / 7
    for (y, x), v in np.ndenumerate(vals):
        if valid[y, x]:
            assert s[y, x] == min(int(np.floor((v - lo) / w)), 6)
        else:
            assert s[y, x] == -1


def test_slice_degenerate():
    with pytest.raises(DegenerateRange):
        slice_depth(DepthMap(np.full((4, 4), 2.0), None), 4)


def test_local_fg_constant_empty():
    m = local_foreground_mask(DepthMap(np.full((20, 20), 2.0), None))
    assert not m.local_fg.any() and not m.candidate.any()


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_local_fg_square(n):
    d, truth = _square_map()
    m = local_foreground_mask(d, OcclusionConfig(n_slices=n))
    assert np.array_equal(m.local_fg, truth)
    assert np.array_equal(m.slice_mask, m.slice_index <= 0)


def test_local_fg_two_objects():
    h, w = 60, 100
    d = np.full((h, w), 10.0)
    d[10:25, 10:30] = 1.0
    d[35:50, 60:85] = 1.5
    m = local_foreground_mask(DepthMap(d, None), OcclusionConfig(n_slices=4))
    assert len(m.rectangles) == 2
    truth = d < 5
    assert np.array_equal(m.local_fg, truth)
    inside = np.zeros((h, w), bool)
    for y0, x0, y1, x1, _ in m.rectangles:
        inside[y0:y1 + 1, x0:x1 + 1] = True
    assert not (m.local_fg & ~inside).any()


def test_filter_points():
    d, truth = _square_map()
    cam = Camera(CameraIntrinsics(50.0, 50.0, 40.0, 30.0, 80, 60), CameraPose.identity())
    ys, xs = np.mgrid[0:60, 0:80]
    z = d.values
    pts = np.stack([(xs - 40.0) / 50.0 * z, (ys - 30.0) / 50.0 * z, z], -1).reshape(-1, 3)
    empty = OcclusionMaskSet.empty(d.shape)
    kept, flags = filter_background_points(pts, empty, cam)
    assert flags.all() and len(kept) == len(pts)
    m = local_foreground_mask(d)
    kept, flags = filter_background_points(pts, m, cam)
    assert np.array_equal(~flags, truth.ravel())
    full = OcclusionMaskSet.empty(d.shape)
    full.local_fg[:] = True
    full.slice_mask[:] = True
    kept, flags = filter_background_points(pts, full, cam)
    assert len(kept) == 0
    behind = np.array([[0.0, 0.0, -1.0], [100.0, 0.0, 1.0]])
    assert filter_background_points(behind, full, cam)[1].all()


def test_inpaint_empty_mask_bit_exact(rng):
    img = rng.uniform(size=(10, 12, 3))
    out = inpaint(img, np.zeros((10, 12), bool))
    assert np.array_equal(out, img)


def test_inpaint_constant_disk():
    img = np.full((40, 40, 3), 0.3)
    ys, xs = np.mgrid[0:40, 0:40]
    disk = (ys - 20) ** 2 + (xs - 20) ** 2 <= 64
    dirty = img.copy()
    dirty[disk] = 0.9
    out = inpaint(dirty, disk)
    assert np.abs(out[disk] - 0.3).max() < 1e-3
    assert np.array_equal(out[~disk], dirty[~disk])


def test_inpaint_gradient_strip():
    ys, xs = np.mgrid[0:40, 0:60]
    grad = 0.1 + 0.8 * xs / 59.0
    img = np.stack([grad, 1 - grad, 0.5 * grad], -1)
    strip = (xs >= 25) & (xs < 33)
    dirty = img.copy()
    dirty[strip] = 0.0
    out = inpaint(dirty, strip)
    assert np.abs(out[strip] - img[strip]).max() <= 0.02


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_inpaint_never_touches_unmasked(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (12, 15, 3)).astype(np.uint8)
    mask = rng.uniform(size=(12, 15)) > 0.7
    out = inpaint(img, mask, DiffusionInpainter(max_sweeps=30))
    assert out.dtype == np.uint8
    assert np.array_equal(out[~mask], img[~mask])


def test_external_inpainter(tmp_path):
    script = tmp_path / "paint.py"
    script.write_text(
        "import sys\nfrom PIL import Image\n"
        "im = Image.open(sys.argv[1]).convert('RGB')\n"
        "Image.new('RGB', im.size, (10, 20, 30)).save(sys.argv[3])\n"
    )
    painter = get_inpainter(f"external:{sys.executable} {script}")
    assert isinstance(painter, ExternalInpainter)
    img = np.full((6, 7, 3), 200, np.uint8)
    mask = np.zeros((6, 7), bool)
    mask[2:4, 2:5] = True
    out = inpaint(img, mask, painter)
    assert np.all(out[mask] == [10, 20, 30])
    assert np.array_equal(out[~mask], img[~mask])


def test_external_inpainter_failure():
    painter = get_inpainter(f"external:{sys.executable} -c 'import sys; sys.exit(3)'")
    with pytest.raises(SparseViewError):
        inpaint(np.zeros((4, 4, 3), np.uint8), np.ones((4, 4), bool), painter)
    with pytest.raises(ValueError):
        get_inpainter("lama")


def test_occluder_preset_mask():
    scene = synth.make_preset("occluder-square")
    v = scene.info["mask_view"]
    truth = synth.render_labels(scene, v) == scene.info["occluder"]
    m = local_foreground_mask(synth.render_depth(scene, v))
    assert m.local_fg[truth].mean() >= 0.95
    assert m.local_fg[~truth].mean() <= 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        OcclusionConfig(n_slices=1)
    with pytest.raises(ValueError):
        OcclusionConfig(edge_threshold=1.0)
