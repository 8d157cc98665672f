import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparseview import synth
from sparseview.correspondence import build_chains
from sparseview.depthmap import DepthMap
from sparseview.errors import DimensionMismatch, ZeroVariance
from sparseview.metrics import (
    PSNR_CEILING, SSIM_C1, SSIM_C2, gaussian_window, grad_l1, l1, masked_propagation_loss,
    masked_reprojection_loss, pcc, psnr, ssim, ssim_loss, ssim_map, total_loss, tv_loss,
)


def _naive_tv(d, v):
    h, w = d.shape
    s = 0.0
    for y in range(h):
        for x in range(w):
            if x + 1 < w and v[y, x] and v[y, x + 1]:
                s += abs(d[y, x + 1] - d[y, x])
            if y + 1 < h and v[y, x] and v[y + 1, x]:
                s += abs(d[y + 1, x] - d[y, x])
    return s


def test_tv_ramp():
    h, w, s = 7, 9, 0.25
    d = np.tile(1.0 + s * np.arange(w), (h, 1))
    assert tv_loss(DepthMap(d)) == pytest.approx(s * h * (w - 1), rel=1e-12)
    assert tv_loss(DepthMap(np.full((5, 5), 3.0))) == 0.0


def test_tv_naive_oracle(rng):
    d = rng.uniform(1, 4, (11, 13))
    v = rng.uniform(size=d.shape) > 0.2
    assert tv_loss(DepthMap(d, v)) == pytest.approx(_naive_tv(d, v), rel=1e-12)


def _naive_grad_l1(a, b, m):
    total, count = 0.0, 0
    h, w = m.shape
    for y in range(h):
        for x in range(w):
            if x + 1 < w and m[y, x] and m[y, x + 1]:
                total += np.abs((a[y, x + 1] - a[y, x]) - (b[y, x + 1] - b[y, x])).sum()
                count += np.size(a[y, x])
            if y + 1 < h and m[y, x] and m[y + 1, x]:
                total += np.abs((a[y + 1, x] - a[y, x]) - (b[y + 1, x] - b[y, x])).sum()
                count += np.size(a[y, x])
    return total / count if count else 0.0


def test_grad_l1_oracle(rng):
    a, b = rng.uniform(size=(9, 10, 3)), rng.uniform(size=(9, 10, 3))
    m = rng.uniform(size=(9, 10)) > 0.3
    assert grad_l1(a, b, m) == pytest.approx(_naive_grad_l1(a, b, m), rel=1e-12)


@given(seed=st.integers(0, 2 ** 32 - 1), c=st.floats(-2, 2))
def test_grad_l1_offset_invariant(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
    assert grad_l1(a + c, b) == pytest.approx(grad_l1(a, b), abs=1e-12)
    assert grad_l1(a + c, a) == pytest.approx(0.0, abs=1e-12)


def test_grad_l1_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        grad_l1(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(DimensionMismatch):
        grad_l1(np.zeros((4, 4)), np.zeros((4, 4)), np.ones((3, 4), bool))


def test_ssim_identity(rng):
    a = rng.uniform(size=(20, 24, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constants():
    a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.7)
    expect = (2 * 0.2 * 0.7 + SSIM_C1) / (0.2 ** 2 + 0.7 ** 2 + SSIM_C1)
    assert ssim(a, b) == pytest.approx(expect, rel=1e-9)


def test_ssim_window_oracle(rng):
    a, b = rng.uniform(size=(30, 30)), rng.uniform(size=(30, 30))
    g = gaussian_window()
    w = np.outer(g, g)
    y, x = 15, 12
    pa, pb = a[y - 5:y + 6, x - 5:x + 6], b[y - 5:y + 6, x - 5:x + 6]
    ma, mb = (w * pa).sum(), (w * pb).sum()
    va = (w * (pa - ma) ** 2).sum()
    vb = (w * (pb - mb) ** 2).sum()
    cab = (w * (pa - ma) * (pb - mb)).sum()
    expect = (2 * ma * mb + SSIM_C1) * (2 * cab + SSIM_C2) / ((ma ** 2 + mb ** 2 + SSIM_C1) * (va + vb + SSIM_C2))
    assert ssim_map(a, b)[y, x] == pytest.approx(expect, rel=1e-9)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_ssim_symmetric_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(12, 14)), rng.uniform(size=(12, 14))
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= s <= 1.0
    assert 0.0 <= ssim_loss(s) <= 1.0


@given(seed=st.integers(0, 2 ** 32 - 1), s=st.floats(0.01, 100), b=st.floats(-10, 10))
def test_pcc_affine_invariant(seed, s, b):
    rng = np.random.default_rng(seed)
    a = rng.uniform(1, 5, (10, 10))
    assert pcc(a, s * a + b) == pytest.approx(1.0, abs=1e-9)
    assert pcc(a, -s * a + b) == pytest.approx(-1.0, abs=1e-9)


def test_pcc_oracle_and_errors(rng):
    a, b = rng.uniform(size=(6, 7)), rng.uniform(size=(6, 7))
    assert pcc(DepthMap(a + 1), DepthMap(b + 1)) == pytest.approx(np.corrcoef(a.ravel(), b.ravel())[0, 1], abs=1e-12)
    with pytest.raises(ZeroVariance):
        pcc(np.full((4, 4), 2.0), a[:4, :4])
    with pytest.raises(ZeroVariance):
        pcc(a, b, np.zeros(a.shape, bool))


def test_psnr_l1():
    a = np.zeros((4, 4))
    assert psnr(a, a) == PSNR_CEILING
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert l1(a, a + 0.1) == pytest.approx(0.1)
    m = np.zeros((4, 4), bool)
    m[0, 0] = True
    b = a.copy()
    b[1:, :] = 1.0
    assert l1(a, b, m) == 0.0 and psnr(a, b, m) == PSNR_CEILING


def _plane_scene():
    scene = synth.make_preset("plane3view")
    scene.primitives = scene.primitives[:1]  # back plane only: depth is exactly constant
    return scene


def test_masked_losses_zero_on_gt():
    scene = _plane_scene()
    graph, _ = synth.sample_tracks(scene, 200)
    depth = synth.render_depth(scene, 0)
    ms = graph.get(0, 1)
    mask = np.ones(len(ms), bool)
    assert masked_reprojection_loss(depth, ms, mask, scene.rig) < 1e-16
    cs = build_chains(graph.get(0, 1), graph.get(1, 2))
    assert len(cs) == 200
    assert masked_propagation_loss(depth, graph, cs, np.ones(len(cs), bool), scene.rig) < 1e-16


@given(seed=st.integers(0, 2 ** 16))
def test_masked_losses_monotone(seed):
    scene = _plane_scene()
    graph, _ = synth.sample_tracks(scene, 60, synth.NoiseSpec(match_sigma=2.0), rng=np.random.default_rng(seed))
    depth = DepthMap(synth.render_depth(scene, 0).values * 1.1)
    ms = graph.get(0, 1)
    rng = np.random.default_rng(seed)
    small = rng.uniform(size=len(ms)) > 0.5
    big = small | (rng.uniform(size=len(ms)) > 0.5)
    assert masked_reprojection_loss(depth, ms, np.zeros(len(ms), bool), scene.rig) == 0.0
    lo = masked_reprojection_loss(depth, ms, small, scene.rig)
    hi = masked_reprojection_loss(depth, ms, big, scene.rig)
    assert 0.0 <= lo <= hi
    cs = build_chains(graph.get(0, 1), graph.get(1, 2))
    assert masked_propagation_loss(depth, graph, cs, np.zeros(len(cs), bool), scene.rig) == 0.0


def test_total_loss():
    rep = total_loss()
    assert rep.total == 0.0
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    rep = total_loss(img, img, lam=1.0)
    assert rep.l_col == 0.0 and rep.psnr == PSNR_CEILING and rep.ssim == pytest.approx(1.0)
    rep = total_loss(img, img * 0.5, lam=1.0)
    assert rep.l_col == pytest.approx(l1(img, img * 0.5))
    d = DepthMap(np.tile(np.arange(1.0, 6.0), (4, 1)))
    rep = total_loss(depth=d, l_rc_train=2.0, l_ppc_train=3.0)
    assert rep.l_tv == tv_loss(d) and rep.total == pytest.approx(5.0 + tv_loss(d))
    rep = total_loss(vir_rendered=img, vir_image=img, vir_rendered_depth=d, vir_depth=d)
    assert rep.l_col_vir == pytest.approx(0.0, abs=1e-12) and rep.l_dep_vir == pytest.approx(0.0, abs=1e-12)
    assert rep.to_dict()["weights"] == {"lambda": 0.8, "alpha": 0.5, "beta": 0.5}
    with pytest.raises(ValueError):
        total_loss(lam=1.5)
    with pytest.raises(ValueError):
        total_loss(alpha=0.5, beta=0.7)
