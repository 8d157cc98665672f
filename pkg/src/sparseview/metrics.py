"""Loss and image-quality evaluators."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .depthmap import DepthMap, bilinear_sample
from .errors import DimensionMismatch, ZeroVariance
from .geometry import camera_rays, perspective, relative_pose

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CEILING = 99.0


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} != {b.shape}")
    return a, b


def _spatial_mask(mask, shape):
    if mask is None:
        return np.ones(shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape[:2]):
        raise DimensionMismatch(f"mask shape {mask.shape} != image shape {shape[:2]}")
    return mask


def tv_loss(depth: DepthMap) -> float:
    """Sum of absolute forward differences; a difference counts only if both pixels are valid."""
    d, v = depth.values, depth.valid
    dx = np.abs(d[:, 1:] - d[:, :-1])[v[:, 1:] & v[:, :-1]]
    dy = np.abs(d[1:, :] - d[:-1, :])[v[1:, :] & v[:-1, :]]
    return float(dx.sum() + dy.sum())


def _sampled_residuals(depth: DepthMap, rig, view_i, view_t, p_a, p_t):
    """Residuals of points whose depth is read bilinearly from ``depth``; unusable ones dropped."""
    p_a = np.asarray(p_a, dtype=np.float64).reshape(-1, 2)
    p_t = np.asarray(p_t, dtype=np.float64).reshape(-1, 2)
    z, ok = bilinear_sample(depth.values, p_a, depth.valid)
    ci, ct = rig[view_i], rig[view_t]
    rel = relative_pose(ci.pose, ct.pose)
    pts = camera_rays(ci.intrinsics, p_a[ok]) * z[ok][:, None]
    pts = pts @ rel.rotation.T + rel.translation
    front = pts[:, 2] > 1e-9
    r = perspective(ct.intrinsics, pts[front]) - p_t[ok][front]
    return r


def masked_reprojection_loss(depth: DepthMap, match_set, mask, rig) -> float:
    """Training-stage reprojection loss of the retained pairs of one match set.

    ``depth`` is the (rendered) depth map of ``match_set.view_i``.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    r = _sampled_residuals(depth, rig, match_set.view_i, match_set.view_j,
                           match_set.points_i[mask], match_set.points_j[mask])
    return float((r ** 2).sum())


def masked_propagation_loss(depth: DepthMap, graph, chain_set, mask, rig) -> float:
    """Training-stage propagation loss over retained chains ``i -> j -> k``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    i, j, k = chain_set.triple
    p_a = graph.get(i, j).points_i[chain_set.indices_ij[mask]]
    p_c = graph.get(j, k).points_j[chain_set.indices_jk[mask]]
    r = _sampled_residuals(depth, rig, i, k, p_a, p_c)
    return float((r ** 2).sum())


def image_gradients(img):
    """Forward differences along x and y (one column/row shorter)."""
    img = np.asarray(img, dtype=np.float64)
    return img[:, 1:] - img[:, :-1], img[1:, :] - img[:-1, :]


def grad_l1(rendered, reference, mask=None) -> float:
    """Mean absolute difference of image gradients over masked gradient pixels.

    A gradient pixel is kept only when both pixels of its difference are
    inside the mask.
    """
    a, b = _same_shape(rendered, reference)
    m = _spatial_mask(mask, a.shape)
    ax, ay = image_gradients(a)
    bx, by = image_gradients(b)
    mx = m[:, 1:] & m[:, :-1]
    my = m[1:, :] & m[:-1, :]
    diffs = [np.abs(ax - bx)[mx], np.abs(ay - by)[my]]
    total = sum(float(d.sum()) for d in diffs)
    count = sum(d.size for d in diffs)
    return total / count if count else 0.0


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(img, g):
    out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
    return ndimage.correlate1d(out, g, axis=1, mode="reflect")


def ssim_map(a, b):
    """Per-pixel SSIM of single-channel images in [0, 1] (reflect borders)."""
    g = gaussian_window()
    mu_a, mu_b = _blur(a, g), _blur(b, g)
    saa = _blur(a * a, g) - mu_a ** 2
    sbb = _blur(b * b, g) - mu_b ** 2
    sab = _blur(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a, b, mask=None) -> float:
    """Mean SSIM of ``M*a`` vs ``M*b`` over masked pixels (channels averaged)."""
    a, b = _same_shape(a, b)
    m = _spatial_mask(mask, a.shape)
    if not m.any():
        return 1.0
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    mf = m.astype(np.float64)
    vals = [ssim_map(a[..., c] * mf, b[..., c] * mf)[m].mean() for c in range(a.shape[2])]
    return float(np.clip(np.mean(vals), -1.0, 1.0))


def pcc(a, b, mask=None) -> float:
    """Pearson correlation over masked pixels."""
    a = a.values if isinstance(a, DepthMap) else np.asarray(a, dtype=np.float64)
    b = b.values if isinstance(b, DepthMap) else np.asarray(b, dtype=np.float64)
    a, b = _same_shape(a, b)
    m = _spatial_mask(mask, a.shape)
    x, y = a[m], b[m]
    if x.size < 2:
        raise ZeroVariance("need at least 2 masked pixels")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx <= 0 or syy <= 0:
        raise ZeroVariance("a depth map is constant over the mask")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def l1(a, b, mask=None) -> float:
    a, b = _same_shape(a, b)
    m = _spatial_mask(mask, a.shape)
    return float(np.abs(a - b)[m].mean()) if m.any() else 0.0


def psnr(a, b, mask=None, ceiling=PSNR_CEILING) -> float:
    a, b = _same_shape(a, b)
    m = _spatial_mask(mask, a.shape)
    if not m.any():
        return ceiling
    mse = float(((a - b) ** 2)[m].mean())
    if mse <= 0:
        return ceiling
    return float(min(ceiling, 10.0 * np.log10(1.0 / mse)))


@dataclass
class LossReport:
    l_rc_train: float = 0.0
    l_ppc_train: float = 0.0
    l_tv: float = 0.0
    l_grad: float = 0.0
    l_ssim: float = 0.0
    l_pcc: float = 0.0
    l1: float = 0.0
    psnr: float = PSNR_CEILING
    ssim: float = 1.0
    l_col: float = 0.0
    l_dep: float = 0.0
    l_col_vir: float = 0.0
    l_dep_vir: float = 0.0
    total: float = 0.0
    weights: tuple = (0.8, 0.5, 0.5)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = {"lambda": self.weights[0], "alpha": self.weights[1], "beta": self.weights[2]}
        return d


def ssim_loss(s: float) -> float:
    """SSIM similarity mapped to a loss in [0, 1]."""
    return (1.0 - s) / 2.0


def total_loss(rendered=None, reference=None, depth: DepthMap | None = None, *,
               l_rc_train=0.0, l_ppc_train=0.0, vir_rendered=None, vir_image=None,
               vir_rendered_depth=None, vir_depth=None, vir_mask=None,
               lam=0.8, alpha=0.5, beta=None, ceiling=PSNR_CEILING) -> LossReport:
    """Assemble colour, depth and virtual-view terms into one report.

    Colour: ``lam * L1 + (1 - lam) * (1 - SSIM) / 2``. Depth: training
    reprojection + propagation + TV. Virtual colour: ``alpha * grad_l1 +
    beta * (1 - SSIM) / 2`` on the virtual mask; virtual depth:
    ``1 - PCC``. Missing inputs contribute zero.
    """
    if not 0 <= lam <= 1:
        raise ValueError("lambda must be in [0, 1]")
    beta = 1.0 - alpha if beta is None else beta
    if not np.isclose(alpha + beta, 1.0):
        raise ValueError("alpha + beta must equal 1")
    rep = LossReport(weights=(lam, alpha, beta))
    if rendered is not None and reference is not None:
        rep.l1 = l1(rendered, reference)
        rep.ssim = ssim(rendered, reference)
        rep.psnr = psnr(rendered, reference, ceiling=ceiling)
        rep.l_col = lam * rep.l1 + (1 - lam) * ssim_loss(rep.ssim)
    rep.l_rc_train = float(l_rc_train)
    rep.l_ppc_train = float(l_ppc_train)
    if depth is not None:
        rep.l_tv = tv_loss(depth)
    rep.l_dep = rep.l_rc_train + rep.l_ppc_train + rep.l_tv
    if vir_rendered is not None and vir_image is not None:
        rep.l_grad = grad_l1(vir_rendered, vir_image, vir_mask)
        rep.l_ssim = ssim_loss(ssim(vir_rendered, vir_image, vir_mask))
        rep.l_col_vir = alpha * rep.l_grad + beta * rep.l_ssim
    if vir_rendered_depth is not None and vir_depth is not None:
        rep.l_pcc = 1.0 - pcc(vir_rendered_depth, vir_depth, vir_mask)
        rep.l_dep_vir = rep.l_pcc
    rep.total = rep.l_col + rep.l_dep + rep.l_col_vir + rep.l_dep_vir
    return rep
