"""Initial depth estimation from dense matches.

One depth variable exists per (pair, side, match index): ``z_ij[n]`` is the
camera-frame depth of the view-i point of match n in pair (i, j). The loss
sums squared reprojection residuals of every variable into the other view
of its pair, plus propagation residuals into the far view of every chain
that starts at it. Because each residual depends on a single variable the
problem separates into independent 1-d least-squares problems, which are
solved jointly with vectorised Gauss-Newton steps and per-variable
backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correspondence import MatchGraph, PropagationChainSet
from .errors import EmptyMatchGraph
from .geometry import back_project, camera_rays, project, relative_pose

_Z_EPS = 1e-9


@dataclass(frozen=True)
class FilterConfig:
    tau_base: float = 0.05
    alpha: float = 0.1
    tau_rc: float = 1.0

    def __post_init__(self):
        if not self.tau_base > 0:
            raise ValueError("tau_base must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if not self.tau_rc > 0:
            raise ValueError("tau_rc must be positive")


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 2000
    step_size: float = 1.0
    z_init: float | None = None
    z_min: float | None = None
    z_max: float | None = None
    tol: float = 1e-13

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must be in (0, 1]")
        if self.z_min is not None and self.z_max is not None and not 0 < self.z_min < self.z_max:
            raise ValueError("need 0 < z_min < z_max")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def dynamic_threshold(z_hat, config: FilterConfig = FilterConfig()):
    """Relative depth tolerance, tighter for near points."""
    return config.tau_base + config.alpha * sigmoid(2.0 * np.asarray(z_hat, dtype=np.float64) - 1.0)


def relative_depth_difference(z_a, z_b):
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    return np.abs(z_a - z_b) / np.minimum(z_a, z_b)


def rc_mask(z_ij, z_ji, err_ij, err_ji, config: FilterConfig = FilterConfig(), z_hat=0.5):
    """Bidirectional reprojection-error gate combined with depth consistency."""
    err_ok = (np.asarray(err_ij) <= config.tau_rc) & (np.asarray(err_ji) <= config.tau_rc)
    depth_ok = relative_depth_difference(z_ij, z_ji) <= dynamic_threshold(z_hat, config)
    return err_ok & depth_ok


def ppc_mask(z_ij, z_kj, config: FilterConfig = FilterConfig(), z_hat=0.5):
    """Depth-consistency test for chains that already passed mutual-NN selection."""
    return relative_depth_difference(z_ij, z_kj) <= dynamic_threshold(z_hat, config)


def reprojection_residual(rig, view_i, view_j, p_a, z_a, p_b):
    """Pixel residual of point ``p_a`` (view i, depth ``z_a``) reprojected into view j."""
    ci, cj = rig[view_i], rig[view_j]
    world = back_project(ci.intrinsics, ci.pose, p_a, z_a)
    pix, _ = project(cj.intrinsics, cj.pose, world)
    return pix - np.asarray(p_b, dtype=np.float64)


def propagation_residual(rig, view_i, view_k, p_a, z_a, p_c):
    """Residual of a chain ``a -> c``; same geometry as the reprojection residual."""
    return reprojection_residual(rig, view_i, view_k, p_a, z_a, p_c)


def chain_entry(graph: MatchGraph, chains: PropagationChainSet, n: int):
    """``(view_i, view_k, p_a, p_c)`` for entry ``n`` of a chain set."""
    i, j, k = chains.triple
    p_a = graph.get(i, j).points_i[chains.indices_ij[n]]
    p_c = graph.get(j, k).points_j[chains.indices_jk[n]]
    return i, k, p_a, p_c


class HybridDepthProblem:
    """Vectorised initial-stage loss over all depth variables."""

    def __init__(self, rig, graph: MatchGraph, chains=()):
        if len(graph) == 0 or graph.total_matches() == 0:
            raise EmptyMatchGraph("no match pairs to estimate depth from")
        self.rig = rig
        self.graph = graph
        self.chains = list(chains)
        self.offsets: dict[tuple[int, int, int], int] = {}
        views, pixels = [], []
        n = 0
        for key in graph.pairs():
            m = graph.stored(key)
            for side, (vid, pts) in enumerate(((m.view_i, m.points_i), (m.view_j, m.points_j))):
                self.offsets[key + (side,)] = n
                views.append(np.full(len(m), vid, dtype=np.int64))
                pixels.append(pts)
                n += len(m)
        self.n_vars = n
        self.var_view = np.concatenate(views)
        self.var_pixel = np.vstack(pixels)

        src, tgt, var, tgt_px, kind = [], [], [], [], []
        for key in graph.pairs():
            m = graph.stored(key)
            idx = np.arange(len(m))
            for side in (0, 1):
                other = m.points_j if side == 0 else m.points_i
                var.append(self.offsets[key + (side,)] + idx)
                tgt.append(np.full(len(m), key[1 - side], dtype=np.int64))
                tgt_px.append(other)
                kind.append(np.zeros(len(m), dtype=np.int8))
        for cs in self.chains:
            i, j, k = cs.triple
            var.append(self.var_index(i, j, cs.indices_ij))
            tgt.append(np.full(len(cs), k, dtype=np.int64))
            tgt_px.append(graph.get(j, k).points_j[cs.indices_jk])
            kind.append(np.ones(len(cs), dtype=np.int8))
        self.term_var = np.concatenate(var)
        self.term_target = np.concatenate(tgt)
        self.term_pixel = np.vstack(tgt_px)
        self.term_kind = np.concatenate(kind)
        self._prepare_geometry()

    def var_index(self, i, j, indices):
        """Variable ids for the view-i points of pair (i, j) at ``indices``."""
        indices = np.asarray(indices, dtype=np.int64)
        if (i, j, 0) in self.offsets:
            return self.offsets[(i, j, 0)] + indices
        return self.offsets[(j, i, 1)] + indices

    def _prepare_geometry(self):
        T = len(self.term_var)
        self._dir = np.empty((T, 3))
        self._off = np.empty((T, 3))
        self._f = np.empty((T, 2))
        self._c = np.empty((T, 2))
        src_view = self.var_view[self.term_var]
        src_px = self.var_pixel[self.term_var]
        for s in np.unique(src_view):
            for t in np.unique(self.term_target[src_view == s]):
                sel = (src_view == s) & (self.term_target == t)
                cs, ct = self.rig[s], self.rig[t]
                rel = relative_pose(cs.pose, ct.pose)
                rays = camera_rays(cs.intrinsics, src_px[sel])
                self._dir[sel] = rays @ rel.rotation.T
                self._off[sel] = rel.translation
                k = ct.intrinsics
                self._f[sel] = (k.fx, k.fy)
                self._c[sel] = (k.cx, k.cy)

    def residuals(self, z, with_jacobian=False):
        """Per-term pixel residuals (T, 2); optionally d(residual)/dz."""
        zt = np.asarray(z, dtype=np.float64)[self.term_var]
        P = zt[:, None] * self._dir + self._off
        Z = P[:, 2]
        bad = Z <= _Z_EPS
        Zs = np.where(bad, _Z_EPS, Z)
        r = self._f * P[:, :2] / Zs[:, None] + self._c - self.term_pixel
        if not with_jacobian:
            return r, bad
        num = self._dir[:, :2] * self._off[:, 2:3] - self._off[:, :2] * self._dir[:, 2:3]
        J = self._f * num / (Zs * Zs)[:, None]
        J[bad] = 0.0
        return r, bad, J

    def per_variable_loss(self, z):
        r, _ = self.residuals(z)
        return np.bincount(self.term_var, weights=r[:, 0] ** 2 + r[:, 1] ** 2, minlength=self.n_vars)

    def loss(self, z) -> float:
        return float(self.per_variable_loss(z).sum())

    def loss_parts(self, z):
        r, _ = self.residuals(z)
        sq = r[:, 0] ** 2 + r[:, 1] ** 2
        return float(sq[self.term_kind == 0].sum()), float(sq[self.term_kind == 1].sum())

    def gradient(self, z):
        """Analytic dL/dz for every variable."""
        r, _, J = self.residuals(z, with_jacobian=True)
        g = 2.0 * (r[:, 0] * J[:, 0] + r[:, 1] * J[:, 1])
        return np.bincount(self.term_var, weights=g, minlength=self.n_vars)

    def _gauss_newton(self, z):
        r, _, J = self.residuals(z, with_jacobian=True)
        g = np.bincount(self.term_var, weights=r[:, 0] * J[:, 0] + r[:, 1] * J[:, 1], minlength=self.n_vars)
        H = np.bincount(self.term_var, weights=J[:, 0] ** 2 + J[:, 1] ** 2, minlength=self.n_vars)
        return g, H

    def rc_errors(self, z):
        """Reprojection error magnitude of every variable into the other view of its pair."""
        r, bad = self.residuals(z)
        rc = self.term_kind == 0
        err = np.full(self.n_vars, np.inf)
        norms = np.hypot(r[rc, 0], r[rc, 1])
        norms[bad[rc]] = np.inf
        err[self.term_var[rc]] = norms
        return err

    def scene_diameter(self) -> float:
        centers = np.array([self.rig[v].pose.center for v in self.rig.view_ids])
        if len(centers) < 2:
            return 1.0
        d = np.linalg.norm(centers[:, None] - centers[None], axis=-1).max()
        return float(d) if d > 0 else 1.0


@dataclass
class DepthField:
    problem: HybridDepthProblem
    z: np.ndarray
    rc_error: np.ndarray
    z_hat: np.ndarray
    rc_masks: dict = field(default_factory=dict)
    ppc_masks: list = field(default_factory=list)
    loss_curve: list = field(default_factory=list)

    @property
    def chains(self):
        return self.problem.chains

    def depth(self, i, j):
        """Depths of the view-i points of pair (i, j)."""
        n = len(self.problem.graph.get(i, j))
        return self.z[self.problem.var_index(i, j, np.arange(n))]

    def rc_mask(self, i, j):
        key = (i, j) if (i, j) in self.rc_masks else (j, i)
        return self.rc_masks[key]

    def samples_for_view(self, view_id):
        """Pixels, depths and composite mask of every variable living in ``view_id``."""
        from .depth_align import SparseDepthSamples

        px, zs, ms = [], [], []
        for key in self.problem.graph.pairs():
            if view_id not in key:
                continue
            side = 0 if key[0] == view_id else 1
            m = self.problem.graph.stored(key)
            ids = self.problem.offsets[key + (side,)] + np.arange(len(m))
            px.append(self.problem.var_pixel[ids])
            zs.append(self.z[ids])
            ms.append(self.rc_masks[key])
        if not px:
            return SparseDepthSamples(np.zeros((0, 2)), np.zeros(0), np.zeros(0, bool))
        return SparseDepthSamples(np.vstack(px), np.concatenate(zs), np.concatenate(ms))

    def acceptance_rates(self):
        rc = np.concatenate([self.rc_masks[k] for k in sorted(self.rc_masks)]) if self.rc_masks else np.zeros(0)
        ppc = np.concatenate(self.ppc_masks) if self.ppc_masks else np.zeros(0)
        return {
            "rc_accepted": int(rc.sum()), "rc_total": int(rc.size),
            "rc_rate": float(rc.mean()) if rc.size else 0.0,
            "ppc_accepted": int(ppc.sum()), "ppc_total": int(ppc.size),
            "ppc_rate": float(ppc.mean()) if ppc.size else 0.0,
        }


def normalized_depth(z, var_view, valid):
    """Per-view min-max normalisation of depths over currently valid variables."""
    z_hat = np.zeros_like(z)
    for v in np.unique(var_view):
        sel = var_view == v
        ref = z[sel & valid]
        if ref.size == 0:
            continue
        lo, hi = ref.min(), ref.max()
        if hi > lo:
            z_hat[sel] = np.clip((z[sel] - lo) / (hi - lo), 0.0, 1.0)
    return z_hat


def optimize(problem: HybridDepthProblem, solver: SolverConfig = SolverConfig(), z0=None):
    """Minimise the initial-stage loss; returns ``(z, loss_curve)``."""
    diam = problem.scene_diameter()
    z_min = solver.z_min if solver.z_min is not None else 1e-3 * diam
    z_max = solver.z_max if solver.z_max is not None else 1e3 * diam
    if z0 is None:
        init = solver.z_init if solver.z_init is not None else 10.0 * diam
        z = np.full(problem.n_vars, float(np.clip(init, z_min, z_max)))
    else:
        z = np.clip(np.asarray(z0, dtype=np.float64).copy(), z_min, z_max)
    lam = np.full(problem.n_vars, solver.step_size)
    var_loss = problem.per_variable_loss(z)
    curve = [float(var_loss.sum())]
    for _ in range(solver.iterations):
        g, H = problem._gauss_newton(z)
        step = np.zeros_like(z)
        ok = H > 0
        step[ok] = -g[ok] / H[ok]
        # variables with no depth sensitivity stay where they are
        cand = np.clip(z + lam * step, z_min, z_max)
        cand_loss = problem.per_variable_loss(cand)
        accept = cand_loss <= var_loss
        z = np.where(accept, cand, z)
        var_loss = np.where(accept, cand_loss, var_loss)
        lam = np.where(accept, np.minimum(lam * 2.0, solver.step_size), lam * 0.5)
        curve.append(float(var_loss.sum()))
        moved = np.abs(np.where(accept, lam * step, 0.0))
        if np.all((moved <= solver.tol * z) | (lam < 1e-12)):
            break
    return z, curve


def evaluate_masks(problem: HybridDepthProblem, z, filt: FilterConfig = FilterConfig()):
    err = problem.rc_errors(z)
    z_hat = normalized_depth(z, problem.var_view, err <= filt.tau_rc)
    rc_masks = {}
    for key in problem.graph.pairs():
        n = len(problem.graph.stored(key))
        a = problem.offsets[key + (0,)] + np.arange(n)
        b = problem.offsets[key + (1,)] + np.arange(n)
        rc_masks[key] = rc_mask(z[a], z[b], err[a], err[b], filt, z_hat[a])
    ppc_masks = []
    for cs in problem.chains:
        i, j, k = cs.triple
        a = problem.var_index(i, j, cs.indices_ij)
        c = problem.var_index(k, j, cs.indices_jk)
        ppc_masks.append(ppc_mask(z[a], z[c], filt, z_hat[a]))
    return err, z_hat, rc_masks, ppc_masks


def solve_depths(rig, matches: MatchGraph, chains=(), solver: SolverConfig = SolverConfig(),
                 filt: FilterConfig = FilterConfig(), z0=None) -> DepthField:
    """Estimate per-match depths, then apply the outlier filtering masks."""
    problem = HybridDepthProblem(rig, matches, chains)
    z, curve = optimize(problem, solver, z0)
    err, z_hat, rc_masks, ppc_masks = evaluate_masks(problem, z, filt)
    return DepthField(problem, z, err, z_hat, rc_masks, ppc_masks, curve)
