"""Command-line front end: one subcommand per pipeline stage plus ``pipeline``.

Every subcommand writes under ``--out`` and records a ``manifest.json``
(inputs, outputs, configuration, seed, version). Wall times go to a
separate ``timings.json`` so that the manifest itself is reproducible.
Errors exit with status 2 and print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .correspondence import PropagationConfig, build_propagation, load_match_graph, save_match_graph
from .depth_align import apply_affine, fit_scale_offset
from .depth_solver import FilterConfig, SolverConfig, solve_depths
from .errors import ConfigOutOfRange, EmptyMatchGraph, MissingInput, SparseViewError
from .geometry import Camera, CameraRig
from .metrics import PSNR_CEILING, l1, pcc, psnr, ssim
from .occlusion import OcclusionConfig, get_inpainter, inpaint, local_foreground_mask
from .view_synth import VirtualView, fuse_topk, generate_virtual_poses, rank_sources, warp_single

# flag -> (lower bound, inclusive?)
RANGES = {
    "seed": (0, True), "threads": (1, True), "d_nn": (0, False), "min_common_points": (0, True),
    "tau_rc": (0, False), "tau_base": (0, False), "alpha": (0, True), "iterations": (1, True),
    "k_fuse": (1, True), "n_slices": (2, True), "w_rot": (0, True), "fill_radius": (0, True),
    "count": (1, True), "n_virtual": (1, True), "ceiling": (0, False),
    "match_sigma": (0, True), "depth_noise": (0, True),
}


def _validate(args):
    for name, (lo, inclusive) in RANGES.items():
        val = getattr(args, name, None)
        if val is None:
            continue
        bad = val < lo if inclusive else val <= lo
        if bad or not np.isfinite(val):
            op = ">=" if inclusive else ">"
            flag = "--" + name.replace("_", "-")
            raise ConfigOutOfRange(f"{flag} must be {op} {lo}, got {val}", flag=flag)
    frac = getattr(args, "outlier_fraction", None)
    if frac is not None and not 0 <= frac <= 1:
        raise ConfigOutOfRange(f"--outlier-fraction must be in [0, 1], got {frac}", flag="--outlier-fraction")


class Manifest:
    def __init__(self, out: Path, seed):
        self.out = out
        self.seed = seed
        self.stages = []
        self.timings = {}

    def _rel(self, p):
        p = Path(p)
        try:
            return str(p.resolve().relative_to(self.out.resolve()))
        except ValueError:
            return str(p)

    def record(self, name, inputs, outputs, config, seconds):
        self.stages.append({
            "name": name,
            "inputs": [self._rel(p) for p in inputs],
            "outputs": sorted(self._rel(p) for p in outputs),
            "config": config,
        })
        self.timings[name] = seconds

    def save(self):
        sio.write_json(self.out / "manifest.json",
                       {"version": __version__, "seed": self.seed, "stages": self.stages})
        sio.write_json(self.out / "timings.json", {k: round(v, 6) for k, v in self.timings.items()})


def _stage(manifest, name, fn, **kw):
    t0 = time.perf_counter()
    inputs, outputs, config = fn(**kw)
    manifest.record(name, inputs, outputs, config, time.perf_counter() - t0)
    return outputs


def _vname(v):
    return f"view_{int(v):03d}"


def _view_files(directory: Path, suffix):
    files = sorted(directory.glob(f"view_*{suffix}"))
    if not files:
        raise MissingInput(f"no view_*{suffix} files in {directory}", path=str(directory))
    return {int(f.name[5:8]): f for f in files}


# ---------------------------------------------------------------- stages

def stage_synth(preset, seed, out: Path, count=300, match_sigma=0.0, outlier_fraction=0.0, depth_noise=0.0):
    from .synth import NoiseSpec, make_preset, mono_depth, render_depth, render_image, render_labels, sample_tracks

    scene = make_preset(preset, seed)
    noise = NoiseSpec(match_sigma, outlier_fraction, depth_noise)
    for sub in ("images", "depths", "mono", "matches", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    outputs = [out / "rig.json"]
    scene.rig.save(out / "rig.json")
    for v in scene.rig.view_ids:
        paths = [out / "images" / f"{_vname(v)}.png", out / "depths" / f"{_vname(v)}.pfm",
                 out / "mono" / f"{_vname(v)}.pfm", out / "labels" / f"{_vname(v)}.png"]
        sio.write_png(paths[0], render_image(scene, v))
        sio.write_pfm(paths[1], render_depth(scene, v))
        sio.write_pfm(paths[2], mono_depth(scene, v, noise_sigma=depth_noise))
        prim = render_labels(scene, v)
        sio.write_png(paths[3], (prim + 1).astype(np.uint8))
        outputs += paths
    graph, samples = sample_tracks(scene, count, noise)
    save_match_graph(out / "matches", graph)
    outputs += sorted((out / "matches").glob("*.csv"))
    labels = {
        f"{i}_{j}": {"inlier": s.inlier.astype(int).tolist(),
                     "z_i": [float(x) for x in s.z_i],
                     "z_j": [None if np.isnan(x) else float(x) for x in s.z_j]}
        for (i, j), s in samples.items()
    }
    sio.write_json(out / "labels.json", {"preset": preset, "seed": seed, "info": scene.info, "pairs": labels})
    outputs.append(out / "labels.json")
    config = {"preset": preset, "count": count, "match_sigma": match_sigma,
              "outlier_fraction": outlier_fraction, "depth_noise": depth_noise}
    return [], outputs, config


def stage_estimate_depth(rig_path, matches_dir, out: Path, d_nn=3.0, min_common_points=100, tau_rc=1.0,
                         tau_base=0.05, alpha=0.1, iterations=2000, w_rot=1.0):
    rig = CameraRig.load(rig_path)
    graph = load_match_graph(matches_dir)
    if len(graph) == 0:
        raise EmptyMatchGraph(f"no matches found in {matches_dir}", path=str(matches_dir))
    for m in graph:
        m.check_bounds(rig)
    prop = PropagationConfig(d_nn, min_common_points)
    chains = build_propagation(rig, graph, prop, w_rot)
    field = solve_depths(rig, graph, chains, SolverConfig(iterations=iterations),
                         FilterConfig(tau_base, alpha, tau_rc))
    out.mkdir(parents=True, exist_ok=True)
    sio.write_depth_field(out / "depth_field.csv", field)
    stats = field.acceptance_rates()
    stats["loss"] = float(field.loss_curve[-1])
    stats["chain_sets"] = len(chains)
    sio.write_json(out / "solve.json", stats)
    config = {"d_nn": d_nn, "min_common_points": min_common_points, "tau_rc": tau_rc, "tau_base": tau_base,
              "alpha": alpha, "iterations": iterations, "w_rot": w_rot}
    return [rig_path, matches_dir], [out / "depth_field.csv", out / "solve.json"], config


def stage_align(rig_path, depth_field_path, mono_dir, out: Path):
    rig = CameraRig.load(rig_path)
    variables, _ = sio.read_depth_field(depth_field_path)
    monos = _view_files(Path(mono_dir), ".pfm")
    out.mkdir(parents=True, exist_ok=True)
    fits, outputs = {}, []
    for v in rig.view_ids:
        if v not in monos:
            raise MissingInput(f"missing mono depth for view {v}", path=str(mono_dir))
        mono = sio.read_depth(monos[v])
        samples = sio.samples_from_rows(variables, v)
        fit = fit_scale_offset(mono, samples)
        path = out / f"{_vname(v)}.pfm"
        sio.write_pfm(path, apply_affine(mono, fit))
        outputs.append(path)
        fits[str(v)] = {"scale": fit.scale, "offset": fit.offset, "rms": fit.rms_residual,
                        "inliers": int(fit.inlier_mask.sum())}
    sio.write_json(out / "fits.json", fits)
    outputs.append(out / "fits.json")
    return [rig_path, depth_field_path, mono_dir], outputs, {"rounds": 3, "trim_fraction": 0.1}


def stage_warp(rig_path, images_dir, depths_dir, out: Path, n_virtual=2, seed=0, w_rot=1.0, fill_radius=16,
               poses_path=None):
    rig = CameraRig.load(rig_path)
    images = _view_files(Path(images_dir), ".png")
    depths = _view_files(Path(depths_dir), ".pfm")
    out.mkdir(parents=True, exist_ok=True)
    if poses_path is not None:
        poses = sio.read_poses(poses_path)
    else:
        poses = generate_virtual_poses(rig, n_virtual, seed)
    sio.write_poses(out / "poses.json", poses)
    outputs = [out / "poses.json"]
    index = []
    src_ids = [v for v in rig.view_ids if v in images and v in depths]
    cache = {v: (sio.read_png(images[v]), sio.read_depth(depths[v])) for v in src_ids}
    for n, pose in enumerate(poses):
        vir_cam = Camera(rig[src_ids[0]].intrinsics, pose)
        for vid, score in rank_sources(rig, src_ids, pose, w_rot):
            img, dep = cache[vid]
            vv = warp_single(img, dep, rig[vid], vir_cam, score, vid, fill_radius)
            stem = out / f"vir_{n:03d}_src_{vid:03d}"
            outputs += _write_view(stem, vv)
            index.append({"pose": n, "source": vid, "score": score, "stem": stem.name})
    sio.write_json(out / "warps.json", index)
    outputs.append(out / "warps.json")
    inputs = [rig_path, images_dir, depths_dir] + ([poses_path] if poses_path else [])
    return inputs, outputs, {"n_virtual": len(poses), "w_rot": w_rot, "fill_radius": fill_radius,
                             "depth_tol": 0.02}


def _write_view(stem: Path, vv: VirtualView):
    paths = [Path(f"{stem}.png"), Path(f"{stem}_mask.png"), Path(f"{stem}_depth.pfm")]
    sio.write_png(paths[0], vv.image)
    sio.write_png(paths[1], vv.mask)
    sio.write_pfm(paths[2], vv.depth)
    return paths


def _read_view(stem: Path, pose, intrinsics, sources):
    img = sio.read_png(Path(f"{stem}.png"))
    mask = sio.read_mask(Path(f"{stem}_mask.png"))
    depth = sio.read_depth(Path(f"{stem}_depth.pfm"))
    return VirtualView(pose, intrinsics, img, depth, mask & depth.valid, sources)


def stage_fuse(rig_path, warp_dir, out: Path, k_fuse=2):
    rig = CameraRig.load(rig_path)
    warp_dir = Path(warp_dir)
    poses = sio.read_poses(warp_dir / "poses.json")
    try:
        index = json.loads((warp_dir / "warps.json").read_text())
    except FileNotFoundError:
        raise MissingInput(f"{warp_dir / 'warps.json'} not found", path=str(warp_dir / "warps.json")) from None
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    intr = rig[rig.view_ids[0]].intrinsics
    for n, pose in enumerate(poses):
        entries = [e for e in index if e["pose"] == n]
        views = [_read_view(warp_dir / e["stem"], pose, intr, [(e["source"], e["score"])]) for e in entries]
        fused = fuse_topk(views, k_fuse)
        outputs += _write_view(out / f"vir_{n:03d}", fused)
    return [rig_path, warp_dir], outputs, {"k_fuse": k_fuse}


def stage_occlusion(rig_path, images_dir, depths_dir, out: Path, n_slices=8, inpaint_spec=None):
    rig = CameraRig.load(rig_path)
    images = _view_files(Path(images_dir), ".png")
    depths = _view_files(Path(depths_dir), ".pfm")
    cfg = OcclusionConfig(n_slices=n_slices)
    painter = get_inpainter(inpaint_spec)
    out.mkdir(parents=True, exist_ok=True)
    outputs, summary = [], {}
    for v in rig.view_ids:
        if v not in images or v not in depths:
            continue
        depth = sio.read_depth(depths[v])
        masks = local_foreground_mask(depth, cfg)
        occl = masks.local_fg & masks.slice_mask
        img = sio.read_png(images[v], as_float=False)
        bg = inpaint(img, occl, painter)
        stem = _vname(v)
        paths = [out / f"{stem}_{s}.png" for s in ("edges", "slices", "local_fg", "slice_mask", "mask", "inpainted")]
        sio.write_png(paths[0], masks.edge_map)
        sio.write_png(paths[1], np.clip(masks.slice_index + 1, 0, 255).astype(np.uint8))
        sio.write_png(paths[2], masks.local_fg)
        sio.write_png(paths[3], masks.slice_mask)
        sio.write_png(paths[4], occl)
        sio.write_png(paths[5], bg)
        outputs += paths
        summary[str(v)] = {"fg_fraction": float(occl.mean()), "regions": [list(r) for r in masks.rectangles]}
    sio.write_json(out / "occlusion.json", summary)
    outputs.append(out / "occlusion.json")
    return [rig_path, images_dir, depths_dir], outputs, {"n_slices": n_slices,
                                                        "inpaint": inpaint_spec or "diffusion"}


def eval_report(image, reference, mask=None, ceiling=PSNR_CEILING, depth=None, ref_depth=None):
    rep = {"l1": l1(image, reference, mask), "ssim": ssim(image, reference, mask),
           "psnr": psnr(image, reference, mask, ceiling), "lpips": "unavailable"}
    if depth is not None and ref_depth is not None:
        m = depth.valid & ref_depth.valid
        if mask is not None:
            m &= mask
        rep["pcc"] = pcc(depth.values, ref_depth.values, m)
    return rep


def stage_pipeline_eval(synth_dir, align_dir, fuse_dir, warp_dir, preset, seed, out: Path, ceiling=PSNR_CEILING):
    from .synth import make_preset, render_camera

    scene = make_preset(preset, seed)
    rig = scene.rig
    out.mkdir(parents=True, exist_ok=True)
    report = {"depth": {}, "virtual": {}}
    gt_dir, al_dir = Path(synth_dir) / "depths", Path(align_dir)
    for v in rig.view_ids:
        gt = sio.read_depth(gt_dir / f"{_vname(v)}.pfm")
        al = sio.read_depth(al_dir / f"{_vname(v)}.pfm")
        m = gt.valid & al.valid
        rel = np.abs(al.values - gt.values)[m] / gt.values[m]
        report["depth"][str(v)] = {"pcc": pcc(al.values, gt.values, m), "mean_rel_error": float(rel.mean())}
    poses = sio.read_poses(Path(warp_dir) / "poses.json")
    intr = rig[rig.view_ids[0]].intrinsics
    for n, pose in enumerate(poses):
        _, ref = render_camera(scene, Camera(intr, pose))
        vv = _read_view(Path(fuse_dir) / f"vir_{n:03d}", pose, intr, [])
        report["virtual"][str(n)] = dict(eval_report(vv.image, ref, vv.mask, ceiling), coverage=vv.coverage)
    sio.write_json(out / "report.json", report)
    return [synth_dir, align_dir, fuse_dir], [out / "report.json"], {"ceiling": ceiling}


# ---------------------------------------------------------------- argparse

def _common(p, *names):
    adders = {
        "seed": lambda: p.add_argument("--seed", type=int, default=0),
        "threads": lambda: p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                                          help="worker threads (results do not depend on it)"),
        "d_nn": lambda: p.add_argument("--d-nn", type=float, default=3.0),
        "min_common_points": lambda: p.add_argument("--min-common-points", type=int, default=100),
        "tau_rc": lambda: p.add_argument("--tau-rc", type=float, default=1.0),
        "tau_base": lambda: p.add_argument("--tau-base", type=float, default=0.05),
        "alpha": lambda: p.add_argument("--alpha", type=float, default=0.1),
        "iterations": lambda: p.add_argument("--iterations", type=int, default=2000),
        "k_fuse": lambda: p.add_argument("--k-fuse", type=int, default=2),
        "n_slices": lambda: p.add_argument("--n-slices", type=int, default=8),
        "w_rot": lambda: p.add_argument("--w-rot", type=float, default=1.0),
        "fill_radius": lambda: p.add_argument("--fill-radius", type=int, default=16),
        "inpaint": lambda: p.add_argument("--inpaint", default="diffusion",
                                          help='"diffusion" or "external:<command>"'),
        "n_virtual": lambda: p.add_argument("--n-virtual", type=int, default=2),
        "ceiling": lambda: p.add_argument("--ceiling", type=float, default=PSNR_CEILING),
        "synth": lambda: (p.add_argument("--count", type=int, default=300),
                          p.add_argument("--match-sigma", type=float, default=0.0),
                          p.add_argument("--outlier-fraction", type=float, default=0.0),
                          p.add_argument("--depth-noise", type=float, default=0.0)),
    }
    p.add_argument("--out", type=Path, required=True)
    for n in ("seed", "threads") + names:
        adders[n]()


def build_parser():
    ap = argparse.ArgumentParser(prog="sparseview", description="Sparse-view depth and view synthesis toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic preset with ground truth")
    p.add_argument("--preset", required=True)
    _common(p, "synth")

    p = sub.add_parser("estimate-depth", help="solve per-match depths and outlier masks")
    p.add_argument("--rig", type=Path, required=True)
    p.add_argument("--matches", type=Path, required=True)
    _common(p, "d_nn", "min_common_points", "tau_rc", "tau_base", "alpha", "iterations", "w_rot")

    p = sub.add_parser("align", help="fit monocular depth to the sparse solution")
    p.add_argument("--rig", type=Path, required=True)
    p.add_argument("--depth-field", type=Path, required=True)
    p.add_argument("--mono", type=Path, required=True)
    _common(p)

    p = sub.add_parser("warp", help="bidirectional warps of every source to virtual poses")
    p.add_argument("--rig", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--depths", type=Path, required=True)
    p.add_argument("--poses", type=Path, default=None)
    _common(p, "n_virtual", "w_rot", "fill_radius")

    p = sub.add_parser("fuse", help="top-k fusion of warped views")
    p.add_argument("--rig", type=Path, required=True)
    p.add_argument("--warps", type=Path, required=True)
    _common(p, "k_fuse")

    p = sub.add_parser("occlusion-mask", help="foreground masks and inpainted backgrounds")
    p.add_argument("--rig", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--depths", type=Path, required=True)
    _common(p, "n_slices", "inpaint")

    p = sub.add_parser("eval", help="image metrics of one image against a reference")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--mask", type=Path, default=None)
    p.add_argument("--depth", type=Path, default=None)
    p.add_argument("--reference-depth", type=Path, default=None)
    _common(p, "ceiling")

    p = sub.add_parser("pipeline", help="run every stage on a synthetic preset")
    p.add_argument("--preset", required=True)
    _common(p, "synth", "d_nn", "min_common_points", "tau_rc", "tau_base", "alpha", "iterations", "k_fuse",
            "n_slices", "w_rot", "fill_radius", "inpaint", "n_virtual", "ceiling")
    return ap


def run(args):
    _validate(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out, args.seed)
    cmd = args.command
    if cmd == "synth":
        _stage(man, "synth", stage_synth, preset=args.preset, seed=args.seed, out=out, count=args.count,
               match_sigma=args.match_sigma, outlier_fraction=args.outlier_fraction, depth_noise=args.depth_noise)
    elif cmd == "estimate-depth":
        _stage(man, cmd, stage_estimate_depth, rig_path=args.rig, matches_dir=args.matches, out=out,
               d_nn=args.d_nn, min_common_points=args.min_common_points, tau_rc=args.tau_rc,
               tau_base=args.tau_base, alpha=args.alpha, iterations=args.iterations, w_rot=args.w_rot)
    elif cmd == "align":
        _stage(man, cmd, stage_align, rig_path=args.rig, depth_field_path=args.depth_field, mono_dir=args.mono,
               out=out)
    elif cmd == "warp":
        _stage(man, cmd, stage_warp, rig_path=args.rig, images_dir=args.images, depths_dir=args.depths, out=out,
               n_virtual=args.n_virtual, seed=args.seed, w_rot=args.w_rot, fill_radius=args.fill_radius,
               poses_path=args.poses)
    elif cmd == "fuse":
        _stage(man, cmd, stage_fuse, rig_path=args.rig, warp_dir=args.warps, out=out, k_fuse=args.k_fuse)
    elif cmd == "occlusion-mask":
        _stage(man, cmd, stage_occlusion, rig_path=args.rig, images_dir=args.images, depths_dir=args.depths,
               out=out, n_slices=args.n_slices, inpaint_spec=args.inpaint)
    elif cmd == "eval":
        def _eval():
            mask = sio.read_mask(args.mask) if args.mask else None
            dep = sio.read_depth(args.depth) if args.depth else None
            ref_dep = sio.read_depth(args.reference_depth) if args.reference_depth else None
            rep = eval_report(sio.read_png(args.image), sio.read_png(args.reference), mask, args.ceiling,
                              dep, ref_dep)
            sio.write_json(out / "report.json", rep)
            print(json.dumps(rep, sort_keys=True))
            inputs = [p for p in (args.image, args.reference, args.mask, args.depth, args.reference_depth) if p]
            return inputs, [out / "report.json"], {"ceiling": args.ceiling}
        _stage(man, cmd, _eval)
    elif cmd == "pipeline":
        run_pipeline(args, man)
    man.save()
    return 0


def run_pipeline(args, man: Manifest):
    out = args.out
    s = out / "synth"
    _stage(man, "synth", stage_synth, preset=args.preset, seed=args.seed, out=s, count=args.count,
           match_sigma=args.match_sigma, outlier_fraction=args.outlier_fraction, depth_noise=args.depth_noise)
    _stage(man, "estimate-depth", stage_estimate_depth, rig_path=s / "rig.json", matches_dir=s / "matches",
           out=out / "depth", d_nn=args.d_nn, min_common_points=args.min_common_points, tau_rc=args.tau_rc,
           tau_base=args.tau_base, alpha=args.alpha, iterations=args.iterations, w_rot=args.w_rot)
    _stage(man, "align", stage_align, rig_path=s / "rig.json", depth_field_path=out / "depth" / "depth_field.csv",
           mono_dir=s / "mono", out=out / "align")
    _stage(man, "warp", stage_warp, rig_path=s / "rig.json", images_dir=s / "images", depths_dir=out / "align",
           out=out / "warp", n_virtual=args.n_virtual, seed=args.seed, w_rot=args.w_rot,
           fill_radius=args.fill_radius)
    _stage(man, "fuse", stage_fuse, rig_path=s / "rig.json", warp_dir=out / "warp", out=out / "fuse",
           k_fuse=args.k_fuse)
    _stage(man, "occlusion-mask", stage_occlusion, rig_path=s / "rig.json", images_dir=s / "images",
           depths_dir=out / "align", out=out / "occlusion", n_slices=args.n_slices, inpaint_spec=args.inpaint)
    _stage(man, "eval", stage_pipeline_eval, synth_dir=s, align_dir=out / "align", fuse_dir=out / "fuse",
           warp_dir=out / "warp", preset=args.preset, seed=args.seed, out=out / "eval", ceiling=args.ceiling)


def _error_line(exc):
    if isinstance(exc, SparseViewError):
        payload = {"error": exc.code, "message": exc.message}
        payload.update({k: str(v) for k, v in exc.context.items()})
    else:
        payload = {"error": "ConfigOutOfRange", "message": str(exc)}
    return json.dumps(payload, sort_keys=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (SparseViewError, ValueError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
