"""Command-line entry point: synth | fit | eval | export | bench.

Every command resolves its configuration from built-in defaults, an optional
JSON config file (``--config``), and dotted-path overrides such as
``--weights.texture 10``; the resolved config is written next to the outputs
so any run can be reproduced byte-for-byte.

Exit codes: 0 success, 2 numerical abort, 3 malformed input, 1 other error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from .body_model import (BodyModel, HumanoidConfig, Mesh, PoseParams, lbs,
                         load_model, make_procedural_humanoid, regress_joints,
                         save_model, texel_positions)
from .camera import CameraParams, RigidTransform, project
from .errors import (ConfigOutOfRange, MalformedModelFile, MalformedResults,
                     MalformedScene, NonFiniteLoss, TexfitError)
from .losses import FrameParams, LossWeights, QuadraticPrior
from .metrics import compute_pose_metrics, silhouette_metrics
from .optim import FitConfig, ParamLayout, fit
from .render import (Image, extract_texture, read_ppm, render_silhouette,
                     write_ppm)
from .synth import (Frame, NoiseSpec, PerturbSpec, Scene, generate_scene,
                    perturb)

SCENE_FORMAT_VERSION = "texfit-scene/1"
RESULTS_FORMAT_VERSION = "texfit-results/1"


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _set_dotted(cfg: dict, path: str, raw: str) -> None:
    keys = path.split(".")
    node = cfg
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            node[k] = {}
        node = node[k]
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[keys[-1]] = value


def resolve_config(defaults: dict, config_file: str | None,
                   overrides: list[str]) -> dict:
    """defaults <- config file <- dotted --key value overrides."""
    cfg = copy.deepcopy(defaults)
    if config_file:
        with open(config_file) as f:
            loaded = json.load(f)

        def merge(dst, src):
            for k, v in src.items():
                if isinstance(v, dict) and isinstance(dst.get(k), dict):
                    merge(dst[k], v)
                else:
                    dst[k] = v
        merge(cfg, loaded)
    it = iter(overrides)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigOutOfRange(f"expected --key, got {tok!r}")
        key = tok[2:]
        try:
            raw = next(it)
        except StopIteration:
            raise ConfigOutOfRange(f"missing value for --{key}") from None
        _set_dotted(cfg, key, raw)
    return cfg


def _dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


# ---------------------------------------------------------------------------
# scene directory I/O  (schema "texfit-scene/1")
# ---------------------------------------------------------------------------

def _cam_to_json(cam: CameraParams) -> dict:
    return {"rot6d": [float(v) for v in np.asarray(cam.rot6d)],
            "scale": float(cam.scale),
            "translation": [float(v) for v in np.asarray(cam.translation)]}


def _cam_from_json(d: dict) -> CameraParams:
    return CameraParams(rot6d=np.array(d["rot6d"], dtype=np.float64),
                        scale=float(d["scale"]),
                        translation=np.array(d["translation"], dtype=np.float64))


def _params_to_json(p: FrameParams) -> dict:
    return {"body_rot6d": [[float(v) for v in row]
                           for row in np.asarray(p.pose.body_rot6d)],
            "shape": [float(v) for v in np.asarray(p.pose.shape)],
            "camera": _cam_to_json(p.camera)}


def _params_from_json(d: dict) -> FrameParams:
    return FrameParams(
        pose=PoseParams(body_rot6d=np.array(d["body_rot6d"], dtype=np.float64)
                        .reshape(-1, 6),
                        shape=np.array(d["shape"], dtype=np.float64)),
        camera=_cam_from_json(d["camera"]))


def write_scene_dir(scene: Scene, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(scene.model, out_dir / "model.texfit")
    frames_json = []
    keypoints_json = []
    for i, frame in enumerate(scene.frames):
        name = f"frame_{i:04d}.ppm"
        write_ppm(frame.image, out_dir / name)
        ext = None
        if frame.extrinsics is not None:
            ext = {"rotation": [[float(v) for v in row]
                                for row in frame.extrinsics.rotation],
                   "translation": [float(v) for v in frame.extrinsics.translation]}
        frames_json.append({"image_file": name,
                            "time_index": frame.time_index,
                            "view_index": frame.view_index,
                            "camera_gt": _cam_to_json(frame.camera_gt),
                            "extrinsics": ext})
        if frame.keypoints is None:
            keypoints_json.append(None)
        else:
            keypoints_json.append(
                {"points": [[float(v) for v in row] for row in frame.keypoints],
                 "confidence": [float(v) for v in frame.keypoint_conf]})
    _dump_json({"version": SCENE_FORMAT_VERSION,
                "mode": scene.mode,
                "seed": scene.seed,
                "model_file": "model.texfit",
                "config": scene.config,
                "frames": frames_json,
                "ground_truth": {
                    "frame_params": [_params_to_json(p) for p in scene.gt_params],
                    "texture": [[float(v) for v in row] for row in scene.gt_texture],
                }}, out_dir / "scene.json")
    _dump_json({"version": SCENE_FORMAT_VERSION, "frames": keypoints_json},
               out_dir / "keypoints.json")


def read_scene_dir(scene_dir) -> Scene:
    scene_dir = Path(scene_dir)
    try:
        with open(scene_dir / "scene.json") as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise MalformedScene(f"cannot read scene.json: {e}") from e
    if meta.get("version") != SCENE_FORMAT_VERSION:
        raise MalformedScene(f"unsupported scene version {meta.get('version')!r}")
    try:
        model = load_model(scene_dir / meta["model_file"])
        with open(scene_dir / "keypoints.json") as f:
            kp_meta = json.load(f)
        frames = []
        gt_params = [_params_from_json(d)
                     for d in meta["ground_truth"]["frame_params"]]
        for i, fj in enumerate(meta["frames"]):
            image = read_ppm(scene_dir / fj["image_file"])
            kp = conf = None
            kj = kp_meta["frames"][i]
            if kj is not None:
                kp = np.array(kj["points"], dtype=np.float64)
                conf = np.array(kj["confidence"], dtype=np.float64)
            ext = None
            if fj.get("extrinsics"):
                ext = RigidTransform(
                    np.array(fj["extrinsics"]["rotation"], dtype=np.float64),
                    np.array(fj["extrinsics"]["translation"], dtype=np.float64))
            frames.append(Frame(image=image, keypoints=kp, keypoint_conf=conf,
                                extrinsics=ext,
                                camera_gt=_cam_from_json(fj["camera_gt"]),
                                time_index=fj["time_index"],
                                view_index=fj["view_index"]))
        texture = np.array(meta["ground_truth"]["texture"], dtype=np.float64)
    except MalformedModelFile:
        raise
    except (KeyError, ValueError, OSError) as e:
        raise MalformedScene(f"scene directory is incomplete or invalid: {e}") from e
    return Scene(model=model, frames=frames, mode=meta["mode"],
                 gt_params=gt_params, gt_texture=texture, seed=meta["seed"],
                 config=meta.get("config", {}))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

SYNTH_DEFAULTS = {
    "mode": "multiview",
    "frames": 4,
    "views": None,          # alias for frames in multiview mode
    "width": 128,
    "height": 128,
    "seed": 7,
    "rig_spread": 2.0943951023931953,
    "pose_sigma": 0.15,
    "walk_sigma": 0.05,
    "model": {"joints": 12, "shape_coeffs": 4, "texels_per_face": 6,
              "detail": 1.0},
    "noise": {"kp_sigma": 0.0, "kp_dropout": 0.0, "annotated_joints": None,
              "illumination": 0.0},
}


def cmd_synth(cfg: dict, out_dir) -> int:
    out_dir = Path(out_dir)
    n = cfg["views"] if cfg.get("views") else cfg["frames"]
    if cfg["mode"] == "multiview" and n < 2:
        raise ConfigOutOfRange("multiview needs at least 2 views")
    model = make_procedural_humanoid(HumanoidConfig(
        joints=cfg["model"]["joints"],
        shape_coeffs=cfg["model"]["shape_coeffs"],
        texels_per_face=cfg["model"]["texels_per_face"],
        detail=cfg["model"]["detail"],
        seed=cfg["seed"]))
    noise = NoiseSpec(**cfg["noise"])
    scene = generate_scene(model, seed=cfg["seed"], mode=cfg["mode"],
                           n_frames=n, noise=noise, width=cfg["width"],
                           height=cfg["height"], pose_sigma=cfg["pose_sigma"],
                           walk_sigma=cfg["walk_sigma"],
                           rig_spread=cfg["rig_spread"])
    write_scene_dir(scene, out_dir)
    _dump_json(cfg, out_dir / "texfit_config.json")
    print(f"wrote scene ({cfg['mode']}, {n} frames) to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

FIT_DEFAULTS = {
    "max_iters": 300,
    "learning_rate": 0.01,
    "beta1": 0.9,
    "beta2": 0.999,
    "tol": 0.0,
    "patience": 50,
    "vis_refresh": 10,
    "seed": 0,
    "use_extrinsics": False,
    "weights": {"texture": 10.0, "shape": 1.0, "prior": 0.1, "kp2d": 1.0,
                "mesh": 5.0},
    "prior": {"rot_inv_var": 0.05, "shape_inv_var": 0.5},
    "init": {"mode": "perturbed", "body_rot_sigma": 0.1, "shape_sigma": 0.0,
             "cam_rot_sigma": 0.0, "scale_sigma": 0.0,
             "translation_sigma": 0.0, "seed": 1,
             "warm_start_iters": 150},
}


def _fit_config(cfg: dict) -> FitConfig:
    return FitConfig(max_iters=cfg["max_iters"],
                     learning_rate=cfg["learning_rate"],
                     beta1=cfg["beta1"], beta2=cfg["beta2"], tol=cfg["tol"],
                     patience=cfg["patience"], vis_refresh=cfg["vis_refresh"],
                     seed=cfg["seed"], use_extrinsics=cfg["use_extrinsics"],
                     weights=LossWeights(**cfg["weights"]))


def _initial_params(scene: Scene, layout: ParamLayout, cfg: dict,
                    prior: QuadraticPrior) -> np.ndarray:
    gt_vec = layout.pack(scene.gt_params)
    icfg = cfg["init"]
    if icfg["mode"] == "gt":
        return gt_vec
    if icfg["mode"] == "perturbed":
        return perturb(gt_vec, layout, seed=icfg["seed"], sigmas=PerturbSpec(
            body_rot=icfg["body_rot_sigma"], shape=icfg["shape_sigma"],
            cam_rot=icfg["cam_rot_sigma"], scale=icfg["scale_sigma"],
            translation=icfg["translation_sigma"]))
    if icfg["mode"] == "cold":
        # rest pose + ground-truth cameras, then a keypoints-only warm start
        rest = [FrameParams(
            pose=PoseParams(
                body_rot6d=np.asarray(p.pose.body_rot6d) * 0.0
                + _rest_rot6d(layout.num_joints),
                shape=np.zeros(layout.num_shape)),
            camera=p.camera) for p in scene.gt_params]
        vec = layout.pack(rest)
        warm = FitConfig(max_iters=icfg["warm_start_iters"],
                         learning_rate=cfg["learning_rate"],
                         weights=LossWeights(texture=0.0, shape=0.0,
                                             prior=0.1, kp2d=1.0, mesh=0.0),
                         vis_refresh=cfg["vis_refresh"])
        return fit(scene, vec, warm, prior=prior).params
    raise ConfigOutOfRange(f"unknown init mode {icfg['mode']!r}")


def _rest_rot6d(num_joints: int) -> np.ndarray:
    from .body_model import rot6d_identity
    return rot6d_identity(max(num_joints - 1, 0))


def cmd_fit(cfg: dict, scene_dir, out_dir) -> int:
    out_dir = Path(out_dir)
    scene = read_scene_dir(scene_dir)
    model = scene.model
    layout = ParamLayout(model.num_joints, model.num_shape, len(scene.frames))
    prior = QuadraticPrior.rest_prior(model.num_joints, model.num_shape,
                                      rot_inv_var=cfg["prior"]["rot_inv_var"],
                                      shape_inv_var=cfg["prior"]["shape_inv_var"])
    init = _initial_params(scene, layout, cfg, prior)
    result = fit(scene, init, _fit_config(cfg), prior=prior)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trace.jsonl", "w") as f:
        for entry in result.trace:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    _dump_json({
        "version": RESULTS_FORMAT_VERSION,
        "scene_seed": scene.seed,
        "mode": scene.mode,
        "params_flat": [float(v) for v in result.params],
        "index_map": layout.index_map(),
        "frames": [_params_to_json(p) for p in layout.unpack(result.params)],
        "final_report": result.final_report.to_json_dict(),
        "init_total": result.init_total,
        "converged": result.converged,
        "aborted": result.aborted,
        "reason": result.reason,
        "iterations": result.iterations,
        "config": cfg,
    }, out_dir / "results.json")
    _dump_json(cfg, out_dir / "texfit_config.json")
    status = "aborted (non-finite)" if result.aborted else \
        ("converged" if result.converged else "budget exhausted")
    print(f"fit {status} after {result.iterations} iterations; "
          f"total {result.final_report.total:.6g}; results in {out_dir}")
    return 2 if result.aborted else 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def read_results(path) -> dict:
    try:
        with open(Path(path) / "results.json") as f:
            results = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise MalformedResults(f"cannot read results.json: {e}") from e
    if results.get("version") != RESULTS_FORMAT_VERSION:
        raise MalformedResults(
            f"unsupported results version {results.get('version')!r}")
    if "frames" not in results:
        raise MalformedResults("results.json lacks fitted frames")
    return results


def cmd_eval(results_dir, scene_dir, out_path) -> int:
    scene = read_scene_dir(scene_dir)
    results = read_results(results_dir)
    if len(results["frames"]) != len(scene.frames):
        raise MalformedResults(
            f"results carry {len(results['frames'])} frames, scene has "
            f"{len(scene.frames)}")
    model = scene.model
    fitted = [_params_from_json(d) for d in results["frames"]]

    per_frame = []
    for i, (fp, gp, frame) in enumerate(zip(fitted, scene.gt_params, scene.frames)):
        mesh_fit = lbs(fp.pose, model)
        mesh_gt = lbs(gp.pose, model)
        joints_fit = np.asarray(regress_joints(mesh_fit, model))
        joints_gt = np.asarray(regress_joints(mesh_gt, model))
        pm = compute_pose_metrics(joints_fit, joints_gt)
        w, h = frame.image.width, frame.image.height
        sil_fit = render_silhouette(mesh_fit, fp.camera, w, h)
        sil_gt = render_silhouette(mesh_gt, gp.camera, w, h)
        acc, f1 = silhouette_metrics(sil_fit, sil_gt)
        per_frame.append({"frame": i, **pm.as_dict(),
                          "silhouette_accuracy": acc, "silhouette_f1": f1})

    agg = {}
    for key in ("mpjpe", "nmpjpe", "rec_error", "silhouette_accuracy",
                "silhouette_f1"):
        vals = [d[key] for d in per_frame]
        agg[key] = {"mean": float(np.mean(vals)), "median": float(np.median(vals))}
    out = {"version": RESULTS_FORMAT_VERSION, "per_frame": per_frame,
           "aggregate": agg, "config": results.get("config", {})}
    _dump_json(out, out_path)
    print(f"eval: mean rec_error {agg['rec_error']['mean']:.6g}, "
          f"silhouette f1 {agg['silhouette_f1']['mean']:.4f}; wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _write_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as f:
        for v in np.asarray(mesh.vertices):
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for tri in mesh.faces:
            f.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")


def _draw_line(rgb: np.ndarray, p0, p1, color) -> None:
    h, w = rgb.shape[:2]
    x0, y0, x1, y1 = int(round(p0[0])), int(round(p0[1])), \
        int(round(p1[0])), int(round(p1[1]))
    steps = max(abs(x1 - x0), abs(y1 - y0), 1)
    xs = np.rint(np.linspace(x0, x1, steps + 1)).astype(int)
    ys = np.rint(np.linspace(y0, y1, steps + 1)).astype(int)
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    rgb[ys[keep], xs[keep]] = color


def cmd_export(results_dir, scene_dir, what: str, out_dir) -> int:
    scene = read_scene_dir(scene_dir)
    results = read_results(results_dir)
    model = scene.model
    fitted = [_params_from_json(d) for d in results["frames"]]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if what == "mesh":
        for i, fp in enumerate(fitted):
            _write_obj(lbs(fp.pose, model), out_dir / f"mesh_{i:04d}.obj")
        print(f"wrote {len(fitted)} OBJ meshes to {out_dir}")
    elif what == "texture":
        for i, (fp, frame) in enumerate(zip(fitted, scene.frames)):
            mesh = lbs(fp.pose, model)
            tex = extract_texture(frame.image, mesh, fp.camera, model)
            vals = np.asarray(tex.values)
            with open(out_dir / f"texture_{i:04d}.csv", "w") as f:
                f.write("r,g,b,visible\n")
                for row, vis in zip(vals, tex.visible):
                    f.write(f"{row[0]:.9g},{row[1]:.9g},{row[2]:.9g},{int(vis)}\n")
            preview = _texture_preview(model, vals)
            write_ppm(preview, out_dir / f"texture_{i:04d}.ppm")
        print(f"wrote texture CSVs + previews to {out_dir}")
    elif what == "overlay":
        for i, (fp, frame) in enumerate(zip(fitted, scene.frames)):
            mesh = lbs(fp.pose, model)
            p2d = np.asarray(project(mesh.vertices, fp.camera))
            rgb = frame.image.rgb.copy()
            for tri in model.faces:
                for a, b in ((0, 1), (1, 2), (2, 0)):
                    _draw_line(rgb, p2d[tri[a]], p2d[tri[b]], (0.1, 0.9, 0.1))
            write_ppm(Image(rgb=np.clip(rgb, 0.0, 1.0)),
                      out_dir / f"overlay_{i:04d}.ppm")
        print(f"wrote {len(fitted)} overlays to {out_dir}")
    else:
        raise ConfigOutOfRange(f"unknown export kind {what!r}")
    return 0


def _texture_preview(model: BodyModel, values: np.ndarray,
                     cell: int = 4) -> Image:
    """F x K grid of texel colors, scaled up to a small preview image."""
    by_face = model.texels_of_face()
    f, k = by_face.shape
    grid = values[by_face]                     # (F, K, 3)
    cols = max(1, int(np.ceil(np.sqrt(f * k) / k)))
    rows = int(np.ceil(f / cols))
    img = np.zeros((rows * cell, cols * k * cell, 3))
    for i in range(f):
        r, c = divmod(i, cols)
        block = np.repeat(np.repeat(grid[i][None, :, :], cell, axis=0),
                          cell, axis=1)
        img[r * cell:(r + 1) * cell,
            c * k * cell:(c + 1) * k * cell] = block
    return Image(rgb=np.clip(img, 0.0, 1.0))


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

BENCH_DEFAULTS = {
    "seeds": [11, 21, 31],
    "synth": SYNTH_DEFAULTS,
    "fit": FIT_DEFAULTS,
}
BENCH_DEFAULTS["synth"]["noise"] = {"kp_sigma": 1.0, "kp_dropout": 0.0,
                                    "annotated_joints": 6, "illumination": 0.0}


def cmd_bench(cfg: dict, out_dir) -> int:
    """synth -> fit with and without texture -> eval -> comparison report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg["seeds"]:
        scfg = copy.deepcopy(cfg["synth"])
        scfg["seed"] = seed
        scene_dir = out_dir / f"seed_{seed:04d}" / "scene"
        cmd_synth(scfg, scene_dir)
        row = {"seed": seed}
        for label, wtex in (("texture_on", cfg["fit"]["weights"]["texture"]),
                            ("texture_off", 0.0)):
            fcfg = copy.deepcopy(cfg["fit"])
            fcfg["weights"]["texture"] = wtex
            fcfg["init"]["seed"] = seed + 1
            run_dir = out_dir / f"seed_{seed:04d}" / label
            code = cmd_fit(fcfg, scene_dir, run_dir)
            if code != 0:
                return code
            cmd_eval(run_dir, scene_dir, run_dir / "metrics.json")
            with open(run_dir / "metrics.json") as f:
                row[label] = json.load(f)["aggregate"]["rec_error"]["mean"]
        rows.append(row)
    on = sorted(r["texture_on"] for r in rows)
    off = sorted(r["texture_off"] for r in rows)
    median_on = float(np.median(on))
    median_off = float(np.median(off))
    report = {
        "per_seed": rows,
        "median_rec_error_texture_on": median_on,
        "median_rec_error_texture_off": median_off,
        "improvement_pct": (100.0 * (1.0 - median_on / median_off)
                            if median_off > 0 else 0.0),
        "config": cfg,
    }
    _dump_json(report, out_dir / "bench_report.json")
    print(f"bench: median rec_error {median_on:.6g} (texture on) vs "
          f"{median_off:.6g} (off); improvement "
          f"{report['improvement_pct']:.1f}%; report in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="texfit",
        description="Synthetic texture-consistency body fitting toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic scene directory")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)

    fp = sub.add_parser("fit", help="fit parameters to a scene directory")
    fp.add_argument("scene_dir")
    fp.add_argument("--config", default=None)
    fp.add_argument("--out", required=True)

    ep = sub.add_parser("eval", help="evaluate fit results against ground truth")
    ep.add_argument("results_dir")
    ep.add_argument("scene_dir")
    ep.add_argument("--out", required=True)

    xp = sub.add_parser("export", help="export meshes, textures, or overlays")
    xp.add_argument("results_dir")
    xp.add_argument("scene_dir")
    xp.add_argument("--what", choices=("mesh", "texture", "overlay"),
                    required=True)
    xp.add_argument("--out", required=True)

    bp = sub.add_parser("bench", help="synth + fit with/without texture + eval")
    bp.add_argument("--config", default=None)
    bp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args, overrides = _parser().parse_known_args(argv)
    try:
        if args.command == "synth":
            cfg = resolve_config(SYNTH_DEFAULTS, args.config, overrides)
            return cmd_synth(cfg, args.out)
        if args.command == "fit":
            cfg = resolve_config(FIT_DEFAULTS, args.config, overrides)
            return cmd_fit(cfg, args.scene_dir, args.out)
        if args.command == "eval":
            if overrides:
                raise ConfigOutOfRange(f"unknown arguments {overrides}")
            return cmd_eval(args.results_dir, args.scene_dir, args.out)
        if args.command == "export":
            if overrides:
                raise ConfigOutOfRange(f"unknown arguments {overrides}")
            return cmd_export(args.results_dir, args.scene_dir, args.what,
                              args.out)
        if args.command == "bench":
            cfg = resolve_config(BENCH_DEFAULTS, args.config, overrides)
            return cmd_bench(cfg, args.out)
        raise ConfigOutOfRange(f"unknown command {args.command!r}")
    except (MalformedScene, MalformedResults, MalformedModelFile,
            ConfigOutOfRange) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NonFiniteLoss as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 2
    except TexfitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
