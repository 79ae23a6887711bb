"""Command-line interface: ``hybrid-eye <command> ...``.

Exit codes: 0 success, 1 runtime error, 2 validation error.
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._validation import ValidationError
from .envmap import assemble_lighting, load_env
from .eye_model import EyeShapeParams, RigidTransform, generate_mesh, write_obj
from .field import save_voxel_field
from .fit import EyePoseRefiner, Observation, VoxelShRegressor
from .imageio import read_pfm, to_ldr, write_pfm, write_ppm
from .render import SamplingConfig
from .rotations import rotvec_to_matrix
from .scene import DEFAULT_RESOLUTION, Scene, SceneConfig, write_reference_scene
from .sh import project_env_to_sh, rotate_env_coeffs, save_coeffs

OBSERVATIONS_FILE = "observations.json"

REPORT_SCHEMAS = {
    "fit-field": {"frame": str, "n_observations": int, "lighting_rank": list, "ridge": list,
                  "transfer_residual": (int, float), "projection_residual": list, "seconds": (int, float),
                  "outputs": list},
    "fit-pose": {"frame": str, "initial_loss": (int, float), "final_loss": (int, float), "converged": bool,
                 "renders": int, "seconds": (int, float), "pose": dict},
}


def validate_report(report):
    """Check a fit report dict against its command's schema; returns it unchanged."""
    if not isinstance(report, dict) or report.get("command") not in REPORT_SCHEMAS:
        raise ValidationError("report must be a dict with command fit-field or fit-pose")
    for key, kind in REPORT_SCHEMAS[report["command"]].items():
        if key not in report:
            raise ValidationError(f"report is missing {key!r}")
        val = report[key]
        if not isinstance(val, kind) or (isinstance(val, bool) and kind is not bool):
            raise ValidationError(f"report field {key!r} has type {type(val).__name__}")
    if report["command"] == "fit-pose":
        pose = report["pose"]
        if sorted(pose) != ["rotvec", "translation"] or any(len(pose[k]) != 3 for k in pose):
            raise ValidationError("report pose needs 3-vectors rotvec and translation")
    return report


def _vec(text, n=3, name="vector"):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValidationError(f"--{name}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise ValidationError(f"--{name}: expected {n} comma-separated numbers, got {text!r}")
    return np.array(vals)


def _gaze(text):
    v = _vec(text, 3, "gaze")
    n = np.linalg.norm(v)
    if n == 0:
        raise ValidationError("--gaze must be nonzero")
    return v / n


def _resolution(args):
    if args.resolution is None:
        return DEFAULT_RESOLUTION, DEFAULT_RESOLUTION
    try:
        w, h = (int(x) for x in args.resolution.lower().split("x"))
    except ValueError:
        raise ValidationError(f"--resolution must look like 800x800, got {args.resolution!r}") from None
    if w < 1 or h < 1:
        raise ValidationError("--resolution must be positive")
    return w, h


def _sampling(args, scene):
    s = scene.sampling
    if args.samples:
        try:
            c, f = (int(x) for x in args.samples.split(","))
        except ValueError:
            raise ValidationError(f"--samples must be coarse,fine, got {args.samples!r}") from None
        s = replace(s, n_coarse=c, n_fine=f)
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    return s


def _frame(scene, frame):
    if frame not in scene.poses:
        raise ValidationError(f"unknown frame id {frame!r} (known: {', '.join(scene.frame_ids())})")
    return frame


def _camera(scene, args):
    w, h = _resolution(args)
    try:
        return scene.camera(args.camera, w, h)
    except KeyError as exc:
        raise ValidationError(str(exc.args[0])) from None


def _out_stem(out):
    p = Path(out)
    return p.with_suffix("") if p.suffix.lower() in (".pfm", ".ppm") else p


def write_image(out, hdr):
    stem = _out_stem(out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_pfm(stem.with_suffix(".pfm"), hdr)
    write_ppm(stem.with_suffix(".ppm"), to_ldr(hdr))
    return stem.with_suffix(".pfm"), stem.with_suffix(".ppm")


def _log(msg):
    print(msg, flush=True)


# --- commands --------------------------------------------------------------------

def cmd_render(args):
    scene = Scene.load(args.config)
    cam = _camera(scene, args)
    sampling = _sampling(args, scene)
    t0 = time.perf_counter()
    if args.gaze is not None:
        img = scene.render_gaze(_gaze(args.gaze), cam, sampling, args.threads)
    else:
        frame = _frame(scene, args.frame or scene.frame_ids()[0])
        ctx = scene.lighting(frame, env=load_env(args.env)) if args.env else None
        img = scene.render_frame(frame, cam, sampling, args.threads, ctx)
    pfm, ppm = write_image(args.out, img)
    _log(f"render: {cam.width}x{cam.height} in {time.perf_counter() - t0:.2f} s -> {pfm}, {ppm}")
    return 0


def cmd_relight(args):
    scene = Scene.load(args.config)
    frame = _frame(scene, args.frame or scene.frame_ids()[0])
    cam = _camera(scene, args)
    env = load_env(args.env) if args.env else None
    light = None
    if args.light:
        vals = _vec(args.light, 4, "light")
        light = (vals[:3] / np.linalg.norm(vals[:3]), float(vals[3]))
    ctx = scene.lighting(frame, env=env, light=light, use_moving=not args.no_moving_light)
    img = scene.render_frame(frame, cam, _sampling(args, scene), args.threads, ctx)
    pfm, ppm = write_image(args.out, img)
    _log(f"relight: frame {frame} -> {pfm}, {ppm}")
    return 0


def cmd_regaze(args):
    scene = Scene.load(args.config)
    cam = _camera(scene, args)
    sampling = _sampling(args, scene)
    start = _gaze(args.gaze)
    if args.sweep_to is None:
        img = scene.render_gaze(start, cam, sampling, args.threads)
        pfm, ppm = write_image(args.out, img)
        _log(f"regaze: {np.round(start, 6).tolist()} -> {pfm}, {ppm}")
        return 0
    end = _gaze(args.sweep_to)
    stem = _out_stem(args.out)
    ang = np.arccos(np.clip(start @ end, -1, 1))
    for i in range(args.steps):
        t = i / max(args.steps - 1, 1)
        g = start if ang < 1e-12 else (np.sin((1 - t) * ang) * start + np.sin(t * ang) * end) / np.sin(ang)
        img = scene.render_gaze(g / np.linalg.norm(g), cam, sampling, args.threads)
        write_image(f"{stem}_{i:04d}", img)
    _log(f"regaze: wrote {args.steps} frames {stem}_0000..{stem}_{args.steps - 1:04d}")
    return 0


def load_observations(obs_dir, scene, default_resolution=None):
    """Observations listed in ``<dir>/observations.json``.

    Each entry: {"image": pfm path, "camera": id, "frame": id,
    optional "env": map path, optional "light": {"direction", "distance"},
    optional "no_moving_light": bool, optional "mask": .npy path}.
    """
    obs_dir = Path(obs_dir)
    listing = obs_dir / OBSERVATIONS_FILE
    if not listing.is_file():
        raise ValidationError(f"no observations found: {listing} is missing")
    data = json.loads(listing.read_text())
    entries = data.get("observations", [])
    if not entries:
        raise ValidationError(f"{listing} lists no observations")
    out = []
    cams = {}
    for e in entries:
        img = read_pfm(obs_dir / e["image"])
        key = (e.get("camera"), img.shape[1], img.shape[0])
        if key not in cams:
            try:
                cams[key] = scene.camera(e.get("camera"), img.shape[1], img.shape[0])
            except KeyError as exc:
                raise ValidationError(str(exc.args[0])) from None
        frame = e.get("frame")
        if frame is not None:
            _frame(scene, frame)
        env = load_env(obs_dir / e["env"]) if e.get("env") else None
        light = None
        if e.get("light"):
            light = (np.asarray(e["light"]["direction"], dtype=np.float64), float(e["light"]["distance"]))
        if e.get("static_env") is False:
            moving = scene.moving
            ctx = assemble_lighting(None, moving, light[0], light[1], rotvec_to_matrix(scene.cfg.head_rotation),
                                    scene.cfg.env_scale)
        else:
            ctx = scene.lighting(frame, env=env, light=light, use_moving=not e.get("no_moving_light", False))
        mask = np.load(obs_dir / e["mask"]) if e.get("mask") else None
        out.append((frame, Observation(cams[key], ctx, img, mask)))
    return out


def cmd_fit_field(args):
    scene = Scene.load(args.config)
    frame = _frame(scene, args.frame or scene.frame_ids()[0])
    obs = [o for _, o in load_observations(args.observations, scene)]
    sampling = _sampling(args, scene)
    rscene = scene.render_scene(scene.pose(frame), scene.warps[frame])
    est = VoxelShRegressor(rscene, sampling, threads=args.threads, n_albedo_rounds=args.albedo_rounds)
    est.fit(obs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fitted = est.field_
    members = getattr(fitted, "fields", [fitted])
    names = []
    for i, f in enumerate(members):
        name = f"fitted_{i}.eynf"
        save_voxel_field(out / name, f)
        names.append(name)
    cfg = SceneConfig.from_dict(scene.cfg.to_dict(), scene.cfg.base_dir)
    cfg.fields = [{"voxel": str((out / n).resolve())} for n in names]
    _save_relocated(cfg, out / "scene.json")
    report = {
        "command": "fit-field", "frame": frame, "n_observations": len(obs),
        "lighting_rank": [int(r) for r in est.rank_], "ridge": est.ridge_used_,
        "transfer_residual": est.transfer_residual_, "projection_residual": est.history_,
        "seconds": est.timings_["fit"], "outputs": names + ["scene.json"],
    }
    (out / "report.json").write_text(json.dumps(validate_report(report), indent=2) + "\n")
    _log(f"fit-field: {len(obs)} observations, rank {report['lighting_rank']}, "
         f"residual {est.history_[-1]:.3e}, {report['seconds']:.1f} s -> {out}")
    return 0


def cmd_fit_pose(args):
    scene = Scene.load(args.config)
    frame = _frame(scene, args.frame or scene.frame_ids()[0])
    obs = [o for f, o in load_observations(args.observations, scene) if f in (None, frame)]
    if not obs:
        raise ValidationError(f"no observations for frame {frame!r}")
    sampling = _sampling(args, scene)
    pose0 = scene.pose(frame)
    rscene = scene.render_scene(pose0, scene.warps[frame])
    est = EyePoseRefiner(rscene, scene.params, sampling, max_nfev=args.max_evals, threads=args.threads)
    est.fit(obs, initial_pose=pose0)
    cfg = SceneConfig.from_dict(scene.cfg.to_dict(), scene.cfg.base_dir)
    fr = cfg.frames[frame]
    fr.rotvec = [float(x) for x in est.pose_.frame.rotvec]
    fr.translation = [float(x) for x in est.pose_.frame.translation]
    out = Path(args.out)
    _save_relocated(cfg, out)
    report = {
        "command": "fit-pose", "frame": frame, "initial_loss": est.initial_loss_, "final_loss": est.loss_,
        "converged": est.converged_, "renders": est.n_renders_, "seconds": est.timings_["refine"],
        "pose": {"rotvec": fr.rotvec, "translation": fr.translation},
    }
    out.with_suffix(".report.json").write_text(json.dumps(validate_report(report), indent=2) + "\n")
    _log(f"fit-pose: loss {est.initial_loss_:.3e} -> {est.loss_:.3e}, converged={est.converged_}, -> {out}")
    return 0


def _save_relocated(cfg, path):
    """Save ``cfg`` at ``path`` with asset paths made absolute so they still resolve."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg.base_dir = str(Path(cfg.base_dir).resolve())
    data = cfg.to_dict()
    _absolutise(data, cfg)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _absolutise(data, cfg):
    """Rewrite relative asset paths so a config saved elsewhere still resolves them."""
    for spec in data["fields"]:
        if "voxel" in spec:
            spec["voxel"] = str(cfg.path(spec["voxel"]).resolve())
    for key in ("environment", "vertex_offsets"):
        if data.get(key):
            data[key] = str(cfg.path(data[key]).resolve())
    if data.get("moving_light"):
        data["moving_light"]["path"] = str(cfg.path(data["moving_light"]["path"]).resolve())
    for fr in data["frames"].values():
        if fr["warp"].get("path"):
            fr["warp"]["path"] = str(cfg.path(fr["warp"]["path"]).resolve())


def cmd_project_env(args):
    env = load_env(args.env)
    coeffs = project_env_to_sh(env, args.order)
    if args.rotate:
        coeffs = rotate_env_coeffs(coeffs, rotvec_to_matrix(_vec(args.rotate, 3, "rotate")))
    save_coeffs(args.out, coeffs)
    _log(f"project-env: order {args.order}, {coeffs.values.shape[0]} coefficients -> {args.out}")
    return 0


def cmd_make_eye(args):
    if args.config:
        params = Scene.load(args.config).params
    else:
        params = EyeShapeParams(args.b, args.c, args.d, args.theta_mod, args.theta_offset)
    mesh = generate_mesh(params)
    write_obj(args.out, mesh)
    _log(f"make-eye: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces -> {args.out}")
    return 0


def cmd_make_reference(args):
    path = write_reference_scene(args.out)
    _log(f"make-reference: wrote {path}")
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hybrid-eye", description="Eye + periocular radiance rendering and fitting.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, frame=True):
        sp.add_argument("--config", required=True)
        if frame:
            sp.add_argument("--frame")
        sp.add_argument("--camera")
        sp.add_argument("--resolution", help="WxH (default 800x800)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--samples", help="coarse,fine")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("render", help="render a training frame or a gaze")
    common(sp)
    sp.add_argument("--gaze", help="x,y,z target gaze (renders via gaze interpolation)")
    sp.add_argument("--env", help="override static environment map")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("relight", help="render a frame under new lighting")
    common(sp)
    sp.add_argument("--env")
    sp.add_argument("--light", help="x,y,z,distance moving-light placement")
    sp.add_argument("--no-moving-light", action="store_true")
    sp.set_defaults(func=cmd_relight)

    sp = sub.add_parser("regaze", help="render novel gazes")
    common(sp, frame=False)
    sp.add_argument("--gaze", required=True)
    sp.add_argument("--sweep-to", help="x,y,z end gaze; writes a numbered sequence")
    sp.add_argument("--steps", type=int, default=20)
    sp.set_defaults(func=cmd_regaze)

    sp = sub.add_parser("fit-field", help="fit voxel SH transfer from observations")
    common(sp)
    sp.add_argument("--observations", required=True)
    sp.add_argument("--albedo-rounds", type=int, default=0)
    sp.set_defaults(func=cmd_fit_field)

    sp = sub.add_parser("fit-pose", help="refine a frame's eyeball pose from observations")
    common(sp)
    sp.add_argument("--observations", required=True)
    sp.add_argument("--max-evals", type=int, default=60)
    sp.set_defaults(func=cmd_fit_pose)

    sp = sub.add_parser("project-env", help="project a lat-long map to SH coefficients")
    sp.add_argument("env")
    sp.add_argument("--order", type=int, default=8)
    sp.add_argument("--rotate", help="rx,ry,rz axis-angle applied to the coefficients")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_project_env)

    sp = sub.add_parser("make-eye", help="export the eyeball mesh as OBJ")
    sp.add_argument("--config")
    sp.add_argument("--b", type=float, default=6.0)
    sp.add_argument("--c", type=float, default=10.5)
    sp.add_argument("--d", type=float, default=5.25)
    sp.add_argument("--theta-mod", type=float, default=2.0)
    sp.add_argument("--theta-offset", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_make_eye)

    sp = sub.add_parser("make-reference", help="write the synthetic reference scene")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_make_reference)
    return p


VECTOR_OPTIONS = ("--gaze", "--sweep-to", "--light", "--rotate")


def _attach_vector_values(argv):
    """Glue ``--gaze -0.2,0,1`` into ``--gaze=-0.2,0,1`` so argparse does not read the value as a flag."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in VECTOR_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-") and "," in argv[i + 1]:
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(_attach_vector_values(sys.argv[1:] if argv is None else list(argv)))
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
