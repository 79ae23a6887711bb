"""Scene configuration (versioned JSON), scene loading, and the synthetic reference scene."""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._validation import ValidationError
from .bvh import BVH
from .envmap import EnvMap, MovingLight, assemble_lighting, black_lighting, load_env, save_env
from .eye_model import EyePose, EyeShapeParams, RigidTransform, generate_mesh
from .field import (
    FieldUnion, IdentityWarp, LatticeWarp, RigidWarp, TwistWarp, VacuumField, VoxelShField, WarpStore,
    load_voxel_field, save_voxel_field,
)
from .gaze import build_gaze_sphere, interpolate_pose, blend_warp, locate_gaze
from .rays import IOR_CORNEA, Camera, EyeSurface
from .render import DEFAULT_CLIP, RenderScene, SamplingConfig, render_image
from .rotations import minimal_rotation, matrix_to_rotvec, rotvec_to_matrix
from .sh import DIFFUSE_ORDER, SPECULAR_ORDER, project_env_to_sh, sh_basis

SCHEMA_VERSION = 1
DEFAULT_RESOLUTION = 800


def _floats(x, n=None):
    out = [float(v) for v in x]
    if n is not None and len(out) != n:
        raise ValidationError(f"expected {n} numbers, got {len(out)}")
    return out


# --- config -------------------------------------------------------------------

@dataclass
class CameraSpec:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = DEFAULT_RESOLUTION
    height: int = DEFAULT_RESOLUTION
    rotvec: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    translation: list = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def to_camera(self, width=None, height=None):
        cam = Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                     rotvec_to_matrix(self.rotvec), np.asarray(self.translation, dtype=np.float64))
        if width is not None or height is not None:
            cam = cam.with_resolution(width or cam.width, height or cam.height)
        return cam

    @classmethod
    def from_camera(cls, cam):
        return cls(float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy), int(cam.width), int(cam.height),
                   _floats(matrix_to_rotvec(cam.R)), _floats(cam.t))


@dataclass
class FrameSpec:
    rotvec: list
    translation: list
    warp: dict = field(default_factory=lambda: {"type": "identity"})
    light: dict = None  # {"direction": [x, y, z], "distance": mm}


@dataclass
class SceneConfig:
    eye: dict = field(default_factory=lambda: {"b": 6.0, "c": 10.5, "d": 5.25, "theta_mod": 2.0, "theta_offset": 0.5})
    vertex_offsets: str = None            # .npy path, optional
    global_pose: dict = field(default_factory=lambda: {"rotvec": [0.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.0]})
    frames: dict = field(default_factory=dict)          # id -> FrameSpec
    fields: list = field(default_factory=list)          # [{"voxel": path} | {"analytic": "vacuum"}]
    environment: str = None
    head_rotation: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    moving_light: dict = None             # {"path", "ref_distance", "captured_direction"}
    cameras: dict = field(default_factory=dict)         # id -> CameraSpec
    sampling: dict = field(default_factory=lambda: {"n_coarse": 64, "n_fine": 64, "seed": 0, "jitter": True})
    flags: dict = field(default_factory=lambda: {"sclera_ior_zero": False, "shadow_branch_enabled": True})
    env_scale: float = 1.0
    clip_half_width: float = DEFAULT_CLIP
    interior_offset: list = field(default_factory=lambda: [0.0, 0.0, -100.0])
    ior: float = IOR_CORNEA
    base_dir: str = field(default=".", repr=False, compare=False)

    # serialisation -------------------------------------------------------
    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        d["frames"] = {k: asdict(v) for k, v in self.frames.items()}
        d["cameras"] = {k: asdict(v) for k, v in self.cameras.items()}
        return {"schema": "hybrid-eye-scene", "version": SCHEMA_VERSION, **d}

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = dict(d)
        if d.pop("schema", None) != "hybrid-eye-scene":
            raise ValidationError("not a hybrid-eye scene config (missing schema tag)")
        version = d.pop("version", None)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported scene config version {version!r}")
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            frames = {str(k): FrameSpec(**v) for k, v in d.pop("frames", {}).items()}
            cameras = {str(k): CameraSpec(**v) for k, v in d.pop("cameras", {}).items()}
        except TypeError as exc:
            raise ValidationError(f"malformed frame or camera entry: {exc}") from exc
        cfg = cls(frames=frames, cameras=cameras, base_dir=str(base_dir), **d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, path.parent)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def path(self, rel):
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # validation ---------------------------------------------------------
    def validate(self):
        EyeShapeParams(**self.eye)
        for fid, fr in self.frames.items():
            _floats(fr.rotvec, 3)
            _floats(fr.translation, 3)
            _check_warp_spec(fr.warp, fid, self)
            if fr.light is not None:
                if self.moving_light is None:
                    raise ValidationError(f"frame {fid!r} places a light but no moving_light is configured")
                if float(fr.light["distance"]) <= 0:
                    raise ValidationError(f"frame {fid!r}: light distance must be > 0")
        for spec in self.fields:
            if "voxel" in spec:
                self._need_file(spec["voxel"], "voxel field")
            elif spec.get("analytic") not in ANALYTIC_FIELDS:
                raise ValidationError(f"unknown field spec {spec!r}")
        for name in ("environment",):
            if getattr(self, name):
                self._need_file(getattr(self, name), name)
        if self.moving_light is not None:
            self._need_file(self.moving_light["path"], "moving light map")
            if float(self.moving_light["ref_distance"]) <= 0:
                raise ValidationError("moving light ref_distance must be > 0")
        if self.vertex_offsets:
            self._need_file(self.vertex_offsets, "vertex offsets")
        s = self.sampling
        SamplingConfig(int(s["n_coarse"]), int(s["n_fine"]), bool(s.get("jitter", True)), int(s.get("seed", 0)))
        if self.env_scale <= 0:
            raise ValidationError("env_scale must be > 0")
        if self.clip_half_width <= 0:
            raise ValidationError("clip_half_width must be > 0")

    def _need_file(self, rel, what):
        if not self.path(rel).is_file():
            raise ValidationError(f"{what} file not found: {self.path(rel)}")


def _check_warp_spec(spec, fid, cfg):
    kind = spec.get("type")
    if kind == "identity":
        return
    if kind == "rigid":
        _floats(spec["rotvec"], 3)
        _floats(spec["translation"], 3)
    elif kind == "twist":
        float(spec["rate"])
        float(spec["falloff"])
        _floats(spec.get("center", [0, 0, 0]), 3)
    elif kind == "lattice":
        cfg._need_file(spec["path"], f"lattice warp of frame {fid!r}")
    else:
        raise ValidationError(f"frame {fid!r}: unknown warp type {kind!r}")


def make_warp(spec, cfg):
    kind = spec["type"]
    if kind == "identity":
        return IdentityWarp()
    if kind == "rigid":
        return RigidWarp(rotvec_to_matrix(spec["rotvec"]), np.asarray(spec["translation"], dtype=np.float64))
    if kind == "twist":
        return TwistWarp(spec["rate"], spec["falloff"], spec.get("center", (0.0, 0.0, 0.0)))
    data = np.load(cfg.path(spec["path"]))
    return LatticeWarp(data["lo"], data["hi"], data["displacement"])


ANALYTIC_FIELDS = {"vacuum": VacuumField}


# --- loaded scene --------------------------------------------------------------

class Scene:
    """Runtime objects built from a :class:`SceneConfig`."""

    def __init__(self, cfg):
        self.cfg = cfg
        offsets = np.load(cfg.path(cfg.vertex_offsets)) if cfg.vertex_offsets else None
        self.params = EyeShapeParams(**cfg.eye, vertex_offsets=offsets)
        self.global_pose = RigidTransform(cfg.global_pose["rotvec"], cfg.global_pose["translation"])
        self.poses = {fid: EyePose(self.global_pose, RigidTransform(fr.rotvec, fr.translation))
                      for fid, fr in cfg.frames.items()}
        self.warps = WarpStore({fid: make_warp(fr.warp, cfg) for fid, fr in cfg.frames.items()})
        fields = []
        for spec in cfg.fields:
            fields.append(load_voxel_field(cfg.path(spec["voxel"])) if "voxel" in spec
                          else ANALYTIC_FIELDS[spec["analytic"]]())
        if not fields:
            self.field = VacuumField()
        elif len(fields) == 1:
            self.field = fields[0]
        elif all(isinstance(f, VoxelShField) for f in fields):
            self.field = FieldUnion(fields)
        else:
            raise ValidationError("several fields are only supported when all are voxel fields")
        self.env = load_env(cfg.path(cfg.environment)) if cfg.environment else None
        self._env_sh = None
        ml = cfg.moving_light
        self.moving = None
        if ml is not None:
            track = {fid: (fr.light["direction"], fr.light["distance"])
                     for fid, fr in cfg.frames.items() if fr.light is not None}
            self.moving = MovingLight(load_env(cfg.path(ml["path"])), float(ml["ref_distance"]),
                                      tuple(ml.get("captured_direction", (0.0, 0.0, 1.0))), track)
        s = cfg.sampling
        self.sampling = SamplingConfig(int(s["n_coarse"]), int(s["n_fine"]), bool(s.get("jitter", True)),
                                       int(s.get("seed", 0)))
        self._canon = None
        self._gaze_sphere = None

    @classmethod
    def load(cls, path):
        return cls(SceneConfig.load(path))

    def frame_ids(self):
        return list(self.cfg.frames)

    def pose(self, frame):
        if frame not in self.poses:
            raise KeyError(f"unknown frame id {frame!r}")
        return self.poses[frame]

    def camera(self, cam_id=None, width=None, height=None):
        if not self.cfg.cameras:
            raise ValidationError("config defines no cameras")
        cam_id = next(iter(self.cfg.cameras)) if cam_id is None else cam_id
        if cam_id not in self.cfg.cameras:
            raise KeyError(f"unknown camera id {cam_id!r}")
        return self.cfg.cameras[cam_id].to_camera(width, height)

    def canonical(self):
        if self._canon is None:
            mesh = generate_mesh(self.params)
            self._canon = (mesh, BVH(mesh.vertices, mesh.faces))
        return self._canon

    def surface(self, pose):
        mesh, bvh = self.canonical()
        return EyeSurface.build(self.params, pose, mesh, bvh)

    def render_scene(self, pose, warp, field=None):
        f = self.cfg.flags
        return RenderScene(
            field=self.field if field is None else field, warp=warp, pose=pose, surface=self.surface(pose),
            interior_offset=tuple(self.cfg.interior_offset), ior=self.cfg.ior,
            sclera_ior_zero=bool(f.get("sclera_ior_zero", False)),
            shadow_branch_enabled=bool(f.get("shadow_branch_enabled", True)),
            clip_half_width=self.cfg.clip_half_width,
        )

    def env_sh(self):
        if self._env_sh is None and self.env is not None:
            self._env_sh = project_env_to_sh(self.env, SPECULAR_ORDER)
        return self._env_sh

    def lighting(self, frame=None, env=None, light=None, use_moving=True):
        """Lighting for a frame; ``env`` overrides the static map, ``light`` = (direction, distance) the light placement."""
        use_env = self.env if env is None else env
        env_sh = self.env_sh() if env is None else None
        moving, direction, distance = None, None, None
        if use_moving and self.moving is not None:
            if light is not None:
                direction, distance = light
            elif frame is not None and frame in self.moving.track:
                direction, distance = self.moving.placement(frame)
            if direction is not None:
                moving = self.moving
        if use_env is None and moving is None:
            return replace(black_lighting(), env_scale=float(self.cfg.env_scale))
        return assemble_lighting(use_env, moving, direction, distance, rotvec_to_matrix(self.cfg.head_rotation),
                                 self.cfg.env_scale, SPECULAR_ORDER, env_sh)

    def gaze_sphere(self):
        if self._gaze_sphere is None:
            ids = self.frame_ids()
            self._gaze_sphere = build_gaze_sphere([self.poses[i] for i in ids], ids)
        return self._gaze_sphere

    def regaze(self, target):
        """(blend, pose, warp, lighting frame) for a target gaze direction."""
        blend = locate_gaze(self.gaze_sphere(), target)
        pose = interpolate_pose(blend, self.poses, target)
        warp = blend_warp(blend, self.warps)
        light_frame = blend.frame_ids[int(np.argmax(blend.weights))]
        return blend, pose, warp, light_frame

    def render_frame(self, frame, camera, sampling=None, threads=1, lighting=None):
        pose = self.pose(frame)
        ctx = self.lighting(frame) if lighting is None else lighting
        return render_image(camera, self.render_scene(pose, self.warps[frame]), ctx, sampling or self.sampling, threads)

    def render_gaze(self, target, camera, sampling=None, threads=1, lighting=None):
        _, pose, warp, light_frame = self.regaze(target)
        ctx = self.lighting(light_frame) if lighting is None else lighting
        return render_image(camera, self.render_scene(pose, warp), ctx, sampling or self.sampling, threads)


# --- synthetic content ------------------------------------------------------------

def lobe_zonal(power, order):
    """Zonal SH coefficients of ((1 + cos theta) / 2)^power (a degree-``power`` polynomial)."""
    x, w = np.polynomial.legendre.leggauss(64)
    f = ((1 + x) / 2) ** power
    z = np.zeros(order + 1)
    for l in range(order + 1):
        Pl = np.polynomial.legendre.legval(x, np.eye(order + 1)[l])
        z[l] = 2 * np.pi * np.sqrt((2 * l + 1) / (4 * np.pi)) * np.sum(w * f * Pl)
    return z


def lobe_transfer(axes, power, order, scale=1.0):
    """SH coefficients of scale * ((1 + axis . w) / 2)^power for each axis; nonnegative and band-limited."""
    axes = np.asarray(axes, dtype=np.float64)
    axes = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
    z = lobe_zonal(power, order)
    ls = np.concatenate([[l] * (2 * l + 1) for l in range(order + 1)])
    factor = z[ls] * np.sqrt(4 * np.pi / (2 * ls + 1))
    return scale * sh_basis(axes, order) * factor


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _grid(lo, hi, dims):
    axes = [np.linspace(lo[a], hi[a], dims[a]) for a in range(3)]
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def _smooth(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def reference_skin_field(dims=(17, 17, 9), lo=(-24.0, -24.0, -6.0), hi=(24.0, 24.0, 10.0)):
    """Periocular 'skin': a textured slab with an eye opening, nonnegative lobe transfers."""
    lo, hi = _f32(lo), _f32(hi)
    p = _grid(lo, hi, dims)
    r = np.hypot(p[:, 0], p[:, 1] * 1.6)
    slab = _smooth((p[:, 2] + 4.0) / 2.0) * _smooth((7.0 - p[:, 2]) / 2.0)
    sigma = 1.5 * slab * _smooth((r - 9.5) / 2.0)
    albedo = np.stack([
        0.75 + 0.15 * np.sin(p[:, 0] / 5.0),
        0.55 + 0.1 * np.cos(p[:, 1] / 4.0),
        0.45 + 0.1 * np.sin((p[:, 0] + p[:, 1]) / 7.0),
    ], axis=1)
    normal = np.stack([p[:, 0] / 40.0, p[:, 1] / 40.0, np.ones(len(p))], axis=1)
    diffuse = lobe_transfer(normal, DIFFUSE_ORDER, DIFFUSE_ORDER, 0.5)
    refl = np.stack([-p[:, 0] / 30.0, 0.3 - p[:, 1] / 30.0, np.ones(len(p))], axis=1)
    specular = lobe_transfer(refl, SPECULAR_ORDER, SPECULAR_ORDER, 0.08)
    return VoxelShField(lo, hi, dims, _f32(sigma), _f32(albedo), _f32(diffuse), _f32(specular))


def reference_interior_field(interior_offset=(0.0, 0.0, -100.0), dims=(29, 29, 14), params=EyeShapeParams()):
    """Eye interior in the offset canonical frame: textured iris, dark pupil, white sclera shell."""
    off = np.asarray(interior_offset, dtype=np.float64)
    lo = _f32(off + np.array([-11.0, -11.0, 2.0]))
    hi = _f32(off + np.array([11.0, 11.0, 12.4]))
    p = _grid(lo, hi, dims) - off
    rxy = np.hypot(p[:, 0], p[:, 1])
    rad = np.linalg.norm(p, axis=1)
    phi = np.arctan2(p[:, 1], p[:, 0])
    iris_z = params.c - 1.2
    iris = _smooth((rxy - 1.8) / 0.8) * _smooth((params.b + 0.5 - rxy) / 0.8) * _smooth(1.0 - np.abs(p[:, 2] - iris_z) / 1.5)
    shell = _smooth((rad - 10.0) / 1.2) * _smooth((iris_z - 0.5 - p[:, 2]) / 1.0)
    sigma = 3.0 * np.maximum(iris, shell)
    iris_col = np.stack([
        0.35 + 0.2 * np.cos(6 * phi) + 0.1 * np.cos(rxy * 2.0),
        0.45 + 0.15 * np.sin(5 * phi + 0.5),
        0.25 + 0.1 * np.cos(3 * phi + rxy),
    ], axis=1)
    sclera_col = np.tile([0.85, 0.82, 0.8], (len(p), 1)) + 0.05 * np.stack([np.sin(phi * 4)] * 3, axis=1)
    wiris = iris / np.maximum(iris + shell, 1e-9)
    albedo = np.clip(wiris[:, None] * iris_col + (1 - wiris[:, None]) * sclera_col, 0.0, 1.0)
    axis = np.stack([p[:, 0] / 25.0, p[:, 1] / 25.0, np.ones(len(p))], axis=1)
    diffuse = lobe_transfer(axis, 3, DIFFUSE_ORDER, 0.7)
    specular = lobe_transfer(axis, 6, SPECULAR_ORDER, 0.03)
    return VoxelShField(lo, hi, dims, _f32(sigma), _f32(albedo), _f32(diffuse), _f32(specular))


def lobe_env(direction, sharpness, amplitude, width=128, height=64, ambient=0.0):
    """Lat-long map of ambient + sum_i amplitude_i * exp(sharpness_i (w . d_i - 1))."""
    dirs_list = np.atleast_2d(direction)
    sharp = np.broadcast_to(sharpness, (len(dirs_list),))
    amp = np.broadcast_to(amplitude, (len(dirs_list), 3) if np.ndim(amplitude) > 1 else (len(dirs_list),))

    def fn(w):
        out = np.full(w.shape[:-1] + (3,), float(ambient))
        for d, k, a in zip(dirs_list, sharp, amp):
            d = np.asarray(d, dtype=np.float64) / np.linalg.norm(d)
            out += np.multiply.outer(np.exp(k * (w @ d - 1.0)), np.broadcast_to(a, (3,)))
        return out

    return EnvMap(_f32(EnvMap.from_function(fn, width, height).radiance))


def reference_environment():
    return lobe_env([[0.3, 0.8, 0.5], [-0.6, 0.2, 0.7], [0.0, -1.0, 0.2]], [4.0, 8.0, 2.0],
                    [[1.0, 0.9, 0.8], [0.4, 0.5, 0.9], [0.2, 0.25, 0.2]], ambient=0.08)


def reference_light():
    """A narrow white lobe seen from +z at the reference distance."""
    return lobe_env([0.0, 0.0, 1.0], 20.0, 3.0)


def gaze_rotvec(yaw_deg, pitch_deg):
    y, p = np.radians(yaw_deg), np.radians(pitch_deg)
    g = np.array([np.sin(y) * np.cos(p), np.sin(p), np.cos(y) * np.cos(p)])
    return _floats(matrix_to_rotvec(minimal_rotation([0.0, 0.0, 1.0], g)))


def reference_config(base_dir=".", sampling=None):
    frames = {}
    k = 0
    for pitch in (-10.0, 0.0, 10.0):
        for yaw in (-15.0, 0.0, 15.0):
            fid = f"f{k}"
            frames[fid] = FrameSpec(
                gaze_rotvec(yaw, pitch), [0.05 * yaw / 15.0, 0.05 * pitch / 10.0, 0.0],
                {"type": "twist", "rate": 0.002 * (k - 4), "falloff": 30.0, "center": [0.0, 0.0, 0.0]},
                {"direction": _floats(np.array([np.sin(k), 0.5, 1.0]) / np.linalg.norm([np.sin(k), 0.5, 1.0])),
                 "distance": 900.0 + 25.0 * k},
            )
            k += 1

    def look(eye, fov, target=(0.0, 0.0, 4.0)):
        return CameraSpec.from_camera(Camera.look_at(eye, target, [0.0, 1.0, 0.0], fov, DEFAULT_RESOLUTION, DEFAULT_RESOLUTION))

    cameras = {
        "front": look([0.0, 0.0, 90.0], 34.0),
        "oblique": look([35.0, 12.0, 80.0], 34.0),
        "close": look([0.0, 0.0, 60.0], 16.0, (0.0, 0.0, 10.0)),
        "close_oblique": look([25.0, -10.0, 55.0], 18.0, (0.0, 0.0, 10.0)),
    }
    return SceneConfig(
        frames=frames,
        fields=[{"voxel": "skin.eynf"}, {"voxel": "interior.eynf"}],
        environment="environment.pfm",
        moving_light={"path": "light.pfm", "ref_distance": 1000.0, "captured_direction": [0.0, 0.0, 1.0]},
        cameras=cameras,
        sampling=sampling or {"n_coarse": 32, "n_fine": 32, "seed": 7, "jitter": True},
        clip_half_width=30.0,
        base_dir=str(base_dir),
    )


def write_reference_scene(out_dir, sampling=None):
    """Write the synthetic reference scene bundle; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = reference_config(out, sampling)
    save_voxel_field(out / "skin.eynf", reference_skin_field())
    save_voxel_field(out / "interior.eynf", reference_interior_field(cfg.interior_offset))
    save_env(out / "environment.pfm", reference_environment())
    save_env(out / "light.pfm", reference_light())
    path = out / "scene.json"
    cfg.save(path)
    return path


def random_environment(rng, n_lobes=3, width=128, height=64):
    """Smooth nonnegative test environment."""
    dirs = rng.normal(size=(n_lobes, 3))
    return lobe_env(dirs, rng.uniform(2.0, 10.0, n_lobes), rng.uniform(0.2, 1.0, (n_lobes, 3)),
                    width, height, ambient=float(rng.uniform(0.02, 0.15)))


def fibonacci_directions(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


__all__ = [
    "SceneConfig", "CameraSpec", "FrameSpec", "Scene", "write_reference_scene", "reference_config",
    "reference_skin_field", "reference_interior_field", "reference_environment", "reference_light",
    "random_environment", "fibonacci_directions", "lobe_transfer", "lobe_env",
]
