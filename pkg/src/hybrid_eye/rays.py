"""Camera rays, refraction/reflection/Fresnel, and the cornea ray split."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import ValidationError, check_array, check_rotation, check_unit_vectors
from .bvh import BVH
from .eye_model import REGION_CODES, SCLERA, apply_pose, classify_alpha, generate_mesh

IOR_CORNEA = 1.4
IOR_AIR = 1.0
SELF_HIT_EPS = 1e-4  # mm


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    dir: np.ndarray
    t_near: float = 0.0
    t_far: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "origin", check_array(self.origin, (3,), "origin"))
        object.__setattr__(self, "dir", check_unit_vectors(self.dir, "ray direction"))
        if not self.t_near < self.t_far:
            raise ValidationError(f"ray needs t_near < t_far, got [{self.t_near}, {self.t_far}]")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.dir)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; extrinsics map world to camera: x_cam = R x_world + t, looking down +z."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = None
    t: np.ndarray = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("resolution must be positive")
        R = np.eye(3) if self.R is None else check_rotation(self.R, "camera rotation")
        t = np.zeros(3) if self.t is None else check_array(self.t, (3,), "camera translation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self):
        return -self.R.T @ self.t

    @classmethod
    def look_at(cls, eye, target, up, fov_deg, width, height):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height, R, -R @ eye)

    def with_resolution(self, width, height):
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height, self.R, self.t)

    def project(self, points):
        """Continuous image coordinates (u, v) of world points; pixel (i, j) spans [i, i+1) x [j, j+1)."""
        pc = np.asarray(points) @ self.R.T + self.t
        return np.stack([self.fx * pc[..., 0] / pc[..., 2] + self.cx, self.fy * pc[..., 1] / pc[..., 2] + self.cy], -1)

    def pixel_dirs(self, u, v):
        """World-space unit directions through continuous image positions."""
        d = np.stack([(np.asarray(u, float) - self.cx) / self.fx, (np.asarray(v, float) - self.cy) / self.fy,
                      np.ones(np.broadcast(u, v).shape)], -1)
        d = d @ self.R
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def all_rays(self, offset=(0.5, 0.5)):
        """Origins and directions of every pixel, row-major (v outer, u inner)."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        dirs = self.pixel_dirs(u.ravel() + offset[0], v.ravel() + offset[1])
        return np.broadcast_to(self.center, dirs.shape).copy(), dirs


def camera_ray(camera, pixel, offset=(0.5, 0.5), t_near=0.0, t_far=np.inf):
    u, v = pixel
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise ValidationError(f"pixel {pixel} outside {camera.width}x{camera.height} image")
    d = camera.pixel_dirs(u + offset[0], v + offset[1])
    return Ray(camera.center, d, t_near, t_far)


def reflect_dir(d, n):
    d = np.asarray(d, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n


def refract_batch(d, n, eta_ratio):
    """Snell refraction for (..., 3) arrays with n facing against d; returns (dirs, ok) with ok False under TIR."""
    d = np.asarray(d, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    eta = np.asarray(eta_ratio, dtype=np.float64)[..., None] if np.ndim(eta_ratio) else eta_ratio
    cos_i = np.clip(-np.sum(d * n, axis=-1, keepdims=True), 0.0, 1.0)
    sin2_t = eta * eta * (1.0 - cos_i * cos_i)
    ok = (sin2_t <= 1.0)[..., 0]
    cos_t = np.sqrt(np.maximum(1.0 - sin2_t, 0.0))
    out = eta * d + (eta * cos_i - cos_t) * n
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return out, ok


def refract_dir(in_dir, normal, eta_ratio):
    """Refracted unit direction, or None under total internal reflection.

    ``normal`` points to the incident side; ``eta_ratio`` = eta_incident / eta_transmitted.
    """
    d = check_unit_vectors(in_dir, "in_dir")
    n = check_unit_vectors(normal, "normal")
    out, ok = refract_batch(d, n, eta_ratio)
    return out if bool(ok) else None


def fresnel_batch(cos_i, eta_i, eta_t):
    cos_i = np.clip(np.asarray(cos_i, dtype=np.float64), 0.0, 1.0)
    eta_i = np.asarray(eta_i, dtype=np.float64)
    eta_t = np.asarray(eta_t, dtype=np.float64)
    sin_t = eta_i / eta_t * np.sqrt(np.maximum(1.0 - cos_i * cos_i, 0.0))
    tir = sin_t >= 1.0
    cos_t = np.sqrt(np.maximum(1.0 - sin_t * sin_t, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        rs = ((eta_i * cos_i - eta_t * cos_t) / (eta_i * cos_i + eta_t * cos_t)) ** 2
        rp = ((eta_i * cos_t - eta_t * cos_i) / (eta_i * cos_t + eta_t * cos_i)) ** 2
    f = 0.5 * (rs + rp)
    f = np.where(tir | ~np.isfinite(f), 1.0, f)
    f = np.where(eta_i == eta_t, 0.0, f)  # no interface
    return np.clip(f, 0.0, 1.0)


def fresnel_unpolarized(cos_theta_i, eta_i, eta_t):
    """Unpolarised Fresnel reflectance (R_s + R_p) / 2; 1 under total internal reflection."""
    return float(fresnel_batch(cos_theta_i, eta_i, eta_t))


@dataclass(frozen=True)
class Hit:
    t: float
    position: np.ndarray
    normal: np.ndarray
    barycentric: np.ndarray
    face_index: int
    region: str


@dataclass(frozen=True)
class SplitRays:
    pre: Ray
    refracted: Optional[Ray]
    reflected: Optional[Ray]
    fresnel_f: float
    hit: Optional[Hit]


class _PosedBVH:
    """Canonical-space BVH queried with world rays (ray parameter t is invariant under rigid motion)."""

    def __init__(self, bvh, pose):
        self.bvh = bvh
        self.R = pose.rotation
        self.t = pose.translation

    def intersect(self, origins, dirs, t_min=1e-9, t_max=np.inf):
        o = (np.asarray(origins, dtype=np.float64) - self.t) @ self.R
        d = np.asarray(dirs, dtype=np.float64) @ self.R
        return self.bvh.intersect(o, d, t_min, t_max)


class EyeSurface:
    """World-space eyeball mesh with its BVH, blend weights and eyeball centre."""

    def __init__(self, mesh, center, bvh=None):
        self.mesh = mesh
        self.center = np.asarray(center, dtype=np.float64)
        self.bvh = BVH(mesh.vertices, mesh.faces) if bvh is None else bvh
        self.face_normals = mesh.face_normals

    @classmethod
    def build(cls, params, pose, canonical_mesh=None, canonical_bvh=None):
        """Posed surface; passing ``canonical_bvh`` (built on ``canonical_mesh``) skips the BVH rebuild."""
        mesh = canonical_mesh if canonical_mesh is not None else generate_mesh(params)
        bvh = None if canonical_bvh is None else _PosedBVH(canonical_bvh, pose)
        return cls(apply_pose(mesh, pose), pose.center, bvh)


@dataclass
class SplitBatch:
    """Vectorised ray split for N rays; child fields are meaningful where the masks are set."""

    hit: np.ndarray          # (N,) bool
    t_hit: np.ndarray        # (N,)
    position: np.ndarray     # (N, 3)
    normal: np.ndarray       # (N, 3) shading normal facing the incoming ray
    region: np.ndarray       # (N,) region code
    fresnel: np.ndarray      # (N,)
    refr_ok: np.ndarray      # (N,) bool
    refr_origin: np.ndarray
    refr_dir: np.ndarray
    refl_ok: np.ndarray      # (N,) bool
    refl_origin: np.ndarray
    refl_dir: np.ndarray
    face: np.ndarray
    bary: np.ndarray


def split_batch(surface, origins, dirs, t_near, t_far, ior=IOR_CORNEA, sclera_ior_zero=False):
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(origins)
    rec = surface.bvh.intersect(origins, dirs, t_near, t_far)
    hit = rec.mask
    face = rec.face
    t_hit = np.where(hit, rec.t, np.inf)
    pos = origins + np.where(hit, rec.t, 0.0)[:, None] * dirs

    f_idx = np.where(hit, face, 0)
    tri = surface.mesh.faces[f_idx]
    w = rec.bary
    ns = np.einsum("nk,nkj->nj", w, surface.mesh.normals[tri])
    ns /= np.maximum(np.linalg.norm(ns, axis=1, keepdims=True), 1e-300)
    alpha = np.einsum("nk,nk->n", w, surface.mesh.alpha[tri]) if surface.mesh.alpha is not None else np.ones(n)
    region = classify_alpha(alpha)

    # geometric normal decides which side the ray arrives from
    gn = surface.face_normals[f_idx]
    inside = np.sum(gn * dirs, axis=1) > 0
    ns = np.where(inside[:, None], -ns, ns)
    cos_i = np.clip(-np.sum(ns * dirs, axis=1), 0.0, 1.0)
    eta_i = np.where(inside, ior, IOR_AIR)
    eta_t = np.where(inside, IOR_AIR, ior)

    refr, refr_ok = refract_batch(dirs, ns, eta_i / eta_t)
    refl = reflect_dir(dirs, ns)
    f = fresnel_batch(cos_i, eta_i, eta_t)
    f = np.where(refr_ok, f, 1.0)
    refl_ok = hit.copy()
    if sclera_ior_zero:
        sup = hit & (region == REGION_CODES[SCLERA])
        f = np.where(sup, 0.0, f)
        refl_ok &= ~sup
    f = np.where(hit, f, 0.0)
    refr_ok = refr_ok & hit
    return SplitBatch(
        hit, t_hit, pos, ns, region, f,
        refr_ok, pos + SELF_HIT_EPS * refr, refr,
        refl_ok, pos + SELF_HIT_EPS * refl, refl,
        face, w,
    )


def split_ray(ray, surface, ior=IOR_CORNEA, sclera_ior_zero=False):
    """Split a camera ray at its first eyeball hit into pre-intersect, refracted and reflected rays."""
    b = split_batch(surface, ray.origin[None], ray.dir[None], ray.t_near, ray.t_far, ior, sclera_ior_zero)
    if not b.hit[0]:
        return SplitRays(ray, None, None, 0.0, None)
    region = ("cornea", "limbus", "sclera")[int(b.region[0])]
    hit = Hit(float(b.t_hit[0]), b.position[0], b.normal[0], b.bary[0], int(b.face[0]), region)
    pre = Ray(ray.origin, ray.dir, ray.t_near, hit.t)
    refr = Ray(b.refr_origin[0], b.refr_dir[0]) if b.refr_ok[0] else None
    refl = Ray(b.refl_origin[0], b.refl_dir[0]) if b.refl_ok[0] else None
    return SplitRays(pre, refr, refl, float(b.fresnel[0]), hit)
