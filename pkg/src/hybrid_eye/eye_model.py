"""Parametric two-sphere eyeball surface, its triangle mesh, and rigid pose.

Canonical frame: eyeball centre at the origin, gaze along +z. The iris is
the circle of radius ``b`` in the plane z = ``c``; the eyeball sphere is
centred at the origin and the cornea sphere at (0, 0, d), both passing
through that circle. Units are millimetres.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import ValidationError, check_array
from .rotations import matrix_to_rotvec, rotvec_to_matrix

ICO_LEVEL = 5
N_VERTICES = 10 * 4**ICO_LEVEL + 2  # 10242

CORNEA, LIMBUS, SCLERA = "cornea", "limbus", "sclera"
REGION_CODES = {CORNEA: 0, LIMBUS: 1, SCLERA: 2}


@dataclass(frozen=True)
class EyeShapeParams:
    b: float = 6.0
    c: float = 10.5
    d: float = 5.25
    theta_mod: float = 2.0
    theta_offset: float = 0.5
    vertex_offsets: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        offs = np.zeros(N_VERTICES) if self.vertex_offsets is None else np.asarray(self.vertex_offsets, dtype=np.float64)
        if offs.shape != (N_VERTICES,):
            raise ValidationError(f"vertex_offsets must have length {N_VERTICES}, got {offs.shape}")
        if not np.all(np.isfinite(offs)):
            raise ValidationError("vertex_offsets must be finite")
        object.__setattr__(self, "vertex_offsets", offs)
        if self.b <= 0:
            raise ValidationError(f"iris radius b must be > 0, got {self.b}")
        if self.c <= 0:
            raise ValidationError(f"iris offset c must be > 0, got {self.c}")
        if not 0 <= self.d < self.c:
            raise ValidationError(f"cornea offset d must satisfy 0 <= d < c, got d={self.d}, c={self.c}")
        if not 1.0 <= self.theta_mod <= 3.0:
            raise ValidationError(f"theta_mod must lie in [1, 3], got {self.theta_mod}")
        if not -0.5 <= self.theta_offset <= 1.5:
            raise ValidationError(f"theta_offset must lie in [-0.5, 1.5], got {self.theta_offset}")

    def with_(self, **kw):
        return replace(self, **kw)


def derive_radii(params):
    """(eyeball_radius, cornea_radius): both spheres pass through the iris circle."""
    b, c, d = params.b, params.c, params.d
    if b <= 0:
        raise ValidationError("degenerate iris circle (b = 0)")
    return float(np.hypot(b, c)), float(np.hypot(b, c - d))


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def blend_weight(params, dirs):
    """alpha per canonical direction: 0 on the cornea sphere, 1 on the eyeball sphere."""
    dirs = np.asarray(dirs, dtype=np.float64)
    angle = np.arccos(np.clip(dirs[..., 2] / np.linalg.norm(dirs, axis=-1), -1.0, 1.0))
    theta_diff = angle - np.arctan2(params.b, params.c)
    return smoothstep(params.theta_mod * theta_diff + params.theta_offset)


def blended_surface(params, dirs):
    """Points of the blended two-sphere surface along unit directions from the eyeball centre."""
    dirs = np.asarray(dirs, dtype=np.float64)
    r_eye, r_cornea = derive_radii(params)
    p_eye = r_eye * dirs
    # ray from the eyeball centre against the cornea sphere centred at (0, 0, d)
    dz = dirs[..., 2] * params.d
    disc = dz * dz - params.d**2 + r_cornea**2
    t = dz + np.sqrt(np.maximum(disc, 0.0))
    p_cornea = np.where((disc >= 0)[..., None], t[..., None] * dirs, p_eye)
    alpha = blend_weight(params, dirs)[..., None]
    return alpha * p_eye + (1.0 - alpha) * p_cornea


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    alpha: np.ndarray = None

    @property
    def face_normals(self):
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def signed_volume(self):
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def edge_use_counts(self):
        """Directed half-edge multiplicities; a closed consistently wound mesh uses each once."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        _, counts = np.unique(e, axis=0, return_counts=True)
        return e, counts

    def is_watertight(self):
        e, counts = self.edge_use_counts()
        if np.any(counts != 1):
            return False
        fwd = {tuple(x) for x in e}
        return all((b, a) in fwd for a, b in fwd)


def icosphere(level=ICO_LEVEL):
    """Unit icosphere with outward counter-clockwise faces; level 5 gives 10242 vertices."""
    t = (1.0 + 5**0.5) / 2.0
    verts = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=np.float64)
    faces = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]], dtype=np.int64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(level):
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        key = np.sort(edges, axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(verts)  # midpoints of edges (01, 12, 20)
        a, b, c = faces.T
        faces = np.concatenate([
            np.stack([a, m[:, 0], m[:, 2]], 1),
            np.stack([b, m[:, 1], m[:, 0]], 1),
            np.stack([c, m[:, 2], m[:, 1]], 1),
            m,
        ])
        verts = np.concatenate([verts, mids])
    return verts, faces


_ICO_CACHE = {}


def _base_sphere():
    if ICO_LEVEL not in _ICO_CACHE:
        v, f = icosphere(ICO_LEVEL)
        v.setflags(write=False)
        f.setflags(write=False)
        _ICO_CACHE[ICO_LEVEL] = (v, f)
    return _ICO_CACHE[ICO_LEVEL]


def angle_weighted_normals(vertices, faces):
    """Per-vertex unit normals: face normals weighted by the face's interior angle at the vertex.

    Zero-area faces contribute nothing; a vertex whose every face is
    degenerate is an error.
    """
    v = vertices[faces]
    fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norm = np.linalg.norm(fn, axis=1)
    ok = norm > 1e-300
    fn = np.where(ok[:, None], fn / np.where(ok, norm, 1.0)[:, None], 0.0)
    acc = np.zeros_like(vertices)
    for k in range(3):
        e1 = v[:, (k + 1) % 3] - v[:, k]
        e2 = v[:, (k + 2) % 3] - v[:, k]
        ang = corner_angles(e1, e2) * ok
        np.add.at(acc, faces[:, k], ang[:, None] * fn)
    length = np.linalg.norm(acc, axis=1)
    if np.any(length < 1e-300):
        bad = int(np.argmin(length))
        raise ValidationError(f"vertex {bad} has no non-degenerate incident face")
    return acc / length[:, None]


def corner_angles(e1, e2):
    cross = np.linalg.norm(np.cross(e1, e2), axis=-1)
    return np.arctan2(cross, np.einsum("ij,ij->i", e1, e2))


def vertex_angle_sums(mesh):
    v = mesh.vertices[mesh.faces]
    out = np.zeros(len(mesh.vertices))
    for k in range(3):
        np.add.at(out, mesh.faces[:, k], corner_angles(v[:, (k + 1) % 3] - v[:, k], v[:, (k + 2) % 3] - v[:, k]))
    return out


def shading_normals(mesh):
    return angle_weighted_normals(mesh.vertices, mesh.faces)


def generate_mesh(params):
    """Canonical eyeball mesh: blended spheres, then per-vertex offsets along pre-offset normals."""
    dirs, faces = _base_sphere()
    verts = blended_surface(params, dirs)
    normals = angle_weighted_normals(verts, faces)
    if np.any(params.vertex_offsets != 0):
        verts = verts + params.vertex_offsets[:, None] * normals
        normals = angle_weighted_normals(verts, faces)
    return TriMesh(verts, np.array(faces), normals, blend_weight(params, dirs))


def classify_alpha(alpha):
    alpha = np.asarray(alpha)
    return np.where(alpha <= 0.0, REGION_CODES[CORNEA], np.where(alpha >= 1.0, REGION_CODES[SCLERA], REGION_CODES[LIMBUS]))


def classify_region(params, point, tol=1e-3):
    """Region label of a canonical surface point from the blend weight at its direction."""
    p = check_array(point, shape=(3,), name="point")
    r = np.linalg.norm(p)
    if r == 0:
        raise ValidationError("point at the eyeball centre is not on the surface")
    ref = np.linalg.norm(blended_surface(params, p / r))
    slack = tol + float(np.max(np.abs(params.vertex_offsets)))
    # mesh chords sit inside the analytic surface by up to ~r * (edge/2r)^2
    slack += ref * 1e-3
    if abs(r - ref) > slack:
        raise ValidationError(f"point is {abs(r - ref):.4g} mm off the eyeball surface")
    code = int(classify_alpha(blend_weight(params, p / r)))
    return (CORNEA, LIMBUS, SCLERA)[code]


@dataclass(frozen=True)
class RigidTransform:
    """x -> R x + t with R given as an axis-angle vector (radians); translation applies after rotation."""

    rotvec: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotvec", tuple(float(x) for x in check_array(self.rotvec, (3,), "rotvec")))
        object.__setattr__(
            self, "translation", tuple(float(x) for x in check_array(self.translation, (3,), "translation"))
        )

    @property
    def R(self):
        return rotvec_to_matrix(self.rotvec)

    @property
    def t(self):
        return np.asarray(self.translation)

    @classmethod
    def from_matrix(cls, R, t):
        return cls(tuple(matrix_to_rotvec(R)), tuple(np.asarray(t, dtype=np.float64)))


@dataclass(frozen=True)
class EyePose:
    """Global 6-DoF transform composed on top of the per-frame one: world = G(F(x))."""

    global_: RigidTransform = RigidTransform()
    frame: RigidTransform = RigidTransform()

    @property
    def rotation(self):
        return self.global_.R @ self.frame.R

    @property
    def translation(self):
        return self.global_.R @ self.frame.t + self.global_.t

    @property
    def center(self):
        return self.translation

    def gaze(self):
        g = self.rotation @ np.array([0.0, 0.0, 1.0])
        return g / np.linalg.norm(g)

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def apply_inverse(self, points):
        return (np.asarray(points) - self.translation) @ self.rotation

    def with_frame(self, frame):
        return EyePose(self.global_, frame)

    @classmethod
    def from_total(cls, global_, R_total, t_total):
        """Per-frame part chosen so the composite equals (R_total, t_total) under ``global_``."""
        Rg = global_.R
        return cls(global_, RigidTransform.from_matrix(Rg.T @ R_total, Rg.T @ (np.asarray(t_total) - global_.t)))


def apply_pose(mesh, pose):
    """World-space copy of ``mesh``: p' = Rg (Rf p + tf) + tg; normals rotated."""
    R = pose.rotation
    return TriMesh(mesh.vertices @ R.T + pose.translation, mesh.faces, mesh.normals @ R.T, mesh.alpha)


def apex_point(params):
    """Canonical cornea apex (on the gaze axis)."""
    return blended_surface(params, np.array([0.0, 0.0, 1.0]))


def write_obj(path, mesh):
    with open(path, "w") as fh:
        fh.write(f"# eyeball mesh: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for n in mesh.normals:
            fh.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}\n")


def read_obj(path):
    verts, normals, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64), np.array(normals))
