"""Radiance-field query contract, non-neural field implementations, and warp fields.

A field answers, for a canonical point (plus its world-space twin and the
view direction): opacity density sigma (1/mm), RGB albedo, a monochrome
diffuse SH transfer vector (order 5) and a monochrome specular one (order 8).
"""

import struct
from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError, check_array, check_unit_vectors
from .sh import DIFFUSE_ORDER, SPECULAR_ORDER, ShCoefficients, n_coeffs

C00_FLOOR = 1e-6
N_DIFFUSE = n_coeffs(DIFFUSE_ORDER)
N_SPECULAR = n_coeffs(SPECULAR_ORDER)


@dataclass(frozen=True)
class FieldSample:
    sigma: float
    albedo: np.ndarray
    diffuse_sh: ShCoefficients
    specular_sh: ShCoefficients


@dataclass(frozen=True)
class FieldQuery:
    canonical_point: np.ndarray
    world_point: np.ndarray
    view_dir: np.ndarray
    shadow_branch_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "canonical_point", check_array(self.canonical_point, (3,), "canonical_point"))
        object.__setattr__(self, "world_point", check_array(self.world_point, (3,), "world_point"))
        object.__setattr__(self, "view_dir", check_unit_vectors(self.view_dir, "view_dir"))


@dataclass
class FieldBatch:
    """Struct-of-arrays query result for N points."""

    sigma: np.ndarray     # (N,)
    albedo: np.ndarray    # (N, 3)
    diffuse: np.ndarray   # (N, 36)
    specular: np.ndarray  # (N, 81)

    def sample(self, i):
        return FieldSample(
            float(self.sigma[i]), self.albedo[i].copy(),
            ShCoefficients(DIFFUSE_ORDER, self.diffuse[i]), ShCoefficients(SPECULAR_ORDER, self.specular[i]),
        )


def vacuum_batch(n):
    diffuse = np.zeros((n, N_DIFFUSE))
    specular = np.zeros((n, N_SPECULAR))
    diffuse[:, 0] = C00_FLOOR
    specular[:, 0] = C00_FLOOR
    return FieldBatch(np.zeros(n), np.zeros((n, 3)), diffuse, specular)


class RadianceField:
    """Base class. Subclasses implement ``query_batch``; ``sigma_batch`` may be overridden for speed."""

    def query_batch(self, canonical, world, view_dirs, shadow_branch_enabled=True):
        raise NotImplementedError

    def sigma_batch(self, canonical, world):
        n = len(canonical)
        return self.query_batch(canonical, world, np.tile([0.0, 0.0, 1.0], (n, 1))).sigma

    def query(self, q):
        b = self.query_batch(q.canonical_point[None], q.world_point[None], q.view_dir[None], q.shadow_branch_enabled)
        return b.sample(0)


class VacuumField(RadianceField):
    def query_batch(self, canonical, world, view_dirs, shadow_branch_enabled=True):
        return vacuum_batch(len(canonical))

    def sigma_batch(self, canonical, world):
        return np.zeros(len(canonical))


class AnalyticField(RadianceField):
    """Field from plain functions of the query.

    ``density(canonical)``, ``albedo(canonical)``, ``diffuse(world, canonical_or_zero)``
    and ``specular(canonical, view_dirs)`` each act on batches. With the shadow
    branch disabled the diffuse function receives zeros instead of the
    canonical points, cutting the canonical input to that branch.
    """

    def __init__(self, density, albedo, diffuse, specular):
        self.density = density
        self.albedo = albedo
        self.diffuse = diffuse
        self.specular = specular

    def query_batch(self, canonical, world, view_dirs, shadow_branch_enabled=True):
        canonical = np.asarray(canonical, dtype=np.float64)
        world = np.asarray(world, dtype=np.float64)
        branch_in = canonical if shadow_branch_enabled else np.zeros_like(canonical)
        out = FieldBatch(
            np.maximum(np.asarray(self.density(canonical), dtype=np.float64), 0.0),
            np.clip(np.asarray(self.albedo(canonical), dtype=np.float64), 0.0, 1.0),
            np.array(self.diffuse(world, branch_in), dtype=np.float64),
            np.array(self.specular(canonical, np.asarray(view_dirs, dtype=np.float64)), dtype=np.float64),
        )
        _check_batch(out)
        out.diffuse[:, 0] = np.maximum(out.diffuse[:, 0], C00_FLOOR)
        out.specular[:, 0] = np.maximum(out.specular[:, 0], C00_FLOOR)
        return out

    def sigma_batch(self, canonical, world):
        return np.maximum(np.asarray(self.density(np.asarray(canonical, dtype=np.float64)), dtype=np.float64), 0.0)


def _check_batch(b):
    for name in ("sigma", "albedo", "diffuse", "specular"):
        if not np.all(np.isfinite(getattr(b, name))):
            raise ValidationError(f"field returned non-finite {name}")


def constant_field(sigma, albedo, diffuse, specular):
    diffuse = np.asarray(diffuse, dtype=np.float64)
    specular = np.asarray(specular, dtype=np.float64)
    return AnalyticField(
        lambda p: np.full(len(p), float(sigma)),
        lambda p: np.tile(np.asarray(albedo, dtype=np.float64), (len(p), 1)),
        lambda w, p: np.tile(diffuse, (len(w), 1)),
        lambda p, v: np.tile(specular, (len(p), 1)),
    )


def trilinear_stencil(points, lo, hi, dims):
    """Corner indices (N, 8), weights (N, 8) and inside mask for node-centred grids.

    Node (i, j, k) sits at lo + (i, j, k) * (hi - lo) / (dims - 1); flat index is
    x-fastest: i + nx * (j + ny * k).
    """
    points = np.asarray(points, dtype=np.float64)
    dims = np.asarray(dims)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    g = (points - lo) / (hi - lo) * (dims - 1)
    inside = np.all((g >= 0) & (g <= dims - 1), axis=-1)
    g = np.clip(g, 0, dims - 1)
    i0 = np.minimum(np.floor(g).astype(np.int64), dims - 2)
    f = g - i0
    idx = np.empty(points.shape[:-1] + (8,), dtype=np.int64)
    w = np.empty(points.shape[:-1] + (8,))
    for c in range(8):
        bits = np.array([c & 1, (c >> 1) & 1, (c >> 2) & 1])
        ii = i0 + bits
        idx[..., c] = ii[..., 0] + dims[0] * (ii[..., 1] + dims[1] * ii[..., 2])
        w[..., c] = np.prod(np.where(bits == 1, f, 1.0 - f), axis=-1)
    return idx, w, inside


class VoxelShField(RadianceField):
    """Trilinearly interpolated per-node payload on an axis-aligned grid; vacuum outside.

    Specular transfer is stored view-independently.
    """

    def __init__(self, lo, hi, dims, sigma, albedo, diffuse, specular):
        self.lo = check_array(lo, (3,), "bounds min")
        self.hi = check_array(hi, (3,), "bounds max")
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ValidationError(f"voxel dims must be >= 2 per axis, got {dims}")
        if np.any(self.hi <= self.lo):
            raise ValidationError("voxel bounds must have max > min on every axis")
        nv = int(np.prod(self.dims))
        sigma = np.asarray(sigma, dtype=np.float64).reshape(nv)
        albedo = np.asarray(albedo, dtype=np.float64).reshape(nv, 3)
        diffuse = np.asarray(diffuse, dtype=np.float64).reshape(nv, -1)
        specular = np.asarray(specular, dtype=np.float64).reshape(nv, -1)
        for name, arr in (("sigma", sigma), ("albedo", albedo), ("diffuse", diffuse), ("specular", specular)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr.reshape(nv, -1)))[0][0])
                raise ValidationError(f"non-finite {name} payload at voxel {bad}")
        self.diffuse_order = int(round(np.sqrt(diffuse.shape[1]))) - 1
        self.specular_order = int(round(np.sqrt(specular.shape[1]))) - 1
        if n_coeffs(self.diffuse_order) != diffuse.shape[1] or n_coeffs(self.specular_order) != specular.shape[1]:
            raise ValidationError("SH payload widths must be perfect squares")
        self.sigma = np.maximum(sigma, 0.0)
        self.albedo = np.clip(albedo, 0.0, 1.0)
        self.diffuse = diffuse.copy()
        self.specular = specular.copy()
        self.diffuse[:, 0] = np.maximum(self.diffuse[:, 0], C00_FLOOR)
        self.specular[:, 0] = np.maximum(self.specular[:, 0], C00_FLOOR)
        self._payload = np.concatenate([self.sigma[:, None], self.albedo, self.diffuse, self.specular], axis=1)

    @property
    def n_voxels(self):
        return int(np.prod(self.dims))

    def node_positions(self):
        axes = [np.linspace(self.lo[a], self.hi[a], self.dims[a]) for a in range(3)]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    def stencil(self, points):
        return trilinear_stencil(points, self.lo, self.hi, self.dims)

    def sigma_batch(self, canonical, world):
        idx, w, inside = self.stencil(canonical)
        return np.where(inside, np.einsum("nk,nk->n", w, self.sigma[idx]), 0.0)

    def query_batch(self, canonical, world, view_dirs, shadow_branch_enabled=True):
        canonical = np.asarray(canonical, dtype=np.float64)
        n = len(canonical)
        out = vacuum_batch(n)
        idx, w, inside = self.stencil(canonical)
        if np.any(inside):
            vals = np.einsum("nk,nkc->nc", w[inside], self._payload[idx[inside]])
            nd = self.diffuse.shape[1]
            out.sigma[inside] = vals[:, 0]
            out.albedo[inside] = vals[:, 1:4]
            out.diffuse[inside, :nd] = vals[:, 4:4 + nd]
            out.specular[inside, :self.specular.shape[1]] = vals[:, 4 + nd:]
        return out

    def with_sh(self, diffuse, specular):
        return VoxelShField(self.lo, self.hi, self.dims, self.sigma, self.albedo, diffuse, specular)

    def with_albedo(self, albedo):
        return VoxelShField(self.lo, self.hi, self.dims, self.sigma, albedo, self.diffuse, self.specular)


class FieldUnion(RadianceField):
    """Several voxel fields with disjoint bounds; a point takes the first field that contains it."""

    def __init__(self, fields):
        self.fields = list(fields)
        if not self.fields:
            raise ValidationError("FieldUnion needs at least one field")
        self.offsets = np.cumsum([0] + [f.n_voxels for f in self.fields])

    @property
    def n_voxels(self):
        return int(self.offsets[-1])

    def _owner(self, canonical):
        owner = np.full(len(canonical), -1)
        for k, f in enumerate(self.fields):
            inside = np.all((canonical >= f.lo) & (canonical <= f.hi), axis=-1) & (owner < 0)
            owner[inside] = k
        return owner

    def stencil(self, points):
        """Global voxel indices across member grids."""
        points = np.asarray(points, dtype=np.float64)
        idx = np.zeros((len(points), 8), dtype=np.int64)
        w = np.zeros((len(points), 8))
        owner = self._owner(points)
        for k, f in enumerate(self.fields):
            sel = owner == k
            if np.any(sel):
                i, ww, _ = f.stencil(points[sel])
                idx[sel] = i + self.offsets[k]
                w[sel] = ww
        return idx, w, owner >= 0

    def sigma_batch(self, canonical, world):
        canonical = np.asarray(canonical, dtype=np.float64)
        out = np.zeros(len(canonical))
        owner = self._owner(canonical)
        for k, f in enumerate(self.fields):
            sel = owner == k
            if np.any(sel):
                out[sel] = f.sigma_batch(canonical[sel], None)
        return out

    def query_batch(self, canonical, world, view_dirs, shadow_branch_enabled=True):
        canonical = np.asarray(canonical, dtype=np.float64)
        out = vacuum_batch(len(canonical))
        owner = self._owner(canonical)
        for k, f in enumerate(self.fields):
            sel = owner == k
            if np.any(sel):
                b = f.query_batch(canonical[sel], None, None)
                out.sigma[sel] = b.sigma
                out.albedo[sel] = b.albedo
                out.diffuse[sel] = b.diffuse
                out.specular[sel] = b.specular
        return out

    def _cat(self, name):
        return np.concatenate([getattr(f, name) for f in self.fields])

    @property
    def sigma(self):
        return self._cat("sigma")

    @property
    def albedo(self):
        return self._cat("albedo")

    @property
    def diffuse(self):
        return self._cat("diffuse")

    @property
    def specular(self):
        return self._cat("specular")

    def with_sh(self, diffuse, specular):
        return FieldUnion(
            f.with_sh(d, s) for f, d, s in zip(self.fields, self.split_voxels(diffuse), self.split_voxels(specular))
        )

    def with_albedo(self, albedo):
        return FieldUnion(f.with_albedo(a) for f, a in zip(self.fields, self.split_voxels(albedo)))

    def split_voxels(self, values):
        """Cut a global per-voxel array back into per-field pieces."""
        return [values[self.offsets[k]:self.offsets[k + 1]] for k in range(len(self.fields))]


# --- binary voxel format ---------------------------------------------------

MAGIC = b"EYNF"
VERSION = 1


def save_voxel_field(path, field):
    nv = field.n_voxels
    payload = np.concatenate(
        [field.sigma[:, None], field.albedo, field.diffuse, field.specular], axis=1
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<3I", *field.dims))
        fh.write(struct.pack("<6f", *field.lo, *field.hi))
        fh.write(struct.pack("<2I", field.diffuse_order, field.specular_order))
        assert payload.shape[0] == nv
        fh.write(payload.tobytes())


def load_voxel_field(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValidationError(f"{path}: bad magic, not an EYNF voxel field")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported EYNF version {version}")
        dims = struct.unpack("<3I", fh.read(12))
        bounds = struct.unpack("<6f", fh.read(24))
        d_order, s_order = struct.unpack("<2I", fh.read(8))
        width = 4 + n_coeffs(d_order) + n_coeffs(s_order)
        nv = int(np.prod(dims))
        data = np.frombuffer(fh.read(nv * width * 4), dtype="<f4")
    if data.size != nv * width:
        raise ValidationError(f"{path}: truncated payload")
    data = data.reshape(nv, width).astype(np.float64)
    nd = n_coeffs(d_order)
    return VoxelShField(bounds[:3], bounds[3:], dims, data[:, 0], data[:, 1:4], data[:, 4:4 + nd], data[:, 4 + nd:])


# --- warps -------------------------------------------------------------------

class WarpField:
    """World point -> canonical point for one frame."""

    def __call__(self, points):
        raise NotImplementedError


class IdentityWarp(WarpField):
    def __call__(self, points):
        return np.asarray(points, dtype=np.float64)


class RigidWarp(WarpField):
    def __init__(self, R=None, t=None):
        self.R = np.eye(3) if R is None else np.asarray(R, dtype=np.float64)
        self.t = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)

    def __call__(self, points):
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t


class TwistWarp(WarpField):
    """Smooth analytic twist about the z axis: angle grows linearly with z, fading out radially."""

    def __init__(self, rate=0.01, falloff=30.0, center=(0.0, 0.0, 0.0)):
        self.rate = float(rate)
        self.falloff = float(falloff)
        self.center = np.asarray(center, dtype=np.float64)

    def __call__(self, points):
        p = np.asarray(points, dtype=np.float64) - self.center
        r2 = p[..., 0] ** 2 + p[..., 1] ** 2
        ang = self.rate * p[..., 2] * np.exp(-r2 / self.falloff**2)
        c, s = np.cos(ang), np.sin(ang)
        out = np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1], p[..., 2]], axis=-1)
        return out + self.center


class LatticeWarp(WarpField):
    """Stored displacement lattice: canonical = p + trilinear(displacement)(p), clamped at the box."""

    def __init__(self, lo, hi, displacement):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        disp = np.asarray(displacement, dtype=np.float64)
        if disp.ndim != 4 or disp.shape[3] != 3:
            raise ValidationError("lattice displacement must be (nx, ny, nz, 3)")
        self.dims = disp.shape[:3]
        # x-fastest flat layout to match trilinear_stencil
        self.flat = disp.transpose(2, 1, 0, 3).reshape(-1, 3)
        self.displacement = disp

    @classmethod
    def from_function(cls, fn, lo, hi, dims):
        axes = [np.linspace(lo[a], hi[a], dims[a]) for a in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        p = np.stack([X, Y, Z], axis=-1)
        return cls(lo, hi, fn(p) - p)

    def __call__(self, points):
        points = np.asarray(points, dtype=np.float64)
        idx, w, _ = trilinear_stencil(points.reshape(-1, 3), self.lo, self.hi, self.dims)
        d = np.einsum("nk,nkc->nc", w, self.flat[idx])
        return points + d.reshape(points.shape)


class BlendedWarp(WarpField):
    """Convex combination of warped points; zero-weight members are skipped."""

    def __init__(self, warps, weights):
        self.warps = list(warps)
        self.weights = [float(w) for w in weights]

    def __call__(self, points):
        points = np.asarray(points, dtype=np.float64)
        out = None
        for warp, w in zip(self.warps, self.weights):
            if w == 0.0:
                continue
            term = warp(points) if w == 1.0 else w * warp(points)
            out = term if out is None else out + term
        return points.copy() if out is None else out


class WarpStore:
    """Per-frame warps keyed by frame id."""

    def __init__(self, warps=None):
        self.warps = dict(warps or {})

    def __contains__(self, frame):
        return frame in self.warps

    def __getitem__(self, frame):
        if frame not in self.warps:
            raise KeyError(f"no warp stored for frame {frame!r}")
        return self.warps[frame]

    def warp_point(self, frame, point):
        return self[frame](point)


def warp_point(warp, frame, world_point):
    """Map a world point through the stored warp of ``frame`` (or through ``warp`` itself)."""
    if isinstance(warp, WarpStore):
        return warp.warp_point(frame, world_point)
    return warp(world_point)


def eye_interior_transform(pose, world_points, interior_offset=(0.0, 0.0, -100.0)):
    """Inverse rigid eyeball pose, then a constant offset into the eye's canonical volume."""
    return pose.apply_inverse(world_points) + np.asarray(interior_offset, dtype=np.float64)
