"""Bounding-volume hierarchy over a triangle mesh with batched (wavefront) traversal.

Closest-hit semantics: the smallest t in (t_min, t_max); ties between
triangles (shared edges/vertices) resolve to the lowest face index, in both
the BVH and the brute-force path, so the two agree exactly.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError

LEAF_SIZE = 8


@dataclass(frozen=True)
class HitRecord:
    t: np.ndarray        # (N,), inf where no hit
    face: np.ndarray     # (N,), -1 where no hit
    bary: np.ndarray     # (N, 3)

    @property
    def mask(self):
        return self.face >= 0


def intersect_triangles(orig, dirs, v0, e1, e2, t_min, t_max):
    """Moller-Trumbore on broadcast-compatible (..., 3) arrays; returns (t, u, v, valid)."""
    p = np.cross(dirs, e2)
    det = _dot(e1, p)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = orig - v0
    u = _dot(s, p) * inv
    q = np.cross(s, e1)
    v = _dot(dirs, q) * inv
    t = _dot(e2, q) * inv
    valid = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > t_min) & (t < t_max)
    return t, u, v, valid


def _dot(a, b):
    # explicit left-to-right sum keeps BVH and brute-force arithmetic identical
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _reduce_closest(n_rays, ray_idx, tri_idx, t, u, v):
    best_t = np.full(n_rays, np.inf)
    best_f = np.full(n_rays, -1, dtype=np.int64)
    bary = np.zeros((n_rays, 3))
    if len(ray_idx):
        order = np.lexsort((tri_idx, t, ray_idx))
        r = ray_idx[order]
        first = np.ones(len(r), dtype=bool)
        first[1:] = r[1:] != r[:-1]
        sel = order[first]
        rr = ray_idx[sel]
        best_t[rr] = t[sel]
        best_f[rr] = tri_idx[sel]
        bary[rr] = np.stack([1 - u[sel] - v[sel], u[sel], v[sel]], axis=1)
    return HitRecord(best_t, best_f, bary)


class BVH:
    """Median-split BVH built once, read-only afterwards."""

    def __init__(self, vertices, faces, leaf_size=LEAF_SIZE):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        if len(faces) == 0:
            raise ValidationError("cannot build a BVH over an empty mesh")
        self.vertices = vertices
        self.faces = faces
        tri = vertices[faces]
        self.v0 = tri[:, 0]
        self.e1 = tri[:, 1] - tri[:, 0]
        self.e2 = tri[:, 2] - tri[:, 0]
        lo_t, hi_t = tri.min(axis=1), tri.max(axis=1)
        cent = tri.mean(axis=1)

        lo, hi, left, right, start, count = [], [], [], [], [], []
        order = np.arange(len(faces))
        stack = [(0, len(faces), -1, 0)]  # (begin, end, parent, side)
        while stack:
            b, e, parent, side = stack.pop()
            node = len(lo)
            idx = order[b:e]
            lo.append(lo_t[idx].min(axis=0))
            hi.append(hi_t[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(b)
            count.append(e - b)
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            if e - b > leaf_size:
                c = cent[idx]
                axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
                srt = idx[np.argsort(c[:, axis], kind="stable")]
                order[b:e] = srt
                mid = (b + e) // 2
                count[node] = 0
                stack.append((mid, e, node, 1))
                stack.append((b, mid, node, 0))
        self.node_lo = np.array(lo)
        self.node_hi = np.array(hi)
        self.node_left = np.array(left)
        self.node_right = np.array(right)
        self.node_start = np.array(start)
        self.node_count = np.array(count)
        self.tri_order = order
        self.bounds = (self.node_lo[0], self.node_hi[0])

    def intersect(self, origins, dirs, t_min=1e-9, t_max=np.inf):
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        n = len(origins)
        t_min = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,))
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / dirs
        best = np.array(t_max, dtype=np.float64)

        rays = np.arange(n)
        nodes = np.zeros(n, dtype=np.int64)
        hit_r, hit_f, hit_t, hit_u, hit_v = [], [], [], [], []
        while len(rays):
            o = origins[rays]
            inv = inv_d[rays]
            with np.errstate(invalid="ignore"):
                t0 = (self.node_lo[nodes] - o) * inv
                t1 = (self.node_hi[nodes] - o) * inv
            tnear = np.nanmax(np.minimum(t0, t1), axis=1)
            tfar = np.nanmin(np.maximum(t0, t1), axis=1)
            keep = (tnear <= tfar) & (tfar >= t_min[rays]) & (tnear <= best[rays])
            rays, nodes = rays[keep], nodes[keep]
            leaf = self.node_count[nodes] > 0
            # leaves: test their triangles
            lr, ln = rays[leaf], nodes[leaf]
            if len(lr):
                cnt = self.node_count[ln]
                rep_r = np.repeat(lr, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                tri = self.tri_order[np.repeat(self.node_start[ln], cnt) + offs]
                # admit exact ties with the current best so the face tie-break matches brute force
                bound = np.where(best[rep_r] < t_max[rep_r], np.nextafter(best[rep_r], np.inf), t_max[rep_r])
                t, u, v, ok = intersect_triangles(
                    origins[rep_r], dirs[rep_r], self.v0[tri], self.e1[tri], self.e2[tri], t_min[rep_r], bound
                )
                if np.any(ok):
                    hit_r.append(rep_r[ok])
                    hit_f.append(tri[ok])
                    hit_t.append(t[ok])
                    hit_u.append(u[ok])
                    hit_v.append(v[ok])
                    np.minimum.at(best, rep_r[ok], t[ok])
            ir, inode = rays[~leaf], nodes[~leaf]
            rays = np.concatenate([ir, ir])
            nodes = np.concatenate([self.node_left[inode], self.node_right[inode]])
        if hit_r:
            return _reduce_closest(
                n, np.concatenate(hit_r), np.concatenate(hit_f), np.concatenate(hit_t),
                np.concatenate(hit_u), np.concatenate(hit_v),
            )
        return _reduce_closest(n, np.array([], int), np.array([], int), np.array([]), np.array([]), np.array([]))


def brute_force_intersect(vertices, faces, origins, dirs, t_min=1e-9, t_max=np.inf, chunk=64):
    """Reference closest-hit against every triangle."""
    vertices = np.asarray(vertices, dtype=np.float64)
    tri = vertices[np.asarray(faces)]
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n, m = len(origins), len(tri)
    t_min = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,))
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))
    rs, fs, ts, us, vs = [], [], [], [], []
    for a in range(0, n, chunk):
        b = min(a + chunk, n)
        t, u, v, ok = intersect_triangles(
            origins[a:b, None], dirs[a:b, None], v0[None], e1[None], e2[None],
            t_min[a:b, None], t_max[a:b, None],
        )
        r, f = np.nonzero(ok)
        rs.append(r + a); fs.append(f); ts.append(t[r, f]); us.append(u[r, f]); vs.append(v[r, f])
    return _reduce_closest(n, np.concatenate(rs), np.concatenate(fs), np.concatenate(ts), np.concatenate(us), np.concatenate(vs))


def build_bvh(mesh):
    return BVH(mesh.vertices, mesh.faces)
