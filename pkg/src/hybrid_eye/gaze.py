"""Gaze animation: triangulated gaze sphere, barycentric lookup, warp and pose blending."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ._validation import ValidationError, check_unit_vectors
from .eye_model import EyePose, RigidTransform
from .field import BlendedWarp
from .rotations import matrix_to_quat, minimal_rotation, quat_to_matrix, slerp

DEDUP_ANGLE = 1e-6  # rad
SNAP_TOL = 1e-9


class GazeOutOfRange(ValidationError):
    pass


@dataclass(frozen=True)
class GazeSphere:
    frame_ids: tuple
    gaze_dirs: np.ndarray   # (n, 3)
    triangles: np.ndarray   # (m, 3) indices into gaze_dirs


@dataclass(frozen=True)
class GazeBlend:
    frame_ids: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"blend weights must be 3 nonnegative values summing to 1, got {w}")
        object.__setattr__(self, "weights", w)


def build_gaze_sphere(poses, frame_ids=None):
    """Triangulate training gazes on the unit sphere.

    Uses the convex hull of the gaze points together with the origin and drops
    the hull faces touching the origin, which leaves the spherical cap mesh.
    When the gazes already surround the origin the plain hull is used.
    """
    poses = list(poses)
    ids = tuple(range(len(poses))) if frame_ids is None else tuple(frame_ids)
    if len(ids) != len(poses):
        raise ValidationError("frame_ids and poses differ in length")
    dirs, keep_ids = [], []
    for fid, pose in zip(ids, poses):
        g = pose.gaze()
        if any(np.arccos(np.clip(np.dot(g, h), -1, 1)) < DEDUP_ANGLE for h in dirs):
            continue
        dirs.append(g)
        keep_ids.append(fid)
    if len(dirs) < 3:
        raise ValidationError("need at least 3 distinct gaze directions")
    pts = np.array(dirs)
    if np.linalg.matrix_rank(pts - pts.mean(0), tol=1e-9) < 2:
        raise ValidationError("gaze directions are collinear")
    if len(pts) == 3:
        tris = _orient_outward(pts, np.array([[0, 1, 2]]))
    else:
        tris = _hull_triangles(pts)
    # facets in a plane through the origin (gazes on one great circle) are invisible from it
    vol = np.abs(np.einsum("ij,ij->i", pts[tris[:, 0]], np.cross(pts[tris[:, 1]], pts[tris[:, 2]])))
    tris = tris[vol > 1e-12]
    if len(tris) == 0:
        raise ValidationError("gaze triangulation is empty")
    order = np.lexsort(tris.T[::-1])
    return GazeSphere(tuple(keep_ids), pts, tris[order])


def _hull_triangles(pts):
    try:
        full = ConvexHull(pts)
        surrounds = np.all(full.equations[:, 3] < -1e-9)  # origin strictly inside
    except QhullError:
        surrounds = False
    if surrounds:
        tris = full.simplices
    else:
        try:
            hull = ConvexHull(np.vstack([pts, np.zeros(3)]))
        except QhullError as exc:
            raise ValidationError(f"cannot triangulate gaze directions: {exc}") from exc
        origin = len(pts)
        tris = hull.simplices[~np.any(hull.simplices == origin, axis=1)]
    return _orient_outward(pts, tris)


def _orient_outward(pts, tris):
    a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def locate_gaze(gs, target):
    """Triangle hit by the ray from the origin along ``target`` and its barycentric weights."""
    d = check_unit_vectors(target, "target gaze")
    best = None
    for tri in gs.triangles:
        a, b, c = gs.gaze_dirs[tri]
        e1, e2 = b - a, c - a
        p = np.cross(d, e2)
        det = np.dot(e1, p)
        if abs(det) < 1e-14:
            continue
        s = -a
        u = np.dot(s, p) / det
        q = np.cross(s, e1)
        v = np.dot(d, q) / det
        t = np.dot(e2, q) / det
        tol = 1e-12
        if t > 0 and u >= -tol and v >= -tol and u + v <= 1 + tol:
            w = np.clip(np.array([1 - u - v, u, v]), 0.0, None)
            w /= w.sum()
            # prefer the triangle with the most interior weights (ties on edges)
            score = w.min()
            if best is None or score > best[0]:
                best = (score, tri, w)
    if best is None:
        raise GazeOutOfRange(f"gaze {np.round(d, 6).tolist()} outside training distribution")
    _, tri, w = best
    for i in range(3):
        if abs(w[i] - 1.0) < SNAP_TOL:
            w = np.zeros(3)
            w[i] = 1.0
    return GazeBlend(tuple(gs.frame_ids[i] for i in tri), w)


def blend_warp(blend, warps):
    """Point-blended warp Σ w_i warp_i; ``warps`` maps frame id -> warp (a WarpStore works)."""
    members = []
    for fid, w in zip(blend.frame_ids, blend.weights):
        members.append(warps[fid])
    return BlendedWarp(members, blend.weights)


def interpolate_pose(blend, poses, target, order=None):
    """Eyeball pose for ``target`` gaze from the three blend frames.

    ``poses`` maps frame id -> EyePose (all sharing one global transform).
    Each pose is re-aimed to ``target`` by a minimal rotation, then the three
    rotations are slerped sequentially in ``order`` (default: ascending frame id).
    """
    target = check_unit_vectors(target, "target gaze")
    ids = list(blend.frame_ids)
    w = dict(zip(ids, blend.weights))
    for fid in ids:
        if w[fid] == 1.0:
            return poses[fid]
    order = sorted(ids) if order is None else list(order)
    g = poses[order[0]].global_
    t_total = sum(w[f] * poses[f].translation for f in order)
    qs = []
    for f in order:
        R = poses[f].rotation
        Ra = minimal_rotation(R @ np.array([0.0, 0.0, 1.0]), target) @ R
        qs.append(matrix_to_quat(Ra))
    w1, w2, w3 = (w[f] for f in order)
    q12 = slerp(qs[0], qs[1], w2 / (w1 + w2)) if w1 + w2 > 0 else qs[1]
    q = slerp(q12, qs[2], w3) if w1 + w2 > 0 else qs[2]
    return EyePose.from_total(g, quat_to_matrix(q), t_total)


def regaze(gs, poses, warps, target):
    """Blend, pose and warp for a target gaze."""
    blend = locate_gaze(gs, target)
    return blend, interpolate_pose(blend, poses, target), blend_warp(blend, warps)


def frame_pose(global_pose, rotvec, translation):
    return EyePose(global_pose, RigidTransform(np.asarray(rotvec, float), np.asarray(translation, float)))


def pose_continuity(gs, poses, samples=5):
    """Largest rotation jump (degrees) of the interpolated pose across shared triangle edges.

    On an edge both neighbouring triangles give the same two nonzero weights,
    but the sequential slerp order follows each triangle's frame ids, so the
    poses can disagree. ``poses`` maps frame id -> EyePose.
    """
    edges = {}
    for t, tri in enumerate(gs.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges.setdefault((min(a, b), max(a, b)), []).append(tri)
    worst = 0.0
    for (a, b), tris in edges.items():
        if len(tris) != 2:
            continue
        for s in np.linspace(0.0, 1.0, samples + 2)[1:-1]:
            chord = (1 - s) * gs.gaze_dirs[a] + s * gs.gaze_dirs[b]
            target = chord / np.linalg.norm(chord)
            rots = []
            for tri in tris:
                w = np.where(tri == a, 1 - s, np.where(tri == b, s, 0.0))
                blend = GazeBlend(tuple(gs.frame_ids[i] for i in tri), w)
                rots.append(interpolate_pose(blend, poses, target).rotation)
            rel = rots[0].T @ rots[1]
            ang = np.degrees(np.arccos(np.clip((np.trace(rel) - 1) / 2, -1, 1)))
            worst = max(worst, float(ang))
    return worst
