import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_eye._validation import ValidationError
from hybrid_eye.eye_model import EyePose, RigidTransform
from hybrid_eye.field import RigidWarp, WarpStore
from hybrid_eye.gaze import (
    GazeBlend, GazeOutOfRange, blend_warp, build_gaze_sphere, interpolate_pose, locate_gaze, pose_continuity,
)
from hybrid_eye.rotations import minimal_rotation

Z = np.array([0.0, 0.0, 1.0])


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def _pose(gaze, twist=0.0, t=(0.0, 0.0, 0.0)):
    g = _unit(gaze)
    c, s = np.cos(twist), np.sin(twist)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    return EyePose(frame=RigidTransform.from_matrix(minimal_rotation(Z, g) @ Rz, np.asarray(t, float)))


def _rot_angle_deg(Ra, Rb):
    return np.degrees(np.arccos(np.clip((np.trace(Ra.T @ Rb) - 1) / 2, -1, 1)))


def _cap_rig(seed=0, n=7):
    """Gazes spread within ~35 degrees of +z, each with its own twist and translation."""
    rng = np.random.default_rng(seed)
    dirs = [Z] + [_unit([np.cos(a) * 0.6, np.sin(a) * 0.6, 1.0]) for a in np.linspace(0, 2 * np.pi, n, endpoint=False)]
    ids = [f"g{i}" for i in range(len(dirs))]
    poses = {fid: _pose(d, rng.uniform(-0.2, 0.2), rng.normal(scale=0.5, size=3)) for fid, d in zip(ids, dirs)}
    return ids, poses


def test_tetrahedron():
    tet = [_unit(v) for v in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1])]
    gs = build_gaze_sphere([_pose(d) for d in tet])
    assert len(gs.triangles) == 4
    assert np.all(np.bincount(gs.triangles.ravel()) == 3)


def test_three_gazes_and_dedup():
    dirs = [Z, _unit([0.3, 0, 1]), _unit([0, 0.3, 1])]
    gs = build_gaze_sphere([_pose(d) for d in dirs])
    assert len(gs.triangles) == 1
    gs2 = build_gaze_sphere([_pose(d) for d in dirs + [dirs[0]]], ["a", "b", "c", "d"])
    assert gs2.frame_ids == ("a", "b", "c")


def test_too_few_or_collinear():
    with pytest.raises(ValidationError):
        build_gaze_sphere([_pose(Z), _pose([0.2, 0, 1])])
    with pytest.raises(ValidationError):
        build_gaze_sphere([_pose(Z), _pose(Z), _pose(Z)])
    # three gazes on one great circle lie in a plane through the centre
    with pytest.raises(ValidationError):
        build_gaze_sphere([_pose(Z), _pose([0.3, 0, 1]), _pose([-0.3, 0, 1])])


def test_locate_examples():
    ids, poses = _cap_rig()
    gs = build_gaze_sphere([poses[i] for i in ids], ids)
    for i, fid in enumerate(ids):
        b = locate_gaze(gs, gs.gaze_dirs[i])
        assert fid in b.frame_ids
        assert b.weights[b.frame_ids.index(fid)] == 1.0
    for tri in gs.triangles:
        target = _unit(gs.gaze_dirs[tri].sum(0))
        b = locate_gaze(gs, target)
        np.testing.assert_allclose(b.weights, 1 / 3, atol=1e-6)
    with pytest.raises(GazeOutOfRange):
        locate_gaze(gs, -Z)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.45), st.floats(0, 2 * np.pi))
def test_weights_reproduce_target_and_pose_aims_at_it(r, a):
    ids, poses = _cap_rig(1)
    gs = build_gaze_sphere([poses[i] for i in ids], ids)
    target = _unit([r * np.cos(a), r * np.sin(a), 1.0])
    b = locate_gaze(gs, target)
    assert np.all(b.weights >= 0) and abs(b.weights.sum() - 1) < 1e-12
    p = sum(w * gs.gaze_dirs[ids.index(f)] for f, w in zip(b.frame_ids, b.weights))
    np.testing.assert_allclose(_unit(p), target, atol=1e-6)
    pose = interpolate_pose(b, poses, target)
    np.testing.assert_allclose(pose.rotation @ Z, target, atol=1e-6)
    np.testing.assert_allclose(pose.translation, sum(w * poses[f].translation for f, w in zip(b.frame_ids, b.weights)),
                               atol=1e-12)


def test_interpolate_pose_trivial_cases():
    ids, poses = _cap_rig(2)
    b = GazeBlend(tuple(ids[:3]), np.array([1.0, 0.0, 0.0]))
    assert interpolate_pose(b, poses, poses[ids[0]].gaze()) is poses[ids[0]]
    same = {f: poses[ids[0]] for f in ids[:3]}
    b = GazeBlend(tuple(ids[:3]), np.array([0.2, 0.5, 0.3]))
    got = interpolate_pose(b, same, poses[ids[0]].gaze())
    np.testing.assert_allclose(got.rotation, poses[ids[0]].rotation, atol=1e-12)
    np.testing.assert_allclose(got.translation, poses[ids[0]].translation, atol=1e-12)
    # the first slerp is skipped when its weights vanish
    b = GazeBlend(tuple(sorted(ids[:3])), np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(interpolate_pose(b, poses, poses[b.frame_ids[2]].gaze()).rotation,
                               poses[b.frame_ids[2]].rotation, atol=1e-12)


def test_blend_warp_examples():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(6, 3))
    t1, t2, t3 = np.array([1.0, 0, 0]), np.array([0, 2.0, 0]), np.array([0, 0, 3.0])
    store = WarpStore({"a": RigidWarp(np.eye(3), t1), "b": RigidWarp(np.eye(3), t2), "c": RigidWarp(np.eye(3), t3)})
    np.testing.assert_allclose(blend_warp(GazeBlend(("a", "b", "c"), np.array([1.0, 0, 0])), store)(p), p + t1,
                               atol=1e-15)
    np.testing.assert_allclose(blend_warp(GazeBlend(("a", "b", "c"), np.array([0.5, 0.5, 0])), store)(p),
                               p + (t1 + t2) / 2, atol=1e-12)
    R = minimal_rotation(Z, _unit([0.2, 0.1, 1]))
    one = RigidWarp(R, t1)
    same = WarpStore({k: one for k in "abc"})
    np.testing.assert_allclose(blend_warp(GazeBlend(("a", "b", "c"), np.array([0.2, 0.3, 0.5])), same)(p), one(p),
                               atol=1e-12)
    with pytest.raises(KeyError):
        blend_warp(GazeBlend(("a", "b", "x"), np.array([0.2, 0.3, 0.5])), store)


def test_pose_continuous_across_edges():
    ids, poses = _cap_rig(4)
    gs = build_gaze_sphere([poses[i] for i in ids], ids)
    assert pose_continuity(gs, poses) < 1e-5  # arccos round-off near identity


def test_pose_lipschitz_along_path():
    """Rotation change per radian of gaze change stays bounded on a path crossing several triangles."""
    ids, poses = _cap_rig(5)
    gs = build_gaze_sphere([poses[i] for i in ids], ids)
    path = [_unit([x, 0.13, 1.0]) for x in np.linspace(-0.5, 0.5, 401)]
    rots = [interpolate_pose(locate_gaze(gs, g), poses, g).rotation for g in path]
    step = np.degrees(np.arccos(np.clip(path[0] @ path[1], -1, 1)))
    jumps = [_rot_angle_deg(a, b) for a, b in zip(rots, rots[1:])]
    assert max(jumps) < 3.0 * step + 1e-9
