import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_eye._validation import ValidationError
from hybrid_eye.eye_model import EyePose, RigidTransform
from hybrid_eye.field import (
    C00_FLOOR, FieldQuery, FieldUnion, IdentityWarp, LatticeWarp, RigidWarp, TwistWarp, VacuumField, VoxelShField,
    WarpStore, constant_field, eye_interior_transform, load_voxel_field, save_voxel_field, warp_point,
)
from hybrid_eye.rotations import random_rotation


def _random_field(dims=(4, 5, 6), lo=(-1, -1, -1), hi=(1, 1, 1), seed=0):
    rng = np.random.default_rng(seed)
    nv = int(np.prod(dims))
    return VoxelShField(lo, hi, dims, rng.random(nv), rng.random((nv, 3)), rng.random((nv, 36)),
                        rng.random((nv, 81)))


def _q(p):
    return FieldQuery(np.asarray(p, float), np.asarray(p, float), np.array([0.0, 0.0, 1.0]))


def test_vacuum():
    s = VacuumField().query(_q([1, 2, 3]))
    assert s.sigma == 0.0


def test_constant_voxel_payload():
    dims = (3, 3, 3)
    nv = 27
    d = np.r_[0.4, np.zeros(35)]
    sp = np.r_[0.2, np.zeros(80)]
    f = VoxelShField((-1, -1, -1), (1, 1, 1), dims, np.full(nv, 2.0), np.tile([0.1, 0.5, 0.9], (nv, 1)),
                     np.tile(d, (nv, 1)), np.tile(sp, (nv, 1)))
    for p in np.random.default_rng(1).uniform(-1, 1, size=(10, 3)):
        s = f.query(_q(p))
        assert s.sigma == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(s.albedo, [0.1, 0.5, 0.9], atol=1e-12)
        np.testing.assert_allclose(s.diffuse_sh.values, d, atol=1e-12)
        np.testing.assert_allclose(s.specular_sh.values, sp, atol=1e-12)
    assert f.query(_q([2.0, 0, 0])).sigma == 0.0


def test_corner_query_returns_node_payload():
    f = _random_field()
    nodes = f.node_positions()
    for i in [0, 7, 33, f.n_voxels - 1]:
        s = f.query(_q(nodes[i]))
        assert s.sigma == pytest.approx(f.sigma[i], abs=1e-12)
        np.testing.assert_allclose(s.specular_sh.values, f.specular[i], atol=1e-12)


def test_trilinear_reproduces_linear_functions():
    dims = (4, 5, 6)
    f0 = _random_field(dims)
    nodes = f0.node_positions()
    lin = 1.0 + nodes @ [0.3, -0.2, 0.1]
    f = VoxelShField(f0.lo, f0.hi, dims, lin, f0.albedo, f0.diffuse, f0.specular)
    p = np.random.default_rng(2).uniform(-1, 1, size=(100, 3))
    np.testing.assert_allclose(f.sigma_batch(p, p), 1.0 + p @ [0.3, -0.2, 0.1], atol=1e-12)


def test_activation_constraints():
    f = VoxelShField((0, 0, 0), (1, 1, 1), (2, 2, 2), -np.ones(8), np.full((8, 3), 2.0), -np.ones((8, 36)),
                     -np.ones((8, 81)))
    assert np.all(f.sigma == 0) and np.all(f.albedo == 1.0)
    assert np.all(f.diffuse[:, 0] == C00_FLOOR) and np.all(f.specular[:, 0] == C00_FLOOR)
    with pytest.raises(ValidationError):
        VoxelShField((0, 0, 0), (1, 1, 1), (2, 2, 2), np.full(8, np.nan), np.zeros((8, 3)), np.zeros((8, 36)),
                     np.zeros((8, 81)))
    with pytest.raises(ValidationError):
        VoxelShField((0, 0, 0), (0, 1, 1), (2, 2, 2), np.ones(8), np.zeros((8, 3)), np.zeros((8, 36)),
                     np.zeros((8, 81)))


def test_eynf_round_trip(tmp_path):
    f = _random_field()
    save_voxel_field(tmp_path / "f.eynf", f)
    g = load_voxel_field(tmp_path / "f.eynf")
    assert g.dims == f.dims
    np.testing.assert_allclose(g.specular, f.specular, atol=1e-7)
    (tmp_path / "bad.eynf").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValidationError):
        load_voxel_field(tmp_path / "bad.eynf")


def test_union_picks_member_and_splits():
    a = _random_field(lo=(-1, -1, -1), hi=(0, 1, 1), seed=3)
    b = _random_field(lo=(0.5, -1, -1), hi=(2, 1, 1), seed=4)
    u = FieldUnion([a, b])
    p = np.array([[-0.5, 0.1, 0.2], [1.0, 0.3, -0.4], [5.0, 0, 0]])
    s = u.sigma_batch(p, p)
    assert s[0] == pytest.approx(a.sigma_batch(p[:1], p[:1])[0])
    assert s[1] == pytest.approx(b.sigma_batch(p[1:2], p[1:2])[0])
    assert s[2] == 0.0
    z = u.with_sh(np.zeros_like(u.diffuse), np.zeros_like(u.specular))
    assert z.n_voxels == a.n_voxels + b.n_voxels


def test_analytic_view_conditioned_and_shadow_branch():
    seen = {}

    def diffuse(world, canon):
        seen["canon"] = canon.copy()
        return np.tile(np.r_[1.0, np.zeros(35)], (len(world), 1))

    def specular(canon, views):
        out = np.zeros((len(canon), 81))
        out[:, 0] = 1.0 + views[:, 2]
        return out

    f = constant_field(1.0, [1, 1, 1], np.r_[1.0, np.zeros(35)], np.r_[1.0, np.zeros(80)])
    f.diffuse, f.specular = diffuse, specular
    p = np.ones((2, 3))
    v = np.array([[0, 0, 1.0], [1.0, 0, 0]])
    b = f.query_batch(p, p, v, shadow_branch_enabled=False)
    assert np.all(seen["canon"] == 0)
    np.testing.assert_allclose(b.specular[:, 0], [2.0, 1.0])
    f.query_batch(p, p, v, shadow_branch_enabled=True)
    np.testing.assert_array_equal(seen["canon"], p)


def test_warps():
    p = np.random.default_rng(5).normal(size=(20, 3))
    np.testing.assert_array_equal(IdentityWarp()(p), p)
    R = random_rotation(np.random.default_rng(6))
    t = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(RigidWarp(R, t)(p), p @ R.T + t, atol=1e-12)
    store = WarpStore({"a": RigidWarp(R, t)})
    np.testing.assert_allclose(warp_point(store, "a", p), p @ R.T + t, atol=1e-12)
    with pytest.raises(KeyError):
        store["b"]
    tw = TwistWarp(rate=0.0)
    np.testing.assert_allclose(tw(p), p, atol=1e-15)


def test_lattice_warp_matches_dense_deformation():
    fn = TwistWarp(rate=0.01, falloff=20.0)
    lat = LatticeWarp.from_function(fn, (-10, -10, -10), (10, 10, 10), (41, 41, 41))
    p = np.random.default_rng(7).uniform(-9, 9, size=(500, 3))
    assert np.abs(lat(p) - fn(p)).max() < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_interior_transform_round_trip(seed):
    rng = np.random.default_rng(seed)
    pose = EyePose(RigidTransform.from_matrix(random_rotation(rng), rng.normal(size=3)),
                   RigidTransform.from_matrix(random_rotation(rng), rng.normal(size=3)))
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(eye_interior_transform(pose, pose.apply(x), (0, 0, 0)), x, atol=1e-9)


def test_interior_transform_cases():
    p = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(eye_interior_transform(EyePose(), p, (0, 0, 0)), p)
    t = np.array([0.5, -1.0, 2.0])
    off = np.array([0.0, 0.0, -100.0])
    pose = EyePose(frame=RigidTransform((0, 0, 0), tuple(t)))
    np.testing.assert_allclose(eye_interior_transform(pose, p, off), p - t + off, atol=1e-12)
