import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_eye._validation import ValidationError
from hybrid_eye.bvh import BVH, brute_force_intersect, build_bvh
from hybrid_eye.eye_model import EyePose, EyeShapeParams, RigidTransform, apex_point, generate_mesh
from hybrid_eye.rays import (
    Camera, Ray, EyeSurface, camera_ray, fresnel_unpolarized, reflect_dir, refract_dir, split_ray,
)

F_NORMAL = ((1 - 1.4) / (1 + 1.4)) ** 2


@pytest.fixture(scope="module")
def mesh():
    return generate_mesh(EyeShapeParams())


@pytest.fixture(scope="module")
def bvh(mesh):
    return build_bvh(mesh)


def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_principal_ray_and_pixel_spacing():
    cam = Camera(100.0, 100.0, 32.0, 32.0, 64, 64)
    r = camera_ray(cam, (31, 31), offset=(1.0, 1.0))
    np.testing.assert_allclose(r.dir, [0, 0, 1], atol=1e-15)
    a = camera_ray(cam, (31, 31), offset=(1.0, 1.0)).dir
    b = camera_ray(cam, (32, 31), offset=(1.0, 1.0)).dir
    assert np.arccos(a @ b) == pytest.approx(1 / 100.0, rel=1e-4)
    with pytest.raises(ValidationError):
        camera_ray(cam, (64, 0))


def test_projection_round_trip():
    cam = Camera.look_at([10, 20, 90], [0, 0, 0], [0, 1, 0], 30.0, 80, 60)
    rng = np.random.default_rng(0)
    for _ in range(20):
        px = rng.uniform(0, [80, 60])
        d = cam.pixel_dirs(px[0], px[1])
        p = cam.center + rng.uniform(5, 200) * d
        np.testing.assert_allclose(cam.project(p), px, atol=1e-6)


def test_refract_identities():
    n = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(refract_dir(-n, n, 1 / 1.4), -n, atol=1e-15)
    d = np.array([0.6, 0.0, -0.8])
    np.testing.assert_allclose(refract_dir(d, n, 1.0), d, atol=1e-15)
    d45 = np.array([np.sqrt(0.5), 0.0, -np.sqrt(0.5)])
    out = refract_dir(d45, n, 1 / 1.4)
    assert np.degrees(np.arccos(-out @ n)) == pytest.approx(np.degrees(np.arcsin(np.sin(np.pi / 4) / 1.4)), abs=1e-9)
    assert np.degrees(np.arcsin(np.sin(np.pi / 4) / 1.4)) == pytest.approx(30.34, abs=0.01)
    assert refract_dir(d45, n, 1.5) is None  # total internal reflection


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 2.0))
def test_snell_plane_and_sines(seed, eta):
    rng = np.random.default_rng(seed)
    n = _unit(rng, 1)[0]
    d = _unit(rng, 1)[0]
    if d @ n > 0:
        d = -d
    if abs(d @ n) < 1e-3:
        return
    out = refract_dir(d, n, eta)
    sin_i = np.linalg.norm(np.cross(d, n))
    if eta * sin_i > 1:
        assert out is None
        return
    assert abs(np.dot(np.cross(d, n), out)) < 1e-9  # coplanar
    assert abs(np.linalg.norm(np.cross(out, n)) - eta * sin_i) < 1e-9
    r = reflect_dir(d, n)
    assert abs(np.dot(r, n) + np.dot(d, n)) < 1e-12
    assert abs(np.linalg.norm(r) - 1) < 1e-12


def test_reflect_cases():
    n = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(reflect_dir(-n, n), n)
    g = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(reflect_dir(g, n), g)


def test_fresnel_values():
    assert fresnel_unpolarized(1.0, 1.0, 1.4) == pytest.approx(0.02778, abs=1e-5)
    assert fresnel_unpolarized(1.0, 1.0, 1.4) == pytest.approx(F_NORMAL, abs=1e-15)
    assert fresnel_unpolarized(1e-8, 1.0, 1.4) > 0.9999
    assert fresnel_unpolarized(0.0, 1.0, 1.4) == pytest.approx(1.0)
    assert fresnel_unpolarized(0.3, 1.4, 1.4) == 0.0
    cos = np.linspace(0.01, 1, 50)
    f = [fresnel_unpolarized(c, 1.0, 1.4) for c in cos]
    assert np.all(np.diff(f) < 0)


def test_bvh_matches_brute_force_10k(mesh, bvh):
    rng = np.random.default_rng(1)
    n = 10000
    targets = _unit(rng, n) * rng.uniform(0, 12, size=(n, 1))
    origins = _unit(rng, n) * 40.0
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # a quarter of the rays start inside the eye
    origins[: n // 4] = _unit(rng, n // 4) * rng.uniform(0, 8, size=(n // 4, 1))
    a = bvh.intersect(origins, dirs)
    b = brute_force_intersect(mesh.vertices, mesh.faces, origins, dirs)
    np.testing.assert_array_equal(a.face, b.face)
    hit = a.face >= 0
    assert hit.sum() > 0.9 * n
    assert np.abs(a.t[hit] - b.t[hit]).max() < 1e-6


def test_bvh_miss_and_inside(mesh, bvh):
    rec = bvh.intersect(np.array([[0.0, 100.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    assert rec.face[0] == -1 and np.isinf(rec.t[0])
    rec = bvh.intersect(np.zeros((1, 3)), np.array([[0.0, 0.0, -1.0]]))
    assert rec.t[0] == pytest.approx(np.hypot(6.0, 10.5), abs=1e-2)
    assert isinstance(bvh, BVH)


def test_split_miss(mesh):
    surf = EyeSurface.build(EyeShapeParams(), EyePose())
    r = Ray(np.array([0.0, 50.0, 50.0]), np.array([0.0, 0.0, -1.0]))
    s = split_ray(r, surf)
    assert s.refracted is None and s.reflected is None and s.fresnel_f == 0.0 and s.hit is None
    assert s.pre is r


def test_split_apex_head_on():
    p = EyeShapeParams()
    surf = EyeSurface.build(p, EyePose())
    r = Ray(np.array([0.0, 0.0, 60.0]), np.array([0.0, 0.0, -1.0]))
    s = split_ray(r, surf)
    assert s.hit.region == "cornea"
    assert s.pre.t_far == pytest.approx(60.0 - apex_point(p)[2], abs=1e-2)
    np.testing.assert_allclose(s.refracted.dir, r.dir, atol=1e-6)
    np.testing.assert_allclose(s.reflected.dir, -r.dir, atol=1e-6)
    assert s.fresnel_f == pytest.approx(F_NORMAL, abs=1e-6)


def test_split_sclera_suppression():
    p = EyeShapeParams()
    pose = EyePose(frame=RigidTransform((0.0, np.pi / 2, 0.0), (0.0, 0.0, 0.0)))  # gaze along +x
    surf = EyeSurface.build(p, pose)
    r = Ray(np.array([0.0, 0.0, 60.0]), np.array([0.0, 0.0, -1.0]))
    s = split_ray(r, surf, sclera_ior_zero=True)
    assert s.hit.region == "sclera"
    assert s.fresnel_f == 0.0 and s.reflected is None and s.refracted is not None
    s2 = split_ray(r, surf, sclera_ior_zero=False)
    assert s2.fresnel_f > 0 and s2.reflected is not None


def test_posed_surface_matches_world_mesh(mesh):
    pose = EyePose(RigidTransform((0.1, -0.2, 0.05), (1.0, 2.0, -3.0)), RigidTransform((0.0, 0.3, 0.0), (0.5, 0, 0)))
    surf = EyeSurface.build(EyeShapeParams(), pose)
    from hybrid_eye.eye_model import apply_pose
    world = apply_pose(mesh, pose)
    rng = np.random.default_rng(3)
    origins = np.tile([0.0, 0.0, 80.0], (500, 1))
    tgt = pose.translation + rng.normal(scale=5, size=(500, 3))
    dirs = tgt - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    a = surf.bvh.intersect(origins, dirs)
    b = brute_force_intersect(world.vertices, world.faces, origins, dirs)
    np.testing.assert_array_equal(a.face, b.face)
    hit = a.face >= 0
    assert np.abs(a.t[hit] - b.t[hit]).max() < 1e-6
