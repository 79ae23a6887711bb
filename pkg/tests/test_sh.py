import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_eye._validation import ValidationError
from hybrid_eye.envmap import EnvMap
from hybrid_eye.rotations import random_rotation
from hybrid_eye.sh import (
    ShCoefficients, eval_sh_basis, integrate_radiance, latlong_directions, latlong_weights, load_coeffs,
    n_coeffs, point_light_sh, project_env_to_sh, rotate_env_coeffs, save_coeffs, sh_basis, sh_index, sh_lm,
    sh_rotation_matrix,
)

TWO_SQRT_PI = 2.0 * np.sqrt(np.pi)


def test_index_bijection():
    seen = set()
    for l in range(9):
        for m in range(-l, l + 1):
            i = sh_index(l, m)
            assert i == l * l + l + m
            assert sh_lm(i) == (l, m)
            seen.add(i)
    assert seen == set(range(81))


def test_coefficient_length_checked():
    with pytest.raises(ValidationError):
        ShCoefficients(2, np.zeros(8))
    assert ShCoefficients(8, np.zeros((81, 3))).channels == 3


def test_y00_value():
    c = eval_sh_basis([0.0, 0.0, 1.0], 0)
    assert c.values.shape == (1,)
    assert c.values[0] == pytest.approx(1 / (2 * np.sqrt(np.pi)), abs=1e-15)
    assert eval_sh_basis([0.0, 0.0, 1.0], 8).values.shape == (81,)


def test_low_bands_closed_form():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(50, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    Y = sh_basis(d, 2)
    k1 = np.sqrt(3 / (4 * np.pi))
    np.testing.assert_allclose(Y[:, 1], k1 * d[:, 1], atol=1e-14)
    np.testing.assert_allclose(Y[:, 2], k1 * d[:, 2], atol=1e-14)
    np.testing.assert_allclose(Y[:, 3], k1 * d[:, 0], atol=1e-14)
    k2 = 0.5 * np.sqrt(15 / np.pi)
    np.testing.assert_allclose(Y[:, 4], k2 * d[:, 0] * d[:, 1], atol=1e-14)


def test_gram_matrix_512x256():
    dirs = latlong_directions(512, 256)[0]
    w = latlong_weights(512, 256)
    Y = sh_basis(dirs, 8).reshape(-1, 81)
    G = Y.T @ (Y * w.reshape(-1, 1))
    assert np.abs(G - np.eye(81)).max() < 1e-4


def test_project_constant_and_black_and_y10():
    c = project_env_to_sh(EnvMap.constant(1.0, 512, 256), 8)
    assert c.values[0] == pytest.approx([TWO_SQRT_PI] * 3, abs=1e-3)
    assert np.abs(c.values[1:]).max() < 1e-3
    assert np.all(project_env_to_sh(EnvMap.constant(0.0, 64, 32), 8).values == 0)


def test_project_signed_y10_map():
    from hybrid_eye.sh import project_latlong
    dirs = latlong_directions(512, 256)[0]
    rad = np.repeat(sh_basis(dirs, 1)[..., 2:3], 3, axis=-1)
    c = project_latlong(rad, 8)
    assert c[sh_index(1, 0)] == pytest.approx([1.0] * 3, abs=1e-3)
    rest = np.delete(c, sh_index(1, 0), axis=0)
    assert np.abs(rest).max() < 1e-3


def test_rotation_blocks_identity_and_orthogonal():
    rot = sh_rotation_matrix(np.eye(3), 8)
    for B in rot.blocks:
        np.testing.assert_allclose(B, np.eye(len(B)), atol=1e-12)
    rot = sh_rotation_matrix(random_rotation(np.random.default_rng(2)), 8)
    assert rot.blocks[0].shape == (1, 1) and rot.blocks[0][0, 0] == pytest.approx(1.0, abs=1e-15)
    for B in rot.blocks:
        np.testing.assert_allclose(B.T @ B, np.eye(len(B)), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rotation_equivariance_property(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    w = rng.normal(size=(10, 3))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    M = sh_rotation_matrix(R, 8).matrix()
    assert np.abs(sh_basis(w @ R.T, 8) - sh_basis(w, 8) @ M.T).max() < 1e-9


def test_rotation_composition():
    rng = np.random.default_rng(4)
    R1, R2 = random_rotation(rng), random_rotation(rng)
    c = ShCoefficients(8, rng.normal(size=(81, 3)))
    a = rotate_env_coeffs(rotate_env_coeffs(c, R1), R2)
    b = rotate_env_coeffs(c, R2 @ R1)
    assert np.abs(a.values - b.values).max() < 1e-9
    np.testing.assert_array_equal(rotate_env_coeffs(c, np.eye(3)).values, c.values)


def test_rotation_order_mismatch():
    rot = sh_rotation_matrix(np.eye(3), 4)
    with pytest.raises(ValidationError):
        rotate_env_coeffs(ShCoefficients(8, np.zeros(81)), rot)


def test_integrate_radiance():
    zero = ShCoefficients(8, np.zeros((81, 3)))
    t = ShCoefficients(8, np.zeros(81))
    np.testing.assert_array_equal(integrate_radiance(t, zero), 0)
    delta = np.zeros(81)
    delta[0] = 0.7
    env = project_env_to_sh(EnvMap.constant(1.0, 512, 256), 8)
    np.testing.assert_allclose(integrate_radiance(ShCoefficients(8, delta), env), 0.7 * TWO_SQRT_PI, atol=1e-3)


def test_integrate_matches_quadrature():
    rng = np.random.default_rng(5)
    t = rng.normal(size=81)
    env_map = EnvMap.from_function(lambda d: np.stack([1 + d[..., 0], 1 + d[..., 2] ** 2, np.ones(d.shape[:-1])], -1),
                                   512, 256)
    env = project_env_to_sh(env_map, 8)
    dirs = latlong_directions(512, 256)[0]
    w = latlong_weights(512, 256)
    brute = np.einsum("hw,hw,hwc->c", w, sh_basis(dirs, 8) @ t, env_map.radiance.astype(np.float64))
    np.testing.assert_allclose(integrate_radiance(ShCoefficients(8, t), env), brute, atol=1e-3)


def test_point_light_falloff_and_linearity():
    rng = np.random.default_rng(6)
    ref = ShCoefficients(8, rng.normal(size=(81, 3)))
    z = [0.0, 0.0, 1.0]
    np.testing.assert_allclose(point_light_sh(z, ref, 100.0, 100.0).values, ref.values, atol=1e-12)
    np.testing.assert_allclose(point_light_sh(z, ref, 100.0, 200.0).values, 0.25 * ref.values, atol=1e-12)
    d = np.array([0.6, 0.0, 0.8])
    s = point_light_sh(d, ref, 100.0, 150.0) + point_light_sh(d, ref * 2.0, 100.0, 150.0)
    np.testing.assert_allclose(s.values, 3 * point_light_sh(d, ref, 100.0, 150.0).values, atol=1e-12)
    with pytest.raises(ValidationError):
        point_light_sh(z, ref, 100.0, 0.0)


def test_coeff_file_round_trip(tmp_path):
    c = ShCoefficients(3, np.random.default_rng(7).normal(size=(16, 3)))
    save_coeffs(tmp_path / "c.txt", c)
    back = load_coeffs(tmp_path / "c.txt")
    assert back.max_order == 3
    np.testing.assert_array_equal(back.values, c.values)


def test_n_coeffs():
    assert n_coeffs(5) == 36 and n_coeffs(8) == 81
