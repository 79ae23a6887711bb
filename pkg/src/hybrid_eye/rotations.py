"""Small rotation toolkit: axis-angle, quaternions (w, x, y, z) and slerp."""

import numpy as np
from scipy.spatial.transform import Rotation


def rotvec_to_matrix(rotvec):
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def matrix_to_rotvec(R):
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def matrix_to_quat(R):
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    return q if q[0] >= 0 else -q


def quat_to_matrix(q):
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()


def minimal_rotation(a, b):
    """Rotation about ``a x b`` taking unit vector ``a`` onto unit vector ``b`` (no twist)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: any perpendicular axis, half turn
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return rotvec_to_matrix(np.pi * perp / np.linalg.norm(perp))
    return rotvec_to_matrix(axis / s * np.arctan2(s, c))


def slerp(q0, q1, t):
    """Shortest-path spherical interpolation between unit quaternions.

    ``t == 0`` and ``t == 1`` return the endpoints exactly.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    if t == 0:
        return q0.copy()
    if np.dot(q0, q1) < 0:
        q1 = -q1
    if t == 1:
        return q1.copy()
    dot = float(np.clip(np.dot(q0, q1), -1.0, 1.0))
    if dot > 1.0 - 1e-12:
        q = q0 + t * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = np.arccos(dot)
    s = np.sin(theta)
    q = (np.sin((1.0 - t) * theta) * q0 + np.sin(t * theta) * q1) / s
    return q / np.linalg.norm(q)


def rotation_angle_between(R1, R2):
    """Geodesic angle (radians) between two rotation matrices."""
    c = (np.trace(np.asarray(R1).T @ np.asarray(R2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
