"""Real spherical harmonics: basis, lat-long projection, rotation, and radiance integration.

Convention (orthonormal, no Condon-Shortley phase), with z = cos(theta),
x + iy = sin(theta) e^{i phi}:

    Y_l0  = K_l0 P_l(z)
    Y_lm  = sqrt(2) K_lm cos(m phi)   P_l^m(z),  m > 0
    Y_l-m = sqrt(2) K_lm sin(m phi)   P_l^m(z),  m > 0
    K_lm  = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)

where P_l^m carries no (-1)^m factor. Band 1 is therefore
(Y_1-1, Y_10, Y_11) = sqrt(3/(4 pi)) * (y, z, x), which is the ordering the
rotation recursion below assumes. Coefficients are stacked with
index(l, m) = l^2 + l + m.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from ._validation import ValidationError, check_array, check_positive, check_rotation, check_unit_vectors
from .rotations import minimal_rotation

DIFFUSE_ORDER = 5
SPECULAR_ORDER = 8


def n_coeffs(order):
    return (order + 1) ** 2


def sh_index(l, m):
    if abs(m) > l:
        raise ValueError(f"|m| must be <= l, got l={l}, m={m}")
    return l * l + l + m


def sh_lm(index):
    l = int(np.floor(np.sqrt(index)))
    return l, index - l * l - l


def order_of(n):
    order = int(round(np.sqrt(n))) - 1
    if n_coeffs(order) != n:
        raise ValidationError(f"{n} is not a valid SH coefficient count")
    return order


@dataclass(frozen=True)
class ShCoefficients:
    """Stacked real SH coefficients; ``values`` is (n,) for one channel or (n, k) for k channels."""

    max_order: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim not in (1, 2) or vals.shape[0] != n_coeffs(self.max_order):
            raise ValidationError(
                f"values must have leading length {n_coeffs(self.max_order)} for order {self.max_order}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def channels(self):
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def __getitem__(self, lm):
        l, m = lm
        return self.values[sh_index(l, m)]

    def __add__(self, other):
        order = max(self.max_order, other.max_order)
        return ShCoefficients(order, _pad(self.values, order) + _pad(other.values, order))

    def __mul__(self, s):
        return ShCoefficients(self.max_order, self.values * s)

    __rmul__ = __mul__

    def truncate(self, order):
        return ShCoefficients(order, _pad(self.values, order))


def _pad(values, order):
    n = n_coeffs(order)
    if values.shape[0] >= n:
        return values[:n]
    pad = np.zeros((n - values.shape[0],) + values.shape[1:])
    return np.concatenate([values, pad], axis=0)


def sh_basis(dirs, max_order):
    """Evaluate all Y_lm for l <= max_order at unit directions ``dirs`` (..., 3) -> (..., n)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (n_coeffs(max_order),))

    # Re/Im of (x + iy)^m = sin^m(theta) (cos m phi, sin m phi)
    re = [np.ones_like(x)]
    im = [np.zeros_like(x)]
    for m in range(1, max_order + 1):
        r, i = re[-1], im[-1]
        re.append(x * r - y * i)
        im.append(x * i + y * r)

    for m in range(max_order + 1):
        # Q_l^m(z) = P_l^m(z) / sin^m(theta), no Condon-Shortley phase
        q_prev = None
        q = np.full_like(z, float(_double_factorial(2 * m - 1)))
        for l in range(m, max_order + 1):
            if l == m + 1:
                q_prev, q = q, (2 * m + 1) * z * q
            elif l > m + 1:
                q_prev, q = q, ((2 * l - 1) * z * q - (l + m - 1) * q_prev) / (l - m)
            k = np.sqrt((2 * l + 1) / (4 * np.pi) * factorial(l - m) / factorial(l + m))
            if m == 0:
                out[..., sh_index(l, 0)] = k * q
            else:
                out[..., sh_index(l, m)] = np.sqrt(2.0) * k * q * re[m]
                out[..., sh_index(l, -m)] = np.sqrt(2.0) * k * q * im[m]
    return out


def _double_factorial(n):
    r = 1
    while n > 1:
        r *= n
        n -= 2
    return r


def eval_sh_basis(direction, max_order):
    """Y_lm(direction) for all l <= max_order as a single-channel ShCoefficients."""
    d = check_unit_vectors(direction)
    if d.shape != (3,):
        raise ValidationError("eval_sh_basis takes a single direction; use sh_basis for batches")
    return ShCoefficients(max_order, sh_basis(d, max_order))


# --- lat-long quadrature -------------------------------------------------

def latlong_directions(width, height):
    """Texel-centre directions of an equirectangular map.

    Longitude phi in [-pi, pi) runs across the width, colatitude theta in
    [0, pi] runs down the height (row 0 is the +z pole).
    """
    theta = (np.arange(height) + 0.5) * np.pi / height
    phi = -np.pi + (np.arange(width) + 0.5) * 2 * np.pi / width
    st = np.sin(theta)[:, None]
    dirs = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.broadcast_to(np.cos(theta)[:, None], (height, width))],
        axis=-1,
    )
    return dirs, theta, phi


def latlong_weights(width, height, quadrature="fejer"):
    """Per-texel solid-angle weights (height, width).

    ``"riemann"`` is the plain sin(theta) dtheta dphi rule. ``"fejer"`` uses
    Fejer's first rule in cos(theta): the row centres are exactly its nodes, so
    the weights stay a per-row solid angle but integrate band-limited signals
    up to degree height-1 exactly (the plain rule leaves an O(dtheta^2) error of
    ~1e-4 at band 8 for 256 rows).
    """
    theta = (np.arange(height) + 0.5) * np.pi / height
    dphi = 2 * np.pi / width
    if quadrature == "riemann":
        row = np.sin(theta) * np.pi / height
    elif quadrature == "fejer":
        k = np.arange(1, height // 2 + 1)
        row = (2.0 / height) * (
            1.0 - 2.0 * np.sum(np.cos(2.0 * k[None, :] * theta[:, None]) / (4.0 * k**2 - 1.0)[None, :], axis=1)
        )
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    return np.broadcast_to((row * dphi)[:, None], (height, width))


def project_latlong(radiance, max_order, quadrature="fejer"):
    """Project an (H, W) or (H, W, k) lat-long array onto real SH; returns (n,) or (n, k)."""
    radiance = np.asarray(radiance, dtype=np.float64)
    bad = ~np.isfinite(radiance)
    if np.any(bad):
        r, c = np.argwhere(bad)[0][:2]
        raise ValidationError(f"non-finite radiance at texel (row={r}, col={c})")
    h, w = radiance.shape[:2]
    dirs, _, _ = latlong_directions(w, h)
    wts = latlong_weights(w, h, quadrature)
    n = n_coeffs(max_order)
    flat = radiance.reshape(h, w, -1)
    out = np.zeros((n, flat.shape[-1]))
    # row-blocked to bound memory at high resolution
    for r0 in range(0, h, 32):
        Y = sh_basis(dirs[r0:r0 + 32], max_order)
        out += np.einsum("hwn,hwc->nc", Y * wts[r0:r0 + 32, :, None], flat[r0:r0 + 32])
    return out[:, 0] if radiance.ndim == 2 else out


def project_env_to_sh(env, max_order, quadrature="fejer"):
    """Precompute the integrals of Y_lm times the environment, one RGB triple per (l, m)."""
    radiance = getattr(env, "radiance", env)
    return ShCoefficients(max_order, project_latlong(radiance, max_order, quadrature))


def synthesize_latlong(values, width, height):
    """Evaluate sum_lm c_lm Y_lm on the texel centres of a lat-long grid."""
    values = np.asarray(values, dtype=np.float64)
    dirs, _, _ = latlong_directions(width, height)
    Y = sh_basis(dirs, order_of(values.shape[0]))
    return np.tensordot(Y, values, axes=([-1], [0]))


# --- rotation ------------------------------------------------------------

@dataclass(frozen=True)
class ShRotation:
    """Block-diagonal SH rotation; block l is (2l+1) x (2l+1) and acts on band l."""

    max_order: int
    blocks: tuple

    def matrix(self):
        n = n_coeffs(self.max_order)
        M = np.zeros((n, n))
        for l, B in enumerate(self.blocks):
            M[l * l:(l + 1) ** 2, l * l:(l + 1) ** 2] = B
        return M

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != n_coeffs(self.max_order):
            raise ValidationError(
                f"coefficient order {order_of(values.shape[0])} does not match rotation order {self.max_order}"
            )
        out = np.empty_like(values)
        for l, B in enumerate(self.blocks):
            out[l * l:(l + 1) ** 2] = B @ values[l * l:(l + 1) ** 2]
        return out


def sh_rotation_matrix(R, max_order):
    """Per-band rotation blocks with sh_basis(R @ w) == blocks @ sh_basis(w).

    Recursive construction (Ivanic & Ruedenberg, with the published
    corrections): band l is built from band l-1 and the band-1 block, which
    is R itself permuted into (y, z, x) order.
    """
    R = check_rotation(R)
    # R' acts on Y(w) to give Y(R w); for band 1 that is the coordinate map
    # v -> R v restricted to the permuted (y, z, x) components.
    perm = [1, 2, 0]
    r1 = R[np.ix_(perm, perm)]
    blocks = [np.ones((1, 1))]
    if max_order >= 1:
        blocks.append(r1.copy())
    for l in range(2, max_order + 1):
        blocks.append(_next_band(r1, blocks[-1], l))
    return ShRotation(max_order, tuple(blocks))


def _next_band(r1, prev, l):
    def R1(i, j):
        return r1[i + 1, j + 1]

    def M(a, b):
        return prev[a + l - 1, b + l - 1]

    def P(i, a, b):
        if b == l:
            return R1(i, 1) * M(a, l - 1) - R1(i, -1) * M(a, -l + 1)
        if b == -l:
            return R1(i, 1) * M(a, -l + 1) + R1(i, -1) * M(a, l - 1)
        return R1(i, 0) * M(a, b)

    out = np.zeros((2 * l + 1, 2 * l + 1))
    for m in range(-l, l + 1):
        am = abs(m)
        d = 1.0 if m == 0 else 0.0
        for n in range(-l, l + 1):
            denom = (l + n) * (l - n) if abs(n) < l else (2 * l) * (2 * l - 1)
            u = np.sqrt((l + m) * (l - m) / denom)
            v = 0.5 * np.sqrt((1 + d) * (l + am - 1) * (l + am) / denom) * (1 - 2 * d)
            w = -0.5 * np.sqrt((l - am - 1) * (l - am) / denom) * (1 - d)
            val = 0.0
            if u != 0:
                val += u * P(0, m, n)
            if v != 0:
                if m == 0:
                    V = P(1, 1, n) + P(-1, -1, n)
                elif m > 0:
                    d1 = 1.0 if m == 1 else 0.0
                    V = P(1, m - 1, n) * np.sqrt(1 + d1) - P(-1, -m + 1, n) * (1 - d1)
                else:
                    d1 = 1.0 if m == -1 else 0.0
                    V = P(1, m + 1, n) * (1 - d1) + P(-1, -m - 1, n) * np.sqrt(1 + d1)
                val += v * V
            if w != 0:
                if m > 0:
                    W = P(1, m + 1, n) + P(-1, -m - 1, n)
                else:
                    W = P(1, m - 1, n) - P(-1, -m + 1, n)
                val += w * W
            out[m + l, n + l] = val
    return out


def rotate_env_coeffs(coeffs, R):
    """Coefficients of the rotated map E(R^-1 w), i.e. R' applied to each channel."""
    rot = R if isinstance(R, ShRotation) else sh_rotation_matrix(R, coeffs.max_order)
    if rot.max_order != coeffs.max_order:
        raise ValidationError(
            f"rotation order {rot.max_order} does not match coefficient order {coeffs.max_order}"
        )
    return ShCoefficients(coeffs.max_order, rot.apply(coeffs.values))


# --- lighting ------------------------------------------------------------

def integrate_radiance(transfer, env):
    """RGB outgoing radiance sum_lm c_lm * env_lm over the transfer's bands.

    Env bands missing above env.max_order count as zero. The result is not
    clamped.
    """
    t = transfer.values if isinstance(transfer, ShCoefficients) else np.asarray(transfer, dtype=np.float64)
    e = env.values if isinstance(env, ShCoefficients) else np.asarray(env, dtype=np.float64)
    if t.ndim != 1:
        raise ValidationError("transfer coefficients must be single-channel")
    e = _pad(e, order_of(t.shape[0]))
    return t @ e


def point_light_sh(direction, coeffs_at_ref, ref_distance, distance, captured_direction=(0.0, 0.0, 1.0)):
    """Moving-light SH re-aimed from its captured direction to ``direction`` with 1/r^2 falloff."""
    check_positive(ref_distance, "ref_distance")
    if not np.isfinite(distance) or distance <= 0:
        raise ValidationError(f"light distance must be > 0, got {distance}")
    d = check_unit_vectors(direction)
    c = check_unit_vectors(captured_direction, name="captured_direction")
    rotated = rotate_env_coeffs(coeffs_at_ref, minimal_rotation(c, d))
    return rotated * ((ref_distance / distance) ** 2)


# --- text I/O ------------------------------------------------------------

def save_coeffs(path, coeffs):
    vals = coeffs.values.reshape(coeffs.values.shape[0], -1)
    with open(path, "w") as fh:
        fh.write(f"sh-coeffs v1 order={coeffs.max_order} channels={vals.shape[1]}\n")
        for i, row in enumerate(vals):
            l, m = sh_lm(i)
            fh.write(f"{l} {m} " + " ".join(repr(float(v)) for v in row) + "\n")


def load_coeffs(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[:2] != ["sh-coeffs", "v1"]:
            raise ValidationError(f"{path}: not an sh-coeffs v1 file")
        fields = dict(kv.split("=") for kv in header[2:])
        order, channels = int(fields["order"]), int(fields["channels"])
        vals = np.zeros((n_coeffs(order), channels))
        seen = 0
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            l, m = int(parts[0]), int(parts[1])
            if len(parts) != 2 + channels:
                raise ValidationError(f"{path}: expected {channels} values for ({l}, {m})")
            vals[sh_index(l, m)] = [float(p) for p in parts[2:]]
            seen += 1
    if seen != n_coeffs(order):
        raise ValidationError(f"{path}: expected {n_coeffs(order)} rows, got {seen}")
    return ShCoefficients(order, vals[:, 0] if channels == 1 else vals)
