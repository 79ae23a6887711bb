"""Lat-long environment maps and scene lighting assembly (static map + moving light)."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import ValidationError, check_positive, check_rotation, check_unit_vectors
from .imageio import read_pfm, read_ppm, srgb_decode, write_pfm
from .rotations import minimal_rotation
from .sh import SPECULAR_ORDER, ShCoefficients, latlong_directions, point_light_sh, project_env_to_sh, rotate_env_coeffs


@dataclass(frozen=True)
class EnvMap:
    """Equirectangular RGB radiance.

    Columns span phi in [-pi, pi), rows span theta in [0, pi] with row 0 at
    the +z pole; direction = (sin t cos p, sin t sin p, cos t).
    """

    radiance: np.ndarray

    def __post_init__(self):
        rad = np.asarray(self.radiance, dtype=np.float64)
        if rad.ndim != 3 or rad.shape[2] != 3 or rad.shape[0] < 1 or rad.shape[1] < 1:
            raise ValidationError(f"env map radiance must be (H, W, 3), got {rad.shape}")
        bad = ~np.isfinite(rad)
        if np.any(bad):
            r, c = np.argwhere(bad)[0][:2]
            raise ValidationError(f"non-finite radiance at texel (row={r}, col={c})")
        if np.any(rad < 0):
            raise ValidationError("env map radiance must be non-negative")
        rad.setflags(write=False)
        object.__setattr__(self, "radiance", rad)

    @property
    def height(self):
        return self.radiance.shape[0]

    @property
    def width(self):
        return self.radiance.shape[1]

    @classmethod
    def constant(cls, value, width=64, height=32):
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy())

    @classmethod
    def from_function(cls, fn, width, height):
        """Build a map by evaluating ``fn(dirs) -> (..., 3)`` at texel centres."""
        dirs, _, _ = latlong_directions(width, height)
        return cls(np.asarray(fn(dirs), dtype=np.float64))

    def scaled(self, s):
        return EnvMap(self.radiance * s)

    def rotated(self, R):
        """Resampled map of E(R^-1 w)."""
        R = check_rotation(R)
        dirs, _, _ = latlong_directions(self.width, self.height)
        return EnvMap(sample_env(self, dirs @ R))


def sample_env(env, dirs):
    """Bilinear radiance lookup with longitude wraparound; ``dirs`` is (..., 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    h, w = env.height, env.width
    theta = np.arccos(np.clip(dirs[..., 2], -1.0, 1.0))
    phi = np.arctan2(dirs[..., 1], dirs[..., 0])
    u = (phi + np.pi) / (2 * np.pi) * w - 0.5
    v = np.clip(theta / np.pi * h - 0.5, 0.0, h - 1)
    u0 = np.floor(u)
    fu = (u - u0)[..., None]
    u0 = u0.astype(np.int64) % w
    u1 = (u0 + 1) % w
    v0 = np.floor(v).astype(np.int64)
    fv = (v - v0)[..., None]
    v1 = np.minimum(v0 + 1, h - 1)
    rad = env.radiance
    top = rad[v0, u0] * (1 - fu) + rad[v0, u1] * fu
    bot = rad[v1, u0] * (1 - fu) + rad[v1, u1] * fu
    return top * (1 - fv) + bot * fv


def load_env(path):
    """PFM (linear HDR) or PPM (sRGB-decoded LDR) lat-long map."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return EnvMap(srgb_decode(read_ppm(path) / 255.0))
    return EnvMap(read_pfm(path))


def save_env(path, env):
    write_pfm(path, env.radiance)


@dataclass
class MovingLight:
    """A light captured once as an env map at ``ref_distance`` from direction ``captured_direction``.

    ``track`` maps frame id -> (unit direction, distance in mm).
    """

    env: EnvMap
    ref_distance: float
    captured_direction: tuple = (0.0, 0.0, 1.0)
    track: dict = field(default_factory=dict)
    _sh: dict = field(default_factory=dict, repr=False, compare=False)

    def sh(self, order=SPECULAR_ORDER):
        if order not in self._sh:
            self._sh[order] = project_env_to_sh(self.env, order)
        return self._sh[order]

    def placement(self, frame):
        if frame not in self.track:
            raise KeyError(f"moving light has no placement for frame {frame!r}")
        direction, distance = self.track[frame]
        return np.asarray(direction, dtype=np.float64), float(distance)


@dataclass(frozen=True)
class TerminalSource:
    """One env map contributing to reflected-ray terminals, looked up at R^-1 w and scaled."""

    env: EnvMap
    rotation: np.ndarray
    scale: float


@dataclass(frozen=True)
class LightingContext:
    env_sh: ShCoefficients
    sources: tuple = ()
    env_scale: float = 1.0

    def __post_init__(self):
        check_positive(self.env_scale, "env_scale")
        if self.env_sh.channels != 3:
            raise ValidationError("env_sh must carry 3 channels")

    def env_lookup(self, dirs):
        """Environment radiance for reflected rays leaving the volume, env scale applied."""
        dirs = np.asarray(dirs, dtype=np.float64)
        out = np.zeros(dirs.shape[:-1] + (3,))
        for src in self.sources:
            out += src.scale * sample_env(src.env, dirs @ src.rotation)
        return self.env_scale * out

    def scaled(self, s):
        """Same lighting with all radiance multiplied by ``s``."""
        return LightingContext(
            self.env_sh * s,
            tuple(TerminalSource(src.env, src.rotation, src.scale * s) for src in self.sources),
            self.env_scale,
        )


def assemble_lighting(
    env=None,
    moving=None,
    light_direction=None,
    light_distance=None,
    head_rotation=None,
    env_scale=1.0,
    order=SPECULAR_ORDER,
    env_sh=None,
):
    """Sum the rotated static-environment SH and the re-aimed, falloff-scaled moving-light SH.

    ``env_sh`` may be passed to reuse a cached projection of ``env``.
    """
    R = np.eye(3) if head_rotation is None else check_rotation(head_rotation)
    total = ShCoefficients(order, np.zeros(((order + 1) ** 2, 3)))
    sources = []
    if env is not None:
        coeffs = env_sh if env_sh is not None else project_env_to_sh(env, order)
        if coeffs.max_order != order:
            raise ValidationError(f"cached env SH order {coeffs.max_order} != requested order {order}")
        total = total + rotate_env_coeffs(coeffs, R)
        sources.append(TerminalSource(env, R, 1.0))
    if moving is not None:
        if light_direction is None or light_distance is None:
            raise ValidationError("moving light needs a direction and distance")
        d = check_unit_vectors(light_direction, "light_direction")
        cap = moving.sh(order)
        total = total + point_light_sh(d, cap, moving.ref_distance, light_distance, moving.captured_direction)
        aim = minimal_rotation(np.asarray(moving.captured_direction, dtype=np.float64), d)
        sources.append(TerminalSource(moving.env, aim, (moving.ref_distance / light_distance) ** 2))
    return LightingContext(total, tuple(sources), float(env_scale))


def black_lighting(order=SPECULAR_ORDER):
    return LightingContext(ShCoefficients(order, np.zeros(((order + 1) ** 2, 3))))
