"""PFM / PPM readers and writers plus sRGB transfer functions."""

import numpy as np

from ._validation import ValidationError

SRGB_KNEE = 0.0031308
SRGB_SLOPE_AT_ONE = 1.055 / 2.4


def srgb_encode(x):
    """sRGB transfer with linear continuations outside [0, 1].

    Below the knee (including negatives) the 12.92 linear segment is used;
    above 1 the curve continues with its slope at 1, 1.055/2.4.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x <= SRGB_KNEE, 12.92 * x, 1.055 * np.power(np.clip(x, SRGB_KNEE, 1.0), 1.0 / 2.4) - 0.055)
    return np.where(x > 1.0, 1.0 + SRGB_SLOPE_AT_ONE * (x - 1.0), out)


def srgb_decode(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y <= 0.04045, y / 12.92, np.power((np.clip(y, 0.04045, None) + 0.055) / 1.055, 2.4))


def to_ldr(image):
    """Linear HDR -> 8-bit sRGB, clamped."""
    enc = srgb_encode(np.clip(image, 0.0, 1.0))
    return np.round(enc * 255.0).astype(np.uint8)


def write_pfm(path, image):
    """Colour PFM, little-endian (negative scale), rows stored bottom-up."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"PFM writer expects (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def _read_tokens(fh, count):
    tokens = []
    while len(tokens) < count:
        line = fh.readline()
        if not line:
            raise ValidationError("truncated image header")
        line = line.split(b"#")[0]
        tokens.extend(line.split())
    return tokens


def read_pfm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise ValidationError(f"{path}: not a PFM file")
        channels = 3 if magic == b"PF" else 1
        w, h = (int(t) for t in _read_tokens(fh, 2))
        scale = float(_read_tokens(fh, 1)[0])
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * channels * 4), dtype=dtype)
    if data.size != w * h * channels:
        raise ValidationError(f"{path}: truncated pixel data")
    img = data.reshape(h, w, channels)[::-1].astype(np.float64)
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return img * abs(scale) if abs(scale) != 1.0 else img


def write_ppm(path, image8):
    img = np.asarray(image8, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path):
    """Binary P6 reader; returns uint8 (H, W, 3)."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P6":
            raise ValidationError(f"{path}: only binary P6 PPM is supported")
        w, h, maxval = (int(t) for t in _read_tokens(fh, 3))
        if maxval != 255:
            raise ValidationError(f"{path}: only 8-bit PPM is supported")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValidationError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3)
