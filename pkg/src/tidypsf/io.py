"""File formats: TPSF mask sequences, Portable FloatMap images, 16-bit PNG previews."""
from __future__ import annotations

import os
import struct

import numpy as np

TPSF_MAGIC = b"TPSF"
TPSF_VERSION = 1


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# TPSF mask sequences

def write_tpsf(path, heights, dwell_weights):
    """Write a phase-mask sequence.

    Layout (little-endian): ``b"TPSF"``, u32 version, u32 k, u32 N,
    k*N*N float64 heights (row-major), k float64 dwell weights.
    """
    heights = np.asarray(heights, dtype=np.float64)
    weights = np.asarray(dwell_weights, dtype=np.float64)
    if heights.ndim != 3 or heights.shape[1] != heights.shape[2]:
        raise FormatError(f"heights must have shape (k, N, N), got {heights.shape}")
    k, n, _ = heights.shape
    if weights.shape != (k,):
        raise FormatError(f"expected {k} dwell weights, got shape {weights.shape}")
    with open(path, "wb") as f:
        f.write(TPSF_MAGIC)
        f.write(struct.pack("<III", TPSF_VERSION, k, n))
        f.write(np.ascontiguousarray(heights).astype("<f8").tobytes())
        f.write(weights.astype("<f8").tobytes())


def read_tpsf(path):
    """Read a TPSF file. Returns ``(heights, dwell_weights)``."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != TPSF_MAGIC:
        raise FormatError(f"{path}: not a TPSF file")
    version, k, n = struct.unpack("<III", data[4:16])
    if version != TPSF_VERSION:
        raise FormatError(f"{path}: unsupported TPSF version {version}")
    expected = 16 + 8 * (k * n * n + k)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=16)
    heights = body[: k * n * n].reshape(k, n, n).astype(np.float64)
    weights = body[k * n * n:].astype(np.float64)
    return heights, weights


# ---------------------------------------------------------------------------
# PFM

def write_pfm(path, image):
    """Write a float image as little-endian PFM (scale -1.0).

    2-D arrays and (H, W, 1) arrays are written as greyscale ``Pf``,
    (H, W, 3) as colour ``PF``. Values are stored as float32.
    """
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise FormatError(f"PFM supports 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    # PFM stores rows bottom-to-top
    payload = np.ascontiguousarray(np.flipud(img)).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(payload)


def read_pfm(path):
    """Read a PFM file into a float32 array of shape (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise FormatError(f"{path}: not a PFM file (header {tag!r})")
        dims = f.readline().split()
        # some writers put width and height on separate lines
        while len(dims) < 2:
            dims += f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        data = np.frombuffer(f.read(4 * count), dtype=dtype)
    if data.size != count:
        raise FormatError(f"{path}: truncated PFM payload")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG

def srgb_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def write_png16(path, image):
    """Write a linear 16-bit PNG preview, scaling the maximum to 65535."""
    import cv2

    img = np.asarray(image, dtype=np.float64)
    peak = img.max() if img.size else 0.0
    scaled = img / peak if peak > 0 else np.zeros_like(img)
    out = np.round(np.clip(scaled, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if out.ndim == 3 and out.shape[2] == 3:
        out = out[:, :, ::-1]  # cv2 expects BGR
    if not cv2.imwrite(os.fspath(path), out):
        raise OSError(f"could not write {path}")


def read_png(path, linearize=True):
    """Read an 8- or 16-bit PNG as float64 in [0, 1], RGB channel order."""
    import cv2

    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: unreadable PNG")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        raise FormatError(f"{path}: unsupported PNG depth {raw.dtype}")
    if img.ndim == 3:
        img = img[:, :, 2::-1] if img.shape[2] >= 3 else img
    return srgb_to_linear(img) if linearize else img


def read_image(path, linearize_png=True):
    """Load a scene image from PFM (exact) or PNG (sRGB decoded to linear)."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".pfm":
        return read_pfm(path)
    if ext == ".png":
        return read_png(path, linearize=linearize_png)
    raise FormatError(f"{path}: unsupported image extension {ext!r}")
