"""Image and container file formats: PNG (8-bit), PFM (32-bit float), the
plane-bundle directory container, and OBJ import/export for shapes.

The plane bundle is a directory with a manifest.json plus one file per named array.
Image-like float planes (2-D, or 3-D with up to 4 channels) are stored as PFM;
anything needing full float64 precision is stored as .npy. The manifest records file,
dtype, and shape per plane, plus caller metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .errors import BadMagicError, FileFormatError, SizingError, TruncatedFileError

# --- PNG -------------------------------------------------------------------------


def write_png(path, data: np.ndarray) -> None:
    """Write float data in [0, 1] as 8-bit PNG (grayscale or RGB)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise SizingError("PNG data must be (h, w), (h, w, 1) or (h, w, 3)")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    PilImage.fromarray(quantized).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Read a PNG into float64 in [0, 1], always (h, w, c)."""
    with PilImage.open(path) as img:
        arr = np.asarray(img.convert("RGB") if img.mode not in ("L", "RGB") else img)
    data = arr.astype(np.float64) / 255.0
    if data.ndim == 2:
        data = data[:, :, None]
    return data


def png_bytes(data: np.ndarray) -> bytes:
    """PNG encoding as bytes; deterministic for identical pixel data."""
    import io

    buf = io.BytesIO()
    arr = np.clip(np.rint(np.asarray(data, dtype=np.float64) * 255.0), 0, 255)
    PilImage.fromarray(arr.astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


# --- PFM -------------------------------------------------------------------------
# Standard PFM: "PF" (3 channels) / "Pf" (1 channel), width height, negative scale
# for little-endian, rows stored bottom-to-top as float32.


def write_pfm(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise SizingError("PFM data must be (h, w) or (h, w, 3)")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()

    def token(off):
        while off < len(buf) and buf[off : off + 1].isspace():
            off += 1
        start = off
        while off < len(buf) and not buf[off : off + 1].isspace():
            off += 1
        if start == off:
            raise TruncatedFileError("PFM header ended early")
        return buf[start:off], off

    tag, off = token(0)
    if tag not in (b"PF", b"Pf"):
        raise BadMagicError(f"not a PFM file (tag {tag!r})")
    wtok, off = token(off)
    htok, off = token(off)
    stok, off = token(off)
    try:
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as exc:
        raise FileFormatError(f"malformed PFM header: {exc}") from exc
    off += 1  # single whitespace byte after the scale line
    channels = 3 if tag == b"PF" else 1
    count = w * h * channels
    end = off + 4 * count
    if end > len(buf):
        raise TruncatedFileError("PFM payload shorter than header promises")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return np.flipud(arr).astype(np.float32)


# --- plane bundle ------------------------------------------------------------------

_BUNDLE_VERSION = 1


def _pfm_eligible(arr: np.ndarray) -> bool:
    return arr.dtype == np.float32 and (
        arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)
    )


def save_bundle(path, planes: dict, meta: dict | None = None) -> None:
    """Write named arrays plus metadata into a bundle directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"container": "plane-bundle", "version": _BUNDLE_VERSION, "planes": {}}
    for name, arr in planes.items():
        arr = np.asarray(arr)
        if _pfm_eligible(arr):
            fname = f"{name}.pfm"
            write_pfm(root / fname, arr)
        else:
            fname = f"{name}.npy"
            np.save(root / fname, arr)
        manifest["planes"][name] = {
            "file": fname,
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
        }
    manifest["meta"] = meta or {}
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_bundle(path):
    """Read a bundle directory back into (planes dict, meta dict)."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("container") != "plane-bundle":
        raise BadMagicError("manifest does not describe a plane bundle")
    if manifest.get("version") != _BUNDLE_VERSION:
        raise FileFormatError(f"unsupported bundle version {manifest.get('version')}")
    planes = {}
    for name, entry in manifest["planes"].items():
        fpath = root / entry["file"]
        if entry["file"].endswith(".pfm"):
            arr = read_pfm(fpath)
        else:
            arr = np.load(fpath)
        if list(arr.shape) != entry["shape"]:
            raise FileFormatError(
                f"plane {name}: stored shape {list(arr.shape)} != manifest {entry['shape']}"
            )
        planes[name] = arr
    return planes, manifest.get("meta", {})


# --- OBJ ---------------------------------------------------------------------------


def save_obj(path, points: np.ndarray, topology: np.ndarray, uv: np.ndarray | None = None) -> None:
    """Write a triangle mesh as Wavefront OBJ (1-indexed faces)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(topology, dtype=np.int64).reshape(-1, 3)
    lines = []
    for p in pts:
        lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    if uv is not None:
        for t in np.asarray(uv, dtype=np.float64).reshape(-1, 2):
            lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
        for t in tris + 1:
            lines.append(f"f {t[0]}/{t[0]} {t[1]}/{t[1]} {t[2]}/{t[2]}")
    else:
        for t in tris + 1:
            lines.append(f"f {t[0]} {t[1]} {t[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path):
    """Read vertex positions and triangular faces from an OBJ file."""
    points = []
    faces = []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FileFormatError(f"OBJ line {lineno}: vertex needs 3 coords")
                points.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FileFormatError(
                        f"OBJ line {lineno}: only triangular faces are supported"
                    )
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.asarray(points, dtype=np.float64), np.asarray(faces, dtype=np.int32)
