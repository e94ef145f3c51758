"""File formats: PFM disparity maps, 8/16-bit PNG, and the dataset layout.

Disparity is persisted losslessly as little-endian PFM and, for interop,
as 16-bit PNG with ``value = round(disparity * 256)`` where 0 marks an
invalid pixel.  Datasets live under
``<root>/<split>/<sample_id>/{left.png,right.png,disp.pfm,mask.png,spec.txt}``
with ``right.png`` holding the pristine right view; the degradation recorded
in ``spec.txt`` (or an override) is applied on load.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .config import read_kv_file, write_kv_file
from .data import DegradationSpec, StereoSample, degrade_right
from .errors import FormatError


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path, data: np.ndarray):
    """Write a 2D (``Pf``) or 3-channel (``PF``) float32 PFM, little-endian."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise FormatError(f"PFM supports 1 or 3 channels, got shape {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale: little-endian
        fh.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file; returns float32, ``(H, W)`` or ``(H, W, 3)``."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"Pf":
            channels = 1
        elif header == b"PF":
            channels = 3
        else:
            raise FormatError(f"{path}: bad PFM header {header!r}")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: bad PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(fh.read(4 * h * w * channels), dtype=dtype)
        if raw.size != h * w * channels:
            raise FormatError(f"{path}: truncated PFM payload")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(raw.reshape(shape)).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def write_image(path, img: np.ndarray):
    """Write a float image in [0, 1] as 8-bit PNG (1 or 3 channels)."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quant).save(path)


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG as float in [0, 1], shape ``(H, W, c)``."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def write_disparity_png16(path, disp: np.ndarray, mask: np.ndarray | None = None):
    """16-bit PNG disparity, ``value = round(d * 256)``; 0 marks invalid."""
    vals = np.round(np.asarray(disp) * 256.0)
    vals = np.clip(vals, 0, 65535).astype(np.uint16)
    if mask is not None:
        vals = np.where(mask, vals, 0).astype(np.uint16)
    Image.fromarray(vals).save(path)  # uint16 maps to mode I;16


def read_disparity_png16(path) -> tuple[np.ndarray, np.ndarray]:
    """Read 16-bit PNG disparity; returns ``(disparity, valid_mask)``."""
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I"):
            raise FormatError(f"{path}: expected 16-bit PNG, got mode {im.mode}")
        vals = np.asarray(im, dtype=np.int64)
    return vals / 256.0, vals > 0


def write_disparity(path, disp: np.ndarray, mask: np.ndarray | None = None):
    path = Path(path)
    if path.suffix == ".pfm":
        write_pfm(path, disp)
    elif path.suffix == ".png":
        write_disparity_png16(path, disp, mask)
    else:
        raise FormatError(f"unsupported disparity format: {path.suffix}")


def read_disparity(path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    if path.suffix == ".pfm":
        return read_pfm(path), None
    if path.suffix == ".png":
        return read_disparity_png16(path)
    raise FormatError(f"unsupported disparity format: {path.suffix}")


# ---------------------------------------------------------------------------
# Dataset layout
# ---------------------------------------------------------------------------

def save_sample(root, split: str, sample_id: str, sample: StereoSample):
    """Persist a sample under the dataset directory layout."""
    d = Path(root) / split / sample_id
    d.mkdir(parents=True, exist_ok=True)
    if sample.right_pristine is None:
        raise FormatError("saving requires the pristine right view")
    write_image(d / "left.png", sample.left)
    write_image(d / "right.png", sample.right_pristine)
    write_pfm(d / "disp.pfm", sample.gt_disparity)
    write_image(d / "mask.png", sample.valid_mask.astype(np.float64))
    write_kv_file(d / "spec.txt", {
        "downsample_factor": sample.degradation.downsample_factor,
        "grayscale": sample.degradation.grayscale,
        "d_max": sample.d_max,
    })


def load_sample(root, split: str, sample_id: str,
                override: DegradationSpec | None = None) -> StereoSample:
    """Load a sample, applying the stored (or overriding) degradation."""
    d = Path(root) / split / sample_id
    if not d.is_dir():
        raise FileNotFoundError(f"no sample directory {d}")
    raw = read_kv_file(d / "spec.txt")
    spec = override if override is not None else DegradationSpec(
        downsample_factor=int(raw["downsample_factor"]),
        grayscale=raw["grayscale"].lower() == "true",
    )
    left = read_image(d / "left.png")
    right_pristine = read_image(d / "right.png")
    gt = read_pfm(d / "disp.pfm").astype(np.float64)
    mask = read_image(d / "mask.png")[:, :, 0] > 0.5
    return StereoSample(
        left=left,
        right=degrade_right(right_pristine, spec),
        gt_disparity=gt,
        valid_mask=mask,
        degradation=spec,
        d_max=int(raw["d_max"]),
        right_pristine=right_pristine,
    )


def list_samples(root, split: str) -> list[str]:
    d = Path(root) / split
    if not d.is_dir():
        raise FileNotFoundError(f"no split directory {d}")
    return sorted(p.name for p in d.iterdir() if p.is_dir())


def dump_volume_pfm(volume, out_dir):
    """Debug helper: write a ``(D, H, W)`` cost volume as one PFM per slice."""
    vol = np.asarray(volume.detach().cpu() if hasattr(volume, "detach") else volume)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, plane in enumerate(vol):
        write_pfm(out / f"slice_{i:03d}.pfm", plane)
