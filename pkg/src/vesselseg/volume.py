"""Volume representation, file I/O, resampling, normalization, cropping and
patch geometry.

Axis convention: arrays are (D, H, W) row-major with W fastest; spacing is
(sx, sy, sz) in millimeters with x paired to W, y to H, z to D.  The voxel
(d, h, w) is centered at physical (w*sx, h*sy, d*sz).

Formats: a NRRD subset (dimension 3, type float/uint8, raw little-endian,
diagonal space directions) for interchange, and a raw-f32 + JSON-sidecar
fixture format.  All operations are pure functions; results are bitwise
independent of thread count.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, FormatError, ShapeError

TARGET_SPACING_MM = 0.227


@dataclass(frozen=True)
class Spacing:
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0 and self.sz > 0):
            raise ConfigError(f"spacing components must be > 0, got {self}")

    @property
    def isotropic(self):
        m = max(self.sx, self.sy, self.sz)
        return (abs(self.sx - self.sy) <= 1e-9 * m
                and abs(self.sy - self.sz) <= 1e-9 * m)

    def as_tuple(self):
        return (self.sx, self.sy, self.sz)

    @classmethod
    def iso(cls, s):
        return cls(s, s, s)


def _check_grid(data, ndim_name):
    if data.ndim != 3:
        raise ShapeError(f"{ndim_name} data must be 3-axis (D,H,W), got {data.ndim}")


@dataclass
class Volume:
    data: np.ndarray  # (D, H, W) float
    spacing: Spacing

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _check_grid(self.data, "Volume")
        if not np.isfinite(self.data).all():
            raise DegenerateInputError("Volume contains non-finite values")

    @property
    def dims(self):
        return self.data.shape


@dataclass
class BinaryMask:
    data: np.ndarray  # (D, H, W) bool
    spacing: Spacing

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(bool)
        _check_grid(self.data, "BinaryMask")

    @property
    def dims(self):
        return self.data.shape

    @property
    def foreground_count(self):
        return int(self.data.sum())


@dataclass(frozen=True)
class BBox:
    """Half-open voxel box [lo, hi) per axis in (D, H, W) order."""
    lo: tuple
    hi: tuple

    def slices(self):
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))


@dataclass
class PatchGrid:
    patch_size: tuple
    stride: tuple
    origins: list          # (od, oh, ow) corners in the padded grid
    padded_dims: tuple
    pad_before: tuple

    def __len__(self):
        return len(self.origins)


# ------------------------------------------------------------------ file I/O

_NRRD_MAGIC = "NRRD"
_NRRD_TYPES = {"float": np.dtype("<f4"), "uint8": np.dtype("u1")}


def _parse_directions(value):
    parts = [p for p in value.replace("(", " ").replace(")", " ").replace(",", " ").split()]
    if len(parts) != 9:
        raise FormatError(f"space directions: expected 3 vectors, got {value!r}")
    m = np.array([float(p) for p in parts]).reshape(3, 3)
    if np.any(m - np.diag(np.diag(m)) != 0):
        raise FormatError(f"space directions: only diagonal supported, got {value!r}")
    d = np.diag(m)
    if np.any(d <= 0):
        raise FormatError(f"space directions: nonpositive spacing {value!r}")
    return d


def _read_nrrd(path):
    with open(path, "rb") as f:
        magic = f.readline().decode("ascii", "replace").strip()
        if not magic.startswith(_NRRD_MAGIC):
            raise FormatError(f"magic: not a NRRD file ({magic!r})")
        fields = {}
        while True:
            line = f.readline()
            if line in (b"\n", b"\r\n"):
                break
            if not line:
                raise FormatError("header: missing blank line before payload")
            text = line.decode("ascii", "replace").rstrip("\r\n")
            if text.startswith("#"):
                continue
            if ":" not in text:
                raise FormatError(f"header: malformed line {text!r}")
            key, value = text.split(":", 1)
            fields[key.strip()] = value.strip()
        payload = f.read()

    if fields.get("dimension") != "3":
        raise FormatError(f"dimension: only 3 supported, got {fields.get('dimension')!r}")
    tname = fields.get("type")
    if tname not in _NRRD_TYPES:
        raise FormatError(f"type: only float/uint8 supported, got {tname!r}")
    if fields.get("encoding") != "raw":
        raise FormatError(f"encoding: only raw supported, got {fields.get('encoding')!r}")
    endian = fields.get("endian", "little")
    if endian != "little":
        raise FormatError(f"endian: only little supported, got {endian!r}")
    if "data file" in fields or "datafile" in fields:
        raise FormatError("data file: detached payloads unsupported")
    try:
        sizes = [int(s) for s in fields.get("sizes", "").split()]
    except ValueError:
        raise FormatError(f"sizes: malformed {fields.get('sizes')!r}") from None
    if len(sizes) != 3 or any(s < 1 for s in sizes):
        raise FormatError(f"sizes: need 3 positive sizes, got {fields.get('sizes')!r}")
    if "space directions" in fields:
        diag = _parse_directions(fields["space directions"])
        spacing = Spacing(diag[0], diag[1], diag[2])
    else:
        spacing = Spacing.iso(1.0)
    w, h, d = sizes  # NRRD lists fastest axis first
    dtype = _NRRD_TYPES[tname]
    expected = w * h * d * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"payload: expected {expected} bytes for sizes {sizes}, got {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).reshape(d, h, w)
    return data, spacing


def _write_nrrd(path, data, spacing, tname):
    d, h, w = data.shape
    header = (
        "NRRD0004\n"
        f"type: {tname}\n"
        "dimension: 3\n"
        f"sizes: {w} {h} {d}\n"
        f"space directions: ({spacing.sx},0,0) (0,{spacing.sy},0) (0,0,{spacing.sz})\n"
        "endian: little\n"
        "encoding: raw\n"
        "\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())


def _fixture_paths(path):
    base = str(path)
    if base.endswith(".f32"):
        base = base[:-4]
    return base + ".f32", base + ".json"


def _read_fixture(path):
    f32_path, json_path = _fixture_paths(path)
    try:
        with open(json_path) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"sidecar: malformed JSON ({e})") from None
    if "dims" not in meta:
        raise FormatError("dims: missing from sidecar")
    if "spacing_mm" not in meta:
        raise FormatError("spacing_mm: missing from sidecar")
    dims = tuple(int(x) for x in meta["dims"])
    sp = [float(x) for x in meta["spacing_mm"]]
    if len(dims) != 3 or any(x < 1 for x in dims):
        raise FormatError(f"dims: need 3 positive values, got {meta['dims']}")
    if len(sp) != 3:
        raise FormatError(f"spacing_mm: need 3 values, got {meta['spacing_mm']}")
    raw = np.fromfile(f32_path, dtype="<f4")
    n = dims[0] * dims[1] * dims[2]
    if raw.size != n:
        raise FormatError(
            f"payload: expected {n} float32 values for dims {list(dims)}, got {raw.size}")
    return raw.reshape(dims), Spacing(*sp)


def _write_fixture(path, data, spacing):
    f32_path, json_path = _fixture_paths(path)
    np.ascontiguousarray(data, dtype="<f4").tofile(f32_path)
    with open(json_path, "w") as f:
        json.dump({"dims": list(data.shape),
                   "spacing_mm": list(spacing.as_tuple())}, f)


def load_volume(path):
    """Read a scalar volume from .nrrd (type float) or the .f32 fixture."""
    path = str(path)
    if path.endswith(".nrrd"):
        data, spacing = _read_nrrd(path)
        return Volume(np.asarray(data, dtype=np.float32).copy(), spacing)
    if path.endswith((".f32", ".json")):
        data, spacing = _read_fixture(path)
        return Volume(data, spacing)
    raise FormatError(f"path: unsupported volume format {os.path.basename(path)!r}")


def save_volume(path, volume):
    path = str(path)
    if path.endswith(".nrrd"):
        _write_nrrd(path, np.asarray(volume.data, dtype="<f4"), volume.spacing, "float")
    elif path.endswith(".f32"):
        _write_fixture(path, volume.data, volume.spacing)
    else:
        raise FormatError(f"path: unsupported volume format {os.path.basename(path)!r}")


def load_mask(path):
    """Read a binary mask from .nrrd (uint8) or a 0/1-valued .f32 fixture."""
    path = str(path)
    if path.endswith(".nrrd"):
        data, spacing = _read_nrrd(path)
        return BinaryMask(data != 0, spacing)
    if path.endswith((".f32", ".json")):
        data, spacing = _read_fixture(path)
        return BinaryMask(data > 0.5, spacing)
    raise FormatError(f"path: unsupported mask format {os.path.basename(path)!r}")


def save_mask(path, mask):
    path = str(path)
    if path.endswith(".nrrd"):
        _write_nrrd(path, mask.data.astype("u1"), mask.spacing, "uint8")
    elif path.endswith(".f32"):
        _write_fixture(path, mask.data.astype("<f4"), mask.spacing)
    else:
        raise FormatError(f"path: unsupported mask format {os.path.basename(path)!r}")


# --------------------------------------------------------------- processing

def resample_trilinear(volume, target):
    """Resample to the target spacing; output dims are
    round(dims * spacing / target) with a 1-voxel floor.  Sample positions
    are clamped to the source grid (border policy: clamp to edge)."""
    src = volume.data
    sp = volume.spacing
    pairs = ((sp.sz, target.sz), (sp.sy, target.sy), (sp.sx, target.sx))
    out_dims = tuple(max(1, int(round(n * s / t)))
                     for n, (s, t) in zip(src.shape, pairs))
    if out_dims == src.shape and all(abs(s - t) < 1e-12 for s, t in pairs):
        return Volume(src.copy(), target)
    coords = []
    for n_out, n_in, (s, t) in zip(out_dims, src.shape, pairs):
        c = np.arange(n_out, dtype=np.float64) * (t / s)
        coords.append(np.clip(c, 0.0, n_in - 1))
    cd, ch, cw = np.meshgrid(*coords, indexing="ij", sparse=True)

    def lerp_axis(c, n):
        i0 = np.floor(c).astype(np.intp)
        i0 = np.minimum(i0, n - 1)
        i1 = np.minimum(i0 + 1, n - 1)
        return i0, i1, (c - i0)

    d0, d1, fd = lerp_axis(cd, src.shape[0])
    h0, h1, fh = lerp_axis(ch, src.shape[1])
    w0, w1, fw = lerp_axis(cw, src.shape[2])
    s64 = src.astype(np.float64, copy=False)
    out = np.zeros(out_dims, dtype=np.float64)
    for di, dwt in ((d0, 1 - fd), (d1, fd)):
        for hi, hwt in ((h0, 1 - fh), (h1, fh)):
            for wi, wwt in ((w0, 1 - fw), (w1, fw)):
                out += dwt * hwt * wwt * s64[di, hi, wi]
    return Volume(out.astype(src.dtype, copy=False), target)


def zscore_normalize(volume):
    """Standardize to mean 0 / population std 1."""
    data = volume.data
    if data.size < 2:
        raise DegenerateInputError("zscore_normalize needs >= 2 voxels")
    mu = float(data.mean(dtype=np.float64))
    sd = float(data.std(dtype=np.float64))
    if sd == 0.0:
        raise DegenerateInputError("zscore_normalize: zero intensity variance")
    return Volume(((data - mu) / sd).astype(data.dtype, copy=False), volume.spacing)


def crop_to_roi(volume, mask, margin=8):
    """Tight bounding box of mask foreground, dilated by margin voxels and
    clamped to the grid; returns (cropped volume, BBox)."""
    if volume.dims != mask.dims:
        raise ShapeError(f"crop_to_roi: grids differ {volume.dims} vs {mask.dims}")
    if margin < 0:
        raise ConfigError("margin must be >= 0")
    idx = np.nonzero(mask.data)
    if idx[0].size == 0:
        raise DegenerateInputError("crop_to_roi: empty mask")
    lo = tuple(max(0, int(ax.min()) - margin) for ax in idx)
    hi = tuple(min(n, int(ax.max()) + 1 + margin)
               for ax, n in zip(idx, volume.dims))
    box = BBox(lo, hi)
    return Volume(volume.data[box.slices()].copy(), volume.spacing), box


def plan_patches(dims, patch, overlap_fraction=0.5):
    """Sliding-window origins: stride = round(p*(1-overlap)); the last
    origin per axis is clamped so the final patch ends exactly at the
    (possibly padded) boundary.  Dims smaller than the patch are padded
    symmetrically (zero padding is the caller's job; the plan records it)."""
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigError(f"overlap_fraction must be in [0,1), got {overlap_fraction}")
    if patch < 1:
        raise ConfigError("patch size must be >= 1")
    if overlap_fraction == 0.5 and patch % 2 != 0:
        raise ConfigError("patch size must be even at 50% overlap")
    stride = max(1, int(round(patch * (1.0 - overlap_fraction))))
    padded = tuple(max(int(n), patch) for n in dims)
    pad_before = tuple((pn - n) // 2 for pn, n in zip(padded, dims))
    per_axis = []
    for n in padded:
        last = n - patch
        axis = list(range(0, last + 1, stride))
        if axis[-1] != last:
            axis.append(last)
        per_axis.append(axis)
    origins = [(od, oh, ow)
               for od in per_axis[0] for oh in per_axis[1] for ow in per_axis[2]]
    return PatchGrid(patch_size=(patch,) * 3, stride=(stride,) * 3,
                     origins=origins, padded_dims=padded, pad_before=pad_before)
