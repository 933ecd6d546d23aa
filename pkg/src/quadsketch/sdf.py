"""Truncated signed distance fields over square rasters."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ParseError
from .sketch_io import Raster, _is_pow2

SDF_MAGIC = b"SDFG"


@dataclass
class SdfGrid:
    """Normalized truncated signed distances in [-1, 1].

    Values are <= 0 on stroke pixels and > 0 elsewhere. ``empty`` is set
    when the source raster had no stroke pixels at all.
    """

    values: np.ndarray = field(repr=False)
    tau_max: float
    empty: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("SDF values must be 2-D")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def side(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "SdfGrid":
        return SdfGrid(self.values.copy(), self.tau_max, self.empty)

    @property
    def clip_threshold(self) -> float:
        return default_clip_threshold(self.tau_max)


def default_tau(side: int) -> float:
    return side / 8


def default_clip_threshold(tau_max: float) -> float:
    return 0.5 / tau_max


def compute_sdf(raster: Raster, tau_max: float | None = None) -> SdfGrid:
    """Exact Euclidean SDF of a binary raster.

    Background pixels get the distance to the nearest stroke pixel. Stroke
    pixels get ``-(d - 1)`` where ``d`` is the distance to the nearest
    background pixel, so pixels on the stroke rim (no interior) are 0.
    """
    cells = np.asarray(raster.cells, dtype=bool)
    if tau_max is None:
        tau_max = default_tau(cells.shape[0])
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    if not cells.any():
        return SdfGrid(np.ones(cells.shape), tau_max, empty=True)
    outside = ndimage.distance_transform_edt(~cells)
    if cells.all():
        inside = np.full(cells.shape, np.inf)
    else:
        inside = ndimage.distance_transform_edt(cells)
    signed = np.where(cells, 1.0 - inside, outside)
    signed = np.clip(signed, -tau_max, tau_max) / tau_max
    return SdfGrid(signed, tau_max)


def clip_sdf(sdf: SdfGrid, threshold: float | None = None) -> Raster:
    if threshold is None:
        threshold = sdf.clip_threshold
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return Raster((sdf.values <= threshold).astype(np.uint8))


def _bilinear_axis(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation matrix with half-pixel centres and edge clamping."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resample(values: np.ndarray, new_side: int) -> np.ndarray:
    """Area-average when shrinking, bilinear when growing; identity at equal size."""
    side = values.shape[0]
    if new_side == side:
        return values.copy()
    if new_side < side:
        f = side // new_side
        return values.reshape(new_side, f, new_side, f).mean(axis=(1, 3))
    m = _bilinear_axis(side, new_side)
    return m @ values @ m.T


def resize_sdf(sdf: SdfGrid, new_side: int) -> SdfGrid:
    if new_side < 2:
        raise ValueError("new_side must be >= 2")
    if not _is_pow2(new_side) or not _is_pow2(sdf.side):
        raise ValueError("sides must be powers of two")
    values = np.clip(resample(sdf.values, new_side), -1.0, 1.0)
    return SdfGrid(values, sdf.tau_max, sdf.empty)


def write_sdf(path, sdf: SdfGrid) -> None:
    """SDFG file: magic, u32 width, u32 height, f32 tau_max, then f32 values row-major."""
    header = SDF_MAGIC + struct.pack("<IIf", sdf.width, sdf.height, sdf.tau_max)
    Path(path).write_bytes(header + sdf.values.astype("<f4").tobytes())


def read_sdf(path) -> SdfGrid:
    data = Path(path).read_bytes()
    if data[:4] != SDF_MAGIC:
        raise ParseError(f"{path}: bad SDF magic")
    w, h, tau = struct.unpack("<IIf", data[4:16])
    values = np.frombuffer(data[16:16 + 4 * w * h], dtype="<f4").reshape(h, w)
    return SdfGrid(values.astype(np.float64), float(tau))
