"""Patch-grid vector quantizer: each leaf tile becomes K = g*g codebook indices.

A tile of side ``leaf_side`` is cut into a g x g grid of ``sub_side``
sub-patches; every flattened sub-patch is replaced by the index of its
nearest codebook entry. The codebook is trained with Lloyd's algorithm.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DecodeError, ParseError, TrainingError
from .quadtree import Tile
from .sdf import SdfGrid, resample

VQCB_MAGIC = b"VQCB"


@dataclass
class Codebook:
    entries: np.ndarray = field(repr=False)  # (Q, sub_side**2)
    g: int
    sub_side: int

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or len(self.entries) < 1:
            raise ValueError("codebook needs at least one entry")
        if self.entries.shape[1] != self.sub_side ** 2:
            raise ValueError("entry dimension must equal sub_side**2")
        if not np.isfinite(self.entries).all():
            raise ValueError("codebook entries must be finite")

    @property
    def Q(self) -> int:
        return len(self.entries)

    @property
    def K(self) -> int:
        return self.g * self.g

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @property
    def leaf_side(self) -> int:
        return self.g * self.sub_side

    def __eq__(self, other):
        return (isinstance(other, Codebook) and self.g == other.g and self.sub_side == other.sub_side
                and np.array_equal(self.entries, other.entries))


def _values(tile) -> np.ndarray:
    return np.asarray(tile.values if isinstance(tile, Tile) else tile, dtype=np.float64)


def tile_patches(values: np.ndarray, g: int) -> np.ndarray:
    """(K, sub_side**2) sub-patches in row-major grid order."""
    side = values.shape[0]
    sub = side // g
    return values.reshape(g, sub, g, sub).transpose(0, 2, 1, 3).reshape(g * g, sub * sub)


def patches_to_tile(patches: np.ndarray, g: int) -> np.ndarray:
    sub = int(round(np.sqrt(patches.shape[1])))
    return patches.reshape(g, g, sub, sub).transpose(0, 2, 1, 3).reshape(g * sub, g * sub)


def pyramid_tiles(sdf: SdfGrid, leaf_side: int) -> list[np.ndarray]:
    """Every aligned region at every quadtree level, resampled to leaf_side.

    These are the tile shapes a context can contain, so the codebook is fit
    on all of them.
    """
    out = []
    size = sdf.side
    while size >= leaf_side:
        for y in range(0, sdf.side, size):
            for x in range(0, sdf.side, size):
                out.append(resample(sdf.values[y:y + size, x:x + size], leaf_side))
        size //= 2
    return out


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points ** 2).sum(1)[:, None] - 2 * points @ centers.T + (centers ** 2).sum(1)[None, :]
    return np.maximum(d, 0)


def _assign(points, centers, chunk=8192):
    labels = np.empty(len(points), dtype=np.int64)
    best = np.empty(len(points))
    for start in range(0, len(points), chunk):
        d = _sq_dists(points[start:start + chunk], centers)
        labels[start:start + chunk] = d.argmin(1)
        best[start:start + chunk] = d[np.arange(len(d)), labels[start:start + chunk]]
    return labels, best


def _kmeans_pp(points, weights, Q, rng):
    centers = np.empty((Q, points.shape[1]))
    first = rng.choice(len(points), p=weights / weights.sum())
    centers[0] = points[first]
    closest = _sq_dists(points, centers[:1])[:, 0]
    for k in range(1, Q):
        mass = weights * closest
        idx = rng.choice(len(points), p=mass / mass.sum())
        centers[k] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[k:k + 1])[:, 0])
    return centers


def fit_codebook(tiles: Iterable, Q: int = 512, g: int = 4, seed: int = 0,
                 max_iter: int = 100, tol: float = 1e-6) -> Codebook:
    """Lloyd's k-means over all flattened sub-patches with k-means++ seeding.

    Identical sub-patches are merged and weighted by multiplicity first,
    which leaves the objective unchanged. Empty clusters are reseeded to
    the point farthest from its current centroid.
    """
    arrays = [_values(t) for t in tiles]
    if not arrays:
        raise TrainingError("cannot fit a codebook on an empty tile collection")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    side = arrays[0].shape[0]
    if side % g:
        raise ValueError(f"grid {g} does not divide leaf side {side}")
    sub = side // g
    points = np.concatenate([tile_patches(a, g) for a in arrays])
    points, weights = np.unique(points, axis=0, return_counts=True)
    weights = weights.astype(np.float64)

    if len(points) <= Q:
        pad = np.repeat(points[:1], Q - len(points), axis=0)
        return Codebook(np.concatenate([points, pad]).astype(np.float32), g, sub)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, weights, Q, rng)
    for _ in range(max_iter):
        labels, dist = _assign(points, centers)
        mass = np.bincount(labels, weights=weights, minlength=Q)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points * weights[:, None])
        new = centers.copy()
        filled = mass > 0
        new[filled] = sums[filled] / mass[filled, None]
        empty = np.flatnonzero(~filled)
        if len(empty):
            far = np.argsort(-dist, kind="stable")[:len(empty)]
            new[empty] = points[far]
        shift = np.sqrt(((new - centers) ** 2).sum(1)).max()
        centers = new
        if shift < tol:
            break
    return Codebook(centers.astype(np.float32), g, sub)


def encode_tile(codebook: Codebook, tile) -> np.ndarray:
    """Nearest-entry index for each sub-patch (Euclidean, lowest index on ties)."""
    values = _values(tile)
    if values.shape != (codebook.leaf_side, codebook.leaf_side):
        raise ValueError(f"tile must be {codebook.leaf_side}x{codebook.leaf_side}, got {values.shape}")
    patches = tile_patches(values, codebook.g)
    d = ((patches[:, None, :] - codebook.entries[None, :, :]) ** 2).sum(-1)
    return d.argmin(1)


def decode_tokens(codebook: Codebook, tokens) -> Tile:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != (codebook.K,):
        raise DecodeError(f"expected {codebook.K} tokens, got shape {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= codebook.Q:
        raise DecodeError("token index outside the codebook")
    values = patches_to_tile(codebook.entries[tokens], codebook.g)
    return Tile(np.clip(values, -1.0, 1.0), origin_level=-1)


def quantization_radius(codebook: Codebook, tiles: Iterable) -> float:
    """Largest distance from any sub-patch of `tiles` to its assigned entry."""
    r = 0.0
    for t in tiles:
        patches = tile_patches(_values(t), codebook.g)
        d = ((patches[:, None, :] - codebook.entries[None, :, :]) ** 2).sum(-1)
        r = max(r, float(np.sqrt(d.min(1).max())))
    return r


def token_histogram(codebook: Codebook, tiles: Iterable) -> np.ndarray:
    counts = np.zeros(codebook.Q, dtype=np.int64)
    for t in tiles:
        np.add.at(counts, encode_tile(codebook, t), 1)
    return counts


def perplexity(histogram) -> float:
    """exp(entropy) of the empirical token distribution (natural log)."""
    counts = np.asarray(histogram, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram has no mass")
    p = counts[counts > 0] / total
    return float(np.exp(-(p * np.log(p)).sum()))


def write_codebook(path, codebook: Codebook) -> None:
    header = VQCB_MAGIC + struct.pack("<IIII", codebook.Q, codebook.dim, codebook.g, codebook.sub_side)
    Path(path).write_bytes(header + codebook.entries.astype("<f4").tobytes())


def read_codebook(path) -> Codebook:
    data = Path(path).read_bytes()
    if data[:4] != VQCB_MAGIC:
        raise ParseError(f"{path}: bad codebook magic")
    Q, dim, g, sub = struct.unpack("<IIII", data[4:20])
    entries = np.frombuffer(data[20:20 + 4 * Q * dim], dtype="<f4").reshape(Q, dim)
    return Codebook(entries.astype(np.float64), g, sub)
