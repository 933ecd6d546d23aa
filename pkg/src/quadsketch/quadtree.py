"""Quadtrees over SDF canvases and fixed-length multi-scale leaf contexts.

The tree only stores regions; tile content is sampled from the (mutable)
canvas on demand, so writing a leaf never touches the topology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .sdf import SdfGrid, resample
from .sketch_io import _is_pow2

NEUTRAL = 1.0

Region = tuple[int, int, int]  # (x, y, side) in canvas pixels


@dataclass(frozen=True)
class LeafRef:
    index: int  # 1-based position in canonical order
    depth: int
    region: Region


@dataclass
class Tile:
    values: np.ndarray = field(repr=False)
    origin_level: int
    is_dummy: bool = False

    @property
    def side(self) -> int:
        return self.values.shape[0]


@dataclass
class ContextSequence:
    """Tiles ordered [level D 3x3, level D-1 3x3, ..., level 1 3x3, root]."""

    tiles: list[Tile]
    leaf: LeafRef
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self):
        return len(self.tiles)

    def block(self, level: int, max_depth: int) -> list[Tile]:
        start = (max_depth - level) * 9
        return self.tiles[start:start + 9]

    def center(self, level: int, max_depth: int) -> Tile:
        """Centre slot of the block at `level`; level 0 is the root view."""
        if level == 0:
            return self.tiles[-1]
        return self.block(level, max_depth)[4]

    def own_center(self, max_depth: int) -> Tile:
        return self.center(self.leaf.depth, max_depth)

    def stack(self) -> np.ndarray:
        return np.stack([t.values for t in self.tiles])

    def dummy_mask(self) -> np.ndarray:
        return np.array([t.is_dummy for t in self.tiles])


@dataclass
class _Node:
    depth: int
    region: Region
    children: list["_Node"] | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


def _child_regions(region: Region) -> list[Region]:
    x, y, s = region
    h = s // 2
    return [(x, y, h), (x + h, y, h), (x, y + h, h), (x + h, y + h, h)]  # TL, TR, BL, BR


def region_slice(region: Region) -> tuple[slice, slice]:
    x, y, s = region
    return slice(y, y + s), slice(x, x + s)


def below_threshold(threshold: float) -> Callable[[np.ndarray], bool]:
    """Significance predicate: the region holds a value at or below `threshold`."""

    def significant(values: np.ndarray) -> bool:
        return bool(values.min() <= threshold)

    return significant


class QuadTree:
    def __init__(self, canvas: SdfGrid, leaf_side: int, root: _Node):
        self.canvas = canvas
        self.leaf_side = int(leaf_side)
        self.root = root
        self.max_depth = int(round(math.log2(canvas.side // self.leaf_side)))
        self.leaves = [LeafRef(i + 1, n.depth, n.region)
                       for i, n in enumerate(self._iter_leaves(root))]
        self._leaf_set = set(self.leaves)

    @staticmethod
    def _iter_leaves(node: _Node) -> Iterator[_Node]:
        if node.is_leaf:
            yield node
        else:
            for child in node.children:
                yield from QuadTree._iter_leaves(child)

    @property
    def side(self) -> int:
        return self.canvas.side

    def __len__(self):
        return len(self.leaves)

    def __eq__(self, other):
        return (isinstance(other, QuadTree)
                and self.to_bitstring() == other.to_bitstring()
                and np.array_equal(self.canvas.values, other.canvas.values))

    def leaf_regions(self) -> list[Region]:
        return [leaf.region for leaf in self.leaves]

    def sample(self, region: Region) -> np.ndarray:
        """Canvas content of `region` resampled to leaf_side."""
        return resample(self.canvas.values[region_slice(region)], self.leaf_side)

    def leaf_tile(self, leaf: LeafRef) -> Tile:
        return Tile(self.sample(leaf.region), leaf.depth)

    def to_bitstring(self) -> str:
        """``"<canvas side>:<leaf side>:<preorder bits>"`` with 1 = split, 0 = leaf.

        Every node gets a bit, including minimum-size nodes (always 0).
        """
        bits = []

        def walk(node):
            bits.append("0" if node.is_leaf else "1")
            for child in node.children or ():
                walk(child)

        walk(self.root)
        return f"{self.side}:{self.leaf_side}:{''.join(bits)}"

    @classmethod
    def from_bitstring(cls, text: str, canvas: SdfGrid) -> "QuadTree":
        side, leaf_side, bits = text.split(":")
        side, leaf_side = int(side), int(leaf_side)
        if canvas.side != side:
            raise ValueError("canvas side does not match the serialized tree")
        it = iter(bits)

        def build(depth, region):
            node = _Node(depth, region)
            if next(it) == "1":
                if region[2] <= leaf_side:
                    raise ValueError("bitstring splits below leaf side")
                node.children = [build(depth + 1, r) for r in _child_regions(region)]
            return node

        root = build(0, (0, 0, side))
        if next(it, None) is not None:
            raise ValueError("trailing bits in quadtree bitstring")
        return cls(canvas.copy(), leaf_side, root)


def build_quadtree(canvas: SdfGrid, leaf_side: int,
                   significance: Callable[[np.ndarray], bool] | None = None) -> QuadTree:
    """Split a node iff it is significant and larger than leaf_side.

    The tree works on its own copy of the canvas. The default predicate
    splits wherever a stroke pixel (value <= clip threshold) is present.
    """
    side = canvas.side
    if canvas.width != canvas.height or not _is_pow2(side) or not _is_pow2(leaf_side):
        raise ValueError("canvas and leaf side must be powers of two")
    if leaf_side > side:
        raise ValueError(f"leaf_side {leaf_side} exceeds canvas side {side}")
    if significance is None:
        significance = below_threshold(canvas.clip_threshold)
    values = canvas.values

    def build(depth, region):
        node = _Node(depth, region)
        if region[2] > leaf_side and significance(values[region_slice(region)]):
            node.children = [build(depth + 1, r) for r in _child_regions(region)]
        return node

    return QuadTree(canvas.copy(), leaf_side, build(0, (0, 0, side)))


def copy_structure(src: QuadTree, target_canvas: SdfGrid) -> QuadTree:
    if target_canvas.side != src.side or target_canvas.width != src.canvas.width:
        raise ValueError("target canvas size differs from the source tree")

    def clone(node):
        return _Node(node.depth, node.region,
                     None if node.is_leaf else [clone(c) for c in node.children])

    return QuadTree(target_canvas.copy(), src.leaf_side, clone(src.root))


def replace_leaf(tree: QuadTree, leaf: LeafRef, content) -> None:
    """Overwrite the leaf's canvas region with `content` (bilinear-resized to the region)."""
    if leaf not in tree._leaf_set:
        raise ValueError(f"{leaf} does not belong to this tree")
    values = content.values if isinstance(content, Tile) else np.asarray(content, dtype=np.float64)
    if values.shape != (tree.leaf_side, tree.leaf_side):
        raise ValueError(f"content must be {tree.leaf_side}x{tree.leaf_side}")
    tree.canvas.values[region_slice(leaf.region)] = np.clip(resample(values, leaf.region[2]), -1, 1)


def extract_context(tree: QuadTree, leaf: LeafRef, neutral: float = NEUTRAL) -> ContextSequence:
    """Multi-scale context of a leaf: one 3x3 block per level plus the root view.

    Blocks for levels deeper than the leaf, and neighbours falling outside
    the canvas, are constant `neutral` dummies.
    """
    D, ls, side = tree.max_depth, tree.leaf_side, tree.side
    x, y, _ = leaf.region
    dummy = np.full((ls, ls), float(neutral))
    tiles: list[Tile] = []
    for level in range(D, 0, -1):
        if level > leaf.depth:
            tiles.extend(Tile(dummy.copy(), level, True) for _ in range(9))
            continue
        s = side >> level
        ax, ay = (x // s) * s, (y // s) * s
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                nx, ny = ax + dx * s, ay + dy * s
                if 0 <= nx < side and 0 <= ny < side:
                    tiles.append(Tile(tree.sample((nx, ny, s)), level))
                else:
                    tiles.append(Tile(dummy.copy(), level, True))
    tiles.append(Tile(tree.sample((0, 0, side)), 0))
    return ContextSequence(tiles, leaf)
