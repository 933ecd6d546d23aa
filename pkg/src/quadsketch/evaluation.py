"""Top-k metrics and the procedural shapes corpus used for desk-scale benchmarks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .sketch_io import Raster, _is_pow2, draw_polyline

SHAPES = ("circle", "square", "triangle", "cross")


@dataclass
class EvalReport:
    top1: float
    topk: dict[int, float]
    n: int
    confusion: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"top1": self.top1, "topk": {str(k): v for k, v in sorted(self.topk.items())},
                "n": self.n, "confusion": self.confusion.tolist()}


def topk_accuracy(rankings: Sequence[Sequence[int]], labels: Sequence[int],
                  k: int | Iterable[int] = (1, 3), n_classes: int | None = None) -> EvalReport:
    """Fraction of items whose label is within the first k ranked classes, for each k."""
    ks = [k] if isinstance(k, int) else list(k)
    if any(kk < 1 for kk in ks):
        raise ValueError("k must be >= 1")
    if len(rankings) == 0:
        raise ValueError("no rankings to evaluate")
    if len(rankings) != len(labels):
        raise ValueError("rankings and labels are not aligned")
    if n_classes is None:
        n_classes = 1 + max(max(labels), max(max(r) for r in rankings))
    positions = []
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for ranking, label in zip(rankings, labels):
        ranking = list(ranking)
        positions.append(ranking.index(label) if label in ranking else len(ranking))
        confusion[label, ranking[0]] += 1
    positions = np.array(positions)
    n = len(positions)
    topk = {kk: float((positions < kk).mean()) for kk in sorted(set(ks) | {1})}
    return EvalReport(top1=topk[1], topk=topk, n=n, confusion=confusion)


@dataclass
class SyntheticSpec:
    classes: Sequence[str] = ("circle", "square", "triangle")
    side: int = 64
    per_class: int = 200
    seed: int = 0
    margin: float = 0.05
    thickness: int = 2
    max_rotation: float = 15.0  # degrees either side of the upright pose

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("need at least two classes")
        unknown = set(self.classes) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shapes: {sorted(unknown)}")


def shape_strokes(name: str, cx: float, cy: float, r: float, theta: float) -> list[np.ndarray]:
    """Outline polylines of a shape with circumradius r, rotated by theta."""
    if name == "circle":
        a = np.linspace(0, 2 * np.pi, 49)
        return [np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], 1)]
    if name in ("square", "triangle"):
        n = 4 if name == "square" else 3
        upright = np.pi / 4 if n == 4 else -np.pi / 2
        a = upright + theta + 2 * np.pi * np.arange(n + 1) / n
        return [np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], 1)]
    if name == "cross":
        out = []
        for a in (theta, theta + np.pi / 2):  # upright "+" at theta = 0
            d = np.array([np.cos(a), np.sin(a)]) * r
            out.append(np.array([[cx - d[0], cy - d[1]], [cx + d[0], cy + d[1]]]))
        return out
    raise ValueError(name)


def draw_shape(name: str, side: int, rng: np.random.Generator, margin: float = 0.05,
               thickness: int = 2, max_rotation: float = 15.0) -> Raster:
    lo = margin * side + thickness
    hi = (1 - margin) * side - thickness - 1
    r = rng.uniform(0.2, 0.45) * (hi - lo)
    cx, cy = rng.uniform(lo + r, hi - r, size=2)
    theta = np.deg2rad(rng.uniform(-max_rotation, max_rotation))
    cells = np.zeros((side, side), dtype=np.uint8)
    for stroke in shape_strokes(name, cx, cy, r, theta):
        draw_polyline(cells, np.floor(stroke + 0.5).astype(int), thickness)
    return Raster(cells)


def build_synthetic_corpus(spec: SyntheticSpec) -> list[tuple[Raster, int]]:
    """`per_class` drawings per class, class-major, fully determined by `spec.seed`."""
    if not _is_pow2(spec.side):
        raise ValueError("side must be a power of two")
    rng = np.random.default_rng(spec.seed)
    out = []
    for c, name in enumerate(spec.classes):
        for _ in range(spec.per_class):
            out.append((draw_shape(name, spec.side, rng, spec.margin, spec.thickness,
                                  spec.max_rotation), c))
    return out


def split_corpus(items: Sequence, labels: Sequence[int], n_train: int):
    """Per-class split: the first n_train items of every class train, the rest test."""
    train, test = [], []
    seen: dict[int, int] = {}
    for item, c in zip(items, labels):
        bucket = train if seen.get(c, 0) < n_train else test
        bucket.append((item, c))
        seen[c] = seen.get(c, 0) + 1
    return train, test

