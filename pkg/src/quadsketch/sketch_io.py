"""QuickDraw ingestion: NDJSON records, stroke-5 sequences, RDP and rasterization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ParseError, SchemaError, VocabularyError


@dataclass
class RawDrawing:
    label: str
    strokes: list[list[tuple[int, int]]]

    def __post_init__(self):
        for stroke in self.strokes:
            if len(stroke) < 1:
                raise SchemaError("empty stroke")


@dataclass(frozen=True)
class StrokePoint5:
    dx: int
    dy: int
    p1: int
    p2: int
    p3: int

    def __post_init__(self):
        if (self.p1, self.p2, self.p3) not in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
            raise ValueError(f"exactly one pen bit must be set, got {(self.p1, self.p2, self.p3)}")

    def as_tuple(self):
        return (self.dx, self.dy, self.p1, self.p2, self.p3)


@dataclass
class StrokeSketch:
    points: list[StrokePoint5]
    label_id: int = 0

    def __post_init__(self):
        if not self.points:
            raise ValueError("a sketch needs at least one point")
        if self.points[-1].p3 != 1:
            raise ValueError("last point must carry the end-of-sketch bit")
        if any(p.p3 for p in self.points[:-1]):
            raise ValueError("end-of-sketch bit set before the last point")

    def __len__(self):
        return len(self.points)

    def absolute(self) -> np.ndarray:
        """Absolute (x, y) coordinates, shape (n, 2), by prefix-summing the offsets."""
        offsets = np.array([(p.dx, p.dy) for p in self.points], dtype=np.int64)
        return np.cumsum(offsets, axis=0)

    def strokes(self) -> list[list[tuple[int, int]]]:
        """Split back into absolute-coordinate polylines at pen lifts."""
        out, current = [], []
        for (x, y), p in zip(self.absolute().tolist(), self.points):
            current.append((x, y))
            if not p.p1:
                out.append(current)
                current = []
        return out

    def to_array(self) -> np.ndarray:
        return np.array([p.as_tuple() for p in self.points], dtype=np.int64)

    @classmethod
    def from_array(cls, rows, label_id: int = 0) -> "StrokeSketch":
        return cls([StrokePoint5(*map(int, r)) for r in rows], label_id)


@dataclass
class Raster:
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        h, w = self.cells.shape
        if h != w or not _is_pow2(w):
            raise ValueError(f"raster must be square with a power-of-two side, got {w}x{h}")
        if self.cells.max(initial=0) > 1:
            raise ValueError("raster cells must be 0 or 1")

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def side(self) -> int:
        return self.cells.shape[0]

    def __eq__(self, other):
        return isinstance(other, Raster) and np.array_equal(self.cells, other.cells)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def parse_raw_drawing(line: str) -> RawDrawing:
    """Parse one QuickDraw NDJSON record.

    The simplified QuickDraw layout stores every stroke as ``[xs, ys]``;
    it is normalized here to a list of ``(x, y)`` points.
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed NDJSON record: {exc}") from exc
    if not isinstance(record, dict):
        raise SchemaError("record must be a JSON object")
    if "drawing" not in record:
        raise SchemaError("record has no 'drawing' field")
    if "word" not in record:
        raise SchemaError("record has no 'word' field")
    strokes = []
    for stroke in record["drawing"]:
        if not isinstance(stroke, list) or len(stroke) < 2:
            raise SchemaError("each stroke must be an [xs, ys] pair")
        xs, ys = stroke[0], stroke[1]
        if len(xs) != len(ys) or not xs:
            raise SchemaError("stroke xs/ys must be non-empty and of equal length")
        pts = []
        for x, y in zip(xs, ys):
            if not (math.isfinite(x) and math.isfinite(y)):
                raise SchemaError("non-finite coordinate")
            pts.append((int(round(x)), int(round(y))))
        strokes.append(pts)
    if not strokes:
        raise SchemaError("drawing has no strokes")
    return RawDrawing(label=str(record["word"]), strokes=strokes)


def to_stroke5(raw: RawDrawing, vocab: Mapping[str, int]) -> StrokeSketch:
    if raw.label not in vocab:
        raise VocabularyError(raw.label)
    points = []
    px, py = 0, 0
    for stroke in raw.strokes:
        for j, (x, y) in enumerate(stroke):
            last = j == len(stroke) - 1
            points.append(StrokePoint5(x - px, y - py, 0 if last else 1, 1 if last else 0, 0))
            px, py = x, y
    end = points[-1]
    points[-1] = StrokePoint5(end.dx, end.dy, 0, 0, 1)
    return StrokeSketch(points, int(vocab[raw.label]))


def sketch_from_strokes(strokes: Sequence[Sequence[tuple[int, int]]], label_id: int = 0) -> StrokeSketch:
    return to_stroke5(RawDrawing("_", [list(s) for s in strokes]), {"_": label_id})


def _point_segment_distance(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    if a == b:
        return math.hypot(p[0] - ax, p[1] - ay)
    return abs((bx - ax) * (ay - p[1]) - (ax - p[0]) * (by - ay)) / math.hypot(bx - ax, by - ay)


def rdp(points: Sequence[tuple[int, int]], epsilon: float) -> list[tuple[int, int]]:
    """Ramer-Douglas-Peucker on one polyline; endpoints are always kept."""
    n = len(points)
    if n < 3:
        return list(points)
    keep = [False] * n
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        dmax, idx = -1.0, -1
        for i in range(lo + 1, hi):
            d = _point_segment_distance(points[i], points[lo], points[hi])
            if d > dmax:
                dmax, idx = d, i
        if idx >= 0 and dmax > epsilon:
            keep[idx] = True
            stack.append((lo, idx))
            stack.append((idx, hi))
    return [p for p, k in zip(points, keep) if k]


def rdp_simplify(sketch: StrokeSketch, epsilon: float = 2.0, max_len: int = 321) -> StrokeSketch:
    """Simplify each stroke; widen epsilon by 1.5x (10 tries max) until the total fits max_len."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    strokes = sketch.strokes()
    eps = epsilon
    simplified = [rdp(s, eps) for s in strokes]
    retries = 0
    while sum(map(len, simplified)) > max_len and retries < 10:
        eps *= 1.5
        retries += 1
        simplified = [rdp(s, eps) for s in strokes]
    out = sketch_from_strokes(simplified, sketch.label_id)
    if len(out) > max_len:
        rows = out.to_array()[:max_len]
        rows[-1, 2:] = (0, 0, 1)
        out = StrokeSketch.from_array(rows, sketch.label_id)
    return out


def disc_stamp(thickness: int) -> list[tuple[int, int]]:
    """Pixel offsets (dy, dx) covered by a disc of the given diameter."""
    t = int(thickness)
    if t < 1:
        raise ValueError("thickness must be >= 1")
    centers = np.arange(t) - (t - 1) / 2
    r2 = (t / 2) ** 2
    return [(i - t // 2, j - t // 2)
            for i in range(t) for j in range(t)
            if centers[i] ** 2 + centers[j] ** 2 <= r2]


def bresenham(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return out
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def stamp_points(cells: np.ndarray, pixels, thickness: int) -> None:
    """Set a disc of `thickness` around every (x, y) pixel, clipped to the canvas."""
    h, w = cells.shape
    pts = np.asarray(list(pixels), dtype=np.int64).reshape(-1, 2)
    for oy, ox in disc_stamp(thickness):
        ys = pts[:, 1] + oy
        xs = pts[:, 0] + ox
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        cells[ys[ok], xs[ok]] = 1


def draw_polyline(cells: np.ndarray, points, thickness: int = 2) -> None:
    pts = [(int(x), int(y)) for x, y in points]
    pixels = list(pts[:1])
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        pixels.extend(bresenham(x0, y0, x1, y1))
    stamp_points(cells, pixels, thickness)


def rasterize(sketch: StrokeSketch, side: int = 128, margin: float = 0.05, thickness: int = 2) -> Raster:
    """Scale the sketch uniformly into the margin box, centre it and draw pen-down segments.

    Segment i -> i+1 is drawn when point i has the pen-down bit; points that
    end a stroke are stamped as dots so single-point strokes stay visible.
    """
    if not _is_pow2(side):
        raise ValueError("side must be a power of two")
    if not 0 <= margin < 0.5:
        raise ValueError("margin must be in [0, 0.5)")
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    cells = np.zeros((side, side), dtype=np.uint8)
    xy = sketch.absolute().astype(np.float64)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0:
        cells[side // 2, side // 2] = 1
        return Raster(cells)

    # centre pixels must keep the whole stamp inside [margin*side, (1-margin)*side)
    a = math.ceil(margin * side) + thickness // 2
    b = math.floor((1 - margin) * side) - (thickness - thickness // 2)
    if b < a:
        raise ValueError("margin and thickness leave no room to draw")
    scale = (b - a) / extent
    span = (hi - lo) * scale
    offset = a + ((b - a) - span) / 2
    pix = np.floor((xy - lo) * scale + offset + 0.5).astype(np.int64)
    pix = np.clip(pix, a, b)

    pixels = []
    for i, p in enumerate(sketch.points):
        x, y = int(pix[i, 0]), int(pix[i, 1])
        if p.p1 and i + 1 < len(sketch.points):
            pixels.extend(bresenham(x, y, int(pix[i + 1, 0]), int(pix[i + 1, 1])))
        else:
            pixels.append((x, y))
    stamp_points(cells, pixels, thickness)
    return Raster(cells)


def write_pgm(path, raster: Raster) -> None:
    """Binary PGM (P5, maxval 255); stroke pixels are written as 255."""
    body = (raster.cells.astype(np.uint8) * 255).tobytes()
    header = f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + body)


def read_pgm(path) -> Raster:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    pixels = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    return Raster((pixels > maxval // 2).astype(np.uint8))
