"""Acceptance criteria, one test per criterion, at the required tolerances.

Oracles here are independent of the library: brute-force distances, an
exhaustive nearest-entry scan and a hand enumeration of dummy slots.
"""

import filecmp
import math
import time

import numpy as np
import pytest

from cli_flow import run_flow
from quadsketch.evaluation import SyntheticSpec, build_synthetic_corpus, split_corpus, topk_accuracy
from quadsketch.pipeline import PrototypeSampler, classify_sketch, generate_sketch, refine_image
from quadsketch.predictor import iter_training_examples, train_count_model
from quadsketch.quadtree import NEUTRAL, build_quadtree, copy_structure, extract_context, region_slice
from quadsketch.sdf import SdfGrid, clip_sdf, compute_sdf, resample, resize_sdf
from quadsketch.sketch_io import Raster, draw_polyline
from quadsketch.tokenizer import (Codebook, decode_tokens, encode_tile, fit_codebook, perplexity,
                                  pyramid_tiles, quantization_radius, token_histogram)


def brute_force_sdf(cells, tau):
    """All-pairs distances; stroke cells get -(distance to background - 1)."""
    cells = np.asarray(cells, bool)
    coords = np.argwhere(np.ones_like(cells)).astype(float)

    def nearest(targets):
        if len(targets) == 0:
            return np.full(len(coords), np.inf)
        out = np.empty(len(coords))
        for i in range(0, len(coords), 512):
            block = coords[i:i + 512]
            d2 = ((block[:, None, :] - targets[None, :, :]) ** 2).sum(-1)
            out[i:i + 512] = np.sqrt(d2.min(1))
        return out

    d_fg = nearest(np.argwhere(cells).astype(float)).reshape(cells.shape)
    d_bg = nearest(np.argwhere(~cells).astype(float)).reshape(cells.shape)
    raw = np.where(cells, -(d_bg - 1), d_fg)
    return np.clip(raw, -tau, tau) / tau


def random_rasters(n, side, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        kind = i % 3
        if kind == 0:
            cells = (rng.random((side, side)) < rng.uniform(0.001, 0.3)).astype(np.uint8)
        elif kind == 1:
            cells = np.zeros((side, side), np.uint8)
            pts = rng.integers(0, side, (int(rng.integers(2, 8)), 2))
            draw_polyline(cells, pts, int(rng.integers(1, 5)))
        else:
            cells = np.zeros((side, side), np.uint8)
            for _ in range(int(rng.integers(1, 4))):
                x, y = rng.integers(0, side - 12, 2)
                w, h = rng.integers(1, 12, 2)
                cells[y:y + h, x:x + w] = 1
        cells[rng.integers(side), rng.integers(side)] = 1
        out.append(Raster(cells))
    return out


@pytest.fixture(scope="module")
def rasters():
    return random_rasters(200, 64, 2024)


def test_criterion_1_sdf_oracle(rasters, record_property):
    tau = 8.0
    elapsed, worst = 0.0, 0.0
    for r in rasters:
        t0 = time.perf_counter()
        sdf = compute_sdf(r, tau)
        elapsed += time.perf_counter() - t0
        worst = max(worst, float(np.abs(sdf.values - brute_force_sdf(r.cells, tau)).max()))
    record_property("max_err", f"{worst:.2e}")
    record_property("sdf_seconds", f"{elapsed:.2f}")
    assert worst <= 1e-6
    assert elapsed < 30


def test_criterion_2_clip_roundtrip(rasters, record_property):
    mismatches = sum(clip_sdf(compute_sdf(r, 8.0)) != r for r in rasters)
    record_property("mismatched", mismatches)
    assert mismatches == 0


def expected_dummy_mask(side, leaf, max_depth):
    """Enumerate slots geometrically: deepest level first, then the root."""
    mask = []
    x0, y0, s0 = leaf.region
    for level in range(max_depth, 0, -1):
        if level > leaf.depth:
            mask += [True] * 9
            continue
        s = side >> level
        ax, ay = (x0 // s) * s, (y0 // s) * s
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                nx, ny = ax + dx * s, ay + dy * s
                mask.append(not (0 <= nx < side and 0 <= ny < side))
    return mask + [False]


def random_canvas(rng):
    side = int(rng.choice([32, 64, 128]))
    cells = np.zeros((side, side), np.uint8)
    for _ in range(int(rng.integers(0, 5))):
        pts = rng.integers(0, side, (2, 2))
        draw_polyline(cells, pts, int(rng.integers(1, 3)))
    return compute_sdf(Raster(cells), side / 8)


def test_criterion_3_context_invariants(record_property):
    rng = np.random.default_rng(3)
    n_contexts = corner_checks = depth_one = 0
    for _ in range(1000):
        canvas = random_canvas(rng)
        leaf_side = int(rng.choice([8, 16])) if canvas.side > 32 else 8
        tree = build_quadtree(canvas, leaf_side)
        D = tree.max_depth
        for leaf in tree.leaves:
            ctx = extract_context(tree, leaf)
            n_contexts += 1
            assert len(ctx) == D * 9 + 1
            assert all(t.values.shape == (leaf_side, leaf_side) for t in ctx.tiles)
            mask = ctx.dummy_mask().tolist()
            assert mask == expected_dummy_mask(tree.side, leaf, D)
            assert all((t.values == NEUTRAL).all() for t in ctx.tiles if t.is_dummy)
            x, y, s = leaf.region
            if leaf.depth == D and x in (0, tree.side - s) and y in (0, tree.side - s):
                assert sum(mask[:9]) == 5
                corner_checks += 1
            if leaf.depth == 1:
                assert sum(mask[:9 * (D - 1)]) == 9 * (D - 1)
                assert sum(mask[9 * (D - 1):9 * D]) == 5
                depth_one += 1
    record_property("contexts", n_contexts)
    record_property("corner_leaves", corner_checks)
    record_property("depth1_leaves", depth_one)
    assert corner_checks > 0 and depth_one > 0


def test_criterion_4_partition_and_copy(record_property):
    rng = np.random.default_rng(4)
    for _ in range(300):
        canvas = random_canvas(rng)
        tree = build_quadtree(canvas, 8)
        cover = np.zeros((canvas.side, canvas.side), int)
        for leaf in tree.leaves:
            cover[region_slice(leaf.region)] += 1
        assert (cover == 1).all()
        other = SdfGrid(np.ones_like(canvas.values), canvas.tau_max)
        assert copy_structure(tree, other).leaf_regions() == tree.leaf_regions()
    cells = np.zeros((128, 128), np.uint8)
    draw_polyline(cells, [(8, 8), (20, 22)], 2)
    tree = build_quadtree(compute_sdf(Raster(cells), 16.0), 32)
    assert tree.leaf_regions() == [(0, 0, 32), (32, 0, 32), (0, 32, 32), (32, 32, 32),
                                   (64, 0, 64), (0, 64, 64), (64, 64, 64)]
    record_property("seven_leaf_case", "exact")


def synthetic_fields(per_class, seed, side=64):
    corpus = build_synthetic_corpus(SyntheticSpec(side=side, per_class=per_class, seed=seed))
    return [(r, compute_sdf(r, side / 8), c) for r, c in corpus]


def test_criterion_5_tokenizer_contract(record_property):
    rng = np.random.default_rng(5)
    cb = Codebook(rng.uniform(-1, 1, (64, 16)), 4, 4)
    for _ in range(1000):
        tile = rng.uniform(-1, 1, (16, 16))
        patches = tile.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3).reshape(16, 16)
        oracle = []
        for p in patches:
            d = [float(((p - e) ** 2).sum()) for e in cb.entries]
            oracle.append(d.index(min(d)))
        assert encode_tile(cb, tile).tolist() == oracle
    for _ in range(200):
        z = rng.integers(0, cb.Q, cb.K)
        assert encode_tile(cb, decode_tokens(cb, z)).tolist() == z.tolist()
    uniform = perplexity(np.ones(512))
    assert abs(uniform - 512) <= 1e-9

    items = synthetic_fields(40, 55)
    sdf_tiles = [t for _, f, _ in items for t in pyramid_tiles(f, 16)]
    bin_fields = [SdfGrid(1.0 - 2.0 * r.cells, 1.0) for r, _, _ in items]
    bin_tiles = [t for f in bin_fields for t in pyramid_tiles(f, 16)]
    ppl = {}
    for name, tiles in (("sdf", sdf_tiles), ("binary", bin_tiles)):
        book = fit_codebook(tiles, Q=128, g=4, seed=0)
        ppl[name] = perplexity(token_histogram(book, tiles))
    record_property("ppl_sdf", f"{ppl['sdf']:.1f}")
    record_property("ppl_binary", f"{ppl['binary']:.1f}")
    assert ppl["sdf"] > ppl["binary"]


class ReplayModel:
    def __init__(self, source, codebook):
        self.source, self.codebook, self.calls = source, codebook, 0
        self.Q, self.K = codebook.Q, codebook.K

    def predict(self, context, class_id, prefix, position):
        self.calls += 1
        tile = resample(self.source.values[region_slice(context.leaf.region)], self.codebook.leaf_side)
        p = np.zeros(self.Q)
        p[encode_tile(self.codebook, tile)[position]] = 1.0
        return p


def test_criterion_6_refinement_loop(record_property):
    items = synthetic_fields(5, 66)
    cb = fit_codebook([t for _, f, _ in items for t in pyramid_tiles(f, 16)], Q=64, g=4, seed=0)
    worst_time, worst_excess = 0.0, -math.inf
    for _, field, _ in items:
        model = ReplayModel(field, cb)
        t0 = time.perf_counter()
        res = refine_image(resize_sdf(field, 16), 0, model, cb, 64, significance=lambda v: True)
        worst_time = max(worst_time, time.perf_counter() - t0)
        assert len(res.leaf_regions) == 16 and model.calls == 256
        radius = quantization_radius(cb, [field.values[region_slice(r)] for r in res.leaf_regions])
        err = float(np.abs(res.refined.values - field.values).max())
        worst_excess = max(worst_excess, err - radius)
    record_property("calls", 256)
    record_property("max_err_minus_radius", f"{worst_excess:.3f}")
    record_property("seconds_per_image", f"{worst_time:.3f}")
    assert worst_excess <= 1e-9
    assert worst_time < 10


@pytest.fixture(scope="module")
def benchmark():
    t0 = time.perf_counter()
    items = synthetic_fields(300, 0)
    train, test = split_corpus([f for _, f, _ in items], [c for _, _, c in items], 200)
    cb = fit_codebook([t for f, _ in train for t in pyramid_tiles(f, 16)], Q=256, g=4, seed=0)
    model = train_count_model((ex for f, c in train
                               for ex in iter_training_examples(f, resize_sdf(f, 16), c, cb)), 0.1, cb)
    return {"train": train, "test": test, "codebook": cb, "model": model,
            "train_seconds": time.perf_counter() - t0}


def test_criterion_7_classification(benchmark, record_property):
    t0 = time.perf_counter()
    cb, model = benchmark["codebook"], benchmark["model"]
    rankings = [[c for c, _ in classify_sketch(f, model, cb, [0, 1, 2])] for f, _ in benchmark["test"]]
    report = topk_accuracy(rankings, [c for _, c in benchmark["test"]], (1,), 3)
    total = benchmark["train_seconds"] + time.perf_counter() - t0
    record_property("top1", f"{report.top1:.3f}")
    record_property("seconds", f"{total:.1f}")
    assert len(benchmark["test"]) == 300
    assert report.top1 >= 0.85
    assert total < 120


def test_criterion_8_generation(benchmark, record_property):
    t0 = time.perf_counter()
    cb, model = benchmark["codebook"], benchmark["model"]
    train = benchmark["train"]
    sampler = PrototypeSampler.from_corpus([f for f, _ in train], [c for _, c in train], 16)
    cons, hits, n = [], 0, 0
    for c in range(3):
        for i in range(50):
            res = generate_sketch(sampler, model, cb, c, 1000 * c + i, 64, temperature=0.3)
            cons.append(res.consistency)
            hits += classify_sketch(res.refined, model, cb, [0, 1, 2])[0][0] == c
            n += 1
    elapsed = time.perf_counter() - t0
    record_property("consistency", f"{np.mean(cons):.4f}")
    record_property("self_top1", f"{hits / n:.3f}")
    record_property("seconds", f"{elapsed:.1f}")
    assert np.mean(cons) <= 0.15
    assert hits / n >= 0.6
    assert elapsed < 180


def test_criterion_9_cli_determinism(tmp_path, record_property):
    a = run_flow(tmp_path / "a")
    b = run_flow(tmp_path / "b")
    rel_a = [p.relative_to(tmp_path / "a") for p in a]
    assert rel_a == [p.relative_to(tmp_path / "b") for p in b]
    differ = [str(r) for r in rel_a
              if not filecmp.cmp(tmp_path / "a" / r, tmp_path / "b" / r, shallow=False)]
    suffixes = sorted({p.suffix for p in a})
    record_property("files", len(a))
    record_property("kinds", ",".join(suffixes))
    assert not differ, differ
    assert {".sdf", ".vqcb", ".cntm", ".pgm", ".json"} <= set(suffixes)
