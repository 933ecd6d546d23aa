"""Command-line entry point: ``quadsketch <command> ...``.

Datasets are directories holding ``manifest.json`` plus one file per item
(``<name>.pgm`` for rasters, ``<name>.sdf`` for fields). All randomness
comes from explicit ``--seed`` flags; ``QUADSKETCH_THREADS`` caps workers.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import QuadSketchError, SchemaError
from .evaluation import SyntheticSpec, build_synthetic_corpus, topk_accuracy
from .pipeline import PrototypeSampler, classify_sketch, generate_sketch
from .predictor import (TrainingExample, iter_training_examples, masked_contexts,
                        read_count_model, sample_masked_pretraining_example,
                        sample_training_example, train_count_model, write_count_model)
from .sdf import compute_sdf, default_tau, read_sdf, resize_sdf, write_sdf
from .sketch_io import (StrokeSketch, parse_raw_drawing, rasterize, rdp_simplify, read_pgm,
                        to_stroke5, write_pgm)
from .tokenizer import encode_tile, fit_codebook, pyramid_tiles, read_codebook, write_codebook

log = logging.getLogger("quadsketch")

MANIFEST = "manifest.json"
STROKES = "strokes.ndjson"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("QUADSKETCH_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """Order-preserving map over at most QUADSKETCH_THREADS workers."""
    n = worker_count()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise SchemaError(f"{directory} has no {MANIFEST}")
    return json.loads(path.read_text())


def write_manifest(directory, kind: str, side: int, classes, items, **extra) -> None:
    dump_json(Path(directory) / MANIFEST, {"kind": kind, "side": side, "classes": list(classes),
                                           "items": items, **extra})


def load_fields(directory):
    """SDF grids of a dataset dir; raster items are converted with the default tau."""
    man = load_manifest(directory)
    d = Path(directory)

    def load(item):
        if man["kind"] == "sdf":
            return read_sdf(d / f"{item['name']}.sdf")
        raster = read_pgm(d / f"{item['name']}.pgm")
        return compute_sdf(raster, default_tau(raster.side))

    return man, pmap(load, man["items"])


def cmd_ingest(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raws = []
    with open(args.input, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raws.append(parse_raw_drawing(line))
            except QuadSketchError as exc:
                log.warning("line %d skipped: %s", lineno, exc)
    classes = sorted({r.label for r in raws})
    vocab = {name: i for i, name in enumerate(classes)}
    items, stroke_lines = [], []
    for i, raw in enumerate(raws):
        name = f"{i:06d}"
        sketch = rdp_simplify(to_stroke5(raw, vocab), args.epsilon, args.max_len)
        write_pgm(out / f"{name}.pgm", rasterize(sketch, args.side, args.margin, args.thickness))
        items.append({"name": name, "label": sketch.label_id})
        stroke_lines.append(json.dumps({"name": name, "label": sketch.label_id,
                                        "points": sketch.to_array().tolist()}))
    (out / STROKES).write_text("".join(s + "\n" for s in stroke_lines))
    write_manifest(out, "raster", args.side, classes, items, margin=args.margin)
    log.info("ingested %d drawings in %d classes", len(items), len(classes))


def cmd_sdf(args) -> None:
    src, out = Path(args.input), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = load_manifest(src)
    side = man["side"]
    tau = args.tau_max if args.tau_max is not None else default_tau(side)
    sketches = {}
    if (src / STROKES).exists():
        for line in (src / STROKES).read_text().splitlines():
            rec = json.loads(line)
            sketches[rec["name"]] = StrokeSketch.from_array(rec["points"], rec["label"])

    def convert(item):
        name = item["name"]
        if name in sketches:
            raster = rasterize(sketches[name], side, man.get("margin", 0.05), args.thickness)
        else:
            raster = read_pgm(src / f"{name}.pgm")
        write_sdf(out / f"{name}.sdf", compute_sdf(raster, tau))

    pmap(convert, man["items"])
    write_manifest(out, "sdf", side, man["classes"], man["items"], tau_max=tau)


def cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    spec = SyntheticSpec(classes, args.side, args.per_class, args.seed, args.margin, args.thickness)
    items = []
    for i, (raster, label) in enumerate(build_synthetic_corpus(spec)):
        name = f"{i:06d}"
        write_pgm(out / f"{name}.pgm", raster)
        items.append({"name": name, "label": label})
    write_manifest(out, "raster", args.side, classes, items, margin=args.margin)


def cmd_fit_codebook(args) -> None:
    _, fields = load_fields(args.input)
    tiles = [t for f in fields for t in pyramid_tiles(f, args.leaf)]
    cb = fit_codebook(tiles, args.q, args.grid, args.seed)
    write_codebook(args.out, cb)
    log.info("codebook Q=%d K=%d fit on %d tiles", cb.Q, cb.K, len(tiles))


def _examples(man, fields, codebook, seed, per_item, masked):
    rng = np.random.default_rng(seed)
    for item, S in zip(man["items"], fields):
        c = item["label"]
        if masked:
            if per_item:
                for _ in range(per_item):
                    yield sample_masked_pretraining_example(S, codebook, rng, c)
            else:
                for ctx, tile in masked_contexts(S, codebook.leaf_side):
                    yield TrainingExample(ctx, c, encode_tile(codebook, tile), ctx.leaf.depth)
        else:
            low = resize_sdf(S, codebook.leaf_side)
            if per_item:
                for _ in range(per_item):
                    yield sample_training_example(S, low, c, codebook, rng)
            else:
                yield from iter_training_examples(S, low, c, codebook)


def _train(args, masked: bool) -> None:
    man, fields = load_fields(args.input)
    cb = read_codebook(args.codebook)
    model = train_count_model(_examples(man, fields, cb, args.seed, args.samples_per_item, masked),
                              args.alpha, cb)
    write_count_model(args.out, model)
    log.info("count model with %d keys", len(model.counts))


def cmd_train(args) -> None:
    _train(args, masked=False)


def cmd_pretrain_mask(args) -> None:
    _train(args, masked=True)


def _class_id(value: str, classes) -> int:
    if value in classes:
        return classes.index(value)
    return int(value)


def cmd_generate(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cb = read_codebook(args.codebook)
    model = read_count_model(args.model, cb)
    man, fields = load_fields(args.pool)
    class_id = _class_id(args.class_, man["classes"])
    sampler = PrototypeSampler.from_corpus(fields, [i["label"] for i in man["items"]],
                                           cb.leaf_side, args.jitter)
    for i in range(args.n):
        seed = args.seed + i
        res = generate_sketch(sampler, model, cb, class_id, seed, man["side"],
                              args.temperature, args.top_k)
        stem = out / f"sample_{i:04d}"
        write_sdf(stem.with_suffix(".sdf"), res.refined)
        write_pgm(stem.with_suffix(".pgm"), res.raster)
        dump_json(stem.with_suffix(".json"), {
            "class_id": class_id, "seed": seed, "consistency": res.consistency,
            "leaf_count": len(res.leaf_trace), "tokens_per_leaf": cb.K})


def cmd_classify(args) -> None:
    man, fields = load_fields(args.input)
    cb = read_codebook(args.codebook)
    model = read_count_model(args.model, cb)
    classes = list(range(len(man["classes"])))

    def rank(f):
        return classify_sketch(f, model, cb, classes, mode=args.mode)

    ranked = pmap(rank, fields)
    items = [{"name": item["name"], "ranking": [c for c, _ in r][:args.topk],
              "scores": {str(c): s for c, s in sorted(r)}}
             for item, r in zip(man["items"], ranked)]
    report = {"classes": man["classes"], "k": args.topk, "mode": args.mode, "items": items}
    labels = [i.get("label") for i in man["items"]]
    if labels and all(lbl is not None for lbl in labels):
        ev = topk_accuracy([[c for c, _ in r] for r in ranked], labels,
                           sorted({1, args.topk}), len(classes))
        report["eval"] = ev.to_dict()
        log.info("top-1 %.4f", ev.top1)
    dump_json(args.report, report)


def _read_labels(path) -> list[int]:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        return [int(x) for x in text.split()]
    if isinstance(obj, dict):
        return [int(i["label"]) for i in obj["items"]]
    return [int(x) for x in obj]


def cmd_eval(args) -> None:
    pred = json.loads(Path(args.pred).read_text())
    rankings = []
    for item in pred["items"]:
        if "scores" in item:
            scores = {int(c): s for c, s in item["scores"].items()}
            rankings.append(sorted(scores, key=lambda c: (-scores[c], c)))
        else:
            rankings.append(item["ranking"])
    ks = [int(k) for k in args.k.split(",")]
    n_classes = len(pred["classes"]) if "classes" in pred else None
    report = topk_accuracy(rankings, _read_labels(args.labels), ks, n_classes)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadsketch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="QuickDraw NDJSON -> stroke-5 + PGM rasters")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--side", type=int, default=128)
    s.add_argument("--epsilon", type=float, default=2.0)
    s.add_argument("--max-len", type=int, default=321)
    s.add_argument("--margin", type=float, default=0.05)
    s.add_argument("--thickness", type=int, default=2)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("sdf", help="rasters -> truncated SDF files")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tau-max", type=float, default=None)
    s.add_argument("--thickness", type=int, default=2)
    s.set_defaults(func=cmd_sdf)

    s = sub.add_parser("fit-codebook", help="fit the tile codebook")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--q", type=int, default=512)
    s.add_argument("--grid", type=int, default=4)
    s.add_argument("--leaf", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_codebook)

    for name, func, help_ in (("train", cmd_train, "train the count model on refinement examples"),
                              ("pretrain-mask", cmd_pretrain_mask, "train on masked-leaf examples")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--in", dest="input", required=True)
        s.add_argument("--codebook", required=True)
        s.add_argument("--alpha", type=float, default=0.1)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--samples-per-item", type=int, default=0,
                       help="random examples per item; 0 uses every leaf once")
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("generate", help="sample sketches of one class")
    s.add_argument("--class", dest="class_", required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--codebook", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--pool", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jitter", type=float, default=0.0)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--top-k", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("classify", help="rank classes by summed leaf log-likelihood")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--topk", type=int, default=3)
    s.add_argument("--mode", choices=("refine", "masked"), default="refine")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("synth", help="procedural shapes corpus")
    s.add_argument("--classes", default="circle,square,triangle")
    s.add_argument("--side", type=int, default=64)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--margin", type=float, default=0.05)
    s.add_argument("--thickness", type=int, default=2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", help="top-k accuracy of a classify report")
    s.add_argument("--pred", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--k", default="1,3,5")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (QuadSketchError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
