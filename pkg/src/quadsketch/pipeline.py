"""Two-stage generation (low-res draw, leaf-by-leaf refinement) and leaf-vote classification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError
from .predictor import (PredictorModel, leaf_log_likelihood, lowres_tree, masked_contexts,
                        predict_distribution)
from .quadtree import NEUTRAL, extract_context, region_slice, replace_leaf
from .sdf import SdfGrid, clip_sdf, resample, resize_sdf
from .sketch_io import Raster
from .tokenizer import Codebook, decode_tokens, encode_tile


class Stage1Generator(Protocol):
    leaf_side: int

    def generate(self, class_id: int, seed: int) -> SdfGrid: ...


class PrototypeSampler:
    """Draws a stored low-res field of the requested class, optionally with Gaussian jitter."""

    def __init__(self, pools: Mapping[int, Sequence[SdfGrid]], jitter: float = 0.0):
        self.pools = {int(c): list(p) for c, p in pools.items() if len(p)}
        if not self.pools:
            raise ValueError("prototype pools are empty")
        sides = {g.side for p in self.pools.values() for g in p}
        if len(sides) != 1:
            raise ValueError("all pool fields must share one side")
        self.leaf_side = sides.pop()
        self.jitter = float(jitter)

    @classmethod
    def from_corpus(cls, fields: Sequence[SdfGrid], labels: Sequence[int], leaf_side: int,
                    jitter: float = 0.0) -> "PrototypeSampler":
        pools: dict[int, list[SdfGrid]] = {}
        for f, c in zip(fields, labels):
            pools.setdefault(int(c), []).append(resize_sdf(f, leaf_side))
        return cls(pools, jitter)

    def generate(self, class_id: int, seed: int) -> SdfGrid:
        if class_id not in self.pools:
            raise ValueError(f"class {class_id} has no prototypes")
        rng = np.random.default_rng(seed)
        pool = self.pools[class_id]
        base = pool[int(rng.integers(len(pool)))]
        if self.jitter == 0:
            return base.copy()
        noisy = base.values + self.jitter * rng.standard_normal(base.values.shape)
        return SdfGrid(np.clip(noisy, -1, 1), base.tau_max)


def generate_lowres(gen: Stage1Generator, class_id: int, seed: int) -> SdfGrid:
    return gen.generate(int(class_id), int(seed))


@dataclass
class SamplingParams:
    temperature: float = 1.0
    top_k: int | None = None
    seed: int = 0


@dataclass
class GenerationResult:
    lowres: SdfGrid
    refined: SdfGrid
    raster: Raster
    class_id: int
    leaf_trace: list[np.ndarray] = field(repr=False)
    leaf_regions: list[tuple[int, int, int]] = field(repr=False)
    consistency: float = 0.0
    seed: int = 0


def sample_token(probs: np.ndarray, rng: np.random.Generator, temperature: float = 1.0,
                 top_k: int | None = None) -> int:
    if temperature <= 0:
        return int(np.argmax(probs))
    p = np.asarray(probs, dtype=np.float64)
    if temperature != 1.0:
        p = np.exp(np.log(np.maximum(p, 1e-300)) / temperature)
    if top_k is not None and top_k < len(p):
        keep = np.argsort(-p, kind="stable")[:top_k]
        mask = np.zeros_like(p)
        mask[keep] = p[keep]
        p = mask
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(p) - 1))


def _check(model: PredictorModel, codebook: Codebook) -> None:
    if model.Q != codebook.Q or model.K != codebook.K:
        raise ConfigurationError(f"model (Q={model.Q}, K={model.K}) does not match "
                                 f"codebook (Q={codebook.Q}, K={codebook.K})")


def refine_image(lowres: SdfGrid, class_id: int, model: PredictorModel, codebook: Codebook,
                 full_side: int, sampling: SamplingParams | None = None, significance=None,
                 ) -> GenerationResult:
    """Resize, build the tree once, then sample, decode and write every leaf in order.

    The context of each leaf is taken from the partially refined canvas.
    """
    _check(model, codebook)
    sampling = sampling or SamplingParams()
    if lowres.side != codebook.leaf_side:
        raise ConfigurationError(f"low-res side {lowres.side} != leaf side {codebook.leaf_side}")
    rng = np.random.default_rng(sampling.seed)
    tree = lowres_tree(lowres, full_side, codebook.leaf_side, significance)
    trace = []
    for leaf in tree.leaves:
        context = extract_context(tree, leaf)
        tokens: list[int] = []
        for k in range(codebook.K):
            probs = predict_distribution(model, context, class_id, tokens, k)
            tokens.append(sample_token(probs, rng, sampling.temperature, sampling.top_k))
        replace_leaf(tree, leaf, decode_tokens(codebook, tokens))
        trace.append(np.array(tokens, dtype=np.int64))
    refined = tree.canvas
    return GenerationResult(lowres=lowres, refined=refined, raster=clip_sdf(refined),
                            class_id=int(class_id), leaf_trace=trace,
                            leaf_regions=tree.leaf_regions(), seed=sampling.seed)


def consistency(refined: SdfGrid, lowres: SdfGrid) -> float:
    """Mean |downsample(refined) - lowres|."""
    return float(np.abs(resize_sdf(refined, lowres.side).values - lowres.values).mean())


def generate_sketch(gen: Stage1Generator, model: PredictorModel, codebook: Codebook, class_id: int,
                    seed: int, full_side: int, temperature: float = 1.0,
                    top_k: int | None = None) -> GenerationResult:
    lowres = generate_lowres(gen, class_id, seed)
    result = refine_image(lowres, class_id, model, codebook, full_side,
                          SamplingParams(temperature, top_k, seed))
    result.consistency = consistency(result.refined, lowres)
    return result


def leaf_votes(sdf: SdfGrid, model: PredictorModel, codebook: Codebook, classes: Sequence[int],
               mode: str = "refine", lowres_side: int | None = None) -> np.ndarray:
    """(L, n_classes) per-leaf log-likelihoods.

    ``refine`` scores each leaf the way the refinement stage sees it: the
    tree comes from the down/up-sampled input and preceding leaves hold the
    true content. ``masked`` builds the tree on the input and blanks only
    the leaf being scored, matching masked-leaf pretraining.
    """
    leaf_side = codebook.leaf_side
    if mode == "refine":
        low = resize_sdf(sdf, lowres_side or leaf_side)
        tree = lowres_tree(low, sdf.side, leaf_side)
        pairs = []
        for leaf in tree.leaves:
            sl = region_slice(leaf.region)
            pairs.append((extract_context(tree, leaf), resample(sdf.values[sl], leaf_side)))
            tree.canvas.values[sl] = sdf.values[sl]
    elif mode == "masked":
        pairs = list(masked_contexts(sdf, leaf_side, NEUTRAL))
    else:
        raise ValueError(f"unknown scoring mode {mode!r}")
    votes = np.empty((len(pairs), len(classes)))
    for i, (context, tile) in enumerate(pairs):
        tokens = encode_tile(codebook, tile)
        for j, c in enumerate(classes):
            votes[i, j] = leaf_log_likelihood(model, context, c, tokens)
    return votes


def classify_sketch(sdf: SdfGrid, models, codebook: Codebook, classes: Sequence[int] | None = None,
                    mode: str = "refine") -> list[tuple[int, float]]:
    """Rank classes by the sum of per-leaf log-likelihoods; ties go to the lower class id.

    `models` is either one class-conditional model (then `classes` lists
    the candidates) or a mapping class id -> model.
    """
    if isinstance(models, Mapping):
        if len(models) == 0:
            raise ConfigurationError("no trained classes")
        ids = sorted(models)
        scores = {}
        for c in ids:
            _check(models[c], codebook)
            scores[c] = float(leaf_votes(sdf, models[c], codebook, [c], mode).sum())
    else:
        if not classes:
            raise ConfigurationError("no trained classes")
        _check(models, codebook)
        ids = list(classes)
        totals = leaf_votes(sdf, models, codebook, ids, mode).sum(axis=0)
        scores = {c: float(s) for c, s in zip(ids, totals)}
    if len(ids) < 2:
        raise ConfigurationError("classification needs at least two candidate classes")
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


__all__ = [
    "Stage1Generator", "PrototypeSampler", "SamplingParams", "GenerationResult", "generate_lowres",
    "refine_image", "generate_sketch", "classify_sketch", "leaf_votes", "sample_token", "consistency",
]
