"""Token predictors over leaf contexts, training-example samplers and the count reference model."""

from __future__ import annotations

import math
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError
from .quadtree import (NEUTRAL, ContextSequence, QuadTree, below_threshold, build_quadtree,
                       extract_context, region_slice)
from .sdf import SdfGrid, resample, resize_sdf
from .tokenizer import Codebook, encode_tile

CNTM_MAGIC = b"CNTM"
_KEY = struct.Struct("<IBBhH")  # class, depth, position, previous token (-1 = none), signature
_RECORD = struct.Struct("<HI")


class PredictorModel(Protocol):
    """Anything that maps (context, class, token prefix, position) to a distribution over Q."""

    Q: int
    K: int

    def predict(self, context: ContextSequence, class_id: int, prefix: Sequence[int],
                position: int) -> np.ndarray: ...


@dataclass
class TrainingExample:
    context: ContextSequence
    class_id: int
    target_tokens: np.ndarray
    leaf_depth: int


def refine_significance(full_side: int, low_side: int, tau_max: float):
    """Split predicate for a canvas upsampled from `low_side`.

    Area-averaging spreads a stroke over a whole low-res pixel, so the
    stroke threshold is widened by the resize factor.
    """
    factor = full_side / low_side
    return below_threshold(min(0.5 * factor / tau_max, 0.999))


def lowres_tree(S_lowres: SdfGrid, full_side: int, leaf_side: int, significance=None) -> QuadTree:
    """Resize the low-res field to full resolution and build the quadtree on it."""
    S_hat = resize_sdf(S_lowres, full_side)
    if significance is None:
        significance = refine_significance(full_side, S_lowres.side, S_lowres.tau_max)
    return build_quadtree(S_hat, leaf_side, significance)


def sample_training_example(S: SdfGrid, S_lowres: SdfGrid, c: int, codebook: Codebook,
                            rng: np.random.Generator, leaf_index: int | None = None,
                            significance=None) -> TrainingExample:
    """Draw one refinement example.

    The leaf index is uniform over 1..L unless `leaf_index` pins it; every
    leaf before it is overwritten with ground truth from `S`.
    """
    leaf_side = codebook.leaf_side
    if S_lowres.side != leaf_side:
        raise ConfigurationError(f"low-res field must be {leaf_side} wide, got {S_lowres.side}")
    tree = lowres_tree(S_lowres, S.side, leaf_side, significance)
    l = int(rng.integers(1, len(tree) + 1)) if leaf_index is None else int(leaf_index)
    for leaf in tree.leaves[:l - 1]:
        sl = region_slice(leaf.region)
        tree.canvas.values[sl] = S.values[sl]
    leaf = tree.leaves[l - 1]
    context = extract_context(tree, leaf)
    target = encode_tile(codebook, resample(S.values[region_slice(leaf.region)], leaf_side))
    return TrainingExample(context, int(c), target, leaf.depth)


def iter_training_examples(S: SdfGrid, S_lowres: SdfGrid, c: int, codebook: Codebook,
                           significance=None):
    """One example per leaf of the low-res tree, in canonical order."""
    leaf_side = codebook.leaf_side
    tree = lowres_tree(S_lowres, S.side, leaf_side, significance)
    for leaf in tree.leaves:
        context = extract_context(tree, leaf)
        sl = region_slice(leaf.region)
        yield TrainingExample(context, int(c), encode_tile(codebook, resample(S.values[sl], leaf_side)),
                              leaf.depth)
        tree.canvas.values[sl] = S.values[sl]


def sample_masked_pretraining_example(S: SdfGrid, codebook: Codebook, rng: np.random.Generator,
                                      c: int = 0, leaf_index: int | None = None,
                                      neutral: float = NEUTRAL) -> TrainingExample:
    """Build the tree on `S`, blank one uniformly chosen leaf, and target its original tokens."""
    tree = build_quadtree(S, codebook.leaf_side)
    l = int(rng.integers(1, len(tree) + 1)) if leaf_index is None else int(leaf_index)
    leaf = tree.leaves[l - 1]
    target = encode_tile(codebook, tree.sample(leaf.region))
    tree.canvas.values[region_slice(leaf.region)] = neutral
    return TrainingExample(extract_context(tree, leaf, neutral), int(c), target, leaf.depth)


def masked_contexts(S: SdfGrid, leaf_side: int, neutral: float = NEUTRAL):
    """(context, original leaf tile) for every leaf of S, each with only that leaf masked."""
    tree = build_quadtree(S, leaf_side)
    for leaf in tree.leaves:
        sl = region_slice(leaf.region)
        original = tree.canvas.values[sl].copy()
        tile = tree.sample(leaf.region)
        tree.canvas.values[sl] = neutral
        yield extract_context(tree, leaf, neutral), tile
        tree.canvas.values[sl] = original


def context_signature(codebook: Codebook, context: ContextSequence) -> np.ndarray:
    """Tokens of the centre tile at the leaf's own level (cached on the context)."""
    sig = context.cache.get("signature")
    if sig is None:
        max_depth = (len(context) - 1) // 9
        sig = encode_tile(codebook, context.own_center(max_depth).values)
        context.cache["signature"] = sig
    return sig


class CountModel:
    """Laplace-smoothed conditional counts.

    The key for position k is (class, leaf depth, k, previous token, token k
    of the leaf's own centre tile in the context).
    """

    def __init__(self, Q: int, K: int, alpha: float = 0.1, codebook: Codebook | None = None):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.Q = int(Q)
        self.K = int(K)
        self.alpha = float(np.float32(alpha))  # the file stores alpha as f32
        self.codebook = codebook
        self.counts: dict[tuple, dict[int, int]] = defaultdict(dict)
        self.totals: dict[tuple, int] = defaultdict(int)

    def _key(self, context, class_id, prefix, position):
        if self.codebook is None:
            raise ConfigurationError("count model has no codebook attached")
        sig = context_signature(self.codebook, context)
        prev = int(prefix[position - 1]) if position > 0 else -1
        return (int(class_id), int(context.leaf.depth), int(position), prev, int(sig[position]))

    def add(self, key: tuple, token: int, n: int = 1) -> None:
        row = self.counts[key]
        row[token] = row.get(token, 0) + n
        self.totals[key] += n

    def observe(self, example: TrainingExample) -> None:
        tokens = [int(t) for t in example.target_tokens]
        for k in range(self.K):
            self.add(self._key(example.context, example.class_id, tokens, k), tokens[k])

    def predict(self, context, class_id, prefix, position) -> np.ndarray:
        key = self._key(context, class_id, prefix, position)
        probs = np.full(self.Q, self.alpha)
        row = self.counts.get(key)
        if row:
            idx = np.fromiter(row.keys(), dtype=np.int64)
            probs[idx] += np.fromiter(row.values(), dtype=np.float64)
        return probs / (self.totals.get(key, 0) + self.alpha * self.Q)

    def merge(self, other: "CountModel") -> "CountModel":
        if (self.Q, self.K, self.alpha) != (other.Q, other.K, other.alpha):
            raise ConfigurationError("cannot merge count models with different Q, K or alpha")
        out = CountModel(self.Q, self.K, self.alpha, self.codebook or other.codebook)
        for model in (self, other):
            for key, row in model.counts.items():
                for token, n in row.items():
                    out.add(key, token, n)
        return out

    def records(self) -> list[bytes]:
        return sorted(_KEY.pack(*key) + _RECORD.pack(token, n)
                      for key, row in self.counts.items() for token, n in row.items())

    def __eq__(self, other):
        return (isinstance(other, CountModel) and (self.Q, self.K, self.alpha) == (other.Q, other.K, other.alpha)
                and self.records() == other.records())


def train_count_model(examples: Iterable[TrainingExample], alpha: float = 0.1,
                      codebook: Codebook | None = None, Q: int | None = None,
                      K: int | None = None) -> CountModel:
    if codebook is not None:
        Q, K = codebook.Q, codebook.K
    if Q is None or K is None:
        raise ConfigurationError("need a codebook or explicit Q and K")
    model = CountModel(Q, K, alpha, codebook)
    for ex in examples:
        model.observe(ex)
    return model


def predict_distribution(model: PredictorModel, context, class_id, prefix, position) -> np.ndarray:
    if not 0 <= position < model.K:
        raise ValueError(f"position {position} outside [0, {model.K})")
    if len(prefix) != position:
        raise ValueError("prefix length must equal position")
    return model.predict(context, class_id, prefix, position)


def leaf_log_likelihood(model: PredictorModel, context, class_id, tokens) -> float:
    """Teacher-forced log p(tokens | context, class)."""
    tokens = [int(t) for t in tokens]
    return float(sum(math.log(predict_distribution(model, context, class_id, tokens[:k], k)[tokens[k]])
                     for k in range(model.K)))


def evaluate_cross_entropy(model: PredictorModel, examples: Iterable[TrainingExample]) -> float:
    """Mean over examples of the per-position cross-entropy (natural log)."""
    losses = [-leaf_log_likelihood(model, ex.context, ex.class_id, ex.target_tokens) / model.K
              for ex in examples]
    if not losses:
        raise ValueError("no examples to evaluate")
    return float(np.mean(losses))


def write_count_model(path, model: CountModel) -> None:
    """CNTM file: magic, u32 Q, u32 K, f32 alpha, u64 n, then n sorted (key, u16 token, u32 count)."""
    records = model.records()
    header = CNTM_MAGIC + struct.pack("<IIfQ", model.Q, model.K, model.alpha, len(records))
    Path(path).write_bytes(header + b"".join(records))


def read_count_model(path, codebook: Codebook | None = None) -> CountModel:
    data = Path(path).read_bytes()
    if data[:4] != CNTM_MAGIC:
        raise ParseError(f"{path}: bad count-model magic")
    Q, K, alpha, n = struct.unpack("<IIfQ", data[4:24])
    model = CountModel(Q, K, alpha, codebook)
    size = _KEY.size + _RECORD.size
    for i in range(n):
        rec = data[24 + i * size:24 + (i + 1) * size]
        key = _KEY.unpack(rec[:_KEY.size])
        token, count = _RECORD.unpack(rec[_KEY.size:])
        model.add(key, token, count)
    return model
