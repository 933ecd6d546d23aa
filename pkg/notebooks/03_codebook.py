# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Tokenizing tiles
#
# Every leaf tile is cut into a 4x4 grid of sub-patches and each
# sub-patch is replaced by the index of its nearest codebook entry.

# %%
import numpy as np

from quadsketch import (SyntheticSpec, build_synthetic_corpus, compute_sdf, decode_tokens,
                        encode_tile, fit_codebook, perplexity)
from quadsketch.sdf import SdfGrid
from quadsketch.tokenizer import pyramid_tiles, token_histogram

corpus = build_synthetic_corpus(SyntheticSpec(per_class=30, seed=1))
fields = [compute_sdf(r, 8.0) for r, _ in corpus]
tiles = [t for f in fields for t in pyramid_tiles(f, 16)]
cb = fit_codebook(tiles, Q=128, g=4, seed=0)
print(cb.Q, "entries,", cb.K, "tokens per tile")

# %%
z = encode_tile(cb, tiles[3])
err = np.abs(decode_tokens(cb, z).values - tiles[3]).max()
print(z, f"max error {err:.3f}")

# %% [markdown]
# Distance fields spread information over the whole tile, so the codebook
# gets used more evenly than one fit on binary masks.

# %%
binary = [t for r, _ in corpus for t in pyramid_tiles(SdfGrid(1.0 - 2.0 * r.cells, 1.0), 16)]
cb_bin = fit_codebook(binary, Q=128, g=4, seed=0)
print("sdf perplexity   ", round(perplexity(token_histogram(cb, tiles)), 1))
print("binary perplexity", round(perplexity(token_histogram(cb_bin, binary)), 1))
