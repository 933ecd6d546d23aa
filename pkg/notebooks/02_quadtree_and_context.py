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
# # Quadtree leaves and their context
#
# Only regions that touch a stroke are split. Each leaf then sees a fixed
# number of tiles: the 3x3 neighbourhood at every level plus the whole
# canvas.

# %%
import numpy as np

from quadsketch import Raster, build_quadtree, compute_sdf, extract_context
from quadsketch.sketch_io import draw_polyline

cells = np.zeros((128, 128), np.uint8)
draw_polyline(cells, [(8, 8), (20, 22)], 2)
tree = build_quadtree(compute_sdf(Raster(cells), 16.0), leaf_side=32)
for leaf in tree.leaves:
    print(leaf.index, leaf.depth, leaf.region)
print(tree.to_bitstring())

# %% [markdown]
# The first leaf sits in the top-left corner, so five of its nine
# neighbours fall off the canvas and become neutral dummy tiles.

# %%
ctx = extract_context(tree, tree.leaves[0])
print(len(ctx), "tiles")
print(ctx.dummy_mask().astype(int))

# %% [markdown]
# A large leaf has no deepest-level block at all; those nine slots are
# dummies too.

# %%
big = tree.leaves[4]
print(big.region, extract_context(tree, big).dummy_mask().astype(int))
