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
# # From strokes to distance fields
#
# A QuickDraw record is a list of strokes. We turn it into stroke-5 offsets,
# simplify it, draw it on a square canvas and compute a truncated signed
# distance field.

# %%
import numpy as np

from quadsketch import clip_sdf, compute_sdf, parse_raw_drawing, rasterize, rdp_simplify, to_stroke5

line = '{"word": "house", "drawing": [[[0, 100, 100, 0, 0], [40, 40, 120, 120, 40]], [[0, 50, 100], [40, 0, 40]]]}'
raw = parse_raw_drawing(line)
sketch = rdp_simplify(to_stroke5(raw, {"house": 0}), epsilon=2.0)
print(sketch.to_array())

# %% [markdown]
# Rasterize at 32 pixels so the picture fits in a terminal.

# %%
raster = rasterize(sketch, side=32, margin=0.05, thickness=1)
for row in raster.cells:
    print("".join("#" if v else "." for v in row))

# %% [markdown]
# The field is zero on the stroke rim, grows outward and saturates at +1
# once we are `tau` pixels away.

# %%
sdf = compute_sdf(raster, 4.0)
print(np.round(sdf.values[14:18, :12], 2))

# %% [markdown]
# Thresholding just above zero gives the raster back, bit for bit.

# %%
assert clip_sdf(sdf) == raster
print("round trip ok")
