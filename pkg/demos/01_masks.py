"""Band masks: how bandwidth and overlap shape what each hidden unit can see.

Run:  python demos/01_masks.py
"""
import numpy as np

from mclnn import MaskSpec, build_mask, mask_to_text

# Nine input bins, eight hidden units, bands of three bins separated by a gap of one.
mask = build_mask(9, 8, MaskSpec(bandwidth=3, overlap=-1))
print("l=9, e=8, bw=3, ov=-1")
print(mask_to_text(mask))

# Reading the columns: each hidden unit listens to a short run of consecutive bins.
for j in (0, 3, 6):
    rows = np.flatnonzero(mask[:, j]) + 1
    print(f"hidden unit {j + 1} sees input bins {rows.tolist()}")

# A positive overlap makes neighbouring bands share bins, like adjacent mel filters.
print("\nl=12, e=6, bw=5, ov=3")
print(mask_to_text(build_mask(12, 6, MaskSpec(5, 3))))

# The default first layer keeps roughly one weight in seven.
first = build_mask(120, 300, MaskSpec(20, -5))
print(f"default first-layer mask density: {first.mean():.3f}")
