"""
Augmentation, one step at a time
================================

Each training image gets a random shift, a horizontal shear and a color
jitter. Here the individual steps are applied with fixed amounts.
"""

import numpy as np

from bornovit.data import AugmentConfig, apply_affine, augment, color_jitter, resize_to_input
from bornovit.synthetic import make_glyph_samples

img = resize_to_input(make_glyph_samples(num_classes=3, per_class=1, size=64)[2], 224)

# A 10 % shift to the right moves content by 22 px and fills the gap with black.
shifted = apply_affine(img, translate_px=(22, 0))
print("left strip all zero:", bool(np.all(shifted[:, :, :22] == 0)))

# Shear slides rows sideways in proportion to their distance from the centre row.
# At 20 degrees the top and bottom rows move by tan(20) * 111.5, about 41 px.
sheared = apply_affine(img, shear_deg=20.0, fill=1.0)
print(f"edge-row offset: {np.tan(np.deg2rad(20.0)) * 111.5:.1f} px")
print("changed pixels:", int((np.abs(sheared - img) > 1e-3).sum()))

# Brightness scales then clamps; a 0.9 gray pushed by 1.2 saturates.
print("bright gray:", color_jitter(np.full((3, 1, 1), 0.9), brightness=1.2).ravel())

# Random draws are reproducible from the generator seed.
a = augment(img, AugmentConfig(), np.random.default_rng(3))
b = augment(img, AugmentConfig(), np.random.default_rng(3))
print("same seed, same image:", bool(np.array_equal(a, b)))
print("value range:", float(a.min()), float(a.max()))
