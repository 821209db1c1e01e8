"""
Where does the model look?
==========================

Grad-CAM weights the final block's patch tokens by their average gradient and
keeps the positive evidence. The result is upsampled to the input size.
"""

from pathlib import Path
import tempfile

import numpy as np

from bornovit.data import resize_to_input
from bornovit.evaluator import gradcam, gradcam_from_activations
from bornovit.model import ModelConfig, init_params
from bornovit.synthetic import make_glyph_samples

# An untrained default-size model is enough to show the shape chain.
params = init_params(ModelConfig(num_classes=10), seed=0)
glyph = make_glyph_samples(num_classes=1, per_class=1, size=96)[0]
image = resize_to_input(glyph, 224)

cam = gradcam(params, image)
print("class", cam.target_class, "probability", round(cam.probability, 3))
print("token grid", cam.raw_grid.shape, "-> map", cam.upsampled.shape)

out = Path(tempfile.mkdtemp())
for path in cam.save(out):
    print("wrote", path)

# A hand-built case: one active patch token should light up one corner.
acts = np.zeros((197, 128))
acts[1] = 1.0
corner = gradcam_from_activations(acts, np.ones_like(acts), np.zeros((3, 224, 224)))
share = corner.upsampled[:16, :16].sum() / corner.upsampled.sum()
print(f"share of heat in the top-left patch: {share:.2f}")
