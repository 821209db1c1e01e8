"""
Parameter and compute budget of the default model
=================================================

The profiler derives every count in closed form and then checks it against
the tensors of an instantiated model.
"""

from bornovit.model import ModelConfig, init_params
from bornovit.profiler import count_params, verify_against_model

config = ModelConfig(num_classes=10)
report = count_params(config)
print(report.to_text())

# The closed form agrees with the real tensors.
print(verify_against_model(init_params(config, seed=0), report).describe())

# Only the head grows with the label set; 84 classes adds 9,546 parameters.
wide = count_params(config.replace(num_classes=84))
print("84 classes:", f"{wide.total_params:,}", "parameters")

# Depth is the main compute knob: each block costs the same number of MACs.
for depth in (2, 4, 8):
    macs = count_params(config.replace(depth=depth)).total_macs
    print(f"depth {depth}: {macs / 1e9:.3f} GMACs")
