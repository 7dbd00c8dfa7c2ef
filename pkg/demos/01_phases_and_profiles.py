"""
Synthetic phases and the 128-config profile
===========================================

Generate one app, profile it under every configuration and look at which
configuration wins each interval.
"""

import numpy as np

from forecaster import GenerationRecipe, generate_app
from forecaster.profiler import profile_all
from forecaster.config_space import decode, max_config
from forecaster.dataset import label_intervals
from forecaster.profiler import efficiency_matrix

app = generate_app("demo", 7, GenerationRecipe(total_instructions=20_000_000))
for p in app.phases:
    print(f"{p.length_instructions:>9} instr  ws_l2={p.ws_l2:7.0f}KB  ws_l3={p.ws_l3:5.1f}MB  "
          f"branches={p.branch_footprint:5.0f}  prefetch={p.prefetch_affinity:.2f}")

profiles = profile_all(app, 500_000)
E = efficiency_matrix(profiles)  # intervals x 128
print("\nintervals:", E.shape[0])

# the label of an interval is the config with the highest IPS^3/W
labels = label_intervals(profiles)
seen = sorted({lab.best_config for lab in labels})
print("distinct winning configs:", len(seen))
for c in seen[:6]:
    print("  ", c, decode(c))

base = E[:, max_config().index].mean()
print("\nall resources on       x1.000")
print(f"best single config     x{E.mean(axis=0).max() / base:.3f}  ({decode(int(np.argmax(E.mean(axis=0))))})")
print(f"best config per interval x{E.max(axis=1).mean() / base:.3f}")
