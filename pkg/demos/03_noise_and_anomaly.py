"""Noise sweep and anomaly map with a trained model.

1. Range noise of growing sigma moves a clean Synthetic scan from the
   Synthetic category towards Misc.
2. A noisy azimuth sector injected into a Real-surrogate scan shows up
   as a region of low p_real in the per-point anomaly map, written as a
   coloured PLY (green real, blue synthetic, red misc).

    python3 demos/03_noise_and_anomaly.py [demo_out/model.ckpt]
"""

import math
import sys
from pathlib import Path

from pcrealism import checkpoint, evaluation, score
from pcrealism.datasets import default_datasets
from pcrealism.pcgen import derive_seed, inject_patch_anomaly

path = sys.argv[1] if len(sys.argv) > 1 else "demo_out/model.ckpt"
model, _ = checkpoint.load(path)
specs = {s.name: s for s in default_datasets()}

rows, text = evaluation.noise_sweep(model, specs["sim_city"].generate, [0, 0.1, 1, 3, 10],
                                    n_clouds=10, seed=7)
print(text)

pc = specs["real_urban"].generate(derive_seed(7, 1, 0, 0))
noisy, mask = inject_patch_anomaly(pc, (0.0, math.pi / 4), 1.0, seed=7)
amap = score.anomaly_map(model, noisy)
p_real = amap.values[:, 0]
print(f"p_real inside the patch {p_real[mask].mean():.3f}, outside {p_real[~mask].mean():.3f}")
out = Path("demo_out")
out.mkdir(exist_ok=True)
amap.write_ply(out / "anomaly.ply")
print(f"anomaly map written to {out / 'anomaly.ply'}")
