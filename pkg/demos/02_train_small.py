"""Train the metric network briefly and score held-out clouds.

A short schedule (a few hundred steps) is enough to see the classifier
separate the categories; the acceptance suite uses a longer one. The
model is saved to ``demo_out/model.ckpt`` for the other demos.

    python3 demos/02_train_small.py [steps]
"""

import logging
import sys
from pathlib import Path

from pcrealism import checkpoint, score
from pcrealism.pcgen import CATEGORY_NAMES
from pcrealism.train import TEST_SPLIT, SampleSource, TrainConfig, train

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = TrainConfig(steps=steps, warmup=min(100, steps), decay_steps=2000, eval_clouds=10)
source = SampleSource(cfg.datasets, cfg.seed, cfg.point_budget)
model, opt, report = train(cfg, source=source)

out = Path("demo_out")
out.mkdir(exist_ok=True)
checkpoint.save(out / "model.ckpt", model, opt)
(out / "metrics.csv").write_text(report.metrics_csv())
print(f"held-out ACC_C {report.final.acc_c:.3f}  ACC_A {report.final.acc_a:.3f}")
print(report.final.confusion_c)

for spec in cfg.datasets:
    qs = score.score_cloud(model, source.cloud(spec.dataset_id, 0, TEST_SPLIT))
    cells = "  ".join(f"{c} {v:.2f}" for c, v in zip(CATEGORY_NAMES, qs.scene))
    print(f"{spec.name:15s} {cells}")
