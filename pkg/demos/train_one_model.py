"""Train Gated NetVLAD on a reduced synthetic set and save the best checkpoint.

Uses the desk recipe on 4,000 videos (about a fifth of the desk dataset), so it
finishes in well under a minute.

Run: python3 demos/train_one_model.py [output_dir]
"""

import dataclasses
import sys
from pathlib import Path

import numpy as np

from gatedpool.config import desk_profile
from gatedpool.dataio import generate_synthetic
from gatedpool.ensemble import ensemble_predict
from gatedpool.metrics import gap_at_20
from gatedpool.model import VideoClassifier, build, predict_many
from gatedpool.training import train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
out.mkdir(parents=True, exist_ok=True)

exp = desk_profile()
exp.data = dataclasses.replace(exp.data, num_videos=4000)
# Keep the decay per pass over the data the same as the desk recipe.
exp.train = dataclasses.replace(exp.train, decay_interval=exp.train.decay_interval // 5,
                                eval_every=72)
train_set, val_set = generate_synthetic(exp.data).split(exp.train.val_fraction)
print(f"{len(train_set)} training and {len(val_set)} validation videos, "
      f"{exp.data.num_labels} labels")

model = build(exp.model)
print(f"Gated NetVLAD with {model.num_params():,} parameters")
result = train(model, train_set, val_set, exp.train, log_path=out / "train_log.csv",
               checkpoint_path=out / "model.ckpt")
for row in result.log:
    print(f"step {row['step']:5d}  lr {row['lr']:.5f}  loss {row['train_loss']:.4f}  "
          f"val GAP {row['val_gap']:.4f}")
print(f"best validation GAP {result.best_gap:.4f}; checkpoint in {out / 'model.ckpt'}")

# The checkpoint restores the exact weights.
restored = VideoClassifier.from_checkpoint(out / "model.ckpt")
preds = predict_many(restored, val_set.videos, np.random.default_rng(exp.train.seed + 1))
print("restored checkpoint GAP", gap_at_20(preds, [v.labels for v in val_set]))

# Top-5 labels for one validation video.
video = val_set.videos[0]
scores = ensemble_predict([restored], video)
print("video", video.video_id, "true", sorted(video.labels),
      "top-5", np.argsort(-scores)[:5].tolist())
