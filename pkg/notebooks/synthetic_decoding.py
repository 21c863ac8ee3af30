"""Generate a small synthetic corpus, train a few epochs and compare input ablations.

    python notebooks/synthetic_decoding.py [out_dir] [n_trials] [epochs]

A few hundred trials and a handful of epochs finish in minutes on one core;
the accuracies are noisy at that scale.
"""

import logging
import sys
from pathlib import Path

from aadnet.container import read_manifest, read_trials
from aadnet.splits import split_dataset
from aadnet.synth import SynthConfig, generate_dataset
from aadnet.training import TrainConfig, build_model, evaluate_ablations, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_runs")
n_trials = int(sys.argv[2]) if len(sys.argv) > 2 else 400
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 5

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

# at least 40 trials per recording so each one can feed all three splits
n_recordings = max(1, min(10, n_trials // 40))
info = generate_dataset(SynthConfig(n_trials=n_trials, n_recordings=n_recordings, snr_db=-3.0, seed=0),
                        out / "data")
data = read_trials(info["container"])
plan = split_dataset(read_manifest(info["manifest"]))
print("split sizes", plan.counts())

cfg = TrainConfig(epochs=epochs, seed=0)
model = build_model(cfg)
res = train(model, data, plan, cfg, out / "train")

print("epoch  train   val    test")
for e in range(1, epochs + 1):
    row = {m.split: m.accuracy for m in res.metrics if m.epoch == e}
    print(f"{e:5d}  {row['train']:.3f}  {row['val']:.3f}  {row['test']:.3f}")
if res.summary["accuracy_median_last5"] is not None:
    print("median of last five test accuracies:", round(res.summary["accuracy_median_last5"], 3))

for mode, r in evaluate_ablations(model, data, plan.test).items():
    print(f"{mode:11s} accuracy {r['accuracy']:.3f}")
