"""Accuracy against sparsity for a model trained by synthetic_decoding.py.

    python notebooks/pruning_sweep.py [out_dir] [finetune_epochs]

Loads the last dense checkpoint under ``<out_dir>/train``, prunes it one-shot
at several sparsities, fine-tunes each copy and writes ``sweep.csv`` for
plotting elsewhere.
"""

import csv
import sys
from pathlib import Path

from aadnet.autodiff import load_checkpoint
from aadnet.container import read_manifest, read_trials
from aadnet.sparsify import FinetuneSchedule, finetune, sparsity_report
from aadnet.splits import split_dataset
from aadnet.training import TrainConfig, build_model, evaluate

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_runs")
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 2

data = read_trials(out / "data" / "trials.aadtrl")
plan = split_dataset(read_manifest(out / "data" / "trials.manifest.jsonl"))
dense = load_checkpoint(sorted((out / "train").glob("epoch*.aadw"))[-1])
cfg = TrainConfig(epochs=epochs, seed=0)

rows = []
for s in (0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 0.9):
    model = build_model(cfg)
    model.load_state_dict(dense)
    if s > 0:
        finetune(model, data, plan, FinetuneSchedule("one_shot", s), cfg)
    acc, _ = evaluate(model, data, plan.test)
    rep = sparsity_report(model)
    rows.append({"sparsity": s, "achieved": round(rep["global"], 4), "nonzero": rep["nonzero_total"],
                 "test_accuracy": round(acc, 4)})
    print(rows[-1])

with open(out / "sweep.csv", "w", newline="") as fh:
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
