"""Mini-batch training, evaluation and ablation runs for :class:`AADNet`.

A run writes ``metrics.csv`` (``epoch,split,loss,accuracy``), ``summary.json``
and dense checkpoints every ``checkpoint_every`` epochs plus the last one.
Train-split metrics are running means over the epoch's mini-batches (train
mode, before each update); validation and test are evaluated after every
epoch in eval mode.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Adam, no_grad, save_checkpoint
from .autodiff import functional as F
from .model import AADNet, AblationMode, ClassifierConfig, ModelConfig, param_count
from .splits import SPLITS, SplitPlan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 32
    lr: float = 5e-4
    dropout_eeg: float = 0.25
    dropout_audio: float = 0.4
    dropout_concat: float = 0.25
    seed: int = 0
    duration_s: int = 3
    eval_batch_size: int = 32
    checkpoint_every: int = 10
    architecture: str = "none"

    def __post_init__(self):
        for key in ("epochs", "batch_size", "eval_batch_size", "checkpoint_every"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be positive, got {getattr(self, key)}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for key in ("dropout_eeg", "dropout_audio", "dropout_concat"):
            if not 0 <= getattr(self, key) < 1:
                raise ValueError(f"{key} must lie in [0, 1), got {getattr(self, key)}")
        if self.duration_s not in (2, 3, 4, 5):
            raise ValueError(f"duration_s must be 2, 3, 4 or 5, got {self.duration_s}")
        AblationMode(self.architecture)

    def model_config(self) -> ModelConfig:
        cls = ClassifierConfig(
            dropout_eeg=self.dropout_eeg,
            dropout_audio=self.dropout_audio,
            dropout_concat=self.dropout_concat,
            architecture=AblationMode(self.architecture),
        )
        return ModelConfig(duration_s=self.duration_s, classifier=cls)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    split: str
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    metrics: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)

    def accuracies(self, split: str) -> list[float]:
        return [m.accuracy for m in self.metrics if m.split == split]

    def losses(self, split: str) -> list[float]:
        return [m.loss for m in self.metrics if m.split == split]


class NonFiniteLossError(RuntimeError):
    pass


# -- metrics -----------------------------------------------------------------------


def median_last_k(values, k: int = 5) -> float:
    """Median of the final ``k`` entries (mean of the middle two for even k)."""
    values = list(values)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(values) < k:
        raise ValueError(f"need at least {k} values, got {len(values)}")
    return float(statistics.median(values[-k:]))


def predictions(probs: np.ndarray) -> np.ndarray:
    """argmax per row; an exact tie goes to class 0."""
    probs = np.asarray(probs)
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def accuracy(probs, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty trial set is undefined")
    return float(np.mean(predictions(probs) == labels))


def mean_nll(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64)[np.arange(len(labels)), np.asarray(labels)]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _chunks(idx: np.ndarray, size: int):
    for s in range(0, len(idx), size):
        yield idx[s : s + size]


def evaluate(model: AADNet, data, idx=None, mode: AblationMode = AblationMode.NONE,
             batch_size: int = 32) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) in eval mode over trials ``idx`` of ``data``.

    ``data`` is a :class:`~aadnet.container.TrialSet` or anything with a
    ``batch(indices)`` method returning (eeg, spec_a, spec_b, labels).
    """
    idx = np.arange(len(data)) if idx is None else np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot evaluate on an empty trial set")
    was_training = model.training
    model.eval()
    correct, nll = 0, 0.0
    try:
        with no_grad():
            for chunk in _chunks(idx, batch_size):
                eeg, sa, sb, y = data.batch(chunk)
                logits = model(eeg, sa, sb, mode).data.astype(np.float64)
                lp = _log_softmax(logits)
                correct += int(np.sum(predictions(lp) == y))
                nll -= float(lp[np.arange(len(y)), y].sum())
    finally:
        model.train(was_training)
    return correct / idx.size, nll / idx.size


# -- diagnostics ---------------------------------------------------------------------


def first_nonfinite_layer(model: AADNet, eeg, spec_a, spec_b) -> str | None:
    """Re-run a forward pass layer by layer; name the first non-finite output."""
    from .model import _as_input, concat_embeddings
    from .dsp import N_FREQ

    def bad(t):
        return not np.all(np.isfinite(t.data))

    with no_grad():
        x = _as_input(eeg, model.config.eeg_len, model.config.n_electrodes, "EEG trial")
        if bad(x):
            return "input.eeg"
        for i, blk in enumerate(model.eeg_cnn.blocks):
            x = blk(x)
            if bad(x):
                return f"eeg_cnn.blocks.{i}"
        b_, c, t, w = x.shape
        e = x.transpose(0, 2, 1, 3).reshape(b_, t, c * w)
        emb = []
        for tag, spec in (("a", spec_a), ("b", spec_b)):
            y = _as_input(spec, model.config.spec_len, N_FREQ, "spectrogram")
            if bad(y):
                return f"input.spec_{tag}"
            for i, blk in enumerate(model.audio_cnn.blocks):
                y = blk(y)
                if bad(y):
                    return f"audio_cnn.blocks.{i} (speaker {tag})"
            b_, c, t, w = y.shape
            emb.append(y.transpose(0, 2, 1, 3).reshape(b_, t, c * w))
        h = concat_embeddings(e, *emb)
        if hasattr(model, "blstm"):
            h = model.blstm(h)
            if bad(h):
                return "blstm"
        h = h.reshape(h.shape[0], -1)
        for i, fc in enumerate(model.fc):
            h = fc(h)
            if bad(h):
                return f"fc.{i}"
            if i < len(model.fc) - 1:
                h = F.relu(h)
    return None


# -- training loop -------------------------------------------------------------------


def _epoch_batches(idx: np.ndarray, batch_size: int, rng) -> list[np.ndarray]:
    """Shuffled mini-batches; the last short batch is kept, but a lone trial is
    folded into the previous batch (batch norm needs two samples)."""
    perm = idx[rng.permutation(len(idx))]
    batches = [perm[s : s + batch_size] for s in range(0, len(perm), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


class MetricsWriter:
    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(["epoch", "split", "loss", "accuracy"])

    def write(self, m: EpochMetrics) -> None:
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([m.epoch, m.split, repr(float(m.loss)), repr(float(m.accuracy))])


def read_metrics(path) -> list[EpochMetrics]:
    with open(path, newline="") as fh:
        return [EpochMetrics(int(r["epoch"]), r["split"], float(r["loss"]), float(r["accuracy"]))
                for r in csv.DictReader(fh)]


def train(model: AADNet, data, plan: SplitPlan, cfg: TrainConfig, out_dir=None,
          optimizer: Adam | None = None,
          on_epoch_start: Callable[[int, Adam], None] | None = None,
          on_epoch_end: Callable[[int, Adam], None] | None = None,
          extra_summary: dict | None = None) -> TrainResult:
    """Train ``model`` on ``plan.train`` for ``cfg.epochs`` epochs.

    Epochs are numbered from 1. Shuffling and dropout are driven by
    generators derived from ``cfg.seed`` only, so a rerun with the same
    inputs reproduces every metric bit for bit.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_idx = np.asarray(plan.train, dtype=np.int64)
    if train_idx.size < 2:
        raise ValueError("the train split needs at least two trials")
    opt = optimizer or Adam(model.parameters(), lr=cfg.lr)
    params = model.parameters()
    writer = MetricsWriter(out / "metrics.csv" if out is not None else None)
    result = TrainResult()
    model.set_rng(np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])))
    shuffle_seq = np.random.SeedSequence([cfg.seed, 2])

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        if on_epoch_start is not None:
            on_epoch_start(epoch, opt)
        model.train()
        rng = np.random.default_rng(shuffle_seq.spawn(1)[0])
        seen, loss_sum, correct = 0, 0.0, 0
        for batch in _epoch_batches(train_idx, cfg.batch_size, rng):
            eeg, sa, sb, y = data.batch(batch)
            logits = model(eeg, sa, sb)
            loss, probs = F.softmax_cross_entropy(logits, y)
            value = float(loss.data)
            if not np.isfinite(value):
                where = first_nonfinite_layer(model, eeg, sa, sb) or "loss"
                raise NonFiniteLossError(
                    f"epoch {epoch}: non-finite loss; first non-finite output at {where}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = len(y)
            seen += n
            loss_sum += value * n
            correct += int(np.sum(predictions(probs) == y))
        epoch_metrics = [EpochMetrics(epoch, "train", loss_sum / seen, correct / seen)]
        for split in SPLITS[1:]:
            idx = getattr(plan, split)
            if len(idx):
                acc, nll = evaluate(model, data, idx, batch_size=cfg.eval_batch_size)
                epoch_metrics.append(EpochMetrics(epoch, split, nll, acc))
        for m in epoch_metrics:
            writer.write(m)
        result.metrics.extend(epoch_metrics)
        if on_epoch_end is not None:
            on_epoch_end(epoch, opt)
        if out is not None and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            path = out / f"epoch{epoch:03d}.aadw"
            save_checkpoint(path, model.state_dict())
            result.checkpoints.append(str(path))
        log.info("epoch %d/%d %.1fs %s", epoch, cfg.epochs, time.perf_counter() - t0,
                 " ".join(f"{m.split}={m.accuracy:.3f}/{m.loss:.3f}" for m in epoch_metrics))

    result.summary = summarize(result.metrics, model, cfg, extra_summary)
    if out is not None:
        with open(out / "summary.json", "w") as fh:
            json.dump(result.summary, fh, indent=2, sort_keys=True)
    return result


def summarize(metrics, model: AADNet, cfg: TrainConfig | None = None, extra: dict | None = None) -> dict:
    """Summary record: median-last-5 accuracies, parameter counts, sparsity."""
    from .sparsify import sparsity_report

    def med(split):
        accs = [m.accuracy for m in metrics if m.split == split]
        return median_last_k(accs, 5) if len(accs) >= 5 else None

    counts = param_count(model)
    rep = sparsity_report(model)
    summary = {
        "accuracy_median_last5": med("test"),
        "val_accuracy_median_last5": med("val"),
        "train_accuracy_median_last5": med("train"),
        "params_total": counts["total"],
        "params_prunable": counts["prunable"],
        "params_delta_vs_reference": counts["delta_vs_reference"],
        "sparsity_global": rep["global"],
        "epochs_run": max((m.epoch for m in metrics), default=0),
        "config": asdict(cfg) if cfg is not None else {},
        "seed": cfg.seed if cfg is not None else None,
    }
    if extra:
        summary.update(extra)
    return summary


def build_model(cfg: TrainConfig) -> AADNet:
    return AADNet(cfg.model_config(), seed=cfg.seed)


# -- ablation ---------------------------------------------------------------------------

INPUT_MASKS = (AblationMode.NONE, AblationMode.ZERO_EEG, AblationMode.ZERO_AUDIO)


def evaluate_ablations(model: AADNet, data, idx, modes=INPUT_MASKS, batch_size: int = 32) -> dict:
    """Accuracy and loss of a trained model with each input-masking mode."""
    out = {}
    for mode in modes:
        mode = AblationMode(mode)
        if mode.changes_architecture:
            raise ValueError(f"{mode.value} changes the architecture; train a model with it instead")
        acc, nll = evaluate(model, data, idx, mode, batch_size)
        out[mode.value] = {"accuracy": acc, "loss": nll}
    return out


def train_architecture_ablation(data, plan: SplitPlan, cfg: TrainConfig, mode, out_dir=None) -> TrainResult:
    """Retrain from scratch with a ``remove_*`` architecture."""
    mode = AblationMode(mode)
    if not mode.changes_architecture:
        raise ValueError(f"{mode.value} only masks inputs; use evaluate_ablations")
    cfg = replace(cfg, architecture=mode.value)
    return train(build_model(cfg), data, plan, cfg, out_dir)
