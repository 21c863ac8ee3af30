"""Per-layer magnitude pruning, masked fine-tuning and sparse checkpoints.

Only weight tensors (convolution kernels, LSTM input/recurrent matrices,
fully connected matrices) are pruned; biases and batch-norm affine
parameters are left dense and are excluded from the sparsity figures.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam
from .autodiff.checkpoint import CheckpointError, _read_exact, _read_header, _write_header
from .model import is_prunable
from .training import TrainConfig, TrainResult, train

SPARSE_MAGIC = b"AADSPRv1"


@dataclass
class PruneMask:
    """Binary keep-masks (1 = kept) for the prunable tensors of a model."""

    masks: dict
    sparsity: float
    scope: str = "per_layer"

    def zeros(self) -> dict:
        return {k: int(m.size - np.count_nonzero(m)) for k, m in self.masks.items()}


@dataclass(frozen=True)
class FinetuneSchedule:
    """one_shot prunes to ``target`` before the first epoch; sequential ramps
    linearly from 0 to ``target`` over ``ramp_epochs`` epochs, then holds."""

    mode: str = "one_shot"
    target: float = 0.5
    ramp_epochs: int = 40

    def __post_init__(self):
        if self.mode not in ("one_shot", "sequential"):
            raise ValueError(f"mode must be one_shot or sequential, got {self.mode!r}")
        if not 0 <= self.target < 1:
            raise ValueError(f"target sparsity must lie in [0, 1), got {self.target}")
        if self.ramp_epochs < 1:
            raise ValueError("ramp_epochs must be >= 1")

    def sparsity_at(self, epoch: int) -> float:
        """Sparsity in force during (and after) 1-based ``epoch``."""
        if self.mode == "one_shot":
            return self.target
        return self.target * min(epoch, self.ramp_epochs) / self.ramp_epochs


def compute_prune_mask(weights: np.ndarray, s: float) -> np.ndarray:
    """Mask zeroing the floor(s * size) smallest |w|; ties go to the lower flat index."""
    if not 0 <= s < 1:
        raise ValueError(f"sparsity must lie in [0, 1), got {s}")
    w = np.asarray(weights)
    k = int(np.floor(s * w.size))
    keep = np.ones(w.size, dtype=bool)
    if k:
        order = np.argsort(np.abs(w).ravel(), kind="stable")
        keep[order[:k]] = False
    return keep.reshape(w.shape)


def prunable_parameters(model) -> dict:
    return {k: p for k, p in model.named_parameters() if is_prunable(k)}


def compute_model_mask(model, s: float) -> PruneMask:
    """Per-layer masks at sparsity ``s`` for every prunable tensor of ``model``."""
    return PruneMask({k: compute_prune_mask(p.data, s) for k, p in prunable_parameters(model).items()}, s)


def apply_mask(model, mask: PruneMask, optimizer: Adam | None = None) -> None:
    """Zero masked weights; with ``optimizer`` the mask also gates its updates
    and the Adam moments of masked entries are reset to zero."""
    params = dict(model.named_parameters())
    for name, m in mask.masks.items():
        if name not in params:
            raise ValueError(f"mask refers to unknown parameter {name}")
        if not is_prunable(name):
            raise ValueError(f"{name} is a bias or batch-norm parameter and is never pruned")
        p = params[name]
        if m.shape != p.shape:
            raise ValueError(f"mask for {name} has shape {m.shape}, parameter is {p.shape}")
        if optimizer is not None:
            optimizer.set_mask(name, m)
        else:
            p.data *= m.astype(p.dtype)


def sparsity_report(model) -> dict:
    """Zero counts per prunable tensor and overall.

    ``global`` is zeros / prunable weights; biases and batch-norm parameters
    appear only in ``params_total``.
    """
    layers = {}
    zeros = size = 0
    for name, p in prunable_parameters(model).items():
        z = int(p.size - np.count_nonzero(p.data))
        layers[name] = {"size": int(p.size), "zeros": z, "sparsity": z / p.size}
        zeros += z
        size += p.size
    total = sum(int(p.size) for _, p in model.named_parameters())
    return {
        "layers": layers,
        "prunable_zeros": zeros,
        "params_prunable": size,
        "params_total": total,
        "global": zeros / size if size else 0.0,
        "nonzero_total": total - zeros,
    }


@dataclass
class FinetuneResult:
    train: TrainResult
    sparsity_by_epoch: list = field(default_factory=list)
    mask: PruneMask | None = None


def finetune(model, data, plan, schedule: FinetuneSchedule, cfg: TrainConfig, out_dir=None) -> FinetuneResult:
    """Prune ``model`` (already trained dense) and keep training it under the mask.

    Masks are recomputed from the current weights whenever the scheduled
    sparsity changes; already-pruned weights have magnitude zero, so every new
    mask covers the previous one. After each epoch the masked entries are
    checked to still be exactly zero.
    """
    opt = Adam(model.parameters(), lr=cfg.lr)
    state = {"s": None, "mask": None}
    record = []

    def start(epoch, optimizer):
        s = schedule.sparsity_at(epoch)
        if s != state["s"]:
            mask = compute_model_mask(model, s)
            apply_mask(model, mask, optimizer)
            state["s"], state["mask"] = s, mask

    def end(epoch, optimizer):
        params = model.parameters()
        for name, m in state["mask"].masks.items():
            if np.any(params[name].data[~m] != 0):
                raise RuntimeError(f"epoch {epoch}: pruned weights of {name} became nonzero")
        rep = sparsity_report(model)
        record.append({"epoch": epoch, "target": state["s"], "global": rep["global"],
                       "layers": {k: v["sparsity"] for k, v in rep["layers"].items()}})

    extra = {"schedule": {"mode": schedule.mode, "target": schedule.target,
                          "ramp_epochs": schedule.ramp_epochs}}
    res = train(model, data, plan, cfg, out_dir, optimizer=opt, on_epoch_start=start,
                on_epoch_end=end, extra_summary=extra)
    if out_dir is not None:
        save_sparse_checkpoint(Path(out_dir) / "final.sparse.aadw", model.state_dict())
    return FinetuneResult(res, record, state["mask"])


# -- sparse checkpoint ---------------------------------------------------------------
#
# b"AADSPRv1", then per tensor: the dense header (u16 name length, name, u8
# rank, u32 extents), u32 nnz, u32 run count, the run lengths (u32 each,
# alternating zero / nonzero runs, starting with a possibly empty zero run)
# and the nnz float32 values in row-major order.


def _runs(nonzero: np.ndarray) -> np.ndarray:
    flips = np.flatnonzero(np.diff(nonzero.astype(np.int8))) + 1
    edges = np.concatenate([[0], flips, [nonzero.size]])
    runs = np.diff(edges)
    if nonzero.size and nonzero[0]:
        runs = np.concatenate([[0], runs])
    return runs.astype("<u4")


def save_sparse_checkpoint(path, tensors: dict) -> dict:
    """Write tensors storing only nonzero values; returns bytes written per tensor."""
    sizes = {}
    with open(Path(path), "wb") as fh:
        fh.write(SPARSE_MAGIC)
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype="<f4", order="C")
            start = fh.tell()
            _write_header(fh, name, a.shape)
            flat = a.ravel()
            nz = flat != 0
            runs = _runs(nz)
            fh.write(struct.pack("<II", int(nz.sum()), len(runs)))
            fh.write(runs.tobytes())
            fh.write(flat[nz].tobytes())
            sizes[name] = fh.tell() - start
    return sizes


def load_sparse_checkpoint(path) -> dict:
    """Rebuild dense tensors, checking each advertised nonzero count."""
    out = {}
    with open(Path(path), "rb") as fh:
        if fh.read(len(SPARSE_MAGIC)) != SPARSE_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a sparse checkpoint")
        while True:
            head = _read_header(fh)
            if head is None:
                break
            name, shape = head
            nnz, n_runs = struct.unpack("<II", _read_exact(fh, 8, name))
            runs = np.frombuffer(_read_exact(fh, 4 * n_runs, name), dtype="<u4").astype(np.int64)
            size = int(np.prod(shape, dtype=np.int64))
            if runs.sum() != size:
                raise CheckpointError(f"{name}: run lengths cover {runs.sum()} of {size} entries")
            if runs[1::2].sum() != nnz:
                raise CheckpointError(f"{name}: bitmap has {runs[1::2].sum()} nonzeros, header says {nnz}")
            vals = np.frombuffer(_read_exact(fh, 4 * nnz, name), dtype="<f4")
            if np.any(vals == 0):
                raise CheckpointError(f"{name}: zero stored in the nonzero payload")
            mask = np.repeat(np.arange(len(runs)) % 2 == 1, runs)
            dense = np.zeros(size, dtype=np.float32)
            dense[mask] = vals
            out[name] = dense.reshape(shape)
    return out
