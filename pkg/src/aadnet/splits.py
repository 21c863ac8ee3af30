"""Leak-free train/validation/test assignment for overlapping trials.

Trials cut with a sliding window share raw samples with their neighbours,
so splitting trial indices at random would put pieces of test signal in the
training set. Each recording is instead cut into three contiguous blocks and
the trials straddling a block boundary are dropped.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

FRACTIONS = (0.75, 0.125, 0.125)
SPLITS = ("train", "val", "test")


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def split_counts(n: int, fractions=FRACTIONS) -> tuple[int, int, int]:
    """(train, val, test) sizes for ``n`` trials.

    The train share is rounded half up; the remainder is divided between
    validation and test in proportion, validation rounded down.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    f_tr, f_va, f_te = (Fraction(f).limit_denominator(10**6) for f in fractions)
    if min(f_tr, f_va, f_te) < 0 or f_tr + f_va + f_te != 1:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    train = min(n, _round_half_up(f_tr * n))
    rest = n - train
    val = math.floor(rest * f_va / (f_va + f_te)) if f_va + f_te else 0
    return train, val, rest - val


@dataclass
class SplitPlan:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    excluded: np.ndarray
    per_source: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def assignment(self) -> dict:
        """trial index -> "train" | "val" | "test" | "excluded"."""
        out = {}
        for name in SPLITS + ("excluded",):
            for i in getattr(self, name):
                out[int(i)] = name
        return out

    def counts(self) -> dict:
        return {name: len(getattr(self, name)) for name in SPLITS + ("excluded",)}


def _overlaps(a, b) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def boundary_gap(spans) -> int:
    """Number of trials that must be skipped after trial ``k`` so that the next
    kept trial shares no sample with it (spans sorted by start, uniform hop)."""
    if len(spans) < 2:
        return 0
    gap = 0
    for j in range(1, len(spans)):
        if _overlaps(spans[0], spans[j]):
            gap = j
        else:
            break
    return gap


def split_dataset(manifest, fractions=FRACTIONS, seed: int = 0) -> SplitPlan:
    """Block-contiguous split of every recording with boundary trimming.

    ``manifest`` is a sequence of dicts with ``trial``, ``source`` and
    ``span`` ([start, end) raw sample indices). Within each recording, trials
    are ordered by start and laid out as train | gap | val | gap | test. A
    recording too short to give every split at least one trial is put wholly
    in train and reported in ``plan.warnings``. ``seed`` is accepted for
    interface symmetry; the assignment is deterministic and does not use it.
    """
    by_source = defaultdict(list)
    for e in manifest:
        by_source[str(e["source"])].append((tuple(e["span"]), int(e["trial"])))
    parts = {name: [] for name in SPLITS + ("excluded",)}
    per_source, notes = {}, []
    for src in sorted(by_source):
        items = sorted(by_source[src])
        spans = [s for s, _ in items]
        ids = [i for _, i in items]
        n = len(ids)
        g = boundary_gap(spans)
        tr, va, te = split_counts(max(n - 2 * g, 0), fractions)
        if n - 2 * g < 3 or min(tr, va, te) < 1:
            msg = f"recording {src}: {n} trials cannot honor the split fractions; all assigned to train"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
            parts["train"].extend(ids)
            per_source[src] = {"train": n, "val": 0, "test": 0, "excluded": 0}
            continue
        bounds = {
            "train": (0, tr),
            "val": (tr + g, tr + g + va),
            "test": (tr + 2 * g + va, n),
        }
        taken = set()
        for name, (lo, hi) in bounds.items():
            parts[name].extend(ids[lo:hi])
            taken.update(range(lo, hi))
        parts["excluded"].extend(ids[k] for k in range(n) if k not in taken)
        per_source[src] = {"train": tr, "val": va, "test": te, "excluded": 2 * g}
    arrays = {k: np.array(sorted(v), dtype=np.int64) for k, v in parts.items()}
    return SplitPlan(per_source=per_source, warnings=notes, **arrays)


def overlapping_pairs(manifest, first, second) -> list[tuple[int, int]]:
    """Every (i, j) with i in ``first`` and j in ``second`` from the same recording
    whose raw-sample spans intersect. Exhaustive pairwise check."""
    info = {int(e["trial"]): (str(e["source"]), tuple(e["span"])) for e in manifest}
    bad = []
    for i in first:
        si, a = info[int(i)]
        for j in second:
            sj, b = info[int(j)]
            if si == sj and _overlaps(a, b):
                bad.append((int(i), int(j)))
    return bad
