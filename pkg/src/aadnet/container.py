"""Binary trial container and its JSON-lines manifest.

Container layout (little endian)::

    b"AADTRLv1"
    u32 n_trials, eeg_T, n_elec, spec_T, n_freq, duration_ms
    per trial: u8 label, f32 eeg[eeg_T, n_elec], f32 spec_a[spec_T, n_freq],
               f32 spec_b[spec_T, n_freq]

Reading maps the file instead of loading it, so containers larger than RAM
can be batched from.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import TrialRecord, trial_dims

MAGIC = b"AADTRLv1"
_HEADER = struct.Struct("<6I")
HEADER_BYTES = len(MAGIC) + _HEADER.size


class ContainerError(ValueError):
    code = "container_error"


class BadMagicError(ContainerError):
    code = "bad_magic"


class TruncatedContainerError(ContainerError):
    code = "truncated"


class DimensionMismatchError(ContainerError):
    code = "dimension_mismatch"


@dataclass(frozen=True)
class ContainerHeader:
    n_trials: int
    eeg_T: int
    n_elec: int
    spec_T: int
    n_freq: int
    duration_ms: int

    @property
    def duration_s(self) -> int:
        return self.duration_ms // 1000

    def record_dtype(self) -> np.dtype:
        return np.dtype([
            ("label", "u1"),
            ("eeg", "<f4", (self.eeg_T, self.n_elec)),
            ("spec_a", "<f4", (self.spec_T, self.n_freq)),
            ("spec_b", "<f4", (self.spec_T, self.n_freq)),
        ])

    def pack(self) -> bytes:
        return MAGIC + _HEADER.pack(self.n_trials, self.eeg_T, self.n_elec, self.spec_T,
                                    self.n_freq, self.duration_ms)


class TrialWriter:
    """Streams trials into a container; the trial count is patched on close."""

    def __init__(self, path, eeg_T: int, n_elec: int, spec_T: int, n_freq: int, duration_s: int):
        self.path = Path(path)
        self.header = ContainerHeader(0, eeg_T, n_elec, spec_T, n_freq, int(duration_s * 1000))
        self._dtype = self.header.record_dtype()
        self._fh = open(self.path, "wb")
        self._fh.write(self.header.pack())
        self.count = 0

    def write(self, eeg, spec_a, spec_b, label: int) -> None:
        h = self.header
        if (np.shape(eeg) != (h.eeg_T, h.n_elec) or np.shape(spec_a) != (h.spec_T, h.n_freq)
                or np.shape(spec_b) != (h.spec_T, h.n_freq)):
            raise DimensionMismatchError(
                f"trial {self.count}: shapes {np.shape(eeg)}, {np.shape(spec_a)}, {np.shape(spec_b)} "
                f"do not match container ({h.eeg_T}, {h.n_elec}) / ({h.spec_T}, {h.n_freq})"
            )
        rec = np.zeros((), dtype=self._dtype)
        rec["label"] = label
        rec["eeg"] = eeg
        rec["spec_a"] = spec_a
        rec["spec_b"] = spec_b
        self._fh.write(rec.tobytes())
        self.count += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(len(MAGIC))
        self._fh.write(_HEADER.pack(self.count, *(
            getattr(self.header, f) for f in ("eeg_T", "n_elec", "spec_T", "n_freq", "duration_ms"))))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TrialSet:
    """Read-only view of a container; arrays are memory-mapped."""

    def __init__(self, header: ContainerHeader, records: np.ndarray, path=None):
        self.header = header
        self.records = records
        self.path = path

    def __len__(self) -> int:
        return self.header.n_trials

    @property
    def duration_s(self) -> int:
        return self.header.duration_s

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self.records["label"], dtype=np.int64)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(eeg, spec_a, spec_b, labels) for trial indices ``idx``, loaded into memory."""
        idx = np.asarray(idx, dtype=np.int64)
        rec = self.records[idx]
        return (np.ascontiguousarray(rec["eeg"]), np.ascontiguousarray(rec["spec_a"]),
                np.ascontiguousarray(rec["spec_b"]), rec["label"].astype(np.int64))

    def __getitem__(self, i: int) -> TrialRecord:
        r = self.records[i]
        return TrialRecord(np.array(r["eeg"]), np.array(r["spec_a"]), np.array(r["spec_b"]),
                           int(r["label"]), self.duration_s)


def write_trials(records, path) -> None:
    """Write an iterable of :class:`TrialRecord` sharing one set of dimensions."""
    records = list(records)
    if not records:
        raise ValueError("no trials to write")
    first = records[0]
    t_s, n_freq = first.spec_a.shape
    with TrialWriter(path, *first.eeg.shape, t_s, n_freq, first.duration_s) as w:
        for r in records:
            if r.duration_s != first.duration_s:
                raise DimensionMismatchError("trials of different durations in one container")
            w.write(r.eeg, r.spec_a, r.spec_b, r.label)


def read_header(path) -> ContainerHeader:
    with open(path, "rb") as fh:
        head = fh.read(HEADER_BYTES)
    if len(head) < len(MAGIC) or head[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a trial container")
    if len(head) < HEADER_BYTES:
        raise TruncatedContainerError(f"{path}: truncated container header")
    return ContainerHeader(*_HEADER.unpack(head[len(MAGIC):]))


def read_trials(path, duration_s: int | None = None) -> TrialSet:
    """Open a container, validating magic, payload size and dimensions."""
    path = Path(path)
    h = read_header(path)
    if h.duration_ms % 1000:
        raise DimensionMismatchError(f"{path}: duration {h.duration_ms} ms is not whole seconds")
    try:
        eeg_T, spec_T = trial_dims(h.duration_s)
    except ValueError as e:
        raise DimensionMismatchError(f"{path}: {e}") from None
    if (h.eeg_T, h.spec_T) != (eeg_T, spec_T):
        raise DimensionMismatchError(
            f"{path}: header dims ({h.eeg_T}, {h.spec_T}) do not match {h.duration_s} s trials "
            f"({eeg_T}, {spec_T})"
        )
    if duration_s is not None and duration_s != h.duration_s:
        raise DimensionMismatchError(f"{path}: holds {h.duration_s} s trials, expected {duration_s} s")
    dtype = h.record_dtype()
    need = HEADER_BYTES + h.n_trials * dtype.itemsize
    have = path.stat().st_size
    if have < need:
        raise TruncatedContainerError(
            f"{path}: header promises {h.n_trials} trials ({need} bytes), file has {have} bytes"
        )
    if h.n_trials == 0:
        return TrialSet(h, np.zeros(0, dtype=dtype), path)
    recs = np.memmap(path, dtype=dtype, mode="r", offset=HEADER_BYTES, shape=(h.n_trials,))
    return TrialSet(h, recs, path)


# -- manifest --------------------------------------------------------------------


def write_manifest(entries, path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
