"""Joint CNN-LSTM attention classifier.

EEG trials (T_e x 10) and the two speakers' spectrograms (T_s x 257) are
embedded by two convolutional stacks into 48-step sequences, concatenated
per step into 48 x 64, passed through a bidirectional LSTM and a stack of
fully connected layers ending in a two-way softmax.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import BLSTM, BatchNorm2d, Conv2d, Linear, Module
from .autodiff.tensor import Tensor, concat, no_grad
from .dsp import N_FREQ, TRIAL_DURATIONS, trial_dims

EMBED_STEPS = 48


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel: tuple[int, int]
    dilation: tuple[int, int]
    padding: tuple[int, int]
    pool: tuple[int, int]


# rows: kernels, kernel size, dilation, padding, maxpool
EEG_LAYERS = (
    LayerSpec(32, (24, 1), (1, 1), (12, 0), (2, 1)),
    LayerSpec(32, (7, 1), (2, 1), (6, 0), (1, 2)),
    LayerSpec(32, (7, 5), (1, 1), (3, 2), (2, 5)),
    LayerSpec(32, (7, 1), (1, 1), (3, 0), (1, 1)),
)

AUDIO_LAYERS = (
    LayerSpec(32, (1, 7), (1, 1), (0, 3), (1, 1)),
    LayerSpec(32, (7, 1), (1, 1), (0, 0), (1, 4)),
    LayerSpec(32, (3, 5), (8, 8), (0, 16), (1, 2)),
    LayerSpec(32, (3, 3), (16, 16), (0, 16), (1, 1)),
    LayerSpec(1, (1, 1), (1, 1), (0, 0), (2, 2)),
)


class AblationMode(str, enum.Enum):
    NONE = "none"
    ZERO_EEG = "zero_eeg"
    ZERO_AUDIO = "zero_audio"
    REMOVE_BLSTM = "remove_blstm"
    REMOVE_FC = "remove_fc"

    @property
    def changes_architecture(self) -> bool:
        return self in (AblationMode.REMOVE_BLSTM, AblationMode.REMOVE_FC)


@dataclass(frozen=True)
class ClassifierConfig:
    hidden_size: int = 32
    fc_widths: tuple = (96, 48, 16, 2)
    dropout_eeg: float = 0.25
    dropout_audio: float = 0.4
    dropout_concat: float = 0.25
    architecture: AblationMode = AblationMode.NONE

    def __post_init__(self):
        if self.fc_widths[-1] != 2:
            raise ValueError("the last fully connected layer must have 2 outputs")
        if self.architecture not in (AblationMode.NONE, AblationMode.REMOVE_BLSTM,
                                     AblationMode.REMOVE_FC):
            raise ValueError(f"{self.architecture.value} is an input mask, not an architecture")


@dataclass(frozen=True)
class ModelConfig:
    duration_s: int = 3
    n_electrodes: int = 10
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        if self.duration_s not in TRIAL_DURATIONS:
            raise ValueError(f"unsupported trial duration {self.duration_s} s, expected one of {TRIAL_DURATIONS}")

    @property
    def eeg_len(self) -> int:
        return trial_dims(self.duration_s)[0]

    @property
    def spec_len(self) -> int:
        return trial_dims(self.duration_s)[1]


def _final_time_pool(layers) -> int:
    """Index of the last layer whose pool acts on the time axis."""
    return max(i for i, row in enumerate(layers) if row.pool[0] > 1)


class ConvBlock(Module):
    """conv -> max-pool -> batch norm -> dropout -> ReLU."""

    def __init__(self, in_ch: int, row: LayerSpec, dropout: float, adaptive_rows: int | None, rng):
        self.conv = Conv2d(in_ch, row.out_channels, row.kernel, row.dilation, row.padding, rng)
        self.bn = BatchNorm2d(row.out_channels)
        self.pool = row.pool
        self.p = dropout
        self.adaptive_rows = adaptive_rows
        self.rng = rng
        self.last_extents = None

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        conv_hw = y.shape[-2:]
        if self.adaptive_rows is not None and y.shape[-2] // self.pool[0] != self.adaptive_rows:
            y = F.maxpool2d(y, (1, self.pool[1]))
            y = F.adaptive_maxpool_rows(y, self.adaptive_rows)
        else:
            y = F.maxpool2d(y, self.pool)
        self.last_extents = (tuple(conv_hw), tuple(y.shape[-2:]))
        return F.bn_dropout_relu(y, self.bn.weight, self.bn.bias, self.bn.buf_running_mean,
                                 self.bn.buf_running_var, self.p, self.training, self.rng)


class ConvStack(Module):
    def __init__(self, layers, dropout: float, rng):
        final = _final_time_pool(layers)
        blocks, ch = [], 1
        for i, row in enumerate(layers):
            blocks.append(ConvBlock(ch, row, dropout, EMBED_STEPS if i == final else None, rng))
            ch = row.out_channels
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x

    def extents(self) -> list:
        return [b.last_extents for b in self.blocks]


def _as_input(arr, length: int, width: int, what: str) -> Tensor:
    a = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype=np.float32)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[2] != width:
        raise ValueError(f"{what} must be (T, {width}) or (B, T, {width}), got {a.shape}")
    if a.shape[1] != length:
        raise ValueError(f"{what} has {a.shape[1]} time steps, model expects {length}")
    return Tensor(a[:, None])


class AADNet(Module):
    """The attention classifier; ``forward`` returns logits (B, 2)."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        cls = self.config.classifier
        rng = np.random.default_rng(seed)
        self.rng = rng
        self.eeg_cnn = ConvStack(EEG_LAYERS, cls.dropout_eeg, rng)
        self.audio_cnn = ConvStack(AUDIO_LAYERS, cls.dropout_audio, rng)
        width = EEG_LAYERS[-1].out_channels + 2 * 16
        flat = EMBED_STEPS * width
        arch = cls.architecture
        if arch is not AblationMode.REMOVE_BLSTM:
            self.blstm = BLSTM(width, cls.hidden_size, rng)
            flat = EMBED_STEPS * 2 * cls.hidden_size
        widths = (2,) if arch is AblationMode.REMOVE_FC else cls.fc_widths
        fcs, fan_in = [], flat
        for wdt in widths:
            fcs.append(Linear(fan_in, wdt, rng))
            fan_in = wdt
        self.fc = fcs

    # -- pieces ------------------------------------------------------------------

    def set_rng(self, rng: np.random.Generator) -> None:
        """Route every dropout draw through ``rng``."""
        self.rng = rng
        for m in self.modules():
            if isinstance(m, ConvBlock):
                m.rng = rng

    def eeg_embedding(self, eeg) -> Tensor:
        """(B, T_e, E) EEG -> (B, 48, 32)."""
        x = _as_input(eeg, self.config.eeg_len, self.config.n_electrodes, "EEG trial")
        y = self.eeg_cnn(x)  # (B, 32, 48, 1)
        b, c, t, w = y.shape
        return y.transpose(0, 2, 1, 3).reshape(b, t, c * w)

    def audio_embedding(self, spec) -> Tensor:
        """(B, T_s, 257) spectrogram -> (B, 48, 16)."""
        x = _as_input(spec, self.config.spec_len, N_FREQ, "spectrogram")
        y = self.audio_cnn(x)  # (B, 1, 48, 16)
        b, c, t, w = y.shape
        return y.transpose(0, 2, 1, 3).reshape(b, t, c * w)

    def classify(self, joint: Tensor) -> Tensor:
        """(B, 48, 64) joint embedding -> logits (B, 2)."""
        h = self.blstm(joint) if hasattr(self, "blstm") else joint
        h = h.reshape(h.shape[0], -1)
        p = self.config.classifier.dropout_concat
        for fc in self.fc[:-1]:
            h = F.relu(F.dropout(fc(h), p, self.training, self.rng))
        return self.fc[-1](h)

    def forward(self, eeg, spec_a, spec_b, mode: AblationMode = AblationMode.NONE) -> Tensor:
        mode = AblationMode(mode)
        if mode.changes_architecture and mode is not self.config.classifier.architecture:
            raise ValueError(f"{mode.value} needs a model built with that architecture")
        if mode is AblationMode.ZERO_EEG:
            eeg = np.zeros_like(np.asarray(eeg, dtype=np.float32))
        elif mode is AblationMode.ZERO_AUDIO:
            spec_a = np.zeros_like(np.asarray(spec_a, dtype=np.float32))
            spec_b = np.zeros_like(np.asarray(spec_b, dtype=np.float32))
        e = self.eeg_embedding(eeg)
        a = self.audio_embedding(spec_a)
        b = self.audio_embedding(spec_b)
        return self.classify(concat_embeddings(e, a, b))

    __call__ = forward

    def predict_proba(self, eeg, spec_a, spec_b, mode: AblationMode = AblationMode.NONE) -> np.ndarray:
        with no_grad():
            return F.softmax(self.forward(eeg, spec_a, spec_b, mode).data.astype(np.float64))

    def trace_extents(self) -> dict:
        """(conv output, pooled output) extents per block from the last forward pass."""
        return {"eeg": self.eeg_cnn.extents(), "audio": self.audio_cnn.extents()}


def concat_embeddings(eeg: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Per-step feature concatenation [eeg | a | b] -> (B, 48, 64)."""
    if eeg.ndim == 2:
        eeg, a, b = (t.reshape(1, *t.shape) for t in (eeg, a, b))
    if eeg.shape[-2:] != (EMBED_STEPS, 32) or a.shape[-2:] != (EMBED_STEPS, 16) or a.shape != b.shape:
        raise ValueError(f"embedding shapes {eeg.shape}, {a.shape}, {b.shape} do not concatenate")
    if eeg.shape[0] != a.shape[0]:
        raise ValueError("batch sizes of EEG and audio embeddings differ")
    return concat([eeg, a, b], axis=-1)


def model_forward(model: AADNet, trial, mode: AblationMode = AblationMode.NONE) -> np.ndarray:
    """Class probabilities for one trial (anything with eeg/spec_a/spec_b)."""
    model.eval()
    return model.predict_proba(trial.eeg, trial.spec_a, trial.spec_b, mode)[0]


# -- bookkeeping -----------------------------------------------------------------

REFERENCE_PARAM_TOTAL = 416741


def is_prunable(name: str) -> bool:
    """Weights of conv, LSTM and linear layers; biases and BN affine stay dense."""
    if ".bn." in name or name.endswith("bias"):
        return False
    return name.endswith("weight") or name.endswith("w_ih") or name.endswith("w_hh")


def param_count(model: Module) -> dict:
    """Learnable parameter counts per tensor, plus totals split by prunability."""
    per = {k: int(p.size) for k, p in model.named_parameters()}
    prunable = sum(v for k, v in per.items() if is_prunable(k))
    total = sum(per.values())
    return {
        "per_tensor": per,
        "total": total,
        "prunable": prunable,
        "bias_bn": total - prunable,
        "reference_total": REFERENCE_PARAM_TOTAL,
        "delta_vs_reference": total - REFERENCE_PARAM_TOTAL,
    }


def expected_extents(duration_s: int = 3) -> dict:
    """Closed-form (conv, pooled) extents per block, without running the net."""
    if duration_s not in TRIAL_DURATIONS:
        raise ValueError(f"unsupported duration {duration_s}")
    eeg_len, spec_len = trial_dims(duration_s)
    out = {}
    for name, layers, hw in (("eeg", EEG_LAYERS, (eeg_len, 10)), ("audio", AUDIO_LAYERS, (spec_len, N_FREQ))):
        final = _final_time_pool(layers)
        rows = []
        h, w = hw
        for i, row in enumerate(layers):
            h = F.conv_output_size(h, row.kernel[0], row.padding[0], row.dilation[0])
            w = F.conv_output_size(w, row.kernel[1], row.padding[1], row.dilation[1])
            conv = (h, w)
            h = EMBED_STEPS if i == final and h // row.pool[0] != EMBED_STEPS else h // row.pool[0]
            w = w // row.pool[1]
            rows.append((conv, (h, w)))
        out[name] = rows
    return out


def format_param_report(counts: dict) -> str:
    """Plain-text parameter summary as printed by ``aadnet report``."""
    delta = counts["delta_vs_reference"]
    return "\n".join([
        f"parameters total      {counts['total']}",
        f"parameters prunable   {counts['prunable']}",
        f"bias and batch norm   {counts['bias_bn']}",
        f"reference total       {counts['reference_total']}",
        f"delta vs reference    {delta:+d} ({100 * delta / counts['reference_total']:+.2f}%)",
    ])
