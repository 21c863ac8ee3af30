"""Parameter containers for the layers the attention model uses."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor, concat


class Module:
    """Base container. Parameters, buffers and child modules are discovered
    from instance attributes in assignment order."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def named_buffers(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key.startswith("buf_") and isinstance(val, np.ndarray):
                yield prefix + key[4:], val
            elif isinstance(val, Module):
                yield from val.named_buffers(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict:
        state = {k: p.data for k, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = [k for k in list(own) + list(bufs) if k not in state]
        if missing:
            raise KeyError(f"state is missing {missing[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr
        for k, b in bufs.items():
            b[...] = state[k]


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, dilation=(1, 1), padding=(0, 0), rng=None):
        rng = rng or np.random.default_rng()
        kh, kw = kernel
        bound = 1.0 / np.sqrt(in_ch * kh * kw)
        self.weight = Parameter(_uniform(rng, bound, (out_ch, in_ch, kh, kw)))
        self.bias = Parameter(_uniform(rng, bound, (out_ch,)))
        self.dilation = tuple(dilation)
        self.padding = tuple(padding)

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.padding, self.dilation)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.buf_running_mean = np.zeros(channels, dtype=np.float32)
        self.buf_running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(x, self.weight, self.bias, self.buf_running_mean,
                             self.buf_running_var, self.training)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng=None):
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(_uniform(rng, bound, (fan_in, fan_out)))
        self.bias = Parameter(_uniform(rng, bound, (fan_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LSTMDirection(Module):
    """One direction of an LSTM; weights uniform in +-1/sqrt(F + H), forget bias 1."""

    def __init__(self, input_size: int, hidden_size: int, rng=None):
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(input_size + hidden_size)
        h4 = 4 * hidden_size
        self.w_ih = Parameter(_uniform(rng, bound, (input_size, h4)))
        self.w_hh = Parameter(_uniform(rng, bound, (hidden_size, h4)))
        b = np.zeros(h4, dtype=np.float32)
        b[hidden_size : 2 * hidden_size] = 1.0
        self.bias = Parameter(b)

    def __call__(self, x: Tensor, reverse: bool = False) -> Tensor:
        return F.lstm(x, self.w_ih, self.w_hh, self.bias, reverse=reverse)


class BLSTM(Module):
    """Bidirectional LSTM: (B, T, F) -> (B, T, 2H), each step [forward | backward]."""

    def __init__(self, input_size: int, hidden_size: int, rng=None):
        rng = rng or np.random.default_rng()
        self.hidden_size = hidden_size
        self.fwd = LSTMDirection(input_size, hidden_size, rng)
        self.bwd = LSTMDirection(input_size, hidden_size, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return concat([self.fwd(x), self.bwd(x, reverse=True)], axis=-1)
