"""Adam with optional per-parameter binary masks."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias correction.

    ``params`` maps names to :class:`~aadnet.autodiff.tensor.Parameter`.
    A parameter with a mask (see :meth:`set_mask`) has its update multiplied
    by the mask and is re-masked after every step, so masked entries stay
    exactly zero.
    """

    def __init__(self, params: dict, lr: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.masks: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_mask(self, name: str, mask: np.ndarray) -> None:
        p = self.params[name]
        mask = np.asarray(mask)
        if mask.shape != p.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {name} {p.shape}")
        mask = mask.astype(p.dtype)
        self.masks[name] = mask
        p.data *= mask
        self.m[name] *= mask
        self.v[name] *= mask

    def clear_masks(self) -> None:
        self.masks.clear()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            mask = self.masks.get(k)
            if mask is not None:
                g = g * mask
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            if mask is not None:
                update *= mask
            p.data -= update.astype(p.dtype, copy=False)
            if mask is not None:
                p.data *= mask

    def state_arrays(self) -> dict:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Functional Adam update for a single array.

    ``t`` is the 1-based step index. Returns ``(param, m, v)`` as new arrays.
    """
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad ** 2
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v
