"""Central-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_diff_check(op, inputs, eps: float = 1e-5, seed: int = 0, wrt=None) -> float:
    """Compare reverse-mode gradients of ``op`` with central differences.

    ``op`` maps tensors to a tensor and must be deterministic (re-seed any
    dropout rng inside it). The output is contracted with a fixed random
    projection to a scalar so the whole Jacobian is exercised. Inputs are
    promoted to float64.

    Returns the worst relative error over the checked inputs, where each
    input's error is max|analytic - numeric| / max(max|analytic|, max|numeric|).
    ``wrt`` selects input positions to check (default: all).
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    rng = np.random.default_rng(seed)

    tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    out = op(*tensors)
    proj = rng.standard_normal(out.shape)

    def scalar(arrs):
        return float(np.sum(op(*[Tensor(a) for a in arrs]).data * proj))

    (out * Tensor(proj)).sum().backward()

    worst = 0.0
    for i in wrt:
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        numeric = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = scalar(arrays)
            flat[k] = orig - eps
            down = scalar(arrays)
            flat[k] = orig
            numeric.reshape(-1)[k] = (up - down) / (2 * eps)
        scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-300)
        worst = max(worst, float(np.abs(analytic - numeric).max() / scale))
    return worst
