"""Central-difference gradient verification for tape backward rules."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_diff_check(f, x: Tensor, eps: float | None = None) -> float:
    """Max per-coordinate error between tape and central-difference gradients
    of a scalar-valued f, relative to the gradient's own scale.

    eps defaults to 1e-3 * coordinate scale. Normalizing per coordinate by a
    near-zero gradient entry would only measure float32 rounding noise, so
    errors are taken relative to max(|analytic|_inf, |numeric|_inf, 1e-6).
    """
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    base_eps = 1e-3 if eps is None else float(eps)
    for i in range(flat.size):
        orig = flat[i]
        h = np.float32(base_eps * max(1.0, abs(float(orig))))
        flat[i] = orig + h
        hi = float(f(x).data)
        flat[i] = orig - h
        lo = float(f(x).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * float(h))

    scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), 1e-6)
    return float(np.max(np.abs(analytic - numeric)) / scale)
