"""AdamW with decoupled weight decay over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    """Bias-corrected Adam moments plus decoupled decay.

    p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p

    State is float32 and fully serializable, so a checkpointed run resumes
    bit-exactly.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        lr_overrides: dict[str, float] | None = None,
    ):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.lr_overrides = dict(lr_overrides or {})
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = np.float32(1.0 - self.beta1**t)
        bc2 = np.float32(1.0 - self.beta2**t)
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            lr = np.float32(self.lr_overrides.get(name, self.lr))
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (np.float32(1.0) - b1) * g
            v *= b2
            v += (np.float32(1.0) - b2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            update = m_hat / (np.sqrt(v_hat) + np.float32(self.eps))
            if self.weight_decay:
                update = update + np.float32(self.weight_decay) * p.data
            p.data = p.data - lr * update

    # ---- persistence ----

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name] = tensors[f"opt.m.{name}"].astype(np.float32).copy()
            self.v[name] = tensors[f"opt.v.{name}"].astype(np.float32).copy()
        self.step_count = int(step_count)
