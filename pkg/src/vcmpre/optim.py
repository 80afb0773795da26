"""Adam optimizer over autodiff tensors.

State (first/second moments, step counter) lives in plain float32 arrays so a
checkpoint can serialize it exactly; the update arithmetic runs in float64 and
is rounded back to float32, which keeps a save/load/resume cycle bit-identical
to an uninterrupted run.
"""

import numpy as np


class Adam:
    """Bias-corrected Adam.  Parameter order is the identity of the state."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 names=None):
        self.params = list(params)
        if not self.params:
            raise ValueError("Adam: empty parameter list")
        self.names = list(names) if names is not None else [
            f"param{i}" for i in range(len(self.params))
        ]
        if len(self.names) != len(self.params):
            raise ValueError("Adam: names/params length mismatch")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(
                    f"Adam.step: parameter {self.names[i]} has no gradient; "
                    "run backward() first"
                )
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(
                    f"Adam.step: non-finite gradient in {self.names[i]} "
                    f"at step {self.t}"
                )
            g = p.grad.astype(np.float64)
            m = self.beta1 * self.m[i].astype(np.float64) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[i].astype(np.float64) + (1.0 - self.beta2) * g * g
            self.m[i] = m.astype(np.float32)
            self.v[i] = v.astype(np.float32)
            # Recompute from the float32-rounded state so that a checkpoint
            # restored mid-run takes exactly the same step it would have
            # taken uninterrupted.
            m64 = self.m[i].astype(np.float64)
            v64 = self.v[i].astype(np.float64)
            upd = self.lr * (m64 / b1t) / (np.sqrt(v64 / b2t) + self.eps)
            p.values = (p.values.astype(np.float64) - upd).astype(np.float32)
