"""Adam optimizer over named parameter tensors, with densification support.

Moments are stored per tensor and follow the point set through control
events: surviving rows carry their history, newly created points start from
zeroed moments.  Bias-correction time is tracked per tensor so a freshly
added tensor does not disturb the others.
"""

import numpy as np


def exponential_lr(lr_init, lr_final, max_steps):
    """Log-linear interpolation from lr_init to lr_final over max_steps."""
    lr_init = float(lr_init)
    lr_final = float(lr_final)

    def schedule(step):
        if max_steps <= 0 or lr_init <= 0.0:
            return lr_init
        frac = min(max(step / max_steps, 0.0), 1.0)
        return lr_init * (lr_final / lr_init) ** frac

    return schedule


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = {k: 0 for k in params}

    def step(self, params, grads, lrs):
        """Update ``params`` in place; ``lrs`` maps name -> learning rate."""
        for k, p in params.items():
            g = np.asarray(grads[k], dtype=p.dtype)
            lr = lrs[k]
            if lr == 0.0:
                continue
            self.t[k] += 1
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / (1.0 - self.beta1 ** self.t[k])
            vhat = v / (1.0 - self.beta2 ** self.t[k])
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def remap_rows(self, name, keep_index, n_new):
        """Track a densification event: keep surviving rows, zero the new ones."""
        for store in (self.m, self.v):
            old = store[name][keep_index]
            fresh = np.zeros((n_new,) + old.shape[1:], dtype=old.dtype)
            store[name] = np.concatenate([old, fresh]) if n_new else old.copy()

    def reset_tensor(self, name):
        """Drop the moment history of one tensor (used by opacity resets)."""
        self.m[name][:] = 0.0
        self.v[name][:] = 0.0

    def state_arrays(self):
        """Flat name -> array view of the optimizer state, for checkpoints."""
        out = {}
        for k in self.m:
            out[f"adam_m_{k}"] = self.m[k]
            out[f"adam_v_{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays, steps):
        for k in list(self.m):
            self.m[k] = arrays[f"adam_m_{k}"]
            self.v[k] = arrays[f"adam_v_{k}"]
        self.t = dict(steps)
