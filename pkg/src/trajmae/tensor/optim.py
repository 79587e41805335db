"""Named parameter storage and the Adam optimizer."""

from collections import OrderedDict

import numpy as np

from .autograd import Tensor


class ParamStore:
    """Ordered map from hierarchical names to parameters with Adam moments."""

    def __init__(self):
        self.params = OrderedDict()
        self.m = {}
        self.v = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = Tensor(arr, requires_grad=True, name=name)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self, prefix=""):
        return [n for n in self.params if n.startswith(prefix)]

    def num_values(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        """Current gradients keyed by name; parameters without one get zeros."""
        return OrderedDict(
            (n, p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for n, p in self.params.items()
        )

    def get_values(self):
        return OrderedDict((n, p.data.copy()) for n, p in self.params.items())

    def set_values(self, values):
        for n, arr in values.items():
            p = self.params[n]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def copy(self):
        other = ParamStore()
        for n, p in self.params.items():
            other.add(n, p.data)
            other.m[n] = self.m[n].copy()
            other.v[n] = self.v[n].copy()
        other.step_count = self.step_count
        return other


def adam_step(store, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Apply one bias-corrected Adam update in place and return the store."""
    missing = [n for n in store.params if n not in grads]
    if missing:
        raise KeyError(f"adam_step: missing gradients for {missing}")
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for n, p in store.params.items():
        g = grads[n]
        m = store.m[n]
        v = store.v[n]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
