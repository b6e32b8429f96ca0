import numpy as np

from .tensor import Tensor


def _targets(fragment, x, params):
    if params is None:
        params = list(fragment.parameters()) if hasattr(fragment, "parameters") else []
    params = [p[1] if isinstance(p, tuple) else p for p in params]
    if isinstance(x, Tensor) and x.requires_grad and all(p is not x for p in params):
        params = params + [x]
    if not params:
        raise ValueError("grad_check needs at least one tensor with requires_grad")
    return params


def grad_check(fragment, x, h=1e-5, params=None):
    """Max relative error between backprop and central differences.

    ``fragment(x)`` must return a scalar Tensor. The error for one entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``; the maximum over every entry of every
    checked tensor is returned.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    targets = _targets(fragment, x, params)
    for t in targets:
        t.zero_grad()
    loss = fragment(x)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("non-finite loss in grad_check")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in targets]

    worst = 0.0
    for t, a in zip(targets, analytic):
        flat = t.data.reshape(-1)
        af = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fragment(x).item()
            flat[i] = orig - h
            fm = fragment(x).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite loss while differencing")
            num = (fp - fm) / (2.0 * h)
            err = abs(af[i] - num) / max(abs(af[i]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
