"""Central finite-difference verification of hand-written backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst: str = ""
    nonfinite_at: str | None = None


def rel_err(a, n):
    return abs(a - n) / max(1.0, abs(a) + abs(n))


def _coords(size, max_coords, rng):
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_coords, replace=False))


def grad_check(layer, x, eps=1e-5, tolerance=1e-4, max_coords=None, seed=0, loss_fn=None,
               check_input=True):
    """Compare ``layer.backward`` with central differences.

    The scalar objective is ``sum(layer(x) * R)`` for a fixed random ``R``
    unless ``loss_fn(y) -> (loss, dy)`` is supplied. Every input and parameter
    coordinate is perturbed, or a random subset of ``max_coords`` per tensor
    (at least 200 is sensible for large layers).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    y = layer.forward(x)
    if loss_fn is None:
        R = rng.standard_normal(np.shape(y))

        def loss_fn(out):
            return float(np.sum(out * R)), R

    def objective():
        return loss_fn(layer.forward(x))[0]

    _, dy = loss_fn(y)
    dx = layer.backward(dy)
    analytic = {}
    if check_input:
        analytic["input"] = (x, np.array(dx, dtype=np.float64))
    for name, owner, key in layer.named_parameters():
        analytic[name] = (owner.params[key], np.array(owner.grads[key], dtype=np.float64))

    worst, worst_name, n_checked = 0.0, "", 0
    for name, (arr, grad) in analytic.items():
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in _coords(flat.size, max_coords, rng):
            old = flat[i]
            flat[i] = old + eps
            fp = objective()
            flat[i] = old - eps
            fm = objective()
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            if not (np.isfinite(num) and np.isfinite(gflat[i])):
                return GradCheckReport(np.inf, False, n_checked, f"{name}[{i}]", f"{name}[{i}]")
            e = rel_err(gflat[i], num)
            n_checked += 1
            if e > worst:
                worst, worst_name = e, f"{name}[{i}]"
    layer.forward(x)
    return GradCheckReport(float(worst), bool(worst <= tolerance), n_checked, worst_name)
