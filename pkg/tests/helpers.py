"""Shared numerical oracles for the test suite.

These stay deliberately independent of the library's reverse-mode code:
finite differences only ever call the loss as a black box.
"""

from __future__ import annotations

import numpy as np


def central_diff_param_grads(f, params, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of scalar ``f()`` w.r.t. every tensor.

    ``f`` must recompute the loss from the current parameter values; each
    coordinate is perturbed in place and restored.
    """
    grads = {}
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[p.name] = g
    return grads


def max_rel_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
                  floor: float = 1e-4) -> float:
    """Worst relative disagreement; tiny gradients compare absolutely via the floor."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
