"""Central finite-difference gradient checking."""

import numpy as np

from glucorec.autodiff import backward, no_grad


def max_relative_error(params, forward_fn, h=1e-5):
    """Analytic vs central-difference gradients for every parameter entry.

    ``forward_fn`` must rebuild the graph from the live parameter data on
    every call (and fix any randomness internally).
    """
    for p in params:
        p.zero_grad()
    loss = forward_fn()
    backward(loss)
    grads = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data)
             for p in params]

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            with no_grad():  # finite-difference evals need no tape
                flat[i] = saved + h
                up = float(forward_fn().data)
                flat[i] = saved - h
                down = float(forward_fn().data)
            flat[i] = saved
            fd = (up - down) / (2 * h)
            denom = max(abs(gflat[i]), abs(fd), 1e-6)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst
