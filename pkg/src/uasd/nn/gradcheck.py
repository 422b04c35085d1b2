"""Central-difference gradient verification.

Compares analytic gradients (one train-mode forward + backward) against
central finite differences of the forward pass, on a random subsample of
parameter entries and input entries. The loss is a fixed random linear
projection of the network output unless a custom loss is supplied, so the
check exercises every output element with nonzero upstream gradient.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import Layer
from .netspec import named_params

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def projection_loss(rng: np.random.Generator, output_shape) -> LossFn:
    """loss(out) = sum(out * R) for a fixed random R; d loss/d out = R."""
    r = rng.normal(0.0, 1.0, output_shape)

    def loss_fn(out: np.ndarray) -> tuple[float, np.ndarray]:
        return float(np.sum(out * r)), r

    return loss_fn


def grad_check(
    net: Layer,
    x: np.ndarray,
    loss_fn: LossFn | None = None,
    rng: np.random.Generator | None = None,
    epsilon: float = 1e-5,
    max_entries_per_tensor: int = 24,
    check_input: bool = True,
    noise_atol: float = 1e-9,
) -> float:
    """Max relative error |analytic - numeric| / max(|a|, |n|, 1e-8).

    Differences below noise_atol are ignored: central differences of an
    O(1) loss at step 1e-5 carry ~1e-11 of float64 cancellation noise, so
    smaller deviations on incidentally tiny gradient entries say nothing
    about the backward pass (a genuine formula error scales with the
    entry's magnitude and still trips the relative bound).
    """
    rng = rng or np.random.default_rng(0)
    if loss_fn is None:
        probe = net.forward(x, train=True)
        loss_fn = projection_loss(rng, probe.shape)

    for p in net.params():
        p.zero_grad()
    out = net.forward(x, train=True)
    _, dout = loss_fn(out)
    dx = net.backward(dout)

    def forward_loss() -> float:
        return loss_fn(net.forward(x, train=True))[0]

    worst = 0.0
    for _, param in named_params(net):
        flat = param.value.reshape(-1)
        grad = param.grad.reshape(-1)
        n_probe = min(max_entries_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=n_probe, replace=False)
        for i in idx:
            original = flat[i]
            flat[i] = original + epsilon
            plus = forward_loss()
            flat[i] = original - epsilon
            minus = forward_loss()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            worst = max(worst, _rel_err(grad[i], numeric, noise_atol))

    if check_input:
        xflat = x.reshape(-1)
        dxflat = dx.reshape(-1)
        n_probe = min(max_entries_per_tensor, xflat.size)
        idx = rng.choice(xflat.size, size=n_probe, replace=False)
        for i in idx:
            original = xflat[i]
            xflat[i] = original + epsilon
            plus = forward_loss()
            xflat[i] = original - epsilon
            minus = forward_loss()
            xflat[i] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            worst = max(worst, _rel_err(dxflat[i], numeric, noise_atol))
    return worst


def _rel_err(analytic: float, numeric: float, noise_atol: float) -> float:
    if abs(analytic - numeric) <= noise_atol:
        return 0.0
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
