"""Central finite-difference gradient checks."""

import numpy as np

from ..seeding import make_rng
from .tensor import no_grad


def relative_error(analytic, numeric, floor=1e-3):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(fn, tensors, probes=20, eps=1e-5, seed=0):
    """
    Compare backprop gradients with central differences.

    ``fn()`` must recompute its output from the current values of
    ``tensors`` (leaf tensors with ``requires_grad``); it is called once
    with gradients and twice per probe without. A non-scalar output is
    reduced with a fixed random projection.

    Args:
        fn: Zero-argument callable returning a Tensor
        tensors: Leaf tensors to probe
        probes: Number of (tensor, element) probes
        eps: Finite-difference step
        seed: Seed for the projection and the probe positions

    Returns:
        Largest relative error ``|a - n| / max(|a|, |n|, 1e-3)`` over the probes
    """
    rng = make_rng(seed, 'gradcheck')
    for tensor in tensors:
        tensor.zero_grad()
    out = fn()
    projection = rng.standard_normal(out.shape).astype(out.dtype)
    (out * projection).sum().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def objective():
        with no_grad():
            return float(np.sum(fn().data * projection))

    worst = 0.0
    for _ in range(probes):
        which = int(rng.integers(len(tensors)))
        tensor = tensors[which]
        index = tuple(int(rng.integers(size)) for size in tensor.shape)
        original = tensor.data[index].copy()
        tensor.data[index] = original + eps
        upper = objective()
        tensor.data[index] = original - eps
        lower = objective()
        tensor.data[index] = original
        numeric = (upper - lower) / (2.0 * eps)
        worst = max(worst, relative_error(float(analytic[which][index]), numeric))
    return worst
