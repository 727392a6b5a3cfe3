"""Shared test utilities: finite-difference gradient oracle and the
acceptance-criteria result log printed at the end of the run."""

import contextlib

import numpy as np

from inverse_forge.tensor import Tensor

# (number, description) -> ("PASS"/"FAIL", [detail strings])
ACCEPTANCE_RESULTS = {}


@contextlib.contextmanager
def criterion(number: int, description: str):
    """Record one acceptance criterion's outcome; yields a detail list."""
    details = []
    try:
        yield details
    except BaseException:
        ACCEPTANCE_RESULTS[number] = (description, "FAIL", details)
        raise
    ACCEPTANCE_RESULTS[number] = (description, "PASS", details)


def finite_diff(f, tensors, step=1e-5):
    """Central-difference gradients of scalar f() w.r.t. each tensor's data.

    f must rebuild its graph from the tensors' current .data on every call.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(f())
            flat[i] = orig - step
            down = float(f())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def check_grads(build_loss, params, rtol=1e-4, step=1e-5):
    """Assert analytic gradients match central finite differences.

    build_loss() returns a fresh scalar loss Tensor from the params' data.
    """
    loss = build_loss()
    for p in params:
        p.grad = None
    loss.backward()
    numeric = finite_diff(lambda: build_loss().data, params, step=step)
    for p, num in zip(params, numeric):
        ana = p.grad if p.grad is not None else np.zeros_like(p.data)
        scale = np.maximum(np.abs(num), 1.0)
        worst = np.max(np.abs(ana - num) / scale)
        assert worst < rtol, f"gradient mismatch {worst:.3e} for shape {p.data.shape}"


def make_params(rng, *tensors):
    for t in tensors:
        t.requires_grad = True
    return list(tensors)
