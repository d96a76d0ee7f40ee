#!/usr/bin/env python3
"""
Central finite-difference verification of tape gradients.
"""
import logging
from collections import namedtuple

import numpy as np

from .tensor import Tape, Tensor, no_grad

log = logging.getLogger(__name__)

GradcheckResult = namedtuple("GradcheckResult", "errors passed")


def relative_error(analytic, numeric):
    """||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-8)

    >>> relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    0.0
    >>> relative_error(np.array([1.0]), np.array([1.1]))  # doctest: +ELLIPSIS
    0.09090909090909...
    """
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(
        np.max(np.abs(analytic)) if analytic.size else 0.0,
        np.max(np.abs(numeric)) if numeric.size else 0.0,
        1e-8,
    )
    return float(diff / scale)


def numeric_gradient(fn, inputs, target, eps=1e-5):
    """Central differences of the scalar fn() w.r.t. target.data."""
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = float(fn(*inputs).data.sum())
            flat[i] = orig - eps
            minus = float(fn(*inputs).data.sum())
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * eps)
    return grad


def check_gradients(fn, inputs, eps=1e-5, rtol=1e-4, wrt=None):
    """Compare tape gradients of fn(*inputs) with central differences.

    Parameters
    ----------
    fn : callable
        Returns a Tensor; non-scalar outputs are summed.
    inputs : list of Tensor
        Arguments passed to fn.
    wrt : list of Tensor, optional
        Tensors to check; defaults to the inputs. Parameters of a module
        closed over by fn can be listed here.

    Returns
    -------
    GradcheckResult
        errors maps each checked tensor's position (or name) to its
        relative error; passed is True when all are below rtol.
    """
    wrt = list(inputs) if wrt is None else list(wrt)
    for t in wrt:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        out = fn(*inputs)
        loss = out.sum() if out.size != 1 else out.reshape(())
        tape.backward(loss)
    errors = {}
    for i, t in enumerate(wrt):
        key = t.name if t.name is not None else i
        analytic = t.grad.copy()
        numeric = numeric_gradient(fn, inputs, t, eps)
        errors[key] = relative_error(analytic, numeric)
        log.debug("gradcheck %s: %.3e", key, errors[key])
    passed = all(e < rtol for e in errors.values())
    return GradcheckResult(errors, passed)


def random_tensor(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod(optionflags=doctest.ELLIPSIS)
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
