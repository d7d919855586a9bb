import numpy as np

from slicedscore import autodiff as ad


def central_diff(fn, x, eps=1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        grad.flat[i] = (fn(x + e) - fn(x - e)) / (2 * eps)
    return grad


def param_grad_autodiff(model, build_objective):
    """Parameter gradient of an objective through the tape.

    build_objective(field) must return an ObjectiveEstimate.
    """
    tape = ad.Tape()
    fld = model.score_field(tape)
    est = build_objective(fld)
    names = list(fld.params)
    grads = ad.grad(est.value_tensor, [fld.params[k] for k in names])
    return {k: g.values for k, g in zip(names, grads)}


def param_grad_fd(model, objective_value, eps=1e-5):
    """Central-difference parameter gradient; objective_value(model) -> float."""
    arrays = model.param_arrays()
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            for sign in (+1, -1):
                shifted = {k: v.copy() for k, v in arrays.items()}
                shifted[name][idx] += sign * eps
                g[idx] += sign * objective_value(model.with_param_arrays(shifted))
        grads[name] = g / (2 * eps)
    return grads


def flat(grads: dict) -> np.ndarray:
    return np.concatenate([np.ravel(grads[k]) for k in sorted(grads)])


def rel_error(a, b, floor=1e-12):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), floor)
