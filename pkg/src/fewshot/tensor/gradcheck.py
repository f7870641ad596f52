"""Central finite-difference gradient checks."""
import numpy as np

from .core import Tensor, backward, no_grad


def _rel_err(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def finite_diff_check(fn, point, eps=1e-6):
    """Max relative error between ``backward`` and central differences.

    ``fn`` maps a Tensor to a scalar Tensor. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    x = Tensor(np.array(point.data if isinstance(point, Tensor) else point, copy=True),
               requires_grad=True)
    backward(fn(x))
    analytic = x.grad.copy()

    base = x.data.copy()
    numeric = np.zeros_like(base)
    flat, nflat = base.reshape(-1), numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn(Tensor(base.copy())).data)
            flat[i] = orig - eps
            f_minus = float(fn(Tensor(base.copy())).data)
            flat[i] = orig
            nflat[i] = (f_plus - f_minus) / (2 * eps)
    if analytic.size == 0:
        return 0.0
    return float(_rel_err(analytic, numeric).max())


def check_param_grads(loss_fn, params, eps=1e-6, coords_per_param=None, rng=None):
    """Compare parameter gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild its graph on every call and be deterministic.
    When ``coords_per_param`` is given only that many randomly chosen entries
    of each parameter are perturbed. Returns ``{name: max relative error}``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    errors = {}
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            analytic = p.grad.reshape(-1)
            if coords_per_param is None or coords_per_param >= flat.size:
                coords = np.arange(flat.size)
            else:
                coords = rng.choice(flat.size, size=coords_per_param, replace=False)
            worst = 0.0
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(loss_fn().data)
                flat[i] = orig - eps
                f_minus = float(loss_fn().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * eps)
                worst = max(worst, float(_rel_err(analytic[i], numeric)))
            errors[p.name] = worst
    return errors
