"""Central finite-difference gradient oracle shared by the test suite."""

import numpy as np


def fd_gradient(f, param, step=1e-5):
    """Central-difference gradient of scalar f() w.r.t. param.data.

    ``f`` must recompute the scalar from current param values on every
    call; the oracle never touches autodiff.
    """
    g = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def relative_error(a, b):
    num = np.linalg.norm(np.asarray(a) - np.asarray(b))
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return num / den


def check_grads(build_loss, params, step=1e-5, tol=1e-4):
    """Assert autodiff grads on ``params`` match finite differences.

    ``build_loss()`` returns a fresh scalar Tensor from the current
    parameter values. Returns the worst relative error observed.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    worst = 0.0
    for p in params:
        assert p.grad is not None, "parameter missing gradient"
        fd = fd_gradient(lambda: build_loss().item(), p, step=step)
        err = relative_error(p.grad, fd)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
    return worst
