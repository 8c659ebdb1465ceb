"""Pure-numpy twin of the compiled risk-set kernel (same signature and output)."""

import numpy as np


def _suffix_at(values, starts):
    # suffix sums sum_{l >= starts[k]} values[l], via segment sums over the
    # (nondecreasing) start positions
    seg = np.add.reduceat(values, starts, axis=0) if starts.size else values[:0]
    # reduceat on a repeated start returns a single element, not zero
    dup = np.zeros(starts.size, dtype=bool)
    dup[:-1] = starts[1:] == starts[:-1]
    seg[dup] = 0
    return np.cumsum(seg[::-1], axis=0)[::-1]


def risk_set_sums(w, X, starts, d, hessian=True):
    S0 = _suffix_at(w, starts)
    wX = w[:, None] * X
    mean = _suffix_at(wX, starts) / S0[:, None]
    logterm = float(d @ np.log(S0))
    grad = d @ mean
    p = X.shape[1]
    if hessian and p:
        S2 = _suffix_at(wX[:, :, None] * X[:, None, :], starts)
        info = (np.einsum("k,kab->ab", d / S0, S2)
                - np.einsum("k,ka,kb->ab", d, mean, mean))
    else:
        info = np.zeros((p, p))
    return logterm, S0, grad, info
