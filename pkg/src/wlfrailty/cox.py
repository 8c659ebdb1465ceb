"""Cox partial likelihood with per-cluster offsets, Newton fitting and Breslow.

Risk sets are closed on the left, ``R(t_k) = {(i, j): t_ij >= t_k}``, and
tied event times share one denominator (Breslow's approximation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConvergenceError, SingularHessianError
from .model import Dataset, StepBaseline

__all__ = ["RiskIndex", "partial_loglik", "fit_cox", "breslow"]


@dataclass(frozen=True, eq=False)
class RiskIndex:
    """Time-ordering of a dataset shared by every partial-likelihood call.

    ``starts[k]`` is the first position (in ascending-time order) of the risk
    set at the k-th distinct event time.
    """

    order: np.ndarray
    event_times: np.ndarray
    d: np.ndarray
    starts: np.ndarray
    X_sorted: np.ndarray
    cluster_sorted: np.ndarray
    event_x_sum: np.ndarray

    @classmethod
    def from_data(cls, data: Dataset) -> "RiskIndex":
        order = np.argsort(data.time, kind="stable")
        t_sorted = data.time[order]
        event_times, d = np.unique(data.time[data.event], return_counts=True)
        if event_times.size == 0:
            raise ValueError("dataset has no events")
        starts = np.searchsorted(t_sorted, event_times, side="left").astype(np.intp)
        return cls(
            order=order,
            event_times=event_times,
            d=d.astype(float),
            starts=starts,
            X_sorted=np.ascontiguousarray(data.X[order]),
            cluster_sorted=data.cluster[order],
            event_x_sum=data.X[data.event].sum(axis=0),
        )

    @property
    def q(self) -> int:
        return self.event_times.size


def _sorted_weights(beta, data, offsets, idx):
    beta = np.asarray(beta, dtype=float).ravel()
    eta = idx.X_sorted @ beta if beta.size else np.zeros(data.n)
    if offsets is not None:
        eta = eta + np.asarray(offsets, dtype=float)[idx.cluster_sorted]
    shift = float(eta.max())
    return np.exp(eta - shift), shift


def partial_loglik(beta, data: Dataset, offsets=None, hessian: bool = True):
    """Return ``(value, gradient, hessian)`` of the offset Cox partial likelihood.

    ``offsets`` holds one value per cluster (``None`` means all zero).
    """
    idx = data.risk_index()
    beta = np.asarray(beta, dtype=float).ravel()
    w, shift = _sorted_weights(beta, data, offsets, idx)
    logterm, _, mean_sum, info = kernels.risk_set_sums(w, idx.X_sorted, idx.starts, idx.d, hessian)
    lin = float(idx.event_x_sum @ beta) if beta.size else 0.0
    if offsets is not None:
        lin += float(np.sum(np.asarray(offsets, dtype=float)[data.cluster[data.event]]))
    value = lin - logterm - shift * float(idx.d.sum())
    return value, idx.event_x_sum - mean_sum, -info


def fit_cox(data: Dataset, offsets=None, init_beta=None, tol: float = 1e-8,
            max_iter: int = 100, max_halvings: int = 20) -> np.ndarray:
    """Newton-Raphson maximiser of :func:`partial_loglik` with step halving.

    Stops when the gradient sup-norm drops below ``tol``. Raises
    :class:`SingularHessianError` when the information is not positive
    definite and :class:`ConvergenceError` after ``max_iter`` iterations.
    """
    p = data.p
    beta = np.zeros(p) if init_beta is None else np.array(init_beta, dtype=float).ravel()
    if p == 0:
        return beta
    value, grad, hess = partial_loglik(beta, data, offsets)
    for it in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return beta
        info = -hess
        try:
            chol = np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            raise SingularHessianError(
                "Cox information matrix is singular or indefinite "
                "(degenerate covariate or monotone likelihood)", state=beta) from None
        if np.min(np.diag(chol)) ** 2 < 1e-12 * max(1.0, np.max(np.diag(info))):
            raise SingularHessianError("Cox information matrix is numerically singular", state=beta)
        step = np.linalg.solve(info, grad)
        for _ in range(max_halvings + 1):
            cand = beta + step
            new_value, new_grad, new_hess = partial_loglik(cand, data, offsets)
            if new_value >= value - 1e-12 * abs(value):
                break
            step *= 0.5
        else:
            raise ConvergenceError("step halving failed to increase the partial likelihood", state=beta)
        beta, value, grad, hess = cand, new_value, new_grad, new_hess
    if np.max(np.abs(grad)) < tol:
        return beta
    raise ConvergenceError(f"Cox Newton did not converge in {max_iter} iterations", state=beta)


def breslow(beta, offsets, data: Dataset) -> StepBaseline:
    """Breslow jumps ``d_k / sum_{R(t_k)} exp(x'beta + o)`` at the event times."""
    idx = data.risk_index()
    w, shift = _sorted_weights(beta, data, offsets, idx)
    _, S0, _, _ = kernels.risk_set_sums(w, idx.X_sorted[:, :0].copy(), idx.starts, idx.d, False)
    return StepBaseline(idx.event_times.copy(), idx.d / S0 * np.exp(-shift))
