"""Clustered survival data and the marginal quantities of the shared WL frailty model.

Conventions: subject ``j`` of cluster ``i`` has linear predictor
``eta_ij = x_ij' beta`` and the cluster's cumulative exposure is

    S*_i = sum_j Lambda0(t_ij) exp(eta_ij).

Given the data, the cluster frailty is WL(alpha = 1/a_psi, phi = b_psi) with
``a_psi = 1 / (S*_i + 1/a_theta)`` and ``b_psi = r_i + b_theta``, where
``r_i`` counts the events in the cluster.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DataError, DomainError
from .special import log_gamma
from .wl import WLFrailty, WLGeneral, _frailty, laplace, log_abs_laplace_deriv

__all__ = [
    "Subject",
    "Cluster",
    "Dataset",
    "WeibullBaseline",
    "StepBaseline",
    "Baseline",
    "ClusterSufficients",
    "conditional_hazard",
    "cluster_survival",
    "cluster_density",
    "survivor_frailty_law",
    "failure_frailty_law",
    "posterior_frailty",
    "cluster_sufficients",
    "observed_loglik",
]


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class Subject:
    time: float
    event: bool
    covariates: tuple = ()

    def __post_init__(self):
        if not (self.time > 0 and math.isfinite(self.time)):
            raise DataError(f"follow-up time must be positive, got {self.time}")


@dataclass(frozen=True)
class Cluster:
    id: object
    subjects: tuple

    def __post_init__(self):
        if len(self.subjects) == 0:
            raise DataError(f"cluster {self.id!r} has no subjects")

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def r(self) -> int:
        return sum(bool(s.event) for s in self.subjects)

    def arrays(self):
        t = np.array([s.time for s in self.subjects], dtype=float)
        e = np.array([bool(s.event) for s in self.subjects])
        X = np.array([s.covariates for s in self.subjects], dtype=float).reshape(len(t), -1)
        return t, e, X


class Dataset:
    """Immutable clustered, right-censored sample stored as flat arrays.

    Subjects are stored grouped by cluster in first-appearance order of the
    cluster labels, preserving the input order within each cluster.
    """

    def __init__(self, time, event, X, cluster, covariate_names=None):
        time = np.asarray(time, dtype=float).ravel()
        n = time.size
        event = np.asarray(event).ravel()
        if event.dtype != bool:
            if not np.all(np.isin(event, (0, 1))):
                raise DataError("event indicators must be 0/1")
            event = event.astype(bool)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if X.size else np.zeros((n, 0))
        labels = list(np.asarray(cluster, dtype=object).ravel())
        if not (event.size == n == X.shape[0] == len(labels)):
            raise DataError("time, event, X and cluster must have the same length")
        if n == 0:
            raise DataError("empty dataset")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise DataError("all follow-up times must be positive and finite")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates must be finite")

        ids: dict = {}
        codes = np.empty(n, dtype=np.intp)
        for k, lab in enumerate(labels):
            codes[k] = ids.setdefault(lab, len(ids))
        order = np.argsort(codes, kind="stable")

        self.time = time[order]
        self.event = event[order]
        self.X = X[order]
        self.cluster = codes[order]
        self.cluster_ids = list(ids)
        p = self.X.shape[1]
        if covariate_names is None:
            covariate_names = [f"x{k + 1}" for k in range(p)]
        if len(covariate_names) != p:
            raise DataError("covariate_names length does not match X")
        self.covariate_names = list(covariate_names)
        for arr in (self.time, self.event, self.X, self.cluster):
            arr.setflags(write=False)
        self.sizes = np.bincount(self.cluster, minlength=self.m)
        self.events_per_cluster = np.bincount(self.cluster, weights=self.event, minlength=self.m)
        self._risk_index = None

    @classmethod
    def from_clusters(cls, clusters: Sequence[Cluster], covariate_names=None) -> "Dataset":
        t, e, xs, lab = [], [], [], []
        for c in clusters:
            ct, ce, cX = c.arrays()
            t.append(ct)
            e.append(ce)
            xs.append(cX)
            lab.extend([c.id] * c.n)
        ps = {x.shape[1] for x in xs}
        if len(ps) != 1:
            raise DataError("covariate length differs between subjects")
        return cls(np.concatenate(t), np.concatenate(e), np.vstack(xs), lab, covariate_names)

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def m(self) -> int:
        return len(self.cluster_ids)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def clusters(self) -> list[Cluster]:
        out = []
        bounds = np.concatenate([[0], np.cumsum(self.sizes)])
        for i, cid in enumerate(self.cluster_ids):
            sl = slice(bounds[i], bounds[i + 1])
            subjects = tuple(
                Subject(float(t), bool(e), tuple(float(v) for v in x))
                for t, e, x in zip(self.time[sl], self.event[sl], self.X[sl])
            )
            out.append(Cluster(cid, subjects))
        return out

    def risk_index(self):
        if self._risk_index is None:
            from .cox import RiskIndex

            self._risk_index = RiskIndex.from_data(self)
        return self._risk_index

    def __repr__(self):
        return f"Dataset(n={self.n}, m={self.m}, p={self.p}, events={int(self.event.sum())})"


# ----------------------------------------------------------------- baselines


@dataclass(frozen=True)
class WeibullBaseline:
    """Lambda0(t) = lam * t**rho."""

    lam: float
    rho: float

    kind = "weibull"

    def __post_init__(self):
        if not (self.lam > 0 and self.rho > 0):
            raise DomainError("Weibull baseline needs lam > 0 and rho > 0")

    def cumhaz(self, t):
        return self.lam * np.power(t, self.rho)

    def hazard(self, t):
        return self.lam * self.rho * np.power(t, self.rho - 1.0)

    def log_hazard(self, t):
        return math.log(self.lam * self.rho) + (self.rho - 1.0) * np.log(t)


@dataclass(frozen=True, eq=False)
class StepBaseline:
    """Discrete cumulative hazard with jumps ``increments`` at ``times``."""

    times: np.ndarray
    increments: np.ndarray
    cumulative: np.ndarray = field(init=False, repr=False)

    kind = "step"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        inc = np.asarray(self.increments, dtype=float).ravel()
        if times.size == 0 or times.size != inc.size:
            raise DomainError("step baseline needs matching, non-empty times and increments")
        if np.any(np.diff(times) <= 0) or times[0] <= 0:
            raise DomainError("jump times must be positive and strictly increasing")
        if np.any(inc < 0):
            raise DomainError("baseline increments must be non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "cumulative", np.cumsum(inc))

    @property
    def last_time(self) -> float:
        return float(self.times[-1])

    def cumhaz(self, t):
        k = np.searchsorted(self.times, t, side="right")
        out = np.where(k > 0, self.cumulative[np.maximum(k - 1, 0)], 0.0)
        return float(out) if np.ndim(t) == 0 else out

    def jump_index(self, t):
        """Index of each ``t`` among the jump times; raises if any is not a jump."""
        ta = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, ta)
        ok = (k < self.times.size) & (self.times[np.minimum(k, self.times.size - 1)] == ta)
        if not np.all(ok):
            raise DomainError("step baseline hazard requested at a non-jump time")
        return k

    def hazard(self, t):
        """Jump height at ``t``; ``t`` must be one of the stored jump times."""
        out = self.increments[self.jump_index(t)]
        return float(out) if np.ndim(t) == 0 else out

    def log_hazard(self, t):
        with np.errstate(divide="ignore"):
            return np.log(self.hazard(t))

    def __eq__(self, other):
        return (isinstance(other, StepBaseline)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.increments, other.increments))


Baseline = Union[WeibullBaseline, StepBaseline]


# ----------------------------------------------------- marginal quantities


def _eta(xs, beta, n):
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size == 0:
        return np.zeros(n)
    return np.asarray(xs, dtype=float).reshape(n, -1) @ beta


def conditional_hazard(t, z, x, beta, b: Baseline) -> float:
    """lambda0(t) * z * exp(x' beta)."""
    eta = float(np.dot(np.asarray(x, dtype=float).ravel(), np.asarray(beta, dtype=float).ravel())) if np.size(beta) else 0.0
    return float(b.hazard(t)) * z * math.exp(eta)


def _exposure(times, xs, beta, b):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise DomainError("times must be positive")
    eta = _eta(xs, beta, times.size)
    return times, eta, float(np.sum(b.cumhaz(times) * np.exp(eta)))


def cluster_survival(times, xs, beta, theta, b: Baseline) -> float:
    """Joint marginal survival P(T_1 > t_1, ..., T_n > t_n) of one cluster."""
    _, _, s_star = _exposure(times, xs, beta, b)
    return laplace(s_star, theta)


def cluster_density(times, xs, beta, theta, b: Baseline, log: bool = False) -> float:
    """Joint marginal density of a cluster in which every subject failed."""
    times, eta, s_star = _exposure(times, xs, beta, b)
    n = times.size
    logd = float(np.sum(np.log(b.hazard(times)) + eta)) + log_abs_laplace_deriv(n, s_star, theta)
    return logd if log else math.exp(logd)


def _conditioned_law(t, theta, b, extra_shape):
    f = _frailty(theta)
    cum = float(b.cumhaz(t))
    big_a = f.a_theta / (1.0 + f.a_theta * cum)
    return WLGeneral(alpha=1.0 / big_a, phi=f.b_theta + extra_shape)


def survivor_frailty_law(t, theta, b: Baseline) -> WLGeneral:
    """Law of Z among subjects still alive at ``t`` (exp(x'beta) = 1)."""
    if not t > 0:
        raise DomainError("t must be positive")
    return _conditioned_law(t, theta, b, 0.0)


def failure_frailty_law(t, theta, b: Baseline) -> WLGeneral:
    """Law of Z among subjects failing at ``t`` (exp(x'beta) = 1)."""
    if not t > 0:
        raise DomainError("t must be positive")
    return _conditioned_law(t, theta, b, 1.0)


@dataclass(frozen=True)
class ClusterSufficients:
    a_psi: float
    b_psi: float


def posterior_frailty(c: Cluster, beta, theta, b: Baseline) -> tuple[WLGeneral, ClusterSufficients]:
    f = _frailty(theta)
    t, e, X = c.arrays()
    _, _, s_star = _exposure(t, X, beta, b)
    a_psi = 1.0 / (s_star + 1.0 / f.a_theta)
    b_psi = float(e.sum()) + f.b_theta
    return WLGeneral(alpha=1.0 / a_psi, phi=b_psi), ClusterSufficients(a_psi, b_psi)


def cluster_sufficients(data: Dataset, beta, theta, b: Baseline, eta=None):
    """Vectorised ``(alpha_psi, b_psi)`` arrays for all clusters.

    ``alpha_psi = 1/a_psi = S*_i + 1/a_theta`` is returned instead of
    ``a_psi`` since that is what the moment formulas consume.
    """
    f = _frailty(theta)
    if eta is None:
        eta = _eta(data.X, beta, data.n)
    s_star = np.bincount(data.cluster, weights=b.cumhaz(data.time) * np.exp(eta), minlength=data.m)
    return s_star + 1.0 / f.a_theta, data.events_per_cluster + f.b_theta


def observed_loglik(beta, theta, b: Baseline, data: Dataset, include_baseline: bool = True) -> float:
    """Observed-data log-likelihood of the shared WL frailty model.

    ``include_baseline=False`` drops the ``sum delta log lambda0(t)`` term,
    which is constant when the baseline is held fixed.
    """
    f = _frailty(theta)
    a, bt = f.a_theta, f.b_theta
    eta = _eta(data.X, beta, data.n)
    alpha_psi, b_psi = cluster_sufficients(data, beta, f, b, eta=eta)
    log_a_psi = -np.log(alpha_psi)
    per_cluster = log_gamma(b_psi) + b_psi * log_a_psi + np.log1p(b_psi / alpha_psi)
    ll = (data.m * (math.log(f.theta) - math.log(2.0) - (bt + 1.0) * math.log(a) - log_gamma(bt))
          + float(np.sum(eta[data.event])) + float(np.sum(per_cluster)))
    if include_baseline:
        tev = data.time[data.event]
        lh = b.log_hazard(tev) if tev.size else np.zeros(0)
        if np.any(np.isneginf(lh)):
            warnings.warn("baseline hazard is zero at an event time; log-likelihood is -inf",
                          RuntimeWarning, stacklevel=2)
            return -math.inf
        ll += float(np.sum(lh))
    return ll
