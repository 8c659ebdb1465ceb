"""EM estimation of the shared WL frailty model.

Each iteration computes the posterior moments of the cluster frailties
(E-step), refits the regression part with ``log z_hat`` as a per-cluster
offset (M1: Cox + Breslow, or Weibull regression), and maximises the
expected complete-data frailty log-likelihood in ``theta`` (M2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import polygamma

from .association import kendall_tau_wl
from .cox import breslow, fit_cox
from .errors import ConvergenceError, DomainError, NotPositiveDefiniteError
from .model import (
    Baseline,
    Dataset,
    StepBaseline,
    WeibullBaseline,
    cluster_sufficients,
    observed_loglik,
)
from .special import digamma, log_gamma
from .wl import THETA_MAX, THETA_MIN, WLFrailty, laplace

__all__ = [
    "FitConfig",
    "FitResult",
    "SurvivalCurve",
    "e_step",
    "q2",
    "q2_derivative",
    "m2_maximize_theta",
    "weibull_regression_offset",
    "fit_semiparametric",
    "fit_weibull",
    "fit",
    "std_errors",
    "std_errors_full",
    "predict_survival",
]

OFFSET_CLAMP = 30.0


@dataclass(frozen=True)
class FitConfig:
    baseline_kind: Literal["nonparametric", "weibull"] = "nonparametric"
    eps: float = 1e-6
    max_em_iter: int = 500
    theta_init: float = 0.5
    newton_tol: float = 1e-8
    newton_max_iter: int = 100
    include_baseline_in_loglik: bool = True
    compute_se: bool = True
    se_method: Literal["profile", "fixed"] = "profile"

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if not self.theta_init > 0:
            raise DomainError("theta_init must be positive")
        if self.se_method not in ("profile", "fixed"):
            raise DomainError(f"unknown se_method {self.se_method!r}")
        if self.baseline_kind not in ("nonparametric", "weibull"):
            raise DomainError(f"unknown baseline kind {self.baseline_kind!r}")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    theta_hat: float
    baseline_hat: Baseline
    se_beta: np.ndarray
    se_theta: float
    z_hat: np.ndarray
    kappa_hat: np.ndarray
    loglik_trace: list
    n_iter: int
    kendall_tau: float
    covariate_names: list = field(default_factory=list)
    cluster_ids: list = field(default_factory=list)
    se_baseline: dict = field(default_factory=dict)
    ascent_violations: int = 0

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1] if self.loglik_trace else math.nan


@dataclass(frozen=True)
class SurvivalCurve:
    grid: np.ndarray
    values: np.ndarray
    kind: str
    z: float | None = None


# -------------------------------------------------------------------- E-step


def e_step(data: Dataset, beta, theta, b: Baseline):
    """Posterior means of Z_i and log Z_i for every cluster."""
    alpha, bp = cluster_sufficients(data, beta, theta, b)
    z_hat = bp * (alpha + bp + 1.0) / (alpha * (alpha + bp))
    kappa_hat = -alpha / (bp * (alpha + bp)) + digamma(bp + 1.0) - np.log(alpha)
    return z_hat, kappa_hat


# -------------------------------------------------------------------- M2-step


def _ab(theta):
    th = np.asarray(theta, dtype=float)
    return th * (th + 4.0) / (2.0 * (th + 2.0)), 4.0 / (th * (th + 4.0))


def _q2_from_sums(theta, m, sum_z, sum_kappa):
    a, b = _ab(theta)
    out = (m * (np.log(theta) - log_gamma(b) - (b + 1.0) * np.log(a))
           + (b - 1.0) * sum_kappa - sum_z / a)
    return out


def q2(theta, z_hat, kappa_hat, m: int | None = None) -> float:
    """Expected complete-data frailty log-likelihood, up to theta-free terms.

    Uses ``+(b_theta - 1) sum kappa`` so that the complete-data term is the
    WL(theta) log-density.
    """
    if np.any(np.asarray(theta) <= 0):
        raise DomainError("theta must be positive")
    z_hat = np.asarray(z_hat, dtype=float)
    m = z_hat.size if m is None else m
    if m == 0:
        return 0.0 if np.ndim(theta) == 0 else np.zeros(np.shape(theta))
    out = _q2_from_sums(theta, m, float(z_hat.sum()), float(np.sum(kappa_hat)))
    return float(out) if np.ndim(out) == 0 else out


def _q2_derivs(theta, m, sum_z, sum_kappa):
    th = float(theta)
    a, b = _ab(th)
    u = th * (th + 4.0)
    da = (th * th + 4.0 * th + 8.0) / (2.0 * (th + 2.0) ** 2)
    d2a = -4.0 / (th + 2.0) ** 3
    db = -4.0 * (2.0 * th + 4.0) / u ** 2
    d2b = -8.0 / u ** 2 + 8.0 * (2.0 * th + 4.0) ** 2 / u ** 3
    psi_b = digamma(b)
    la = math.log(a)
    g = (m * (1.0 / th - db * (psi_b + la) - (b + 1.0) * da / a)
         + db * sum_kappa + sum_z * da / a ** 2)
    trig = float(polygamma(1, b))
    h = (m * (-1.0 / th ** 2 - d2b * (psi_b + la) - db * (trig * db + da / a)
              - db * da / a - (b + 1.0) * (d2a / a - (da / a) ** 2))
         + d2b * sum_kappa + sum_z * (d2a / a ** 2 - 2.0 * da ** 2 / a ** 3))
    return g, h


def q2_derivative(theta, z_hat, kappa_hat, m: int | None = None) -> float:
    z_hat = np.asarray(z_hat, dtype=float)
    m = z_hat.size if m is None else m
    return _q2_derivs(theta, m, float(z_hat.sum()), float(np.sum(kappa_hat)))[0]


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def m2_maximize_theta(z_hat, kappa_hat, m: int | None = None, theta_prev: float | None = None,
                      lower: float = THETA_MIN, upper: float = THETA_MAX) -> float:
    """Maximise q2 over theta in ``[lower, upper]``.

    A log-spaced scan brackets the maximum, golden-section search narrows it
    in log(theta) and Newton steps polish the root of dq2/dtheta. The result
    never has a lower q2 than ``theta_prev``.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    m = z_hat.size if m is None else m
    sz, sk = float(z_hat.sum()), float(np.sum(kappa_hat))

    def obj(lt):
        return float(_q2_from_sums(math.exp(lt), m, sz, sk))

    lo, hi = math.log(lower), math.log(upper)
    grid = np.linspace(lo, hi, 61)
    vals = _q2_from_sums(np.exp(grid), m, sz, sk)
    k = int(np.argmax(vals))
    a_, b_ = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]

    c = b_ - _GOLDEN * (b_ - a_)
    d = a_ + _GOLDEN * (b_ - a_)
    fc, fd = obj(c), obj(d)
    while b_ - a_ > 1e-7:
        if fc > fd:
            b_, d, fd = d, c, fc
            c = b_ - _GOLDEN * (b_ - a_)
            fc = obj(c)
        else:
            a_, c, fc = c, d, fd
            d = a_ + _GOLDEN * (b_ - a_)
            fd = obj(d)
    lt = 0.5 * (a_ + b_)
    best_lt, best_val = lt, obj(lt)
    # q2 is flat at the optimum, so values are compared up to rounding noise
    slack = 64 * np.finfo(float).eps * (abs(best_val) + m)

    th = math.exp(lt)
    for _ in range(20):
        g, h = _q2_derivs(th, m, sz, sk)
        if not (h < 0):
            break
        new = th - g / h
        if not (lower <= new <= upper):
            break
        val = obj(math.log(new))
        if val < best_val - slack:
            break
        converged = abs(new - th) <= 1e-13 * max(th, 1e-300)
        th, best_lt, best_val = new, math.log(new), val
        if converged:
            break
    theta = math.exp(best_lt)
    theta = min(max(theta, lower), upper)

    if theta_prev is not None:
        prev = min(max(float(theta_prev), lower), upper)
        if obj(math.log(prev)) > obj(math.log(theta)) + slack:
            theta = prev
    if theta <= lower * (1 + 1e-4) or theta >= upper * (1 - 1e-4):
        warnings.warn(f"theta maximiser at the boundary of [{lower:g}, {upper:g}]",
                      RuntimeWarning, stacklevel=2)
    return theta


# ------------------------------------------------------ Weibull regression M1


def _weibull_terms(params, data, offsets, log_t):
    p = data.p
    l, r = params[0], params[1]
    beta = params[2:]
    rho = math.exp(r)
    eta = data.X @ beta if p else np.zeros(data.n)
    if offsets is not None:
        eta = eta + offsets[data.cluster]
    H = np.exp(eta + l + rho * log_t)
    return rho, eta, H


def _weibull_loglik(params, data, offsets, log_t, ev):
    rho, eta, H = _weibull_terms(params, data, offsets, log_t)
    l, r = params[0], params[1]
    return float(np.sum(ev * (l + r + (rho - 1.0) * log_t + eta)) - np.sum(H))


def _weibull_grad_hess(params, data, offsets, log_t, ev):
    rho, eta, H = _weibull_terms(params, data, offsets, log_t)
    p = data.p
    D = float(ev.sum())
    rl = rho * log_t
    X = data.X
    g = np.empty(p + 2)
    g[0] = D - H.sum()
    g[1] = float(np.sum(ev * (1.0 + rl)) - np.sum(H * rl))
    g[2:] = ev @ X - H @ X
    hmat = np.empty((p + 2, p + 2))
    hmat[0, 0] = -H.sum()
    hmat[0, 1] = hmat[1, 0] = -np.sum(H * rl)
    hmat[1, 1] = float(np.sum(ev * rl) - np.sum(H * (rl + rl * rl)))
    hx = H @ X
    hrx = (H * rl) @ X
    hmat[0, 2:] = hmat[2:, 0] = -hx
    hmat[1, 2:] = hmat[2:, 1] = -hrx
    hmat[2:, 2:] = -(X.T * H) @ X
    return g, hmat


def weibull_regression_offset(data: Dataset, offsets=None, init=None, tol: float = 1e-8,
                              max_iter: int = 100):
    """Weibull proportional-hazards ML with per-cluster offsets.

    Maximises ``sum delta [log(lam rho t^(rho-1)) + x'beta + o] - exp(o + x'beta) lam t^rho``
    by damped Newton in ``(log lam, log rho, beta)``. ``init`` is an optional
    ``(lam, rho, beta)``. Returns ``(lam, rho, beta)``.
    """
    ev = data.event.astype(float)
    if ev.sum() == 0:
        raise DomainError("Weibull regression needs at least one event")
    log_t = np.log(data.time)
    offs = None if offsets is None else np.asarray(offsets, dtype=float)
    p = data.p
    if init is None:
        base = np.exp(offs[data.cluster]) if offs is not None else np.ones(data.n)
        params = np.concatenate([[math.log(ev.sum() / np.sum(base * data.time)), 0.0], np.zeros(p)])
    else:
        lam, rho, beta = init
        params = np.concatenate([[math.log(lam), math.log(rho)], np.asarray(beta, dtype=float).ravel()])

    value = _weibull_loglik(params, data, offs, log_t, ev)
    for _ in range(max_iter):
        g, hmat = _weibull_grad_hess(params, data, offs, log_t, ev)
        if np.max(np.abs(g)) < tol:
            lam, rho = math.exp(params[0]), math.exp(params[1])
            return lam, rho, params[2:].copy()
        info = -hmat
        mu = 0.0
        scale = max(1.0, float(np.max(np.abs(np.diag(info)))))
        for _ in range(60):
            try:
                np.linalg.cholesky(info + mu * np.eye(p + 2))
                break
            except np.linalg.LinAlgError:
                mu = max(2.0 * mu, 1e-8 * scale)
        step = np.linalg.solve(info + mu * np.eye(p + 2), g)
        for _ in range(40):
            cand = params + step
            new_value = _weibull_loglik(cand, data, offs, log_t, ev)
            if np.isfinite(new_value) and new_value >= value - 1e-12 * abs(value):
                break
            step *= 0.5
        else:
            raise ConvergenceError("Weibull regression line search failed", state=params)
        params, value = cand, new_value
    g, _ = _weibull_grad_hess(params, data, offs, log_t, ev)
    if np.max(np.abs(g)) < tol:
        return math.exp(params[0]), math.exp(params[1]), params[2:].copy()
    raise ConvergenceError(f"Weibull regression did not converge in {max_iter} iterations",
                           state=(math.exp(params[0]), math.exp(params[1]), params[2:].copy()))


# ---------------------------------------------------------------- EM drivers


def _offsets(z_hat):
    off = np.log(z_hat)
    if np.any(np.abs(off) > OFFSET_CLAMP):
        warnings.warn("log frailty offsets clamped to [-30, 30]", RuntimeWarning, stacklevel=3)
        off = np.clip(off, -OFFSET_CLAMP, OFFSET_CLAMP)
    return off


def _check_data(data: Dataset):
    if data.m < 2:
        raise DomainError("fitting needs at least two clusters")
    if not data.event.any():
        raise DomainError("fitting needs at least one event")


def _run_em(data: Dataset, config: FitConfig, m1, beta, base, label: str):
    theta = float(config.theta_init)
    if not THETA_MIN <= theta <= THETA_MAX:
        raise DomainError(f"theta_init outside [{THETA_MIN}, {THETA_MAX}]")
    ll = observed_loglik(beta, theta, base, data, config.include_baseline_in_loglik)
    trace = [ll]
    violations = 0
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_em_iter + 1):
        z_hat, kappa_hat = e_step(data, beta, theta, base)
        beta_new, base = m1(_offsets(z_hat), beta, base)
        theta_new = m2_maximize_theta(z_hat, kappa_hat, data.m, theta)
        diff = max(float(np.max(np.abs(beta_new - beta))) if beta.size else 0.0, abs(theta_new - theta))
        beta, theta = beta_new, theta_new
        ll_new = observed_loglik(beta, theta, base, data, config.include_baseline_in_loglik)
        if ll_new < trace[-1] - 1e-6:
            violations += 1
        trace.append(ll_new)
        if diff < config.eps:
            converged = True
            break
    state = dict(beta=beta, theta=theta, baseline=base, loglik_trace=trace, n_iter=n_iter)
    if not converged:
        raise ConvergenceError(f"{label} EM did not converge in {config.max_em_iter} iterations",
                               state=state)
    z_hat, kappa_hat = e_step(data, beta, theta, base)
    result = FitResult(
        beta_hat=beta,
        theta_hat=theta,
        baseline_hat=base,
        se_beta=np.full(data.p, np.nan),
        se_theta=math.nan,
        z_hat=z_hat,
        kappa_hat=kappa_hat,
        loglik_trace=trace,
        n_iter=n_iter,
        kendall_tau=kendall_tau_wl(theta),
        covariate_names=list(data.covariate_names),
        cluster_ids=list(data.cluster_ids),
        ascent_violations=violations,
    )
    if config.compute_se:
        try:
            se_beta, se_theta, se_base = std_errors_full(
                result, data, profile=config.se_method == "profile")
        except NotPositiveDefiniteError as exc:
            warnings.warn(f"standard errors unavailable: {exc}", RuntimeWarning, stacklevel=3)
        else:
            result.se_beta, result.se_theta, result.se_baseline = se_beta, se_theta, se_base
    return result


def fit_semiparametric(data: Dataset, config: FitConfig | None = None) -> FitResult:
    """EM fit with a Breslow (step-function) baseline."""
    config = config or FitConfig()
    _check_data(data)
    beta0 = fit_cox(data, None, None, config.newton_tol, config.newton_max_iter)
    base0 = breslow(beta0, None, data)

    def m1(off, beta, base):
        beta_new = fit_cox(data, off, beta, config.newton_tol, config.newton_max_iter)
        return beta_new, breslow(beta_new, off, data)

    return _run_em(data, config, m1, beta0, base0, "semiparametric")


def fit_weibull(data: Dataset, config: FitConfig | None = None) -> FitResult:
    """EM fit with a Weibull baseline Lambda0(t) = lam t^rho."""
    config = replace(config or FitConfig(), baseline_kind="weibull")
    _check_data(data)
    lam, rho, beta0 = weibull_regression_offset(data, None, None, config.newton_tol,
                                                config.newton_max_iter)

    def m1(off, beta, base):
        lam, rho, beta_new = weibull_regression_offset(
            data, off, (base.lam, base.rho, beta), config.newton_tol, config.newton_max_iter)
        return beta_new, WeibullBaseline(lam, rho)

    return _run_em(data, config, m1, beta0, WeibullBaseline(lam, rho), "Weibull")


def fit(data: Dataset, config: FitConfig | None = None) -> FitResult:
    config = config or FitConfig()
    if config.baseline_kind == "weibull":
        return fit_weibull(data, config)
    return fit_semiparametric(data, config)


# ------------------------------------------------------------ standard errors


def _numeric_hessian(f, x, steps):
    k = x.size
    f0 = f(x)
    hmat = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        hmat[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = steps[j]
            hmat[i, j] = hmat[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return hmat


def _covariance(hmat):
    info = -0.5 * (hmat + hmat.T)
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= 0:
        raise NotPositiveDefiniteError(
            f"observed information not positive definite (min eigenvalue {eig[0]:.3g})", eig[0])
    return np.linalg.inv(info)


def _exposure_matrix(x, p, data: Dataset, base: StepBaseline):
    """``G[i, k] = sum_j exp(eta_ij) 1{t_ij >= t_k}`` for the jump times t_k."""
    eta = data.X @ x[:p] if p else np.zeros(data.n)
    k = np.searchsorted(base.times, data.time, side="right")
    W = np.zeros((data.m, base.times.size + 1))
    np.add.at(W, (data.cluster, k), np.exp(eta))
    return np.cumsum(W[:, ::-1], axis=1)[:, ::-1][:, 1:]


def _jump_terms(x, p, data: Dataset, base: StepBaseline):
    # derivatives of the per-cluster term in S*_i, the cluster exposure
    G = _exposure_matrix(x, p, data, base)
    f = WLFrailty(float(x[p]))
    u = G @ base.increments + 1.0 / f.a_theta
    bp = data.events_per_cluster + f.b_theta
    d1 = -bp / u - bp / (u * (u + bp))
    d2 = bp / u ** 2 + bp * (2.0 * u + bp) / (u ** 2 * (u + bp) ** 2)
    return G, d1, d2


def _profile_correction(x0, steps, p, data: Dataset, base: StepBaseline):
    """``H_psi,l (-H_l,l)^-1 H_l,psi`` with the jumps on the log scale."""
    h = base.increments
    d = np.bincount(np.searchsorted(base.times, data.time[data.event]), minlength=h.size)
    G, d1, d2 = _jump_terms(x0, p, data, base)
    # Hessian in log h; the score term vanishes at the maximum
    H_ll = (G * h).T @ ((G * h) * d2[:, None]) - np.diag(d)
    H_lpsi = np.empty((h.size, x0.size))
    for j in range(x0.size):
        e = np.zeros(x0.size)
        e[j] = steps[j]
        Gp, d1p, _ = _jump_terms(x0 + e, p, data, base)
        Gm, d1m, _ = _jump_terms(x0 - e, p, data, base)
        H_lpsi[:, j] = h * (Gp.T @ d1p - Gm.T @ d1m) / (2.0 * steps[j])
    try:
        chol = np.linalg.cholesky(-H_ll)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("baseline block of the information is not positive definite",
                                       float(np.linalg.eigvalsh(-H_ll)[0])) from None
    v = np.linalg.solve(chol, H_lpsi)
    return v.T @ v


def std_errors(fit: FitResult, data: Dataset, rel_step: float = 1e-4, profile: bool = True):
    """Standard errors ``(se_beta, se_theta)`` from a numeric Hessian.

    Central differences with step ``rel_step * max(|x|, 1)`` per coordinate.
    For a step baseline ``profile=True`` profiles the jump sizes out of the
    observed information (Schur complement); ``profile=False`` holds them
    at their estimates. For a Weibull baseline ``lam`` and ``rho`` join the
    parameter vector; see :func:`std_errors_full` for their own SEs.
    """
    return std_errors_full(fit, data, rel_step, profile)[:2]


def std_errors_full(fit: FitResult, data: Dataset, rel_step: float = 1e-4, profile: bool = True):
    """As :func:`std_errors`, plus a dict of baseline SEs (empty for a step baseline)."""
    p = data.p
    base = fit.baseline_hat
    theta = float(fit.theta_hat)

    if isinstance(base, WeibullBaseline):
        x0 = np.concatenate([fit.beta_hat, [theta, base.lam, base.rho]])

        def f(x):
            if x[p] <= 0 or x[p + 1] <= 0 or x[p + 2] <= 0:
                return -math.inf
            return observed_loglik(x[:p], x[p], WeibullBaseline(x[p + 1], x[p + 2]), data)
    else:
        x0 = np.concatenate([fit.beta_hat, [theta]])

        def f(x):
            if x[p] <= 0:
                return -math.inf
            return observed_loglik(x[:p], x[p], base, data, include_baseline=False)

    steps = rel_step * np.maximum(np.abs(x0), 1.0)
    # keep the positive parameters strictly inside their domain
    for k in range(p, x0.size):
        steps[k] = min(steps[k], 0.5 * x0[k])
    hmat = _numeric_hessian(f, x0, steps)
    if profile and isinstance(base, StepBaseline):
        hmat = hmat + _profile_correction(x0, steps, p, data, base)
    se = np.sqrt(np.diag(_covariance(hmat)))
    if isinstance(base, WeibullBaseline):
        return se[:p], float(se[p]), {"lam": float(se[p + 1]), "rho": float(se[p + 2])}
    return se[:p], float(se[p]), {}


# ----------------------------------------------------------------- prediction


def predict_survival(fit: FitResult, profile, mode: str, grid, z: float | None = None) -> SurvivalCurve:
    """Survival curve for a covariate profile.

    ``mode="conditional"`` gives exp(-z exp(x'beta) Lambda0(t)) for the given
    frailty ``z``; ``mode="marginal"`` averages over WL(theta_hat).
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or np.any(np.diff(grid) < 0) or np.any(grid < 0):
        raise DomainError("grid must be non-empty, non-negative and increasing")
    base = fit.baseline_hat
    if isinstance(base, StepBaseline) and grid[-1] > base.last_time:
        raise DomainError(f"grid extends past the last event time {base.last_time:g}")
    profile = np.asarray(profile, dtype=float).ravel()
    beta = np.asarray(fit.beta_hat, dtype=float)
    lp = math.exp(float(profile @ beta)) if beta.size else 1.0
    cum = lp * np.asarray(base.cumhaz(grid), dtype=float)
    if mode == "conditional":
        if z is None or z < 0:
            raise DomainError("conditional prediction needs a frailty value z >= 0")
        values = np.exp(-z * cum)
    elif mode == "marginal":
        values = np.asarray(laplace(cum, WLFrailty(fit.theta_hat)), dtype=float)
    else:
        raise DomainError(f"unknown prediction mode {mode!r}")
    return SurvivalCurve(grid, values, mode, z if mode == "conditional" else None)
