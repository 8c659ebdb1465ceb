"""Kendall's tau implied by shared WL, gamma and inverse-Gaussian frailties.

All three are parameterised by the frailty variance ``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

from .errors import DomainError
from .special import QuadratureSpec, exp_integral_e1_scaled, integrate_adaptive
from .wl import WLFrailty

__all__ = ["TauReport", "kendall_tau_wl", "kendall_tau_gamma", "kendall_tau_ig", "tau_report"]

_TAU_QUAD = QuadratureSpec(abs_tol=1e-11, rel_tol=1e-11, max_subdivisions=400)
# Above this variance the integrand tail is ~ s^(-1-2b) with b < 1/3, too
# heavy for the quadrature error estimate to be trusted.
_QUAD_THETA_MAX = 2.0


def _check(theta):
    if not (theta > 0 and math.isfinite(theta)):
        raise DomainError(f"theta must be positive and finite, got {theta}")


def _kendall_tau_wl(theta: float) -> tuple[float, float]:
    _check(theta)
    f = WLFrailty(theta)
    a, b = f.a_theta, f.b_theta
    c = theta / (theta + 2.0)

    def integrand(s):
        with np.errstate(divide="ignore"):
            logv = (np.log(s) - (2.0 * b + 4.0) * np.log1p(a * s)
                    + np.log1p(0.5 * theta * s) + np.log1p(c * (s + 1.0)))
        return np.exp(logv)

    # tau = 4 int_0^inf s L(s) L''(s) ds - 1
    val, err = integrate_adaptive(integrand, 0.0, math.inf, _TAU_QUAD)
    k = 4.0 * a * (1.0 + b)
    return k * val - 1.0, k * err


def _kendall_tau_wl_beta(theta: float) -> float:
    # y = 1/(1 + a s) turns the integral into three Beta functions
    _check(theta)
    f = WLFrailty(theta)
    a, b = f.a_theta, f.b_theta
    c = theta / (theta + 2.0)
    k1 = c / a + (1.0 + c) * theta / (2.0 * a)
    k2 = theta * c / (2.0 * a * a)
    integral = ((1.0 + c) * math.exp(betaln(2 * b + 2, 2))
                + k1 * math.exp(betaln(2 * b + 1, 3))
                + k2 * math.exp(betaln(2 * b, 4))) / (a * a)
    return 4.0 * a * (1.0 + b) * integral - 1.0


def kendall_tau_wl(theta: float) -> float:
    """Kendall's tau of two members of a WL(theta) frailty cluster.

    Adaptive quadrature of ``4 int s L(s) L''(s) ds - 1`` for theta <= 2;
    the equivalent Beta-function closed form beyond.
    """
    if theta > _QUAD_THETA_MAX:
        return _kendall_tau_wl_beta(theta)
    return _kendall_tau_wl(theta)[0]


def kendall_tau_gamma(theta: float) -> float:
    _check(theta)
    return theta / (theta + 2.0)


def kendall_tau_ig(theta: float) -> float:
    """0.5 - 1/theta + (2/theta^2) exp(2/theta) E1(2/theta)."""
    _check(theta)
    x = 2.0 / theta
    if x > 200.0:
        # tau = (1/2) sum_{k>=2} (-1)^k k! x^(1-k), asymptotic in 1/x
        total, term = 0.0, 1.0 / x
        for k in range(2, 12):
            term = 2.0 / x if k == 2 else -term * k / x
            total += term
        return 0.5 * total
    return 0.5 - 0.5 * x + 0.5 * x * x * exp_integral_e1_scaled(x)


@dataclass(frozen=True)
class TauReport:
    theta: float
    tau_wl: float
    tau_gamma: float
    tau_ig: float
    tau_wl_err: float


def tau_report(theta: float) -> TauReport:
    if theta > _QUAD_THETA_MAX:
        wl, err = _kendall_tau_wl_beta(theta), 0.0
    else:
        wl, err = _kendall_tau_wl(theta)
    return TauReport(theta, wl, kendall_tau_gamma(theta), kendall_tau_ig(theta), err)
