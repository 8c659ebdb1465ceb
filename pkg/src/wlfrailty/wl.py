"""Weighted Lindley law: general (alpha, phi) form and the unit-mean frailty form.

The general density is

    f(z; alpha, phi) = alpha^(phi+1) z^(phi-1) (1+z) exp(-alpha z) / ((alpha+phi) Gamma(phi))

which is a mixture of Gamma(phi, rate alpha) and Gamma(phi+1, rate alpha)
with weight ``omega = alpha / (alpha + phi)`` on the first component.

The frailty form WL(theta) fixes ``phi = 4/(theta(theta+4))`` and
``alpha = sqrt(phi(phi+1))`` so that E[Z] = 1 and Var[Z] = theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError
from .special import digamma, log_gamma, reg_inc_gamma_lower

__all__ = [
    "THETA_MIN",
    "THETA_MAX",
    "WLGeneral",
    "WLFrailty",
    "reparam",
    "pdf_general",
    "logpdf_general",
    "moments_general",
    "cdf",
    "laplace",
    "laplace_deriv",
    "log_abs_laplace_deriv",
    "sample",
]

THETA_MIN = 1e-6
THETA_MAX = 1e3


@dataclass(frozen=True)
class WLGeneral:
    alpha: float
    phi: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.phi > 0):
            raise DomainError(f"WL needs alpha > 0 and phi > 0, got {self.alpha}, {self.phi}")

    @property
    def omega(self) -> float:
        return self.alpha / (self.alpha + self.phi)


@dataclass(frozen=True)
class WLFrailty:
    """Unit-mean WL frailty with variance ``theta``."""

    theta: float

    def __post_init__(self):
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise DomainError(f"theta must be positive and finite, got {self.theta}")

    @cached_property
    def a_theta(self) -> float:
        th = self.theta
        return th * (th + 4.0) / (2.0 * (th + 2.0))

    @cached_property
    def b_theta(self) -> float:
        th = self.theta
        return 4.0 / (th * (th + 4.0))

    @property
    def omega(self) -> float:
        return (self.theta + 2.0) / (self.theta + 4.0)

    def general(self) -> WLGeneral:
        return WLGeneral(alpha=1.0 / self.a_theta, phi=self.b_theta)


def _frailty(f) -> WLFrailty:
    return f if isinstance(f, WLFrailty) else WLFrailty(float(f))


def reparam(theta: float) -> WLGeneral:
    """(alpha, phi) of the unit-mean WL law with variance ``theta``."""
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta}")
    return _frailty(theta).general()


def logpdf_general(z, d: WLGeneral):
    za = np.asarray(z, dtype=float)
    if np.any(za <= 0):
        raise DomainError("WL density is defined for z > 0")
    a, p = d.alpha, d.phi
    out = ((p + 1.0) * math.log(a) - math.log(a + p) - log_gamma(p)
           + (p - 1.0) * np.log(za) + np.log1p(za) - a * za)
    return float(out) if np.ndim(z) == 0 else out


def pdf_general(z, d: WLGeneral):
    out = np.exp(logpdf_general(z, d))
    return float(out) if np.ndim(z) == 0 else out


def moments_general(d: WLGeneral) -> tuple[float, float, float]:
    """Return ``(mean, variance, E[log Z])``."""
    a, p = d.alpha, d.phi
    mean = p * (a + p + 1.0) / (a * (a + p))
    var = ((p + 1.0) * (a + p) ** 2 - a * a) / (a * a * (a + p) ** 2)
    elog = -a / (p * (a + p)) + digamma(p + 1.0) - math.log(a)
    return mean, var, elog


def cdf(z, d: WLGeneral):
    za = np.asarray(z, dtype=float)
    if np.any(za < 0):
        raise DomainError("cdf needs z >= 0")
    w = d.omega
    x = d.alpha * za
    out = w * reg_inc_gamma_lower(d.phi, x) + (1.0 - w) * reg_inc_gamma_lower(d.phi + 1.0, x)
    return float(out) if np.ndim(z) == 0 else out


def laplace(s, f):
    """E[exp(-s Z)] for Z ~ WL(theta). ``f`` is a WLFrailty or a theta value."""
    f = _frailty(f)
    sa = np.asarray(s, dtype=float)
    out = np.exp(-(f.b_theta + 1.0) * np.log1p(f.a_theta * sa)) * (1.0 + 0.5 * f.theta * sa)
    return float(out) if np.ndim(s) == 0 else out


def log_abs_laplace_deriv(d: int, s, f):
    """log |L^(d)(s)|; the sign of the derivative is (-1)^d."""
    f = _frailty(f)
    if int(d) != d or d < 1:
        raise DomainError(f"derivative order must be a positive integer, got {d}")
    d = int(d)
    a, b, th = f.a_theta, f.b_theta, f.theta
    sa = np.asarray(s, dtype=float)
    # log prod_{i=1}^{d-1} (b + i)
    log_pi = log_gamma(b + d) - log_gamma(b + 1.0) if d > 1 else 0.0
    out = (log_pi + (d - 1) * math.log(a) - (b + d + 1.0) * np.log1p(a * sa)
           + np.log1p(th * (sa + d - 1.0) / (th + 2.0)))
    return float(out) if np.ndim(s) == 0 else out


def laplace_deriv(d: int, s, f):
    """d-th derivative of the WL(theta) Laplace transform at ``s``."""
    sign = -1.0 if int(d) % 2 else 1.0
    out = sign * np.exp(log_abs_laplace_deriv(d, s, f))
    return float(out) if np.ndim(s) == 0 else out


def sample(n: int, f, seed) -> np.ndarray:
    """Draw ``n`` WL(theta) variates via the two-gamma mixture.

    ``seed`` is an int or a :class:`numpy.random.Generator`.
    """
    f = _frailty(f)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    first = rng.random(n) < f.omega
    shape = np.where(first, f.b_theta, f.b_theta + 1.0)
    return rng.gamma(shape, f.a_theta)
