"""Monte-Carlo recovery studies for the shared WL frailty fitters.

Data follow the conditional Weibull model with cumulative hazard
``z_i exp(x'beta) lam t^rho``, where the baseline is specified through its
mean and variance (scale form) and converted to the rate ``lam``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from . import wl
from .em import FitConfig, fit_semiparametric, fit_weibull
from .errors import ConvergenceError, DataError, DomainError
from .model import Dataset, StepBaseline, WeibullBaseline

__all__ = [
    "CASES",
    "FRAILTY_LAWS",
    "COVARIATE_NAMES",
    "ScenarioConfig",
    "MetricsSummary",
    "weibull_from_moments",
    "draw_frailties",
    "gen_dataset",
    "censor_times",
    "recovery_study",
    "baseline_mean_estimate",
    "baseline_median_estimate",
    "baseline_bias_metrics",
    "parse_scenario",
    "load_scenario",
]

CASES = {
    1: ((200, 1), (100, 2), (50, 3), (20, 4), (20, 5), (6, 10)),
    2: ((200, 2), (100, 4), (50, 6), (20, 8), (20, 10), (6, 20)),
    3: ((400, 1), (200, 2), (100, 3), (40, 4), (40, 5), (12, 10)),
}
FRAILTY_LAWS = ("wl", "uniform", "gamma", "lognormal")
COVARIATE_NAMES = ("x11", "x12", "x2", "x3", "x4")
DEFAULT_BETA = (0.3, 1.1, 0.4, -0.5, -0.3)


@dataclass(frozen=True)
class ScenarioConfig:
    cluster_layout: tuple = CASES[1]
    weibull_moments: tuple = (8.6, 230.0)
    theta: float = 0.25
    frailty_law: str = "wl"
    beta: tuple = DEFAULT_BETA
    censor_q: float = 0.0
    n_replicates: int = 100
    base_seed: int = 0

    def __post_init__(self):
        layout = tuple((int(c), int(s)) for c, s in self.cluster_layout)
        object.__setattr__(self, "cluster_layout", layout)
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        object.__setattr__(self, "weibull_moments", tuple(float(v) for v in self.weibull_moments))
        if not layout or any(c < 1 or s < 1 for c, s in layout):
            raise DomainError("cluster layout needs (count, size) pairs with both >= 1")
        if len(self.beta) != len(COVARIATE_NAMES):
            raise DomainError(f"beta must have {len(COVARIATE_NAMES)} entries")
        if self.frailty_law not in FRAILTY_LAWS:
            raise DomainError(f"unknown frailty law {self.frailty_law!r}")
        if not self.theta > 0:
            raise DomainError("theta must be positive")
        if not 0.0 <= self.censor_q < 1.0:
            raise DomainError("censor_q must lie in [0, 1)")
        if self.n_replicates < 1:
            raise DomainError("n_replicates must be >= 1")

    @property
    def m(self) -> int:
        return sum(c for c, _ in self.cluster_layout)

    @property
    def n(self) -> int:
        return sum(c * s for c, s in self.cluster_layout)

    @property
    def true_theta(self) -> float:
        """Variance of the generating frailty law."""
        return {"wl": self.theta, "uniform": 1.0 / 3.0, "gamma": 1.0, "lognormal": 1.0}[self.frailty_law]


def weibull_from_moments(mu_w: float, sigma2_w: float):
    """Weibull ``(scale, rho, rate_lambda)`` with mean ``mu_w`` and variance ``sigma2_w``.

    ``rate_lambda = scale ** -rho`` is the coefficient of the cumulative
    hazard ``lam t^rho``.
    """
    if not (mu_w > 0 and sigma2_w > 0):
        raise DomainError("Weibull moments must be positive")
    target = math.log1p(sigma2_w / mu_w ** 2)

    def h(log_rho):
        r = math.exp(log_rho)
        return gammaln(1 + 2 / r) - 2 * gammaln(1 + 1 / r) - target

    lo, hi = math.log(0.02), math.log(500.0)
    if h(lo) * h(hi) > 0:
        raise DomainError(f"no Weibull law has squared CV {sigma2_w / mu_w ** 2:g}")
    rho = math.exp(brentq(h, lo, hi, xtol=1e-14, rtol=1e-14))
    scale = mu_w / math.exp(gammaln(1 + 1 / rho))
    return scale, rho, scale ** -rho


def draw_frailties(law: str, theta: float, m: int, rng: np.random.Generator) -> np.ndarray:
    if law == "wl":
        return wl.sample(m, theta, rng)
    if law == "uniform":
        return rng.uniform(0.0, 2.0, m)
    if law == "gamma":
        return rng.gamma(1.0, 1.0, m)
    if law == "lognormal":
        # mean 1, variance 1
        return rng.lognormal(-0.5 * math.log(2.0), math.sqrt(math.log(2.0)), m)
    raise DomainError(f"unknown frailty law {law!r}")


def censor_times(T, q: float, z, eta, lam: float, rho: float):
    """Percentile censoring: ``C`` is the ``1 - q`` quantile of each subject's law.

    Returns ``(time, event)``. ``q = 0`` means no censoring.
    """
    T = np.asarray(T, dtype=float)
    if not 0.0 <= q < 1.0:
        raise DomainError("q must lie in [0, 1)")
    if q == 0.0:
        return T.copy(), np.ones(T.size, dtype=bool)
    C = (-math.log(q) / (np.asarray(z) * np.exp(eta) * lam)) ** (1.0 / rho)
    event = T <= C
    return np.where(event, T, C), event


def _covariates(n, rng):
    u = rng.uniform(size=n)
    x11 = (u < 0.4).astype(float)
    x12 = ((u >= 0.4) & (u < 0.8)).astype(float)
    rest = [rng.binomial(1, p, n).astype(float) for p in (0.7, 0.6, 0.5)]
    return np.column_stack([x11, x12, *rest])


def gen_dataset(cfg: ScenarioConfig, replicate_index: int):
    """One replicate; returns ``(Dataset, truth)``.

    The stream is seeded from ``(base_seed, replicate_index)`` so replicates
    are reproducible in any execution order.
    """
    rng = np.random.default_rng([int(cfg.base_seed), int(replicate_index)])
    scale, rho, lam = weibull_from_moments(*cfg.weibull_moments)
    sizes = np.concatenate([np.full(c, s) for c, s in cfg.cluster_layout])
    cluster = np.repeat(np.arange(sizes.size), sizes)
    z = draw_frailties(cfg.frailty_law, cfg.theta, sizes.size, rng)
    X = _covariates(cluster.size, rng)
    eta = X @ np.asarray(cfg.beta)
    zi = z[cluster]
    T = (-np.log(rng.uniform(size=cluster.size)) / (zi * np.exp(eta) * lam)) ** (1.0 / rho)
    time, event = censor_times(T, cfg.censor_q, zi, eta, lam, rho)
    data = Dataset(time, event, X, cluster, list(COVARIATE_NAMES))
    truth = {
        "beta": np.asarray(cfg.beta),
        "theta": cfg.true_theta,
        "lam": lam,
        "rho": rho,
        "scale": scale,
        "mu_w": cfg.weibull_moments[0],
        "xi_w": scale * math.log(2.0) ** (1.0 / rho),
        "z": z,
    }
    return data, truth


# --------------------------------------------------------- baseline summaries


def _step_points(b: StepBaseline):
    if b.times.size == 0:
        raise DomainError("step baseline has no jumps")
    return b.times, np.exp(-b.cumulative)


def baseline_mean_estimate(b: StepBaseline) -> float:
    """Area under the baseline survival step function up to the last jump."""
    t, s = _step_points(b)
    return float(t[0] + np.sum(np.diff(t) * s[:-1]))


def baseline_median_estimate(b: StepBaseline) -> float:
    """Linear interpolation of the baseline survival points at level 0.5.

    If the first point is already at or below 0.5 the interpolation starts
    from ``(0, 1)``.
    """
    t, s = _step_points(b)
    below = np.flatnonzero(s <= 0.5)
    if below.size == 0:
        raise DomainError("baseline survival never drops to 0.5")
    k = int(below[0])
    t0, s0 = (0.0, 1.0) if k == 0 else (t[k - 1], s[k - 1])
    t1, s1 = t[k], s[k]
    return float(t0 + (s0 - 0.5) * (t1 - t0) / (s0 - s1))


def _baseline_summaries(b):
    if isinstance(b, WeibullBaseline):
        scale = b.lam ** (-1.0 / b.rho)
        return scale * math.exp(gammaln(1 + 1 / b.rho)), scale * math.log(2.0) ** (1.0 / b.rho)
    return baseline_mean_estimate(b), baseline_median_estimate(b)


def baseline_bias_metrics(estimates, truth: float):
    """Return ``(B, B_SD, RB, RB_SD)``; the SDs are sample SDs of the errors."""
    est = np.asarray(estimates, dtype=float)
    if est.size < 2:
        raise DomainError("need at least two estimates")
    err = est - truth
    rel = err / truth
    return float(err.mean()), float(err.std(ddof=1)), float(rel.mean()), float(rel.std(ddof=1))


# ------------------------------------------------------------ recovery study


@dataclass
class MetricsSummary:
    parameters: dict
    baseline: dict
    n_replicates: int
    n_failed: int
    n_se_missing: int = 0
    ascent_violations: int = 0
    scenario: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# EM slows down as theta approaches 0, so studies get a larger budget
STUDY_FIT_CONFIG = FitConfig(max_em_iter=5000)


def _check_fitter(fitter):
    if not callable(fitter) and fitter not in ("np", "nonparametric", "semiparametric", "weibull"):
        raise DomainError(f"unknown fitter {fitter!r}")


def _fit(fitter, config, data, truth):
    if callable(fitter):
        return fitter(data, truth)
    if fitter == "weibull":
        return fit_weibull(data, config)
    return fit_semiparametric(data, config)


def _run_replicate(args):
    cfg, idx, fitter, config = args
    data, truth = gen_dataset(cfg, idx)
    try:
        res = _fit(fitter, config, data, truth)
        mu_hat, xi_hat = _baseline_summaries(res.baseline_hat)
    except (ConvergenceError, ArithmeticError, DomainError) as exc:
        return {"ok": False, "error": str(exc)}
    row = {
        "ok": True,
        "est": {**{n: float(v) for n, v in zip(COVARIATE_NAMES, res.beta_hat)},
                "theta": float(res.theta_hat)},
        "se": {**{n: float(v) for n, v in zip(COVARIATE_NAMES, res.se_beta)},
               "theta": float(res.se_theta)},
        "mu_w": mu_hat,
        "xi_w": xi_hat,
        "violations": int(getattr(res, "ascent_violations", 0)),
    }
    b = res.baseline_hat
    if isinstance(b, WeibullBaseline):
        row["est"].update(lam=float(b.lam), rho=float(b.rho))
        se_b = getattr(res, "se_baseline", {}) or {}
        row["se"].update(lam=float(se_b.get("lam", math.nan)), rho=float(se_b.get("rho", math.nan)))
    return row


def recovery_study(cfg: ScenarioConfig, fitter="np", workers: int | None = None,
                   config: FitConfig = STUDY_FIT_CONFIG) -> MetricsSummary:
    """Generate and fit ``cfg.n_replicates`` datasets and summarise recovery.

    ``fitter`` is ``"np"`` (semiparametric), ``"weibull"`` or a callable
    ``(data, truth) -> result`` exposing ``beta_hat``, ``theta_hat``,
    ``se_beta``, ``se_theta`` and ``baseline_hat``. Failed fits are excluded
    and counted; more than 20% failures raises :class:`ConvergenceError`.
    ``config`` is passed to the built-in fitters. Results are reduced in
    replicate order, so they do not depend on ``workers``.
    """
    _check_fitter(fitter)
    jobs = [(cfg, i, fitter, config) for i in range(cfg.n_replicates)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_replicate, jobs))
    else:
        rows = [_run_replicate(j) for j in jobs]

    ok = [r for r in rows if r["ok"]]
    n_failed = len(rows) - len(ok)
    if n_failed > 0.2 * len(rows):
        raise ConvergenceError(f"{n_failed} of {len(rows)} replicates failed", state=rows)
    if not ok:
        raise ConvergenceError("no replicate succeeded", state=rows)

    _, rho, lam = weibull_from_moments(*cfg.weibull_moments)
    truth = {n: b for n, b in zip(COVARIATE_NAMES, cfg.beta)}
    truth.update(theta=cfg.true_theta, lam=lam, rho=rho)

    params = {}
    n_se_missing = 0
    for name in ok[0]["est"]:
        est = np.array([r["est"][name] for r in ok])
        se = np.array([r["se"][name] for r in ok])
        missing = int(np.sum(~np.isfinite(se)))
        n_se_missing = max(n_se_missing, missing)
        err = est - truth[name]
        params[name] = {
            "truth": float(truth[name]),
            "mean": float(est.mean()),
            "bias": float(err.mean()),
            "se": float(np.mean(se[np.isfinite(se)])) if missing < se.size else math.nan,
            "sd": float(est.std(ddof=1)) if est.size > 1 else math.nan,
            "rmse": float(math.sqrt(np.mean(err ** 2))),
        }

    scale = weibull_from_moments(*cfg.weibull_moments)[0]
    base_truth = {"mu_w": cfg.weibull_moments[0], "xi_w": scale * math.log(2.0) ** (1.0 / rho)}
    baseline = {}
    if len(ok) >= 2:
        for key, tv in base_truth.items():
            B, B_sd, RB, RB_sd = baseline_bias_metrics([r[key] for r in ok], tv)
            baseline[key] = {"truth": float(tv), "B": B, "B_SD": B_sd, "RB": RB, "RB_SD": RB_sd}

    scenario = asdict(cfg)
    scenario["cluster_layout"] = [list(p) for p in cfg.cluster_layout]
    scenario["weibull_moments"] = list(cfg.weibull_moments)
    scenario["beta"] = list(cfg.beta)
    scenario["fitter"] = fitter if isinstance(fitter, str) else getattr(fitter, "__name__", "custom")
    return MetricsSummary(
        parameters=params,
        baseline=baseline,
        n_replicates=cfg.n_replicates,
        n_failed=n_failed,
        n_se_missing=n_se_missing,
        ascent_violations=sum(r["violations"] for r in ok),
        scenario=scenario,
    )


# ------------------------------------------------------------ scenario files


def _parse_layout(text: str):
    pairs = []
    for part in text.split(","):
        count, sep, size = part.strip().lower().partition("x")
        if not sep:
            raise ValueError(f"layout entry {part.strip()!r} is not COUNTxSIZE")
        pairs.append((int(count), int(size)))
    return tuple(pairs)


def _floats(text: str):
    return tuple(float(v) for v in text.split(","))


_KEYS = {
    "case": lambda v: ("cluster_layout", CASES[int(v)]),
    "layout": lambda v: ("cluster_layout", _parse_layout(v)),
    "mu_w": lambda v: ("mu_w", float(v)),
    "sigma2_w": lambda v: ("sigma2_w", float(v)),
    "theta": lambda v: ("theta", float(v)),
    "frailty_law": lambda v: ("frailty_law", v.strip().lower()),
    "beta": lambda v: ("beta", _floats(v)),
    "censor_q": lambda v: ("censor_q", float(v)),
    "n_replicates": lambda v: ("n_replicates", int(v)),
    "base_seed": lambda v: ("base_seed", int(v)),
}


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys: ``case`` (1, 2 or 3) or ``layout`` (``200x1, 100x2, ...``),
    ``mu_w``, ``sigma2_w``, ``theta``, ``frailty_law``, ``beta``,
    ``censor_q``, ``n_replicates``, ``base_seed``.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower()
        if not sep:
            raise DataError("expected key = value", line=lineno)
        if key not in _KEYS:
            raise DataError(f"unknown scenario key {key!r}", line=lineno)
        try:
            name, parsed = _KEYS[key](value.strip())
        except (ValueError, KeyError) as exc:
            raise DataError(f"bad value for {key}: {exc}", line=lineno) from None
        values[name] = parsed
    moments = (values.pop("mu_w", 8.6), values.pop("sigma2_w", 230.0))
    try:
        return ScenarioConfig(weibull_moments=moments, **values)
    except DomainError as exc:
        raise DataError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
