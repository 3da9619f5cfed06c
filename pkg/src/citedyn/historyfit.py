"""Jump-decay plus constant-attention model of citation histories.

The discipline-average yearly citation rate at eprint age t is modeled as

    u(t) = A * f(t + 1; mu, sigma) + B * tanh(lambda * t)

where f is the lognormal density

    f(t; mu, sigma) = exp(-(ln t - mu)^2 / (2 sigma^2)) / (t sigma sqrt(2 pi)).

The +1 shift makes the lognormal part contribute
A * (sqrt(2 pi) sigma)^(-1) * exp(-mu^2 / (2 sigma^2)) at age 0, while the
sigmoid is exactly 0 there: baseline attention only switches on after the
document exists. Cumulative citation mass splits into closed forms,

    F(T) = A * Phi((ln T - mu) / sigma)            (jump-decay part)
    G(T) = (B / lambda) * ln cosh(lambda * T)      (baseline part)
    H(T) = F(T) + G(T - 1),    rho(T) = F(T) / H(T),

with G evaluated at T - 1 for the same reason the sigmoid argument is t.
A fitted lambda above LAMBDA_CAP is reported as effectively infinite
(lambda_capped); in that regime the sigmoid is treated as a unit step and
G(T - 1) degenerates to B * (T - 1).

Derived per-discipline metrics:

    delta1 = exp(mu - sigma^2)               time from posting to the peak
    delta2 = exp(mu) * (1 - exp(-sigma^2))   peak to the distribution median
    S = delta1 / delta2                      internal obsolescence rate
    R = B / u_peak,  I = 1 / R               retention and inflation rates

where t_peak is the age at which the jump-decay component is largest
(the lognormal mode shifted back by 1) and u_peak is the full curve,
baseline included, evaluated there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from scipy.optimize import least_squares

from .corpus import AgePanel
from .distfit import normal_cdf
from .errors import (
    ConvergenceError,
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
    InvalidInputError,
)

__all__ = [
    "HistoryParams",
    "HistoryFit",
    "FitOptions",
    "DerivedMetrics",
    "CumulativeSplit",
    "TrendPoint",
    "eval_history",
    "fit_history",
    "derive_metrics",
    "cumulative_split",
    "trend_metrics",
    "write_curve_csv",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# --- fit configuration ------------------------------------------------------

MU_STARTS = (0.5, 1.0, 1.5, 2.0)
SIGMA_STARTS = (0.5, 0.8, 1.2)
LAMBDA_STARTS = (0.5, 2.0, 20.0)

LAMBDA_BOUND = 50.0   # optimizer ceiling; tanh is numerically saturated beyond
LAMBDA_CAP = 10.0     # reported as effectively infinite above this
N_PARAMS = 5

PEAK_WINDOW = (0.0, 50.0)   # search range for the component peak age
PEAK_GRID_STEP = 0.025


# --- model ------------------------------------------------------------------


def _lognormal_density(t, mu: float, sigma: float):
    """f(t; mu, sigma) for t > 0."""
    t = np.asarray(t, dtype=float)
    z = (np.log(t) - mu) / sigma
    return np.exp(-0.5 * z * z) / (t * sigma * _SQRT_2PI)


def _sech2(x):
    """sech^2(x), flushed to 0 where cosh would overflow."""
    x = np.abs(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    small = x < 30.0
    out[small] = 1.0 / np.cosh(x[small]) ** 2
    return out


def _ln_cosh(x: float) -> float:
    """ln cosh(x) without overflow: |x| + ln(1 + e^(-2|x|)) - ln 2."""
    ax = abs(x)
    return ax + math.log1p(math.exp(-2.0 * ax)) - math.log(2.0)


@dataclass(frozen=True)
class HistoryParams:
    """Parameter set (A, mu, sigma, B, lambda) of the history curve.

    lambda_capped marks a rate too large to resolve from yearly data; all
    evaluations then use the unit-step limit of the sigmoid.
    """

    A: float
    mu: float
    sigma: float
    B: float
    lam: float
    lambda_capped: bool = False

    def __post_init__(self):
        if not self.A > 0:
            raise DomainError(f"A must be positive, got {self.A}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not self.B > 0:
            raise DomainError(f"B must be positive, got {self.B}")
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")

    def to_dict(self) -> dict:
        return {
            "A": self.A,
            "mu": self.mu,
            "sigma": self.sigma,
            "B": self.B,
            "lambda": self.lam,
            "lambda_capped": self.lambda_capped,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HistoryParams":
        return cls(
            A=float(data["A"]),
            mu=float(data["mu"]),
            sigma=float(data["sigma"]),
            B=float(data["B"]),
            lam=float(data["lambda"]),
            lambda_capped=bool(data.get("lambda_capped", False)),
        )


def eval_history(params: HistoryParams, t):
    """Yearly citation rate u(t) at age t >= 0 (scalar or array).

    At t = 0 the sigmoid term is exactly 0 regardless of lambda. With
    lambda_capped the sigmoid is the unit step 1{t > 0}.
    """
    scalar = np.ndim(t) == 0
    ta = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ta < 0):
        raise DomainError(f"age must be non-negative, got {t!r}")
    jump = params.A * _lognormal_density(ta + 1.0, params.mu, params.sigma)
    if params.lambda_capped:
        base = params.B * (ta > 0).astype(float)
    else:
        base = params.B * np.tanh(params.lam * ta)
    out = jump + base
    return float(out[0]) if scalar else out


# --- fitting ----------------------------------------------------------------


@dataclass(frozen=True)
class FitOptions:
    """Knobs for fit_history; the default is the unweighted regression."""

    weight_by_population: bool = False
    max_nfev: int = 1000


@dataclass(frozen=True)
class HistoryFit:
    """Fit result: parameters, uncertainties, residuals, provenance.

    se_lambda is None when the rate saturated its cap, where the model is
    locally flat in lambda and no meaningful standard error exists.
    """

    params: HistoryParams
    se_A: float
    se_mu: float
    se_sigma: float
    se_B: float
    se_lambda: float | None
    r2_adj: float
    residuals: tuple[float, ...]
    converged: bool
    discipline: str
    dataset_year: int
    percentile_cap: float | None


def _model_theta(theta: np.ndarray, t: np.ndarray) -> np.ndarray:
    ln_a, mu, ln_sig, ln_b, ln_lam = theta
    a, sig, b, lam = math.exp(ln_a), math.exp(ln_sig), math.exp(ln_b), math.exp(ln_lam)
    return a * _lognormal_density(t + 1.0, mu, sig) + b * np.tanh(lam * t)


def _jac_theta(theta: np.ndarray, t: np.ndarray) -> np.ndarray:
    # Analytic Jacobian in the log-reparameterized coordinates
    # (ln A, mu, ln sigma, ln B, ln lambda).
    ln_a, mu, ln_sig, ln_b, ln_lam = theta
    a, sig, b, lam = math.exp(ln_a), math.exp(ln_sig), math.exp(ln_b), math.exp(ln_lam)
    tp1 = t + 1.0
    z = (np.log(tp1) - mu) / sig
    f = np.exp(-0.5 * z * z) / (tp1 * sig * _SQRT_2PI)
    af = a * f
    cols = np.empty((t.size, N_PARAMS))
    cols[:, 0] = af                         # d/d lnA
    cols[:, 1] = af * z / sig               # d/d mu
    cols[:, 2] = af * (z * z - 1.0)         # d/d ln sigma
    cols[:, 3] = b * np.tanh(lam * t)       # d/d lnB
    cols[:, 4] = b * lam * t * _sech2(lam * t)  # d/d ln lambda
    return cols


def _jac_original(params: HistoryParams, t: np.ndarray) -> np.ndarray:
    # Jacobian with respect to (A, mu, sigma, B, lambda) themselves, for
    # covariance estimation.
    tp1 = t + 1.0
    z = (np.log(tp1) - params.mu) / params.sigma
    f = np.exp(-0.5 * z * z) / (tp1 * params.sigma * _SQRT_2PI)
    af = params.A * f
    cols = np.empty((t.size, N_PARAMS))
    cols[:, 0] = f
    cols[:, 1] = af * z / params.sigma
    cols[:, 2] = af * (z * z - 1.0) / params.sigma
    cols[:, 3] = np.tanh(params.lam * t)
    cols[:, 4] = params.B * t * _sech2(params.lam * t)
    return cols


def _seed_scales(t: np.ndarray, u: np.ndarray, mu0: float, sig0: float) -> tuple[float, float]:
    """Starting A and B from the panel's peak and tail levels."""
    floor = max(float(np.max(u)) * 1e-3, 1e-8)
    b0 = max(float(np.mean(u[-3:])) if u.size >= 3 else float(u[-1]), floor)
    # Height of the component peak needed to lift the curve from the
    # baseline to the observed maximum.
    f_mode = math.exp(-0.5 * sig0 * sig0) / (math.exp(mu0 - sig0 * sig0) * sig0 * _SQRT_2PI)
    a0 = max(float(np.max(u)) - b0, floor) / f_mode
    return a0, b0


def fit_history(panel: AgePanel, options: FitOptions | None = None) -> HistoryFit:
    """Least-squares fit of the history model to an age panel.

    Runs a multi-start local optimization (trust-region least squares with
    an analytic Jacobian) over a fixed grid of (mu, sigma, lambda) starts,
    positivity enforced by log-reparameterization and lambda bounded at
    LAMBDA_BOUND. The best start by residual cost wins; converged is False
    when no start satisfied the optimizer's tolerances.

    Raises:
        InsufficientDataError: fewer than 6 usable ages.
        DegenerateDataError: all-zero response.
    """
    opts = options or FitOptions()
    t = np.array([e.t for e in panel.entries], dtype=float)
    u = np.array([e.u for e in panel.entries], dtype=float)
    if t.size < N_PARAMS + 1:
        raise InsufficientDataError(
            f"need at least {N_PARAMS + 1} usable ages, panel has {t.size}"
        )
    if not np.any(u > 0):
        raise DegenerateDataError("panel response is identically zero")

    if opts.weight_by_population:
        w = np.sqrt(np.array([e.n for e in panel.entries], dtype=float))
    else:
        w = np.ones_like(u)

    def resid(theta):
        return (_model_theta(theta, t) - u) * w

    def jac(theta):
        return _jac_theta(theta, t) * w[:, None]

    lower = np.full(N_PARAMS, -np.inf)
    upper = np.array([np.inf, np.inf, np.inf, np.inf, math.log(LAMBDA_BOUND)])

    best = None
    best_cost = np.inf
    for mu0 in MU_STARTS:
        for sig0 in SIGMA_STARTS:
            for lam0 in LAMBDA_STARTS:
                a0, b0 = _seed_scales(t, u, mu0, sig0)
                x0 = np.array(
                    [math.log(a0), mu0, math.log(sig0), math.log(b0), math.log(lam0)]
                )
                try:
                    res = least_squares(
                        resid,
                        x0,
                        jac=jac,
                        method="trf",
                        bounds=(lower, upper),
                        max_nfev=opts.max_nfev,
                    )
                except Exception:
                    continue
                if res.cost < best_cost:
                    best = res
                    best_cost = res.cost
    if best is None:
        raise ConvergenceError("every optimization start failed outright")

    theta = best.x.copy()
    # tanh saturates at integer ages long before LAMBDA_BOUND, so the cost
    # profile is flat in lambda beyond a few units and the optimizer can
    # stall anywhere on it. When moving lambda to the bound costs nothing
    # the data cannot resolve a finite rate; report the capped limit.
    theta_bound = theta.copy()
    theta_bound[4] = math.log(LAMBDA_BOUND)
    cost_bound = 0.5 * float(np.sum(resid(theta_bound) ** 2))
    if cost_bound <= best_cost * (1.0 + 1e-9):
        theta = theta_bound

    ln_a, mu, ln_sig, ln_b, ln_lam = theta
    lam = math.exp(ln_lam)
    params = HistoryParams(
        A=math.exp(ln_a),
        mu=mu,
        sigma=math.exp(ln_sig),
        B=math.exp(ln_b),
        lam=lam,
        lambda_capped=lam > LAMBDA_CAP,
    )

    u_hat = _model_theta(theta, t)
    resid_plain = u - u_hat
    ssr = float(np.dot(resid_plain * w, resid_plain * w))
    sst = float(np.dot((u - u.mean()) * w, (u - u.mean()) * w))
    n = t.size
    if n > N_PARAMS and sst > 0:
        r2_adj = 1.0 - (ssr / (n - N_PARAMS)) / (sst / (n - 1))
    else:
        r2_adj = 1.0

    jac_o = _jac_original(params, t) * w[:, None]
    s2 = ssr / (n - N_PARAMS) if n > N_PARAMS else 0.0
    cov = s2 * np.linalg.pinv(jac_o.T @ jac_o)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    return HistoryFit(
        params=params,
        se_A=float(se[0]),
        se_mu=float(se[1]),
        se_sigma=float(se[2]),
        se_B=float(se[3]),
        se_lambda=None if params.lambda_capped else float(se[4]),
        r2_adj=r2_adj,
        residuals=tuple(resid_plain.tolist()),
        converged=bool(best.success),
        discipline=panel.discipline,
        dataset_year=panel.dataset_year,
        percentile_cap=panel.percentile_cap,
    )


# --- derived metrics --------------------------------------------------------


@dataclass(frozen=True)
class DerivedMetrics:
    """Closed-form summary metrics of a fitted history curve."""

    u_peak: float
    t_peak: float
    delta1: float
    delta2: float
    s_rate: float
    r_rate: float
    i_rate: float
    mean: float
    median: float
    mode: float
    variance: float

    def to_dict(self) -> dict:
        return {
            "u_peak": self.u_peak,
            "t_peak": self.t_peak,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "s_rate": self.s_rate,
            "r_rate": self.r_rate,
            "i_rate": self.i_rate,
            "mean": self.mean,
            "median": self.median,
            "mode": self.mode,
            "variance": self.variance,
        }


def _component_peak_age(params: HistoryParams) -> float:
    """Age maximizing the jump-decay component A*f(t+1) on PEAK_WINDOW.

    Dense grid scan followed by golden-section refinement. Analytically
    this is exp(mu - sigma^2) - 1 whenever that is non-negative; the
    numerical route stays authoritative so the two can be cross-checked.
    """
    lo, hi = PEAK_WINDOW

    def h(t):
        return _lognormal_density(t + 1.0, params.mu, params.sigma)

    grid = np.arange(lo, hi + PEAK_GRID_STEP, PEAK_GRID_STEP)
    values = h(grid)
    i = int(np.argmax(values))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]

    # Golden-section maximization on [a, b].
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = h(x1), h(x2)
    while b - a > 1e-12:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = h(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = h(x1)
    return float((a + b) / 2.0)


def derive_metrics(fit: Union[HistoryFit, HistoryParams]) -> DerivedMetrics:
    """Metrics from a converged fit (or directly from a parameter set).

    s_rate is stored as delta1/delta2 and i_rate as 1/r_rate, so both
    ratio identities hold exactly by construction.

    Raises:
        InvalidInputError: the fit did not converge.
    """
    if isinstance(fit, HistoryFit):
        if not fit.converged:
            raise InvalidInputError("cannot derive metrics from a non-converged fit")
        params = fit.params
    else:
        params = fit

    sig2 = params.sigma * params.sigma
    delta1 = math.exp(params.mu - sig2)
    delta2 = math.exp(params.mu) * (1.0 - math.exp(-sig2))
    t_peak = _component_peak_age(params)
    u_peak = eval_history(params, t_peak)
    r_rate = params.B / u_peak
    return DerivedMetrics(
        u_peak=u_peak,
        t_peak=t_peak,
        delta1=delta1,
        delta2=delta2,
        s_rate=delta1 / delta2,
        r_rate=r_rate,
        i_rate=1.0 / r_rate,
        mean=math.exp(params.mu + 0.5 * sig2),
        median=math.exp(params.mu),
        mode=delta1,
        variance=(math.exp(sig2) - 1.0) * math.exp(2.0 * params.mu + sig2),
    )


# --- cumulative split -------------------------------------------------------


@dataclass(frozen=True)
class CumulativeSplit:
    """Cumulative citation mass up to horizon T, split by component."""

    T: float
    F: float
    G: float
    H: float
    rho: float


def cumulative_split(params: HistoryParams, T: float) -> CumulativeSplit:
    """Closed-form F, G, H and the jump-decay share rho at horizon T >= 1.

    The baseline integral G is taken over [0, T-1]: baseline attention at
    age t has only accumulated for t years by horizon T = t + 1. With
    lambda_capped it is exactly B*(T-1).
    """
    if T < 1.0:
        raise DomainError(f"horizon must be >= 1, got {T}")
    F = params.A * float(normal_cdf((math.log(T) - params.mu) / params.sigma))
    if params.lambda_capped:
        G = params.B * (T - 1.0)
    else:
        G = (params.B / params.lam) * _ln_cosh(params.lam * (T - 1.0))
    H = F + G
    return CumulativeSplit(T=float(T), F=F, G=G, H=H, rho=F / H)


# --- trend analysis ---------------------------------------------------------


class TrendPoint(NamedTuple):
    dataset_year: int
    s_rate: float
    r_rate: float
    i_rate: float
    converged: bool


def trend_metrics(panels) -> list[TrendPoint]:
    """Fit each panel independently and map to (S, R, I) per dataset year.

    Years whose fit fails to converge are flagged with NaN metrics rather
    than dropped, so the output always aligns with the input years.
    """
    points = []
    for panel in panels:
        fit = fit_history(panel)
        if fit.converged:
            m = derive_metrics(fit)
            points.append(
                TrendPoint(panel.dataset_year, m.s_rate, m.r_rate, m.i_rate, True)
            )
        else:
            nan = float("nan")
            points.append(TrendPoint(panel.dataset_year, nan, nan, nan, False))
    return points


# --- serialization ----------------------------------------------------------


def write_curve_csv(params: HistoryParams, path, t_max: float = 20.0, step: float = 0.1) -> None:
    """Sample the fitted curve as `t,u_hat,f_component,g_component`."""
    import csv as _csv

    t = np.arange(0.0, t_max + step / 2, step)
    jump = params.A * _lognormal_density(t + 1.0, params.mu, params.sigma)
    if params.lambda_capped:
        base = params.B * (t > 0).astype(float)
    else:
        base = params.B * np.tanh(params.lam * t)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "u_hat", "f_component", "g_component"])
        for ti, fi, gi in zip(t, jump, base):
            writer.writerow([repr(float(ti)), repr(float(fi + gi)), repr(float(fi)), repr(float(gi))])
