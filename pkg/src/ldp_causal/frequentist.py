"""Debiased point estimators, plug-in variances and clamped intervals.

Estimators return an :class:`EstimateReport` whose interval is
``estimate +- z * sqrt(sigma_hat / n)``. The ``*_point``/``*_fit`` helpers
expose the bare point estimates without the sample-size requirements
imposed by the variance estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, ndtri

from .core import DegenerateDataError, EstimateReport, ValidationError
from .mechanisms import CustomARelease, CustomBRelease, JointRelease

SUPPORT = (-1.0, 1.0)


def z_quantile(alpha: float) -> float:
    """Upper alpha/2 quantile of the standard normal."""
    if not (0.0 < alpha <= 1.0):
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha}")
    return float(ndtri(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class DebiasConstants:
    q: float
    rho0: float
    rho1: float
    c_factor: float


def debias_constant(p: float, eps_w: float) -> DebiasConstants:
    """Constants that undo the attenuation caused by flipping the treatment bit."""
    if not (0.0 < p < 1.0):
        raise ValidationError(f"p must lie in (0, 1), got {p}")
    if not (eps_w > 0 and math.isfinite(eps_w)):
        raise ValidationError(f"eps_w must be positive and finite, got {eps_w}")
    q = float(expit(eps_w))
    two_q_minus_1 = math.tanh(eps_w / 2.0)
    rho1 = p * q + (1.0 - p) * (1.0 - q)
    rho0 = 1.0 - rho1
    c = rho0 * rho1 / (p * (1.0 - p) * two_q_minus_1)
    return DebiasConstants(q=q, rho0=rho0, rho1=rho1, c_factor=c)


@dataclass(frozen=True)
class GroupMoments:
    n0: int
    n1: int
    e0: float
    e1: float
    v0: float
    v1: float


def group_moments(release: JointRelease) -> GroupMoments:
    w = release.w_tilde
    y = release.y_tilde
    n1 = int(w.sum())
    n0 = int(w.size - n1)
    if min(n0, n1) < 2:
        raise DegenerateDataError(
            f"each privatized treatment group needs at least 2 records (got n0={n0}, n1={n1})"
        )
    y1, y0 = y[w == 1], y[w == 0]
    return GroupMoments(
        n0=n0,
        n1=n1,
        e0=float(y0.mean()),
        e1=float(y1.mean()),
        v0=float(y0.var(ddof=1)),
        v1=float(y1.var(ddof=1)),
    )


def clamp_report(r: EstimateReport, support: tuple[float, float] = SUPPORT) -> EstimateReport:
    """Project the point and both interval ends onto the estimand's support.

    Flags accumulate, so clamping an already clamped report is a no-op.
    """
    lo, hi = support
    est = min(max(r.estimate, lo), hi)
    cl = min(max(r.ci_lower, lo), hi)
    cu = min(max(r.ci_upper, lo), hi)
    return replace(
        r,
        estimate=est,
        ci_lower=cl,
        ci_upper=cu,
        clamped_point=r.clamped_point or est != r.estimate,
        clamped_lower=r.clamped_lower or cl != r.ci_lower,
        clamped_upper=r.clamped_upper or cu != r.ci_upper,
    )


def _report(method: str, estimate: float, sigma_hat: float, n: int, alpha: float, clamp: bool, **extras) -> EstimateReport:
    sigma_hat = max(float(sigma_hat), 0.0)
    se = math.sqrt(sigma_hat / n)
    half = z_quantile(alpha) * se
    r = EstimateReport(
        method=method,
        estimate=float(estimate),
        sigma_hat=sigma_hat,
        std_error=se,
        ci_lower=float(estimate) - half,
        ci_upper=float(estimate) + half,
        alpha=float(alpha),
        n=int(n),
        extras=extras,
    )
    return clamp_report(r) if clamp else r


def naive_point(release: JointRelease, p: float, eps_w: float) -> float:
    """Debiased IPW point estimate C * tau_naive (no group-size requirement)."""
    k = debias_constant(p, eps_w)
    w, y = release.w_tilde, release.y_tilde
    tau_naive = np.mean(w * y / k.rho1 - (1 - w) * y / k.rho0)
    return float(k.c_factor * tau_naive)


def estimate_naive(release: JointRelease, p: float, eps_w: float, alpha: float = 0.05, clamp: bool = True) -> EstimateReport:
    """Debiased IPW estimate from a joint release, with its plug-in interval."""
    k = debias_constant(p, eps_w)
    m = group_moments(release)
    est = naive_point(release, p, eps_w)
    sigma = k.c_factor**2 * (
        m.v1 / k.rho1
        + m.v0 / k.rho0
        + (k.rho0 / k.rho1) * m.e1**2
        + (k.rho1 / k.rho0) * m.e0**2
        + 2.0 * m.e0 * m.e1
    )
    return _report("naive", est, sigma, release.n, alpha, clamp, moments=m, constants=k)


def estimate_custom_ipw(release: CustomARelease, alpha: float = 0.05, clamp: bool = True) -> EstimateReport:
    a = release.a_tilde
    if a.size < 2:
        raise DegenerateDataError("custom IPW needs at least 2 records")
    return _report("custom_ipw", float(a.mean()), float(a.var(ddof=1)), a.size, alpha, clamp)


@dataclass(frozen=True)
class DmMoments:
    e: np.ndarray
    s: np.ndarray
    gradient: np.ndarray


def dm_moments(release: CustomBRelease) -> DmMoments:
    b = np.column_stack([release.b1, release.b2, release.b3, release.b4])
    e = b.mean(axis=0)
    s = np.cov(b, rowvar=False, ddof=1)
    e3 = e[2]
    grad = np.array([1.0 / e3, -1.0 / (1.0 - e3), -e[0] / e3**2, e[1] / (1.0 - e3) ** 2])
    return DmMoments(e=e, s=s, gradient=grad)


def estimate_custom_dm(release: CustomBRelease, alpha: float = 0.05, clamp: bool = True) -> EstimateReport:
    """Ratio difference-in-means with a delta-method variance."""
    n = release.n
    if n < 2:
        raise DegenerateDataError("custom DM needs at least 2 records")
    s3 = release.b3.sum()
    s4 = release.b4.sum()
    if s3 == 0.0 or s4 == 0.0:
        raise DegenerateDataError("treatment-share denominator is exactly zero")
    est = release.b1.sum() / s3 - release.b2.sum() / s4
    m = dm_moments(release)
    sigma = float(m.gradient @ m.s @ m.gradient)
    return _report("custom_dm", est, sigma, n, alpha, clamp, moments=m)


def _solve_spd(g: np.ndarray, rhs: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Cholesky solve that rejects pivots below ``rel_tol`` times the largest pivot."""
    k = g.shape[0]
    lower = np.zeros_like(g)
    largest = 0.0
    for j in range(k):
        pivot = g[j, j] - lower[j, :j] @ lower[j, :j]
        largest = max(largest, pivot)
        if pivot <= rel_tol * largest:
            raise DegenerateDataError("singular design matrix: covariates are collinear or constant")
        lower[j, j] = math.sqrt(pivot)
        for i in range(j + 1, k):
            lower[i, j] = (g[i, j] - lower[i, :j] @ lower[j, :j]) / lower[j, j]
    z = np.linalg.solve(lower, rhs)
    return np.linalg.solve(lower.T, z)


@dataclass(frozen=True)
class OlsFit:
    estimate: float
    intercepts: tuple[float, float]
    slopes: tuple[np.ndarray, np.ndarray]
    x_bar: np.ndarray
    mse: tuple[float, float]
    group_sizes: tuple[int, int]


def ols_fit(release: JointRelease, p: float, eps_w: float) -> OlsFit:
    """Per-arm least squares of privatized outcome on privatized covariates."""
    if release.x_tilde is None:
        raise ValidationError("OLS adjustment needs privatized covariates")
    k = debias_constant(p, eps_w)
    x, y, w = release.x_tilde, release.y_tilde, release.w_tilde
    coefs, mses, sizes = [], [], []
    for arm in (0, 1):
        mask = w == arm
        xa = np.column_stack([np.ones(mask.sum()), x[mask]])
        if xa.shape[0] < xa.shape[1]:
            raise DegenerateDataError(f"privatized group {arm} has {xa.shape[0]} records for {xa.shape[1]} coefficients")
        coef = _solve_spd(xa.T @ xa, xa.T @ y[mask])
        resid = y[mask] - xa @ coef
        coefs.append(coef)
        mses.append(float(np.mean(resid**2)))
        sizes.append(int(mask.sum()))
    x_bar = x.mean(axis=0)
    raw = coefs[1][0] - coefs[0][0] + x_bar @ (coefs[1][1:] - coefs[0][1:])
    return OlsFit(
        estimate=float(k.c_factor * raw),
        intercepts=(float(coefs[0][0]), float(coefs[1][0])),
        slopes=(coefs[0][1:], coefs[1][1:]),
        x_bar=x_bar,
        mse=(mses[0], mses[1]),
        group_sizes=(sizes[0], sizes[1]),
    )


def estimate_ols(release: JointRelease, p: float, eps_w: float, alpha: float = 0.05, clamp: bool = True) -> EstimateReport:
    """Debiased regression-adjusted estimate from a joint release with covariates."""
    if release.x_tilde is None:
        raise ValidationError("OLS adjustment needs privatized covariates")
    d = release.x_tilde.shape[1]
    n1 = int(release.w_tilde.sum())
    n0 = release.n - n1
    if min(n0, n1) < d + 2:
        raise DegenerateDataError(f"each privatized group needs at least {d + 2} records (got n0={n0}, n1={n1})")
    k = debias_constant(p, eps_w)
    fit = ols_fit(release, p, eps_w)
    sigma = k.c_factor**2 * (fit.mse[1] / k.rho1 + fit.mse[0] / k.rho0)
    return _report("ols", fit.estimate, sigma, release.n, alpha, clamp, fit=fit)
