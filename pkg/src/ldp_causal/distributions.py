"""Truncated normal, inverse gamma and beta helpers used by the Gibbs sampler.

All functions are vectorized over their parameters and draw only from the
``numpy.random.Generator`` they are given.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# beyond this many standard deviations the inverse CDF loses too much precision
TAIL_CUTOFF = 8.0


def _standardize(mu, sigma, lo, hi):
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    return (lo - mu) / sigma, (hi - mu) / sigma


def log_normal_mass(a, b):
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    out = np.empty(a.shape)
    mid = (a <= 0) & (b >= 0)
    left = b < 0
    right = a > 0
    with np.errstate(divide="ignore"):
        out[mid] = np.log1p(-(ndtr(a[mid]) + ndtr(-b[mid])))
        lb, la = log_ndtr(b[left]), log_ndtr(a[left])
        out[left] = lb + np.log1p(-np.exp(la - lb))
        lna, lnb = log_ndtr(-a[right]), log_ndtr(-b[right])
        out[right] = lna + np.log1p(-np.exp(lnb - lna))
    return out if out.ndim else float(out)


def truncnorm_logpdf(x, mu, sigma2, lo=0.0, hi=1.0):
    """Log density of N(mu, sigma2) truncated to [lo, hi]; -inf outside."""
    x = np.asarray(x, dtype=np.float64)
    sigma = np.sqrt(np.asarray(sigma2, dtype=np.float64))
    a, b = _standardize(mu, sigma, lo, hi)
    z = (x - mu) / sigma
    out = -0.5 * z * z - np.log(sigma) - _LOG_SQRT_2PI - log_normal_mass(a, b)
    return np.where((x >= lo) & (x <= hi), out, -np.inf)


def truncnorm_mean(mu, sigma2, lo=0.0, hi=1.0):
    """Mean of N(mu, sigma2) truncated to [lo, hi]."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    sigma = np.sqrt(np.where(sigma2 > 0, sigma2, 1.0))
    a, b = _standardize(mu, sigma, lo, hi)
    log_z = log_normal_mass(a, b)
    ratio = np.exp(-0.5 * a * a - _LOG_SQRT_2PI - log_z) - np.exp(-0.5 * b * b - _LOG_SQRT_2PI - log_z)
    out = np.clip(mu + sigma * ratio, lo, hi)
    out = np.where(sigma2 > 0, out, np.clip(mu, lo, hi))
    return out if out.ndim else float(out)


def _tail_rejection(rng: np.random.Generator, c: np.ndarray, d: np.ndarray) -> np.ndarray:
    # Standard normal restricted to [c, d] with c > 0: exponential proposal of
    # rate c truncated to [c, d], accepted with probability exp(-(x - c)^2 / 2).
    out = np.empty(c.shape)
    todo = np.arange(c.size)
    while todo.size:
        cc, dd = c[todo], d[todo]
        v = rng.random(todo.size)
        span = -np.expm1(-cc * (dd - cc))
        x = cc - np.log1p(-v * span) / cc
        keep = rng.random(todo.size) < np.exp(-0.5 * (x - cc) ** 2)
        out[todo[keep]] = x[keep]
        todo = todo[~keep]
    return out


def truncnorm_sample(rng: np.random.Generator, mu, sigma2, lo=0.0, hi=1.0, size=None):
    """Draw from N(mu, sigma2) truncated to [lo, hi].

    Inverse CDF on the lower-tail side of the interval (the upper tail is
    reflected), switching to rejection sampling when the whole interval lies
    more than ``TAIL_CUTOFF`` standard deviations out.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.sqrt(np.asarray(sigma2, dtype=np.float64))
    shape = np.broadcast_shapes(mu.shape, sigma.shape) if size is None else size
    mu = np.broadcast_to(mu, shape)
    sigma = np.broadcast_to(sigma, shape)
    a, b = _standardize(mu, sigma, lo, hi)
    flip = a > 0
    lo_s = np.where(flip, -b, a)
    hi_s = np.where(flip, -a, b)
    u = rng.random(shape)
    pa, pb = ndtr(lo_s), ndtr(hi_s)
    z = ndtri(pa + u * (pb - pa))
    deep = hi_s < -TAIL_CUTOFF
    if np.any(deep):
        z[deep] = -_tail_rejection(rng, -hi_s[deep], -lo_s[deep])
    z = np.clip(z, lo_s, hi_s)
    z = np.where(flip, -z, z)
    out = np.clip(mu + sigma * z, lo, hi)
    return out if out.ndim else float(out)


def inverse_gamma_sample(rng: np.random.Generator, shape, scale, size=None):
    """Draw from IG(shape, scale), density proportional to x^(-shape-1) exp(-scale/x)."""
    return np.asarray(scale, dtype=np.float64) / rng.standard_gamma(shape, size)


def beta_sample(rng: np.random.Generator, a, b, size=None):
    """Beta(a, b) as a ratio of two gamma variates."""
    g1 = rng.standard_gamma(a, size)
    g2 = rng.standard_gamma(b, size)
    total = g1 + g2
    # both gammas can underflow to zero for tiny shapes; fall back to the mean
    safe = total > 0
    mean = np.asarray(a, dtype=np.float64) / (np.asarray(a, dtype=np.float64) + b)
    return np.where(safe, g1 / np.where(safe, total, 1.0), mean)
