"""Data-augmentation Gibbs sampler for the PATE under a truncated DP mixture.

Latent treatment bits and both potential outcomes are imputed for every
unit. The potential-outcome pair follows a stick-breaking mixture of
products of normals truncated to [0, 1]. The observed-arm outcome is updated
with a Metropolis step whose acceptance ratio is the privacy mechanism's
likelihood ratio.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_ndtr

from .core import PrivacyBudget, RandomSource, ValidationError
from .distributions import (
    beta_sample,
    inverse_gamma_sample,
    truncnorm_logpdf,
    truncnorm_mean,
    truncnorm_sample,
)
from .mechanisms import (
    CustomARelease,
    CustomBRelease,
    JointRelease,
    custom_a_sensitivity,
    laplace_logpdf,
    randomized_response_logpmf,
)

_Y_FLOOR, _Y_CEIL = 0.001, 0.999


class TruncationWarning(UserWarning):
    """Every mixture component was occupied in some sweep; K may be too small."""


@dataclass(frozen=True)
class GibbsConfig:
    k_trunc: int = 20
    iterations: int = 5000
    burn_in: int = 2500
    mu0: float = 0.5
    sigma0_sq: float = 9.0
    a0: float = 2.0
    b0: float = 0.04
    alpha_prior: tuple[float, float] = (1.0, 1.0)  # Gamma(shape, rate) on the DP concentration
    alpha_proposal_sd: float = 1.0
    level: float = 0.05  # credible interval is the central 1 - level band
    seed: int = 0
    # "release" starts W at the arm suggested by the released value;
    # "bernoulli" starts custom scenarios at fair coin flips
    init_w: str = "release"
    exact_sensitivity: bool = False

    def __post_init__(self) -> None:
        if self.k_trunc < 2:
            raise ValidationError("k_trunc must be at least 2")
        if not (0 <= self.burn_in < self.iterations):
            raise ValidationError("need 0 <= burn_in < iterations")
        if min(self.sigma0_sq, self.a0, self.b0, self.alpha_proposal_sd, *self.alpha_prior) <= 0:
            raise ValidationError("hyperparameters must be positive")
        if not (0 < self.level < 1):
            raise ValidationError("level must lie in (0, 1)")
        if self.init_w not in ("release", "bernoulli"):
            raise ValidationError(f"unknown init_w {self.init_w!r}")


@dataclass
class DpmState:
    w: np.ndarray  # (n,) imputed treatment bits
    y0: np.ndarray
    y1: np.ndarray
    c: np.ndarray  # (n,) component labels in 0..K-1
    mu: np.ndarray  # (K, 2) per component and arm
    sigma2: np.ndarray
    v: np.ndarray  # (K,) stick proportions, v[-1] == 1
    u: np.ndarray  # (K,) mixture weights
    dp_alpha: float = 1.0
    p_est: float = 0.5

    @property
    def k(self) -> int:
        return self.v.size

    def outcomes(self, arm: int) -> np.ndarray:
        return self.y1 if arm == 1 else self.y0


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    ci_lower: float
    ci_upper: float
    n_draws: int
    mh_acceptance_rate: float


@dataclass
class ChainResult:
    draws: np.ndarray  # PATE functional after each retained sweep
    sample_effects: np.ndarray  # mean(Y1 - Y0) of the imputed units, diagnostic only
    summary: PosteriorSummary
    max_occupied: int
    warnings: list[str] = field(default_factory=list)
    state: DpmState | None = None


class ReleaseModel:
    """Mechanism likelihood of each released record given (W_i, Y_i(W_i))."""

    scenario = ""
    estimates_p = False

    def __init__(self, release, budget: PrivacyBudget, p: float | None):
        self.release = release
        self.budget = budget
        self.p = p
        self.n = release.n

    def outcome_loglik(self, arm: int, y: np.ndarray) -> np.ndarray:
        """Log-likelihood terms that involve the imputed outcome."""
        raise NotImplementedError

    def fixed_loglik(self, arm: int):
        """Log-likelihood terms that depend on the arm only."""
        return 0.0

    def loglik(self, arm: int, y: np.ndarray) -> np.ndarray:
        return self.outcome_loglik(arm, y) + self.fixed_loglik(arm)

    def initial_w(self, rng: np.random.Generator, mode: str) -> np.ndarray:
        return (rng.random(self.n) < 0.5).astype(np.int64)

    def initial_observed(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class JointModel(ReleaseModel):
    scenario = "joint"

    def __init__(self, release: JointRelease, budget, p):
        super().__init__(release, budget, p)
        self.y_scale = 1.0 / budget["eps_y"]
        self.eps_w = budget["eps_w"]
        self._rr = {arm: randomized_response_logpmf(release.w_tilde, arm, self.eps_w) for arm in (0, 1)}

    def outcome_loglik(self, arm, y):
        return laplace_logpdf(self.release.y_tilde, y, self.y_scale)

    def fixed_loglik(self, arm):
        return self._rr[arm]

    def initial_w(self, rng, mode):
        return self.release.w_tilde.copy()

    def initial_observed(self, w):
        return self.release.y_tilde


class CustomAModel(ReleaseModel):
    scenario = "custom_a"

    def __init__(self, release: CustomARelease, budget, p, exact_sensitivity=False):
        super().__init__(release, budget, p)
        self.scale = custom_a_sensitivity(p, exact=exact_sensitivity) / budget["eps_a"]

    def outcome_loglik(self, arm, y):
        loc = y / self.p if arm == 1 else -y / (1.0 - self.p)
        return laplace_logpdf(self.release.a_tilde, loc, self.scale)

    def initial_w(self, rng, mode):
        if mode == "bernoulli":
            return super().initial_w(rng, mode)
        return (self.release.a_tilde > 0).astype(np.int64)

    def initial_observed(self, w):
        a = self.release.a_tilde
        return np.where(w == 1, a * self.p, -a * (1.0 - self.p))


class CustomBModel(ReleaseModel):
    scenario = "custom_b"
    estimates_p = True

    def __init__(self, release: CustomBRelease, budget, p):
        super().__init__(release, budget, None)
        r = release
        s1, s2, s3 = (1.0 / budget[k] for k in ("eps_b1", "eps_b2", "eps_b3"))
        self.s1, self.s2 = s1, s2
        # parts of the likelihood that do not involve the imputed outcome
        self._fixed = {
            1: laplace_logpdf(r.b2, 0.0, s2) + laplace_logpdf(r.b3, 1.0, s3),
            0: laplace_logpdf(r.b1, 0.0, s1) + laplace_logpdf(r.b3, 0.0, s3),
        }

    def outcome_loglik(self, arm, y):
        if arm == 1:
            return laplace_logpdf(self.release.b1, y, self.s1)
        return laplace_logpdf(self.release.b2, y, self.s2)

    def fixed_loglik(self, arm):
        return self._fixed[arm]

    def initial_w(self, rng, mode):
        if mode == "bernoulli":
            return super().initial_w(rng, mode)
        return (self.release.b3 > 0.5).astype(np.int64)

    def initial_observed(self, w):
        return np.where(w == 1, self.release.b1, self.release.b2)


def release_model(release, budget: PrivacyBudget, p: float | None, exact_sensitivity: bool = False) -> ReleaseModel:
    """Pick the likelihood matching the release type and check budget and p."""
    if isinstance(release, JointRelease):
        if budget.scenario not in ("joint", "joint_with_covariates"):
            raise ValidationError(f"joint release with a {budget.scenario} budget")
        if p is None:
            raise ValidationError("the joint scenario needs the assignment probability p")
        return JointModel(release, budget, _check_p(p))
    if isinstance(release, CustomARelease):
        if budget.scenario != "custom_a":
            raise ValidationError(f"custom_a release with a {budget.scenario} budget")
        if p is None:
            raise ValidationError("the custom_a scenario needs the assignment probability p")
        return CustomAModel(release, budget, _check_p(p), exact_sensitivity)
    if isinstance(release, CustomBRelease):
        if budget.scenario != "custom_b":
            raise ValidationError(f"custom_b release with a {budget.scenario} budget")
        return CustomBModel(release, budget, None)
    raise ValidationError(f"unsupported release type {type(release).__name__}")


def _check_p(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise ValidationError(f"p must lie in (0, 1), got {p}")
    return float(p)


def _treatment_prob(model: ReleaseModel, state: DpmState) -> float:
    return state.p_est if model.estimates_p else model.p


def step_update_p(state: DpmState, rng: np.random.Generator, model: ReleaseModel | None = None) -> float:
    """Conjugate Beta(1, 1) update of the treatment probability."""
    if model is not None and not model.estimates_p:
        raise ValidationError(f"p is known in the {model.scenario} scenario and is not sampled")
    n1 = int(state.w.sum())
    state.p_est = float(beta_sample(rng, 1.0 + n1, 1.0 + (state.w.size - n1)))
    return state.p_est


def w_log_odds(state: DpmState, model: ReleaseModel) -> np.ndarray:
    p = _treatment_prob(model, state)
    with np.errstate(divide="ignore"):
        l1 = model.loglik(1, state.y1) + np.log(p)
        l0 = model.loglik(0, state.y0) + np.log1p(-p)
    if np.any(np.isneginf(l1) & np.isneginf(l0)):
        raise FloatingPointError("both treatment arms have zero likelihood")
    return l1 - l0


def step_assign_w(state: DpmState, model: ReleaseModel, rng: np.random.Generator) -> np.ndarray:
    prob1 = expit(w_log_odds(state, model))
    state.w = (rng.random(state.w.size) < prob1).astype(np.int64)
    return state.w


def step_impute_outcomes(state: DpmState, model: ReleaseModel, rng: np.random.Generator) -> int:
    """Redraw the missing arm and Metropolis-update the observed arm.

    Returns the number of accepted proposals (one proposal per unit).
    """
    w, c = state.w, state.c
    treated = w == 1
    # missing arm straight from its component
    mis_arm = 1 - w
    y_mis = truncnorm_sample(rng, state.mu[c, mis_arm], state.sigma2[c, mis_arm])
    # observed arm: component proposal, mechanism likelihood ratio
    y_prop = truncnorm_sample(rng, state.mu[c, w], state.sigma2[c, w])
    y_prev = np.where(treated, state.y1, state.y0)
    log_ratio = np.where(
        treated,
        model.outcome_loglik(1, y_prop) - model.outcome_loglik(1, y_prev),
        model.outcome_loglik(0, y_prop) - model.outcome_loglik(0, y_prev),
    )
    accept = np.log(rng.random(w.size)) < log_ratio
    y_obs = np.where(accept, y_prop, y_prev)
    state.y1 = np.where(treated, y_obs, y_mis)
    state.y0 = np.where(treated, y_mis, y_obs)
    return int(accept.sum())


def cluster_log_mass(state: DpmState) -> np.ndarray:
    """(n, K) unnormalized log probabilities of each unit's component label."""
    with np.errstate(divide="ignore"):
        const = np.log(state.u)
    out = None
    for arm in (0, 1):
        mu, s2 = state.mu[:, arm], state.sigma2[:, arm]
        # truncnorm_logpdf split into a per-component constant and a quadratic
        const = const + truncnorm_logpdf(mu, mu, s2)
        z2 = (state.outcomes(arm)[:, None] - mu[None, :]) ** 2 / s2[None, :]
        out = -0.5 * z2 if out is None else out - 0.5 * z2
    return out + const[None, :]


def step_assign_clusters(state: DpmState, rng: np.random.Generator) -> np.ndarray:
    log_m = cluster_log_mass(state)
    # log-sum-exp style shift before exponentiating
    mass = np.exp(log_m - log_m.max(axis=1, keepdims=True))
    cum = np.cumsum(mass, axis=1)
    draw = rng.random(state.c.size)[:, None] * cum[:, -1:]
    state.c = np.minimum((cum < draw).sum(axis=1), state.k - 1)
    return state.c


def alpha_log_target(alpha: float, v: np.ndarray, prior: tuple[float, float]) -> float:
    """Gamma prior times the Beta(1, alpha) densities of the free sticks."""
    shape, rate = prior
    free = np.minimum(v[:-1], 1.0 - 2.0**-53)
    k = free.size
    return (shape - 1.0) * math.log(alpha) - rate * alpha + k * math.log(alpha) + (alpha - 1.0) * float(np.sum(np.log1p(-free)))


def compose_weights(v: np.ndarray) -> np.ndarray:
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - v[:-1])])
    return v * remaining


def step_update_sticks_and_alpha(state: DpmState, config: GibbsConfig, rng: np.random.Generator) -> bool:
    """Conjugate stick update, then one Metropolis step for the concentration.

    Returns whether the concentration proposal was accepted.
    """
    k = state.k
    counts = np.bincount(state.c, minlength=k)
    beyond = counts[::-1].cumsum()[::-1] - counts
    v = np.ones(k)
    v[:-1] = beta_sample(rng, 1.0 + counts[:-1], state.dp_alpha + beyond[:-1])
    state.v = v
    state.u = compose_weights(v)

    sd = config.alpha_proposal_sd
    cur = state.dp_alpha
    prop = float(truncnorm_sample(rng, cur, sd * sd, 0.0, np.inf))
    if prop <= 0.0:
        return False
    log_ratio = (
        alpha_log_target(prop, v, config.alpha_prior)
        - alpha_log_target(cur, v, config.alpha_prior)
        + log_ndtr(cur / sd)
        - log_ndtr(prop / sd)
    )
    if math.log(rng.random()) < log_ratio:
        state.dp_alpha = prop
        return True
    return False


def location_posterior(counts, total, sigma2, config: GibbsConfig):
    """Location and variance of the (untruncated) normal update for a component mean."""
    denom = sigma2 + config.sigma0_sq * counts
    return (config.mu0 * sigma2 + config.sigma0_sq * total) / denom, config.sigma0_sq * sigma2 / denom


def step_update_components(state: DpmState, config: GibbsConfig, rng: np.random.Generator) -> None:
    """Inverse-gamma then truncated-normal update of every (component, arm).

    Empty components get the same formulas with zero counts, which are
    draws from the base measure.
    """
    k = state.k
    counts = np.bincount(state.c, minlength=k).astype(np.float64)
    for arm in (0, 1):
        y = state.outcomes(arm)
        total = np.bincount(state.c, weights=y, minlength=k)
        ss = np.bincount(state.c, weights=(y - state.mu[state.c, arm]) ** 2, minlength=k)
        s2 = inverse_gamma_sample(rng, config.a0 + 0.5 * counts, config.b0 + 0.5 * ss)
        loc, var = location_posterior(counts, total, s2, config)
        state.sigma2[:, arm] = s2
        state.mu[:, arm] = truncnorm_sample(rng, loc, var)


def pate_draw(state: DpmState) -> float:
    """PATE implied by the mixture parameters: weighted difference of arm means."""
    m1 = truncnorm_mean(state.mu[:, 1], state.sigma2[:, 1])
    m0 = truncnorm_mean(state.mu[:, 0], state.sigma2[:, 0])
    return float(np.sum(state.u * (m1 - m0)))


def initial_state(model: ReleaseModel, config: GibbsConfig, rng: np.random.Generator) -> DpmState:
    n, k = model.n, config.k_trunc
    w = model.initial_w(rng, config.init_w).astype(np.int64)
    y_obs = np.clip(model.initial_observed(w), _Y_FLOOR, _Y_CEIL)
    y1 = np.where(w == 1, y_obs, 0.5)
    y0 = np.where(w == 1, 0.5, y_obs)
    c = rng.integers(0, k, size=n)
    v = 1.0 / (k - np.arange(k))  # equal weights 1/K
    state = DpmState(
        w=w,
        y0=y0,
        y1=y1,
        c=c,
        mu=np.full((k, 2), config.mu0),
        sigma2=np.full((k, 2), config.b0 / (config.a0 - 1.0) if config.a0 > 1 else 1.0),
        v=v,
        u=compose_weights(v),
        dp_alpha=1.0,
        p_est=0.5,
    )
    step_update_components(state, config, rng)
    return state


def run_chain(
    release,
    budget: PrivacyBudget,
    p: float | None = None,
    config: GibbsConfig | None = None,
    rng: np.random.Generator | RandomSource | None = None,
    keep_state: bool = False,
) -> ChainResult:
    """Run the sampler and summarize the retained PATE draws.

    Sweep order: treatment probability (custom_b only), treatment bits,
    outcomes, labels, sticks and concentration, component parameters.
    """
    config = config or GibbsConfig()
    if rng is None:
        rng = RandomSource(config.seed).generator()
    elif isinstance(rng, RandomSource):
        rng = rng.generator()
    model = release_model(release, budget, p, config.exact_sensitivity)
    state = initial_state(model, config, rng)

    kept = config.iterations - config.burn_in
    draws = np.empty(kept)
    effects = np.empty(kept)
    accepted = 0
    max_occupied = 0
    for it in range(config.iterations):
        if model.estimates_p:
            step_update_p(state, rng, model)
        step_assign_w(state, model, rng)
        accepted += step_impute_outcomes(state, model, rng)
        step_assign_clusters(state, rng)
        max_occupied = max(max_occupied, int(np.unique(state.c).size))
        step_update_sticks_and_alpha(state, config, rng)
        step_update_components(state, config, rng)
        if it >= config.burn_in:
            j = it - config.burn_in
            draws[j] = pate_draw(state)
            effects[j] = float(np.mean(state.y1 - state.y0))

    notes = []
    if max_occupied >= config.k_trunc:
        msg = f"all {config.k_trunc} mixture components were occupied; rerun with a larger k_trunc"
        warnings.warn(msg, TruncationWarning, stacklevel=2)
        notes.append(msg)
    lo, hi = np.quantile(draws, [config.level / 2.0, 1.0 - config.level / 2.0])
    summary = PosteriorSummary(
        mean=float(draws.mean()),
        ci_lower=float(lo),
        ci_upper=float(hi),
        n_draws=kept,
        mh_acceptance_rate=accepted / (config.iterations * model.n),
    )
    return ChainResult(
        draws=draws,
        sample_effects=effects,
        summary=summary,
        max_occupied=max_occupied,
        warnings=notes,
        state=state if keep_state else None,
    )

