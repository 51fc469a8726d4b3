"""Beta-regression data-generating process, evaluation metrics and a replication runner."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .bayesian import GibbsConfig, run_chain
from .core import (
    SCENARIOS,
    DegenerateDataError,
    PrivacyBudget,
    RandomSource,
    RawDataset,
    ValidationError,
    derive_stream,
)
from .distributions import beta_sample
from .frequentist import estimate_custom_dm, estimate_custom_ipw, estimate_naive, estimate_ols
from .mechanisms import privatize

# (E[Y(0)], E[Y(1)]) under the default DGP
ARM_MEANS = (0.359613, 0.457068)
TRUE_PATE = ARM_MEANS[1] - ARM_MEANS[0]

# which scenarios each estimator can consume
ESTIMATOR_SCENARIOS = {
    "naive": ("joint", "joint_with_covariates"),
    "custom_ipw": ("custom_a",),
    "custom_dm": ("custom_b",),
    "ols": ("joint_with_covariates",),
    "bayes": ("joint", "custom_a", "custom_b"),
}

# substream labels inside one replication
_DGP, _PRIVATIZE, _GIBBS = 0, 1, 2


@dataclass(frozen=True)
class DgpConfig:
    n: int = 10000
    phi: float = 50.0
    # intercept, X1, X2, X3, treatment
    coef: tuple[float, float, float, float, float] = (1.0, -0.8, 0.5, -2.0, 0.5)
    p_treat: float = 0.5

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError("n must be positive")
        if not self.phi > 0:
            raise ValidationError("phi must be positive")
        if not (0.0 < self.p_treat < 1.0):
            raise ValidationError("p_treat must lie in (0, 1)")


@dataclass(frozen=True)
class SimulatedData:
    """Observed dataset plus both latent arms; estimators only ever see ``dataset``."""

    dataset: RawDataset
    y0: np.ndarray
    y1: np.ndarray

    @property
    def sample_effect(self) -> float:
        return float(np.mean(self.y1 - self.y0))


def outcome_mean(cfg: DgpConfig, x: np.ndarray, w) -> np.ndarray:
    b0, b1, b2, b3, bw = cfg.coef
    return expit(b0 + b1 * x[..., 0] + b2 * x[..., 1] + b3 * x[..., 2] + bw * np.asarray(w))


def draw_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    x1 = rng.random(n)
    x2 = beta_sample(rng, 2.0, 5.0, n)
    x3 = (rng.random(n) < 0.7).astype(np.float64)
    return np.column_stack([x1, x2, x3])


def generate_dataset(cfg: DgpConfig, rng: np.random.Generator) -> SimulatedData:
    n = cfg.n
    w = (rng.random(n) < cfg.p_treat).astype(np.int64)
    x = draw_covariates(rng, n)
    arms = []
    for arm in (0, 1):
        mu = outcome_mean(cfg, x, arm)
        arms.append(beta_sample(rng, mu * cfg.phi, (1.0 - mu) * cfg.phi))
    y0, y1 = arms
    y = np.where(w == 1, y1, y0)
    return SimulatedData(RawDataset(w=w, y=y, x=x, p=cfg.p_treat), y0, y1)


def true_pate() -> float:
    return TRUE_PATE


def mc_true_pate(cfg: DgpConfig | None = None, n_draws: int = 10**7, seed: int = 0, chunk: int = 10**6) -> float:
    """Monte Carlo average of E[Y(1) - Y(0) | X] over the covariate laws."""
    cfg = cfg or DgpConfig()
    rng = RandomSource(seed).generator()
    total, done = 0.0, 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        x = draw_covariates(rng, m)
        total += float(np.sum(outcome_mean(cfg, x, 1) - outcome_mean(cfg, x, 0)))
        done += m
    return total / n_draws


@dataclass(frozen=True)
class Metrics:
    bias: float
    mse: float
    coverage: float
    mean_width: float


def compute_metrics(estimates, tau: float) -> Metrics:
    """Bias (as tau minus estimate), MSE, interval coverage and mean width."""
    est = np.asarray(estimates, dtype=np.float64).reshape(-1, 3)
    if est.shape[0] == 0:
        raise ValidationError("no estimates to summarize")
    point, lo, hi = est.T
    err = tau - point
    return Metrics(
        bias=float(np.mean(err)),
        mse=float(np.mean(err**2)),
        coverage=float(np.mean((lo <= tau) & (tau <= hi))),
        mean_width=float(np.mean(hi - lo)),
    )


@dataclass(frozen=True)
class GridCell:
    scenario: str
    estimator: str
    eps_total: float
    n: int
    n_sim: int
    eps_split: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        if self.estimator not in ESTIMATOR_SCENARIOS:
            raise ValidationError(f"unknown estimator {self.estimator!r}")
        if self.scenario not in ESTIMATOR_SCENARIOS[self.estimator]:
            raise ValidationError(f"estimator {self.estimator} does not apply to scenario {self.scenario}")
        if self.n_sim < 1:
            raise ValidationError("n_sim must be positive")
        if self.eps_split is not None:
            object.__setattr__(self, "eps_split", tuple(float(e) for e in self.eps_split))
        self.budget()  # validates the split

    def budget(self) -> PrivacyBudget:
        if self.eps_split is None:
            return PrivacyBudget.equal_split(self.scenario, self.eps_total)
        b = PrivacyBudget(self.scenario, self.eps_split)
        if abs(b.eps_total - self.eps_total) > 1e-9 * max(1.0, self.eps_total):
            raise ValidationError(f"eps_split sums to {b.eps_total}, not eps_total={self.eps_total}")
        return b


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    estimator: str
    eps_split: str
    n: int
    n_sim: int
    bias: float
    mse: float
    coverage: float
    mean_width: float
    failure_count: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimulationSettings:
    master_seed: int = 2024
    dgp: DgpConfig = field(default_factory=DgpConfig)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    alpha: float = 0.05
    clamp: bool = True


def replication_data(master_seed: int, r: int, dgp: DgpConfig) -> tuple[RandomSource, SimulatedData]:
    src = derive_stream(master_seed, r)
    return src, generate_dataset(dgp, src.substream(_DGP).generator())


def run_replication(cell: GridCell, r: int, settings: SimulationSettings) -> tuple[float, float, float] | None:
    """One dataset, one release, one estimate. ``None`` marks a failed replication."""
    dgp = DgpConfig(n=cell.n, phi=settings.dgp.phi, coef=settings.dgp.coef, p_treat=settings.dgp.p_treat)
    src, sim = replication_data(settings.master_seed, r, dgp)
    budget = cell.budget()
    release = privatize(sim.dataset, budget, src.substream(_PRIVATIZE))
    p = dgp.p_treat
    try:
        if cell.estimator == "bayes":
            res = run_chain(release, budget, p, settings.gibbs, src.substream(_GIBBS).generator())
            s = res.summary
            return (s.mean, s.ci_lower, s.ci_upper)
        if cell.estimator == "naive":
            rep = estimate_naive(release, p, budget["eps_w"], settings.alpha, settings.clamp)
        elif cell.estimator == "ols":
            rep = estimate_ols(release, p, budget["eps_w"], settings.alpha, settings.clamp)
        elif cell.estimator == "custom_ipw":
            rep = estimate_custom_ipw(release, settings.alpha, settings.clamp)
        else:
            rep = estimate_custom_dm(release, settings.alpha, settings.clamp)
    except DegenerateDataError:
        return None
    return (rep.estimate, rep.ci_lower, rep.ci_upper)


def _run_block(args) -> list:
    cell, reps, settings = args
    return [run_replication(cell, r, settings) for r in reps]


def replicate(cell: GridCell, settings: SimulationSettings | None = None, workers: int = 1) -> np.ndarray:
    """All replications of a cell as an (n_sim, 3) array; failed rows are NaN."""
    return _replicate_many([cell], settings or SimulationSettings(), workers)[0]


def _replicate_many(cells, settings, workers) -> list[np.ndarray]:
    blocks = []
    for ci, cell in enumerate(cells):
        size = max(1, -(-cell.n_sim // max(1, 4 * workers)))
        for start in range(0, cell.n_sim, size):
            blocks.append((ci, range(start, min(cell.n_sim, start + size))))
    jobs = [(cells[ci], reps, settings) for ci, reps in blocks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, jobs))
    else:
        results = [_run_block(j) for j in jobs]
    out = [np.full((c.n_sim, 3), np.nan) for c in cells]
    # results come back in submission order, so aggregation is schedule-invariant
    for (ci, reps), res in zip(blocks, results):
        for r, row in zip(reps, res):
            if row is not None:
                out[ci][r] = row
    return out


def summarize(cell: GridCell, estimates: np.ndarray, tau: float = TRUE_PATE) -> MetricsRow:
    ok = ~np.isnan(estimates).any(axis=1)
    failures = int((~ok).sum())
    if ok.any():
        m = compute_metrics(estimates[ok], tau)
    else:
        m = Metrics(float("nan"), float("nan"), float("nan"), float("nan"))
    split = ",".join(repr(e) for e in cell.budget().components)
    return MetricsRow(
        scenario=cell.scenario,
        estimator=cell.estimator,
        eps_split=split,
        n=cell.n,
        n_sim=cell.n_sim,
        bias=m.bias,
        mse=m.mse,
        coverage=m.coverage,
        mean_width=m.mean_width,
        failure_count=failures,
    )


def run_grid(cells, master_seed: int = 2024, workers: int = 1, settings: SimulationSettings | None = None) -> list[MetricsRow]:
    """Metrics for every cell. Replication r of every cell shares dataset r."""
    cells = list(cells)
    if settings is None:
        settings = SimulationSettings(master_seed=master_seed)
    elif settings.master_seed != master_seed:
        settings = SimulationSettings(master_seed, settings.dgp, settings.gibbs, settings.alpha, settings.clamp)
    if workers < 1:
        workers = os.cpu_count() or 1
    return [summarize(c, e) for c, e in zip(cells, _replicate_many(cells, settings, workers))]


def frequentist_grid_cells(eps_totals=(1.0, 3.0, 10.0), n: int = 10000, n_sim: int = 200) -> list[GridCell]:
    cells = []
    for eps in eps_totals:
        cells += [
            GridCell("joint", "naive", eps, n, n_sim),
            GridCell("custom_a", "custom_ipw", eps, n, n_sim),
            GridCell("custom_b", "custom_dm", eps, n, n_sim),
        ]
    return cells
