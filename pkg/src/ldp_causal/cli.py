"""Command-line front end: privatize, estimate, simulate, posterior.

File formats
------------
raw CSV         header ``w,y[,x_1..x_d]``
privatized CSV  joint ``y_tilde,w_tilde[,x_tilde_1..x_tilde_d]``; custom_a ``a_tilde``;
                custom_b ``b1,b2,b3``. A JSON manifest ``<file>.manifest.json``
                records the scenario, budgets, p and seed used.
Floats are written with ``repr`` so every value parses back exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayesian import GibbsConfig, TruncationWarning, run_chain
from .core import (
    SCENARIOS,
    DegenerateDataError,
    PrivacyBudget,
    RandomSource,
    RawDataset,
    ValidationError,
    validate_dataset,
)
from .frequentist import estimate_custom_dm, estimate_custom_ipw, estimate_naive, estimate_ols
from .mechanisms import CustomARelease, CustomBRelease, JointRelease, privatize
from .simulation import ESTIMATOR_SCENARIOS, GridCell, MetricsRow, SimulationSettings, run_grid, frequentist_grid_cells

FORMAT_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_DEGENERATE = 0, 2, 3

DEFAULT_ESTIMATOR = {
    "joint": "naive",
    "joint_with_covariates": "ols",
    "custom_a": "custom_ipw",
    "custom_b": "custom_dm",
}

METRIC_COLUMNS = [
    "scenario", "estimator", "eps_split", "n", "n_sim",
    "bias", "mse", "coverage", "mean_width", "failure_count",
]


@dataclass
class RunConfig:
    command: str
    scenario: str | None = None
    budget: PrivacyBudget | None = None
    p: float | None = None
    alpha: float = 0.05
    seed: int = 0
    input: Path | None = None
    output: Path | None = None
    gibbs: GibbsConfig | None = None
    extra: dict = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def parse_budget(scenario: str | None, eps_total: float | None, eps_split: str | None) -> PrivacyBudget | None:
    if scenario is None:
        if eps_total is not None or eps_split is not None:
            raise ValidationError("budget flags need --scenario")
        return None
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    if eps_split is not None:
        try:
            parts = tuple(float(s) for s in eps_split.split(","))
        except ValueError:
            raise ValidationError(f"--eps-split must be a comma list of numbers, got {eps_split!r}") from None
        budget = PrivacyBudget(scenario, parts)
        if eps_total is not None and not math.isclose(budget.eps_total, eps_total, rel_tol=1e-9, abs_tol=1e-12):
            raise ValidationError(f"--eps-split sums to {budget.eps_total!r}, not --eps-total {eps_total!r}")
        return budget
    if eps_total is None:
        raise ValidationError("a budget needs --eps-total or --eps-split")
    if not (math.isfinite(eps_total) and eps_total > 0):
        raise ValidationError(f"--eps-total must be positive, got {eps_total}")
    return PrivacyBudget.equal_split(scenario, eps_total)


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file, a header row is required") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValidationError(f"{path}: non-numeric value on line {lineno}") from None
    return header, np.array(rows, dtype=np.float64).reshape(-1, len(header))


def _write_csv(path: Path | None, header: list[str], rows) -> None:
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    finally:
        if path:
            fh.close()


def _write_json(path: Path | None, obj: dict) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def read_raw(path: Path, p: float | None = None) -> RawDataset:
    header, data = _read_csv(path)
    if header[:2] != ["w", "y"]:
        raise ValidationError(f"{path}: raw data must start with columns w,y (got {','.join(header)})")
    xcols = header[2:]
    expected = [f"x_{j + 1}" for j in range(len(xcols))]
    if xcols != expected:
        raise ValidationError(f"{path}: covariate columns must be {','.join(expected) or 'absent'}")
    w = data[:, 0]
    bad = np.flatnonzero((w != 0) & (w != 1))
    if bad.size:
        raise ValidationError(f"treatment must be 0 or 1 at data row {bad[0] + 1}")
    bad = np.flatnonzero(~((data[:, 1] >= 0) & (data[:, 1] <= 1)))
    if bad.size:
        raise ValidationError(f"outcome out of [0,1] at data row {bad[0] + 1}: {float(data[bad[0], 1])!r}")
    x = data[:, 2:] if xcols else None
    if x is not None:
        bad = np.flatnonzero(~np.all((x >= 0) & (x <= 1), axis=1))
        if bad.size:
            raise ValidationError(f"covariate out of [0,1] at data row {bad[0] + 1}")
    d = RawDataset(w=w.astype(np.int64), y=data[:, 1], x=x, p=p)
    validate_dataset(d)
    return d


def release_columns(scenario: str, d: int = 0) -> list[str]:
    if scenario == "joint":
        return ["y_tilde", "w_tilde"]
    if scenario == "joint_with_covariates":
        return ["y_tilde", "w_tilde"] + [f"x_tilde_{j + 1}" for j in range(d)]
    if scenario == "custom_a":
        return ["a_tilde"]
    return ["b1", "b2", "b3"]


def release_rows(release):
    if isinstance(release, JointRelease):
        cols = [release.y_tilde, release.w_tilde]
        if release.x_tilde is not None:
            cols += list(release.x_tilde.T)
    elif isinstance(release, CustomARelease):
        cols = [release.a_tilde]
    else:
        cols = [release.b1, release.b2, release.b3]
    for i in range(release.n):
        yield [c[i].item() for c in cols]


def read_release(path: Path):
    """Load a privatized CSV together with its manifest."""
    mpath = manifest_path(path)
    if not mpath.exists():
        raise ValidationError(f"missing manifest {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported manifest format_version {manifest.get('format_version')!r}")
    scenario = manifest["scenario"]
    budget = PrivacyBudget(scenario, tuple(manifest["budget"][k] for k in SCENARIOS[scenario]))
    header, data = _read_csv(path)
    if header != manifest["columns"]:
        raise ValidationError(f"{path}: columns {header} do not match manifest {manifest['columns']}")
    if data.shape[0] != manifest["n"]:
        raise ValidationError(f"{path}: {data.shape[0]} rows but manifest says n={manifest['n']}")
    if scenario in ("joint", "joint_with_covariates"):
        w = data[:, 1]
        if np.any((w != 0) & (w != 1)):
            raise ValidationError(f"{path}: w_tilde must be 0 or 1")
        x = data[:, 2:] if scenario == "joint_with_covariates" else None
        release = JointRelease(data[:, 0], w.astype(np.int64), x)
    elif scenario == "custom_a":
        release = CustomARelease(data[:, 0])
    else:
        release = CustomBRelease(data[:, 0], data[:, 1], data[:, 2])
    return release, budget, manifest


def cmd_privatize(cfg: RunConfig) -> int:
    if cfg.budget is None:
        raise ValidationError("privatize needs --scenario and a budget")
    if cfg.input is None or cfg.output is None:
        raise ValidationError("privatize needs --input and --output")
    if cfg.budget.scenario == "custom_a" and cfg.p is None:
        raise ValidationError("the custom_a scenario needs --p")
    data = read_raw(cfg.input, cfg.p)
    exact = bool(cfg.extra.get("exact_sensitivity", False))
    kw = {"exact_sensitivity": exact} if cfg.budget.scenario == "custom_a" else {}
    release = privatize(data, cfg.budget, RandomSource(cfg.seed), **kw)
    cols = release_columns(cfg.budget.scenario, data.d)
    _write_csv(cfg.output, cols, release_rows(release))
    manifest = {
        "format_version": FORMAT_VERSION,
        "scenario": cfg.budget.scenario,
        "budget": cfg.budget.as_dict(),
        "eps_total": cfg.budget.eps_total,
        "p": cfg.p,
        "seed": cfg.seed,
        "n": release.n,
        "columns": cols,
    }
    if cfg.budget.scenario == "custom_a":
        manifest["exact_sensitivity"] = exact
    _write_json(manifest_path(cfg.output), manifest)
    return EXIT_OK


def _resolve_p(cfg: RunConfig, manifest: dict) -> float | None:
    mp = manifest.get("p")
    if cfg.p is not None and mp is not None and not math.isclose(cfg.p, mp, rel_tol=0, abs_tol=1e-12):
        raise ValidationError(f"--p {cfg.p!r} disagrees with the manifest p={mp!r}")
    return cfg.p if cfg.p is not None else mp


def _check_budget(cfg: RunConfig, budget: PrivacyBudget) -> None:
    if cfg.budget is None:
        return
    same = cfg.budget.scenario == budget.scenario and all(
        math.isclose(a, b, rel_tol=1e-12, abs_tol=0) for a, b in zip(cfg.budget.components, budget.components)
    )
    if not same:
        raise ValidationError(
            f"budget {cfg.budget.scenario} {cfg.budget.as_dict()} differs from the manifest "
            f"{budget.scenario} {budget.as_dict()}; refusing to estimate with mismatched budgets"
        )


def cmd_estimate(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise ValidationError("estimate needs --input")
    release, budget, manifest = read_release(cfg.input)
    _check_budget(cfg, budget)
    scenario = budget.scenario
    estimator = cfg.extra.get("estimator") or DEFAULT_ESTIMATOR[scenario]
    if estimator not in ESTIMATOR_SCENARIOS or estimator == "bayes":
        raise ValidationError(f"unknown estimator {estimator!r}")
    if scenario not in ESTIMATOR_SCENARIOS[estimator]:
        raise ValidationError(f"estimator {estimator} cannot be used on a {scenario} file")
    p = _resolve_p(cfg, manifest)
    if estimator in ("naive", "ols"):
        if p is None:
            raise ValidationError(f"estimator {estimator} needs the assignment probability: pass --p")
        fn = estimate_naive if estimator == "naive" else estimate_ols
        rep = fn(release, p, budget["eps_w"], cfg.alpha)
    elif estimator == "custom_ipw":
        rep = estimate_custom_ipw(release, cfg.alpha)
    else:
        rep = estimate_custom_dm(release, cfg.alpha)
    out = {
        "method": rep.method,
        "estimate": rep.estimate,
        "std_error": rep.std_error,
        "ci_lower": rep.ci_lower,
        "ci_upper": rep.ci_upper,
        "alpha": rep.alpha,
        "clamped_point": rep.clamped_point,
        "clamped_lower": rep.clamped_lower,
        "clamped_upper": rep.clamped_upper,
        "n": rep.n,
        "sigma_hat": rep.sigma_hat,
        "scenario": scenario,
        "budget": budget.as_dict(),
        "p": p,
    }
    _write_json(cfg.output, out)
    return EXIT_OK


def _load_grid(path: Path) -> list[GridCell]:
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from None
    if isinstance(spec, dict):
        spec = spec.get("cells", [])
    cells = []
    for item in spec:
        try:
            split = item.get("eps_split")
            cells.append(
                GridCell(
                    item["scenario"],
                    item.get("estimator") or DEFAULT_ESTIMATOR[item["scenario"]],
                    float(item["eps_total"]) if "eps_total" in item else math.fsum(split),
                    int(item["n"]),
                    int(item["n_sim"]),
                    tuple(split) if split is not None else None,
                )
            )
        except KeyError as e:
            raise ValidationError(f"grid cell {item} is missing {e}") from None
    return cells


def cmd_simulate(cfg: RunConfig) -> int:
    ex = cfg.extra
    if ex.get("grid"):
        cells = _load_grid(ex["grid"])
    elif ex.get("frequentist_grid"):
        cells = frequentist_grid_cells(n=ex.get("n") or 10000, n_sim=ex.get("nsim") or 200)
    else:
        if cfg.scenario is None:
            raise ValidationError("simulate needs --grid, --frequentist-grid or --scenario")
        if ex.get("eps_totals") is None and ex.get("eps_split") is None:
            raise ValidationError("simulate needs --eps-total")
        estimator = ex.get("estimator") or DEFAULT_ESTIMATOR[cfg.scenario]
        n, n_sim = ex.get("n") or 10000, ex.get("nsim") or 200
        cells = []
        for eps in ex.get("eps_totals") or [None]:
            b = parse_budget(cfg.scenario, eps, ex.get("eps_split"))
            cells.append(GridCell(cfg.scenario, estimator, b.eps_total, n, n_sim, b.components))
    settings = SimulationSettings(master_seed=cfg.seed, gibbs=cfg.gibbs or GibbsConfig(), alpha=cfg.alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        rows: list[MetricsRow] = run_grid(cells, cfg.seed, workers=ex.get("workers") or 1, settings=settings)
    _write_csv(cfg.output, METRIC_COLUMNS, ([getattr(r, c) for c in METRIC_COLUMNS] for r in rows))
    return EXIT_OK


def cmd_posterior(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise ValidationError("posterior needs --input")
    release, budget, manifest = read_release(cfg.input)
    _check_budget(cfg, budget)
    if budget.scenario == "joint_with_covariates":
        # the mixture model has no covariates; use the outcome and treatment only
        release = JointRelease(release.y_tilde, release.w_tilde)
    p = _resolve_p(cfg, manifest)
    gibbs = cfg.gibbs or GibbsConfig()
    gibbs = GibbsConfig(**{**gibbs.__dict__, "seed": cfg.seed, "level": cfg.alpha,
                           "exact_sensitivity": bool(manifest.get("exact_sensitivity", False))})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        res = run_chain(release, budget, p, gibbs)
    s = res.summary
    out = {
        "mean": s.mean,
        "ci_lower": s.ci_lower,
        "ci_upper": s.ci_upper,
        "n_draws": s.n_draws,
        "mh_acceptance_rate": s.mh_acceptance_rate,
        "alpha": cfg.alpha,
        "max_occupied": res.max_occupied,
        "warnings": res.warnings,
        "scenario": budget.scenario,
        "budget": budget.as_dict(),
        "p": p,
        "iterations": gibbs.iterations,
        "burn_in": gibbs.burn_in,
        "k_trunc": gibbs.k_trunc,
        "seed": cfg.seed,
    }
    _write_json(cfg.output, out)
    draws_path = cfg.extra.get("draws")
    if draws_path:
        rows = zip(range(gibbs.burn_in, gibbs.iterations), res.draws, res.sample_effects)
        _write_csv(Path(draws_path), ["iteration", "pate", "sample_effect"], rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldp-causal", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, budget=True):
        if budget:
            sp.add_argument("--scenario", choices=list(SCENARIOS))
            sp.add_argument("--eps-total", type=float)
            sp.add_argument("--eps-split", help="comma list of per-component budgets, overrides the equal split")
        sp.add_argument("--p", type=float, help="treatment assignment probability")
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--input", type=Path)
        sp.add_argument("--output", type=Path)

    def gibbs_flags(sp):
        sp.add_argument("--iterations", type=int, default=5000)
        sp.add_argument("--burn-in", type=int, default=2500)
        sp.add_argument("--k-trunc", type=int, default=20)

    sp = sub.add_parser("privatize", help="privatize a raw CSV")
    common(sp)
    sp.add_argument("--exact-sensitivity", action="store_true",
                    help="custom_a: calibrate noise to the full range of the IPW summand")

    sp = sub.add_parser("estimate", help="frequentist estimate from a privatized CSV")
    common(sp)
    sp.add_argument("--estimator", choices=[e for e in ESTIMATOR_SCENARIOS if e != "bayes"])

    sp = sub.add_parser("simulate", help="run a Monte Carlo grid and write a metrics CSV")
    common(sp, budget=False)
    sp.add_argument("--scenario", choices=list(SCENARIOS))
    sp.add_argument("--eps-total", help="one value or a comma list, one cell each")
    sp.add_argument("--eps-split")
    sp.add_argument("--estimator", choices=list(ESTIMATOR_SCENARIOS))
    sp.add_argument("--n", type=int)
    sp.add_argument("--nsim", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--grid", type=Path, help="JSON list of cells")
    sp.add_argument("--frequentist-grid", action="store_true", help="the joint / custom_a / custom_b grid at eps 1, 3, 10")
    gibbs_flags(sp)

    sp = sub.add_parser("posterior", help="run the Gibbs sampler on a privatized CSV")
    common(sp)
    sp.add_argument("--draws", type=Path, help="also write the retained draws here")
    gibbs_flags(sp)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command, p=args.p, alpha=args.alpha, seed=args.seed, input=args.input, output=args.output)
    if not (0 < cfg.alpha < 1):
        raise ValidationError(f"--alpha must lie in (0, 1), got {cfg.alpha}")
    if cfg.p is not None and not (0 < cfg.p < 1):
        raise ValidationError(f"--p must lie in (0, 1), got {cfg.p}")
    if cfg.seed < 0:
        raise ValidationError("--seed must be nonnegative")
    if hasattr(args, "iterations"):
        cfg.gibbs = GibbsConfig(k_trunc=args.k_trunc, iterations=args.iterations, burn_in=args.burn_in,
                                seed=args.seed, level=args.alpha)
    if args.command == "simulate":
        cfg.scenario = args.scenario
        eps = None
        if args.eps_total is not None:
            try:
                eps = [float(e) for e in args.eps_total.split(",")]
            except ValueError:
                raise ValidationError(f"--eps-total must be numbers, got {args.eps_total!r}") from None
        cfg.extra = {
            "eps_totals": eps, "eps_split": args.eps_split, "estimator": args.estimator,
            "n": args.n, "nsim": args.nsim, "workers": args.workers, "grid": args.grid, "frequentist_grid": args.frequentist_grid,
        }
        return cfg
    cfg.scenario = args.scenario
    cfg.budget = parse_budget(args.scenario, args.eps_total, args.eps_split)
    if args.command == "privatize":
        cfg.extra["exact_sensitivity"] = args.exact_sensitivity
    elif args.command == "estimate":
        cfg.extra["estimator"] = args.estimator
    elif args.command == "posterior":
        cfg.extra["draws"] = args.draws
    return cfg


COMMANDS = {
    "privatize": cmd_privatize,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "posterior": cmd_posterior,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except DegenerateDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValidationError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
