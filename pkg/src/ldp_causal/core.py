"""Shared domain types, errors and the seedable random-source contract."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .philox import philox4x64, to_unit_interval

_U64 = 2**64

SCENARIOS: dict[str, tuple[str, ...]] = {
    "joint": ("eps_y", "eps_w"),
    "custom_a": ("eps_a",),
    "custom_b": ("eps_b1", "eps_b2", "eps_b3"),
    "joint_with_covariates": ("eps_x", "eps_y", "eps_w"),
}


class LdpCausalError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(LdpCausalError, ValueError):
    """Input data or configuration violates a documented precondition."""


class DegenerateDataError(LdpCausalError, ArithmeticError):
    """Privatized data do not support the requested estimator."""


@dataclass(frozen=True)
class PrivacyBudget:
    """Per-scenario LDP budgets; components compose additively."""

    scenario: str
    components: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        names = SCENARIOS[self.scenario]
        comps = tuple(float(c) for c in self.components)
        if len(comps) != len(names):
            raise ValidationError(
                f"scenario {self.scenario} needs {len(names)} budgets {names}, got {len(comps)}"
            )
        for name, value in zip(names, comps):
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"budget {name} must be positive and finite, got {value}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def joint(cls, eps_y: float, eps_w: float) -> PrivacyBudget:
        return cls("joint", (eps_y, eps_w))

    @classmethod
    def custom_a(cls, eps_a: float) -> PrivacyBudget:
        return cls("custom_a", (eps_a,))

    @classmethod
    def custom_b(cls, eps_b1: float, eps_b2: float, eps_b3: float) -> PrivacyBudget:
        return cls("custom_b", (eps_b1, eps_b2, eps_b3))

    @classmethod
    def joint_with_covariates(cls, eps_x: float, eps_y: float, eps_w: float) -> PrivacyBudget:
        return cls("joint_with_covariates", (eps_x, eps_y, eps_w))

    @classmethod
    def equal_split(cls, scenario: str, eps_total: float) -> PrivacyBudget:
        """Divide ``eps_total`` evenly across the scenario's components."""
        if scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {scenario!r}")
        k = len(SCENARIOS[scenario])
        return cls(scenario, (eps_total / k,) * k)

    @property
    def names(self) -> tuple[str, ...]:
        return SCENARIOS[self.scenario]

    @property
    def eps_total(self) -> float:
        return math.fsum(self.components)

    def __getitem__(self, name: str) -> float:
        try:
            return self.components[self.names.index(name)]
        except ValueError:
            raise KeyError(f"{name} is not a budget of scenario {self.scenario}") from None

    def get(self, name: str, default: float | None = None) -> float | None:
        return self.components[self.names.index(name)] if name in self.names else default

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.components))


class RawRecord(NamedTuple):
    w: int
    y: float
    x: tuple[float, ...] | None = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RawDataset:
    """Columnar raw experiment data: treatment bits, outcomes, optional covariates.

    Construction only coerces shapes; call :func:`validate_dataset` to check
    the value-range invariants.
    """

    w: np.ndarray
    y: np.ndarray
    x: np.ndarray | None = None
    p: float | None = None

    def __post_init__(self) -> None:
        w = _frozen(np.array(self.w, dtype=np.int64).reshape(-1))
        y = _frozen(np.array(self.y, dtype=np.float64).reshape(-1))
        if w.shape != y.shape:
            raise ValidationError("w and y must have the same length")
        x = self.x
        if x is not None:
            x = np.array(x, dtype=np.float64)
            if x.ndim == 1:
                x = x.reshape(-1, 1)
            if x.ndim != 2 or x.shape[0] != y.shape[0]:
                raise ValidationError("covariates must be an (n, d) array aligned with y")
            x = _frozen(x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if self.p is not None:
            object.__setattr__(self, "p", float(self.p))

    @classmethod
    def from_records(cls, records: Sequence[RawRecord], p: float | None = None) -> RawDataset:
        records = list(records)
        dims = {None if r.x is None else len(r.x) for r in records}
        if len(dims) > 1:
            raise ValidationError(f"ragged covariate dimensions {sorted(d for d in dims if d is not None)}")
        x = None
        if records and dims != {None}:
            x = np.array([r.x for r in records], dtype=np.float64)
        return cls(
            w=np.array([r.w for r in records], dtype=np.int64),
            y=np.array([r.y for r in records], dtype=np.float64),
            x=x,
            p=p,
        )

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def d(self) -> int:
        return 0 if self.x is None else int(self.x.shape[1])

    def __len__(self) -> int:
        return self.n

    def records(self):
        for i in range(self.n):
            xi = None if self.x is None else tuple(float(v) for v in self.x[i])
            yield RawRecord(int(self.w[i]), float(self.y[i]), xi)


def validate_dataset(d: RawDataset) -> None:
    """Raise :class:`ValidationError` at the first violated record invariant."""
    if d.n < 1:
        raise ValidationError("empty dataset")
    if d.p is not None and not (0.0 < d.p < 1.0):
        raise ValidationError(f"assignment probability p={d.p} must lie in (0, 1)")
    bad_w = np.flatnonzero((d.w != 0) & (d.w != 1))
    bad_y = np.flatnonzero(~((d.y >= 0.0) & (d.y <= 1.0)))
    bad_x = np.array([], dtype=np.int64)
    if d.x is not None:
        bad_x = np.flatnonzero(~np.all((d.x >= 0.0) & (d.x <= 1.0), axis=1))
    firsts = [
        (int(idx[0]), name)
        for idx, name in ((bad_w, "treatment"), (bad_y, "outcome"), (bad_x, "covariate"))
        if idx.size
    ]
    if not firsts:
        return
    i, name = min(firsts)
    if name == "treatment":
        raise ValidationError(f"treatment must be 0 or 1 at index {i}, got {d.w[i]}")
    if name == "outcome":
        raise ValidationError(f"outcome out of [0,1] at index {i}: {d.y[i]}")
    raise ValidationError(f"covariate out of [0,1] at index {i}")


@dataclass(frozen=True)
class EstimateReport:
    method: str
    estimate: float
    sigma_hat: float
    std_error: float
    ci_lower: float
    ci_upper: float
    alpha: float
    n: int
    clamped_point: bool = False
    clamped_lower: bool = False
    clamped_upper: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("extras")
        return out


@dataclass(frozen=True)
class RandomSource:
    """A counter-based random stream identified by ``(seed, index)``.

    The pair is used directly as the Philox key, so distinct indices under
    one seed give independent streams and a source can be re-created
    anywhere (another process, another run) with identical output.
    """

    seed: int
    index: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "index"):
            v = getattr(self, name)
            if not (0 <= int(v) < _U64):
                raise ValidationError(f"{name} must be a 64-bit unsigned integer, got {v}")
            object.__setattr__(self, name, int(v))

    @property
    def key(self) -> tuple[int, int]:
        return (self.seed, self.index)

    def generator(self) -> np.random.Generator:
        """A fresh sequential generator positioned at the start of this stream."""
        key = np.array(self.key, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=np.zeros(4, dtype=np.uint64)))

    def uniform(self, size: int | tuple[int, ...] | None = None) -> np.ndarray | float:
        return self.generator().random(size)

    def substream(self, label: int) -> RandomSource:
        """Derive a child stream; children of distinct parents never share keys."""
        child_seed = np.random.SeedSequence(entropy=[self.seed, self.index]).generate_state(1, np.uint64)[0]
        return RandomSource(int(child_seed), label)

    def record_uniforms(self, record_ids: np.ndarray, n_slots: int) -> np.ndarray:
        """Uniforms in (0, 1) addressed by ``(record id, slot)``.

        Each record's draws depend only on its id, so results are invariant
        to record order and to how records are split across workers. The
        third counter word is set to 1, which keeps these positions disjoint
        from the sequential :meth:`generator` stream.
        """
        ids = np.asarray(record_ids, dtype=np.uint64).reshape(-1)
        n_blocks = -(-n_slots // 4)
        counters = np.zeros((ids.size * n_blocks, 4), dtype=np.uint64)
        counters[:, 0] = np.repeat(ids, n_blocks)
        counters[:, 1] = np.tile(np.arange(n_blocks, dtype=np.uint64), ids.size)
        counters[:, 2] = 1
        words = philox4x64(counters, self.key).reshape(ids.size, n_blocks * 4)
        return to_unit_interval(words[:, :n_slots])


def derive_stream(seed: int, index: int) -> RandomSource:
    return RandomSource(seed, index)


def as_generator(rng: np.random.Generator | RandomSource | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomSource):
        return rng.generator()
    return RandomSource(0 if rng is None else int(rng)).generator()
