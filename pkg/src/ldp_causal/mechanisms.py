"""Local DP noise primitives and the three release scenarios.

Every privatizer draws its noise from :meth:`RandomSource.record_uniforms`,
keyed by record id, so the released value of a record does not depend on
where the record sits in the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, log_expit

from .core import (
    PrivacyBudget,
    RandomSource,
    RawDataset,
    ValidationError,
    as_generator,
    validate_dataset,
)


def _check_positive(name: str, value: float) -> None:
    if not (np.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be positive and finite, got {value}")


def laplace_from_uniform(u: np.ndarray | float, scale: float) -> np.ndarray | float:
    """Inverse-CDF transform of uniforms in (0, 1) to Lap(0, scale)."""
    _check_positive("scale", scale)
    u = np.asarray(u, dtype=np.float64)
    # same as -scale * sign(u - 1/2) * log(1 - 2|u - 1/2|), written per branch
    # so the subtraction u - 1/2 cannot cancel digits in the tails
    with np.errstate(divide="ignore"):
        out = np.where(u < 0.5, scale * np.log(2.0 * u), -scale * np.log(2.0 * (1.0 - u)))
    return float(out) if out.ndim == 0 else out


def laplace_sample(rng, scale: float, size=None):
    """Draw Lap(0, scale) noise, one uniform per draw."""
    _check_positive("scale", scale)
    return laplace_from_uniform(as_generator(rng).random(size), scale)


def laplace_logpdf(x, mu, scale: float):
    _check_positive("scale", scale)
    return -np.log(2.0 * scale) - np.abs(np.asarray(x, dtype=np.float64) - mu) / scale


def keep_probability(eps: float) -> float:
    """Probability that randomized response reports the true bit."""
    _check_positive("eps", eps)
    return float(expit(eps))


def randomized_response_from_uniform(w, u, eps: float) -> np.ndarray:
    w = np.asarray(w, dtype=np.int64)
    return np.where(np.asarray(u) < keep_probability(eps), w, 1 - w)


def randomized_response(rng, w, eps: float):
    """Report ``w`` with probability e^eps / (1 + e^eps), else flip it."""
    w_arr = np.asarray(w, dtype=np.int64)
    u = as_generator(rng).random(w_arr.shape)
    out = randomized_response_from_uniform(w_arr, u, eps)
    return int(out) if out.ndim == 0 else out


def randomized_response_logpmf(w_tilde, w, eps: float):
    _check_positive("eps", eps)
    same = np.asarray(w_tilde) == np.asarray(w)
    return np.where(same, log_expit(eps), log_expit(-eps))


def custom_a_sensitivity(p: float, exact: bool = False) -> float:
    """Sensitivity used to calibrate the custom IPW summand.

    The default ``max(1/p, 1/(1-p))`` bounds the change of the summand when
    the outcome changes within an arm. ``exact=True`` returns the range
    ``1/p + 1/(1-p)``, which also covers a change of the treatment bit.
    """
    if not (0.0 < p < 1.0):
        raise ValidationError(f"p must lie in (0, 1), got {p}")
    if exact:
        return 1.0 / p + 1.0 / (1.0 - p)
    return max(1.0 / p, 1.0 / (1.0 - p))


class JointRecord(NamedTuple):
    y_tilde: float
    w_tilde: int
    x_tilde: tuple[float, ...] | None = None


class CustomARecord(NamedTuple):
    a_tilde: float


class CustomBRecord(NamedTuple):
    b1: float
    b2: float
    b3: float

    @property
    def b4(self) -> float:
        return 1.0 - self.b3


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64 if np.asarray(a).dtype.kind == "f" else np.int64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class JointRelease:
    y_tilde: np.ndarray
    w_tilde: np.ndarray
    x_tilde: np.ndarray | None = None

    @property
    def scenario(self) -> str:
        return "joint" if self.x_tilde is None else "joint_with_covariates"

    def __post_init__(self) -> None:
        object.__setattr__(self, "y_tilde", _ro(np.asarray(self.y_tilde, dtype=np.float64).reshape(-1)))
        w = np.asarray(self.w_tilde, dtype=np.int64).reshape(-1)
        if np.any((w != 0) & (w != 1)):
            raise ValidationError("w_tilde must be 0 or 1")
        object.__setattr__(self, "w_tilde", _ro(w))
        if self.x_tilde is not None:
            x = np.asarray(self.x_tilde, dtype=np.float64)
            object.__setattr__(self, "x_tilde", _ro(x.reshape(x.shape[0], -1)))

    @classmethod
    def from_records(cls, records) -> JointRelease:
        records = [JointRecord(*r) for r in records]
        x = None
        if records and records[0].x_tilde is not None:
            x = np.array([r.x_tilde for r in records], dtype=np.float64)
        return cls(
            np.array([r.y_tilde for r in records], dtype=np.float64),
            np.array([r.w_tilde for r in records], dtype=np.int64),
            x,
        )

    @property
    def n(self) -> int:
        return int(self.y_tilde.size)

    def __len__(self) -> int:
        return self.n

    def take(self, idx) -> JointRelease:
        x = None if self.x_tilde is None else self.x_tilde[idx]
        return JointRelease(self.y_tilde[idx], self.w_tilde[idx], x)

    def records(self):
        for i in range(self.n):
            x = None if self.x_tilde is None else tuple(map(float, self.x_tilde[i]))
            yield JointRecord(float(self.y_tilde[i]), int(self.w_tilde[i]), x)


@dataclass(frozen=True, eq=False)
class CustomARelease:
    a_tilde: np.ndarray

    scenario = "custom_a"

    def __post_init__(self) -> None:
        object.__setattr__(self, "a_tilde", _ro(np.asarray(self.a_tilde, dtype=np.float64).reshape(-1)))

    @classmethod
    def from_records(cls, records) -> CustomARelease:
        return cls(np.array([CustomARecord(*r).a_tilde for r in records], dtype=np.float64))

    @property
    def n(self) -> int:
        return int(self.a_tilde.size)

    def __len__(self) -> int:
        return self.n

    def take(self, idx) -> CustomARelease:
        return CustomARelease(self.a_tilde[idx])

    def records(self):
        for a in self.a_tilde:
            yield CustomARecord(float(a))


@dataclass(frozen=True, eq=False)
class CustomBRelease:
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray

    scenario = "custom_b"

    def __post_init__(self) -> None:
        cols = [np.asarray(getattr(self, k), dtype=np.float64).reshape(-1) for k in ("b1", "b2", "b3")]
        if len({c.size for c in cols}) != 1:
            raise ValidationError("b1, b2, b3 must have equal length")
        for k, c in zip(("b1", "b2", "b3"), cols):
            object.__setattr__(self, k, _ro(c))

    @classmethod
    def from_records(cls, records) -> CustomBRelease:
        rows = np.array([tuple(CustomBRecord(*r)) for r in records], dtype=np.float64).reshape(-1, 3)
        return cls(rows[:, 0], rows[:, 1], rows[:, 2])

    @property
    def b4(self) -> np.ndarray:
        return 1.0 - self.b3

    @property
    def n(self) -> int:
        return int(self.b1.size)

    def __len__(self) -> int:
        return self.n

    def take(self, idx) -> CustomBRelease:
        return CustomBRelease(self.b1[idx], self.b2[idx], self.b3[idx])

    def records(self):
        for row in zip(self.b1, self.b2, self.b3):
            yield CustomBRecord(*map(float, row))


def _record_ids(d: RawDataset, record_ids) -> np.ndarray:
    if record_ids is None:
        return np.arange(d.n, dtype=np.uint64)
    ids = np.asarray(record_ids, dtype=np.uint64).reshape(-1)
    if ids.size != d.n:
        raise ValidationError("record_ids must match the number of records")
    return ids


def privatize_joint(d: RawDataset, budget: PrivacyBudget, source: RandomSource, record_ids=None) -> JointRelease:
    """Laplace outcome, randomized-response treatment, optional Laplace covariates."""
    if budget.scenario not in ("joint", "joint_with_covariates"):
        raise ValidationError(f"joint privatization needs a joint budget, got {budget.scenario}")
    validate_dataset(d)
    with_x = budget.scenario == "joint_with_covariates"
    if with_x and d.x is None:
        raise ValidationError("joint_with_covariates budget given but the dataset has no covariates")
    dim = d.d if with_x else 0
    u = source.record_uniforms(_record_ids(d, record_ids), 2 + dim)
    y_tilde = d.y + laplace_from_uniform(u[:, 0], 1.0 / budget["eps_y"])
    w_tilde = randomized_response_from_uniform(d.w, u[:, 1], budget["eps_w"])
    x_tilde = None
    if with_x:
        # l1 sensitivity of d coordinates in [0, 1] is d
        x_tilde = d.x + laplace_from_uniform(u[:, 2:], dim / budget["eps_x"])
    return JointRelease(y_tilde, w_tilde, x_tilde)


def custom_a_summand(d: RawDataset) -> np.ndarray:
    p = d.p
    return d.w * d.y / p - (1 - d.w) * d.y / (1.0 - p)


def privatize_custom_a(
    d: RawDataset,
    eps_a: float,
    source: RandomSource,
    record_ids=None,
    exact_sensitivity: bool = False,
) -> CustomARelease:
    """Release the IPW summand of each unit with Laplace noise (p must be known)."""
    _check_positive("eps_a", eps_a)
    if d.p is None:
        raise ValidationError("custom_a privatization requires a known assignment probability p")
    validate_dataset(d)
    delta = custom_a_sensitivity(d.p, exact=exact_sensitivity)
    u = source.record_uniforms(_record_ids(d, record_ids), 1)
    return CustomARelease(custom_a_summand(d) + laplace_from_uniform(u[:, 0], delta / eps_a))


def privatize_custom_b(
    d: RawDataset,
    eps_b1: float,
    eps_b2: float,
    eps_b3: float,
    source: RandomSource,
    record_ids=None,
) -> CustomBRelease:
    """Release (W*Y, (1-W)*Y, W), each with its own Laplace noise."""
    for name, e in (("eps_b1", eps_b1), ("eps_b2", eps_b2), ("eps_b3", eps_b3)):
        _check_positive(name, e)
    validate_dataset(d)
    u = source.record_uniforms(_record_ids(d, record_ids), 3)
    return CustomBRelease(
        d.w * d.y + laplace_from_uniform(u[:, 0], 1.0 / eps_b1),
        (1 - d.w) * d.y + laplace_from_uniform(u[:, 1], 1.0 / eps_b2),
        d.w + laplace_from_uniform(u[:, 2], 1.0 / eps_b3),
    )


def privatize(d: RawDataset, budget: PrivacyBudget, source: RandomSource, record_ids=None, **kw):
    """Dispatch on the budget's scenario."""
    if budget.scenario in ("joint", "joint_with_covariates"):
        return privatize_joint(d, budget, source, record_ids)
    if budget.scenario == "custom_a":
        return privatize_custom_a(d, budget["eps_a"], source, record_ids, **kw)
    return privatize_custom_b(d, *budget.components, source, record_ids)
