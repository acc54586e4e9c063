"""Core domain types shared by the solvers, the simulation lab and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when inputs violate a shape or finiteness contract."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupData:
    """One data source: a design matrix and its response vector."""

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.design, dtype=np.float64)
        y = np.asarray(self.response, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"design must be 2-d, got shape {X.shape}")
        if y.ndim != 1:
            raise DataError(f"response must be 1-d, got shape {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(
                f"design has {X.shape[0]} rows but response has length {y.shape[0]}"
            )
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"design must be non-empty, got shape {X.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("design and response must be finite")
        object.__setattr__(self, "design", _as_readonly(X))
        object.__setattr__(self, "response", _as_readonly(y))

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def to_dict(self) -> dict[str, Any]:
        return {"design": self.design.tolist(), "response": self.response.tolist(), "n": self.n}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GroupData":
        p = len(d["design"][0]) if d["design"] else 0
        return cls(np.asarray(d["design"], dtype=np.float64).reshape(-1, p), d["response"])


@dataclass(frozen=True)
class MultiSourceProblem:
    """Ordered data sources plus the index of the target group.

    Every auxiliary group ``z`` is modelled as ``beta_z = beta_target + omega_z``.
    """

    groups: tuple[GroupData, ...]
    target_index: int = 0

    def __post_init__(self):
        groups = tuple(self.groups)
        if len(groups) < 1:
            raise DataError("at least one group is required")
        if not 0 <= self.target_index < len(groups):
            raise DataError(
                f"target_index {self.target_index} out of range for {len(groups)} groups"
            )
        p = groups[0].p
        for z, g in enumerate(groups):
            if g.p != p:
                raise DataError(f"group {z} has {g.p} columns, expected {p}")
        object.__setattr__(self, "groups", groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def p(self) -> int:
        return self.groups[0].p

    @property
    def total_n(self) -> int:
        return sum(g.n for g in self.groups)

    @property
    def target(self) -> GroupData:
        return self.groups[self.target_index]

    @property
    def auxiliary_indices(self) -> list[int]:
        """Non-target group indices in ascending order (the omega block order)."""
        return [z for z in range(self.n_groups) if z != self.target_index]


@dataclass(frozen=True)
class CoefficientEstimate:
    """A stacked coefficient vector ``phi = [beta | omega blocks]``.

    ``rank_deficient`` is set when the restricted least-squares system needed a
    minimum-norm solve.
    """

    phi: np.ndarray
    rss: float
    rank_deficient: bool = False

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        if phi.ndim != 1:
            raise DataError("phi must be 1-d")
        if self.rss < 0:
            raise DataError(f"rss must be non-negative, got {self.rss}")
        object.__setattr__(self, "phi", _as_readonly(phi))
        object.__setattr__(self, "rss", float(self.rss))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.phi)

    @property
    def gamma(self) -> int:
        return int(np.count_nonzero(self.phi))

    def to_dict(self) -> dict[str, Any]:
        return {
            "phi": self.phi.tolist(),
            "support": self.support.tolist(),
            "gamma": self.gamma,
            "rss": self.rss,
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CoefficientEstimate":
        return cls(np.asarray(d["phi"], dtype=np.float64), d["rss"], d.get("rank_deficient", False))


@dataclass(frozen=True)
class FitResult:
    """Output of a full SOTL or S-JETS fit.

    ``hbic_trace`` holds ``(gamma, hbic)`` pairs for SOTL and is empty for
    S-JETS. ``failed_gammas`` lists sweep points whose solve raised.
    ``tuning`` carries method-specific selections (e.g. the chosen lambda).
    """

    estimate: CoefficientEstimate
    p: int
    hbic_trace: tuple[tuple[int, float], ...] = ()
    gamma_opt: int = 0
    wall_time: float = 0.0
    method: str = "sotl"
    failed_gammas: tuple[int, ...] = ()
    tuning: dict[str, float] = field(default_factory=dict)

    @property
    def beta_target(self) -> np.ndarray:
        return self.estimate.phi[: self.p].copy()

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "beta_target": self.beta_target.tolist(),
            "support": np.flatnonzero(self.beta_target).tolist(),
            "estimate": self.estimate.to_dict(),
            "p": self.p,
            "hbic_trace": [[int(g), float(v)] for g, v in self.hbic_trace],
            "gamma_opt": int(self.gamma_opt),
            "wall_time": float(self.wall_time),
            "failed_gammas": list(self.failed_gammas),
            "tuning": dict(self.tuning),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FitResult":
        return cls(
            estimate=CoefficientEstimate.from_dict(d["estimate"]),
            p=int(d["p"]),
            hbic_trace=tuple((int(g), float(v)) for g, v in d["hbic_trace"]),
            gamma_opt=int(d["gamma_opt"]),
            wall_time=float(d["wall_time"]),
            method=d.get("method", "sotl"),
            failed_gammas=tuple(d.get("failed_gammas", ())),
            tuning=dict(d.get("tuning", {})),
        )

    @classmethod
    def from_json(cls, s: str) -> "FitResult":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class SimMetrics:
    """Replication-averaged metrics for one scenario and one method."""

    method: str
    mse: float
    sra: float
    nz: float
    fpr: float
    tpr: float
    art: float
    failures: int = 0
    replications: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimMetrics":
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "SimMetrics":
        return cls.from_dict(json.loads(s))


def make_problem(
    designs: Sequence[np.ndarray], responses: Sequence[np.ndarray], target_index: int = 0
) -> MultiSourceProblem:
    """Build a :class:`MultiSourceProblem` from parallel lists of arrays."""
    if len(designs) != len(responses):
        raise DataError("designs and responses must have the same length")
    groups = []
    for z, (X, y) in enumerate(zip(designs, responses)):
        try:
            groups.append(GroupData(X, y))
        except DataError as exc:
            raise DataError(f"group {z}: {exc}") from None
    return MultiSourceProblem(tuple(groups), target_index)
