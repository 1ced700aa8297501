"""Run configuration for ``simulate`` and ``sweep``; JSON in, JSON out."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import DomainError


def _reject_unknown(cls, data: dict, where: str) -> None:
    if not isinstance(data, dict):
        raise DomainError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise DomainError(f"unknown keys in {where}: {', '.join(extra)}")


@dataclass(frozen=True)
class GridConfig:
    y_min: float = 1e-4
    y_max: float = 12.0
    n_log: int = 1200

    @classmethod
    def from_dict(cls, data: dict) -> "GridConfig":
        _reject_unknown(cls, data, "grid")
        return cls(**data)


@dataclass(frozen=True)
class ShrinkConfig:
    A: float = 30.0
    eta: float = 0.05
    eta_tilde: float = 0.005
    delta: float = 0.2

    @classmethod
    def from_dict(cls, data: dict) -> "ShrinkConfig":
        _reject_unknown(cls, data, "shrink")
        return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    """A modulated run.

    ``tau0`` defaults to the value with ``I(tau0) = b0``; the run stops at
    ``tau0 + tau_span``. ``m0`` defaults to the matched value at ``b = 1e-4``.
    """

    d: int = 11
    ell: int = 1
    b0: float = 1e-2
    tau0: float | None = None
    tau_span: float = 10.5
    dvec: tuple = ()
    m0: float | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    shrink: ShrinkConfig = field(default_factory=ShrinkConfig)
    step_tol: float = 1e-7
    newton_tol: float = 1e-10
    checkpoint_every: int = 0
    stop_on_escape: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.ell < 1:
            raise DomainError("ell must be at least 1")
        if self.tau_span <= 0.0:
            raise DomainError("tau_span must be positive")
        if self.dvec and len(self.dvec) != self.ell:
            raise DomainError(f"dvec must have length ell={self.ell}")
        if self.checkpoint_every < 0:
            raise DomainError("checkpoint_every must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _reject_unknown(cls, data, "config")
        data = dict(data)
        if "grid" in data:
            data["grid"] = GridConfig.from_dict(data["grid"])
        if "shrink" in data:
            data["shrink"] = ShrinkConfig.from_dict(data["shrink"])
        if "dvec" in data:
            data["dvec"] = tuple(float(v) for v in data["dvec"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dvec"] = list(self.dvec)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DomainError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


SWEEP_KINDS = ("eigen-lb", "simulate")


@dataclass(frozen=True)
class SweepConfig:
    """``points`` are partial parameter dicts merged over ``base``."""

    kind: str
    base: dict = field(default_factory=dict)
    points: tuple = ()

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        _reject_unknown(cls, data, "sweep config")
        if data.get("kind") not in SWEEP_KINDS:
            raise DomainError(f"sweep kind must be one of {SWEEP_KINDS}")
        points = data.get("points", [])
        if not isinstance(points, list) or not all(isinstance(p, dict) for p in points):
            raise DomainError("points must be a list of objects")
        return cls(data["kind"], dict(data.get("base", {})), tuple(points))

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DomainError(f"sweep config is not valid JSON: {exc}") from exc
