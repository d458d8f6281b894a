"""Run configuration: one JSON document per run, overridable from the command line."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping

from .experiments import PerturbationSpec
from .spectral_sets import IntervalSystem, validate_interval_system

__all__ = ["ConfigError", "ExperimentConfig"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _interval_system(raw: Any) -> IntervalSystem:
    if isinstance(raw, Mapping):
        return IntervalSystem.from_dict(dict(raw))
    return validate_interval_system(raw)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a run.

    ``interval_system`` is ``[[b0, a0], [a1, b1], ...]`` (outer interval
    first, then gaps) or ``{"outer": [...], "gaps": [...]}``.  ``pins`` fixes
    ``g`` coordinates of the source point used by ``flow`` and
    ``ks-report`` and adds that point to the torus samples.
    ``compare_exponents`` lists the power-decay exponents run side by side
    by ``ks-report``.
    """

    interval_system: IntervalSystem
    potential_tol: float = 1e-12
    iso_tol: float = 1e-12
    magic_tol: float = 1e-9
    flow_tol: float = 1e-11
    margin: float = 1e-8
    torus_count: int = 8
    pins: dict | None = None
    half_width: int = 30
    flow_steps: int = 10
    flow_path: str = "both"
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    compare_exponents: tuple = ()
    truncation_sizes: tuple = (50, 100, 200)
    eta: float = 0.5
    eps: float | None = None
    edge_delta: float | None = None
    trace_path: str | None = None

    def __post_init__(self):
        for name in ("potential_tol", "iso_tol", "magic_tol", "flow_tol", "margin"):
            v = getattr(self, name)
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if self.torus_count <= 0:
            raise ConfigError("torus sample count must be positive")
        if self.half_width < 2:
            raise ConfigError("window half-width must be at least 2")
        if self.flow_steps < 0:
            raise ConfigError("flow steps must be nonnegative")
        if self.flow_path not in ("fast", "reference", "both"):
            raise ConfigError(f"unknown flow path {self.flow_path!r}")
        if not 0 < self.eta < 1:
            raise ConfigError("eta must lie in (0, 1)")
        for name in ("eps", "edge_delta"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if any(int(n) < 2 for n in self.truncation_sizes):
            raise ConfigError("truncation sizes must be at least 2")
        if any(not float(e) > 0 for e in self.compare_exponents):
            raise ConfigError("comparison exponents must be positive")

    # flow steps that a window of this width supports (blocks -1 and 0 stay trusted)
    @property
    def window(self) -> tuple[int, int]:
        """Block range of the flow input; it extends to the right far enough for every step."""
        return -self.half_width, max(self.half_width, self.flow_steps + 2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        if "interval_system" not in data:
            raise ConfigError("config needs an interval_system")
        try:
            data["interval_system"] = _interval_system(data["interval_system"])
            data["perturbation"] = PerturbationSpec.from_dict(data.get("perturbation"))
        except (TypeError, ValueError, KeyError, IndexError) as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("compare_exponents", "truncation_sizes"):
            if name in data:
                data[name] = tuple(data[name])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, IntervalSystem):
                v = v.to_dict()
            elif isinstance(v, PerturbationSpec):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def override(self, **changes) -> "ExperimentConfig":
        """Copy with the given fields replaced; ``None`` values are ignored."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if "seed" in changes:
            seed = changes.pop("seed")
            changes["perturbation"] = dataclasses.replace(self.perturbation, seed=int(seed))
        return dataclasses.replace(self, **changes)
