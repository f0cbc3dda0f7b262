"""Runtime configuration for the command line front-end.

One JSON file holds every tunable the pipeline exposes, grouped by stage.
Values are validated against their documented ranges when the file is
loaded, so a typo fails up front instead of ten minutes into a batch run.
Command line flags override file values; the merged result is what gets
echoed into output directories as ``effective-config.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import FormatError, ValidationError

CONFIG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RegistrationSection:
    """Knobs for the iterative pixel-level registration."""

    iters: int = 10
    omega: float = 1.1
    tolerance: int = 1
    sigma_field: float = 8.0


@dataclass(frozen=True)
class AnalysisSection:
    """Knobs for the metric suite."""

    rho: float = 3.0  # commonly-drawn-region radius, px
    bins: int = 25  # temporal bins per drawing


@dataclass(frozen=True)
class SynthesisSection:
    """Knobs for connection detection, layout weights, and training."""

    eps_c: float = 3.0
    w_s: float = 1.0
    w_m: float = 0.5
    mlp_sizes: tuple[int, ...] = (64, 64)
    seed: int = 7


@dataclass(frozen=True)
class IoSection:
    """Default locations, overridable per invocation."""

    dataset_dir: str | None = None
    output_dir: str | None = None


@dataclass(frozen=True)
class Config:
    registration: RegistrationSection = field(default_factory=RegistrationSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    io: IoSection = field(default_factory=IoSection)

    def validate(self) -> "Config":
        _check_int("registration.iters", self.registration.iters, 1, 100)
        _check_float("registration.omega", self.registration.omega, 0.0, 10.0, low_open=True)
        _check_int("registration.tolerance", self.registration.tolerance, 0, 10)
        _check_float(
            "registration.sigma_field", self.registration.sigma_field, 0.0, 100.0, low_open=True
        )
        _check_float("analysis.rho", self.analysis.rho, 0.0, 50.0, low_open=True)
        _check_int("analysis.bins", self.analysis.bins, 1, 1000)
        _check_float("synthesis.eps_c", self.synthesis.eps_c, 0.0, 50.0, low_open=True)
        _check_float("synthesis.w_s", self.synthesis.w_s, 0.0, 100.0)
        _check_float("synthesis.w_m", self.synthesis.w_m, 0.0, 100.0)
        sizes = self.synthesis.mlp_sizes
        if not sizes or len(sizes) > 4:
            raise ValidationError("synthesis.mlp_sizes must list 1 to 4 hidden layers")
        for n in sizes:
            _check_int("synthesis.mlp_sizes entry", n, 1, 1024)
        _check_int("synthesis.seed", self.synthesis.seed, 0, 2**32 - 1)
        for name, value in (("dataset_dir", self.io.dataset_dir), ("output_dir", self.io.output_dir)):
            if value is not None and not isinstance(value, str):
                raise ValidationError(f"io.{name} must be a string path")
        return self

    def to_dict(self) -> dict:
        return {
            "format_version": CONFIG_FORMAT_VERSION,
            "registration": {
                "iters": self.registration.iters,
                "omega": self.registration.omega,
                "tolerance": self.registration.tolerance,
                "sigma_field": self.registration.sigma_field,
            },
            "analysis": {"rho": self.analysis.rho, "bins": self.analysis.bins},
            "synthesis": {
                "eps_c": self.synthesis.eps_c,
                "w_s": self.synthesis.w_s,
                "w_m": self.synthesis.w_m,
                "mlp_sizes": list(self.synthesis.mlp_sizes),
                "seed": self.synthesis.seed,
            },
            "io": {"dataset_dir": self.io.dataset_dir, "output_dir": self.io.output_dir},
        }

    def override(self, section: str, **updates) -> "Config":
        """A copy with the given section fields replaced; None values are ignored."""
        updates = {k: v for k, v in updates.items() if v is not None}
        if not updates:
            return self
        current = getattr(self, section)
        return replace(self, **{section: replace(current, **updates)}).validate()


def _check_int(name: str, value, lo: int, hi: int) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name} must be an integer")
    if not lo <= value <= hi:
        raise ValidationError(f"{name} must be in {lo}..{hi}, got {value}")


def _check_float(name: str, value, lo: float, hi: float, low_open: bool = False) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{name} must be a number")
    value = float(value)
    if value != value:  # NaN
        raise ValidationError(f"{name} must not be NaN")
    if (value <= lo if low_open else value < lo) or value > hi:
        bound = f"({lo}, {hi}]" if low_open else f"[{lo}, {hi}]"
        raise ValidationError(f"{name} must be in {bound}, got {value}")


_SECTIONS = {
    "registration": (RegistrationSection, ("iters", "omega", "tolerance", "sigma_field")),
    "analysis": (AnalysisSection, ("rho", "bins")),
    "synthesis": (SynthesisSection, ("eps_c", "w_s", "w_m", "mlp_sizes", "seed")),
    "io": (IoSection, ("dataset_dir", "output_dir")),
}


def config_from_dict(obj: dict, where: str = "config") -> Config:
    """Build and validate a Config from parsed JSON; rejects unknown keys."""
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: top level must be an object")
    sections = {}
    for key, value in obj.items():
        if key == "format_version":
            continue
        if key not in _SECTIONS:
            raise ValidationError(f"{where}: unknown section {key!r}")
        cls, fields = _SECTIONS[key]
        if not isinstance(value, dict):
            raise ValidationError(f"{where}: section {key!r} must be an object")
        kwargs = {}
        for name, raw in value.items():
            if name not in fields:
                raise ValidationError(f"{where}: unknown key {key}.{name}")
            if name == "mlp_sizes":
                if not isinstance(raw, list):
                    raise ValidationError(f"{where}: synthesis.mlp_sizes must be a list")
                raw = tuple(raw)
            kwargs[name] = raw
        sections[key] = cls(**kwargs)
    return Config(**sections).validate()


def load_config(path: str | Path | None) -> Config:
    """The defaults when path is None, else the validated file contents."""
    if path is None:
        return Config().validate()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read config: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(obj, where=str(path))
