"""Run configuration: TOML file sections, defaults, and conversion to library configs."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from annoclear.annotator_scoring import RasterConfig, ScoringConfig
from annoclear.merging import CleanConfig, MergeConfig
from annoclear.nodule_scoring import KernelSpec, NoduleScoringConfig
from annoclear.synthetic import NoiseConfig, scenario_noise


class ConfigError(ValueError):
    pass


Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class ScoringSection:
    iterations: int = 10
    tol: float = 1e-4
    spacing: Vec3 = (1.0, 1.0, 1.0)
    pad: float = 8.0


@dataclass(frozen=True)
class NoduleScoringSection:
    alpha: float = 0.7
    kernel_bandwidth_mm: float = 20.0
    raw_sum: bool = False


@dataclass(frozen=True)
class MergingSection:
    q: float = 0.5
    threshold: float = 0.1


@dataclass(frozen=True)
class EvaluationSection:
    spacing: Vec3 = (2.0, 2.0, 2.0)


@dataclass(frozen=True)
class SyntheticSection:
    scenario: str = "A1"
    n_images: int = 20
    seed: int = 0
    volume_mm: Vec3 = (400.0, 400.0, 400.0)
    nodules_per_image: tuple[int, int] = (1, 3)
    diameter_range: tuple[float, float] = (4.0, 15.0)
    # None keeps the scenario's own setting
    false_count_max: Optional[int] = None
    false_center_var: Optional[Vec3] = None
    false_diameter_range: Optional[tuple[float, float]] = None
    loc_var: Optional[Vec3] = None
    diam_sigma: Optional[float] = None
    keep_prob: Optional[float] = None


@dataclass(frozen=True)
class Config:
    radius_mode: str = "radius"
    threads: int = 1
    scoring: ScoringSection = field(default_factory=ScoringSection)
    nodule_scoring: NoduleScoringSection = field(default_factory=NoduleScoringSection)
    merging: MergingSection = field(default_factory=MergingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)

    def scoring_config(self) -> ScoringConfig:
        s = self.scoring
        return ScoringConfig(s.iterations, s.tol, RasterConfig(tuple(s.spacing), s.pad), self.threads)

    def nodule_scoring_config(self) -> NoduleScoringConfig:
        n = self.nodule_scoring
        return NoduleScoringConfig(n.alpha, KernelSpec("epanechnikov", n.kernel_bandwidth_mm), n.raw_sum)

    def merge_config(self) -> MergeConfig:
        return MergeConfig(self.merging.q, self.merging.threshold)

    def clean_config(self) -> CleanConfig:
        return CleanConfig(self.scoring_config(), self.nodule_scoring_config(), self.merge_config())

    def noise_config(self, scenario: Optional[str] = None) -> NoiseConfig:
        syn = self.synthetic
        overrides = {f: getattr(syn, f) for f in ("false_count_max", "false_center_var", "false_diameter_range",
                                                  "loc_var", "diam_sigma", "keep_prob")
                     if getattr(syn, f) is not None}
        return scenario_noise(scenario or syn.scenario, syn.seed, **overrides)

    def truth_kwargs(self) -> dict:
        syn = self.synthetic
        return dict(volume_mm=syn.volume_mm, nodules_per_image=syn.nodules_per_image,
                    diameter_range=syn.diameter_range)


_SECTIONS = ("scoring", "nodule_scoring", "merging", "evaluation", "synthetic")


def _coerce(value: Any, template: Any, key: str):
    if isinstance(value, list):
        return tuple(value)
    if isinstance(template, bool) and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(template, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _update_section(section, values: dict, prefix: str):
    known = {f.name for f in fields(section)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{prefix}]: {unknown}")
    return replace(section, **{k: _coerce(v, getattr(section, k), f"{prefix}.{k}") for k, v in values.items()})


def apply_overrides(config: Config, data: dict) -> Config:
    """Merge a nested mapping (TOML layout) over ``config``."""
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    unknown = sorted(set(top) - {"radius_mode", "threads"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    updates = dict(top)
    for name in _SECTIONS:
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            updates[name] = _update_section(getattr(config, name), data[name], name)
    out = replace(config, **updates)
    if out.radius_mode not in ("radius", "diameter"):
        raise ConfigError(f"radius_mode must be 'radius' or 'diameter', got {out.radius_mode!r}")
    if out.threads < 1:
        raise ConfigError("threads must be >= 1")
    return out


def load_config(path=None) -> Config:
    config = Config()
    if path is None:
        return config
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return apply_overrides(config, data)
