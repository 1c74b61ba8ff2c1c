"""Run configuration: YAML file + command-line overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .analysis.stability import CONDITIONS, RepeatConfig
from .cohort import CohortSpec
from .errors import ConfigError, PSSFError
from .ml.pipeline import MLConfig
from .ml.trees import BoostingConfig, ForestConfig
from .projector import PROFILES, make_protocols
from .radiomics.extract import ExtractConfig


@dataclass
class CohortSection:
    n_subjects: int = 180
    n_knees: int = 260
    grade_fractions: tuple = (0.5, 0.3, 0.2)
    protocol_overrides: dict = field(default_factory=dict)  # applied to all protocols


@dataclass
class RadiomicsSection:
    n_bins: int = 32
    prune_threshold: float = 0.9
    template_path: Optional[str] = None
    roi_px: Optional[int] = None  # default from the profile


@dataclass
class MLSection:
    kinds: tuple = ("logreg_l2", "random_forest", "gradient_boosting")
    tasks: tuple = ("binary_0v2", "three_class")
    split_fractions: tuple = (0.70, 0.15, 0.15)
    k_grid: tuple = (10, 20)
    l1_grid: tuple = (0.005, 0.02)
    l2_grid: tuple = (0.01, 0.1)
    forest: dict = field(default_factory=dict)
    boosting: dict = field(default_factory=dict)


@dataclass
class AnalysisSection:
    subset_size: int = 30
    n_repeats: int = 3
    conditions: tuple = CONDITIONS
    angle_jitter_deg: float = 1.0
    sdd_jitter_cm: float = 2.0
    icc_threshold: float = 0.75
    ordering_slack: float = 0.02


SECTIONS = {"cohort": CohortSection, "radiomics": RadiomicsSection, "ml": MLSection, "analysis": AnalysisSection}


@dataclass
class RunConfig:
    master_seed: int = 0
    profile: str = "desk"
    physics_path: Optional[str] = None
    out_dir: Optional[str] = None
    jobs: int = 1
    cohort: CohortSection = field(default_factory=CohortSection)
    radiomics: RadiomicsSection = field(default_factory=RadiomicsSection)
    ml: MLSection = field(default_factory=MLSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def validate(self) -> "RunConfig":
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {sorted(PROFILES)}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for p in (self.physics_path, self.radiomics.template_path):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"referenced path does not exist: {p}")
        try:
            self.cohort_spec().validate()
            self.ml_config()
        except PSSFError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    # stage-level views ---------------------------------------------------
    def protocols(self) -> list:
        try:
            return make_protocols(self.profile, **self.cohort.protocol_overrides)
        except (TypeError, PSSFError) as exc:
            raise ConfigError(f"bad protocol override: {exc}") from exc

    def cohort_spec(self) -> CohortSpec:
        c = self.cohort
        return CohortSpec(c.n_subjects, c.n_knees, tuple(c.grade_fractions), self.protocols(), self.master_seed)

    def extract_config(self) -> ExtractConfig:
        prof = PROFILES[self.profile]
        r = self.radiomics
        pixel = self.cohort.protocol_overrides.get("pixel_mm", prof["pixel_mm"])
        return ExtractConfig(r.n_bins, r.roi_px or prof["roi_px"], pixel, self.profile, r.template_path, r.prune_threshold)

    def ml_config(self) -> MLConfig:
        m = self.ml
        try:
            return MLConfig(
                kinds=tuple(m.kinds), tasks=tuple(m.tasks), prune_threshold=self.radiomics.prune_threshold,
                k_grid=tuple(m.k_grid), l1_grid=tuple(m.l1_grid), l2_grid=tuple(m.l2_grid),
                forest=ForestConfig(**m.forest), boosting=BoostingConfig(**m.boosting),
            )
        except TypeError as exc:
            raise ConfigError(f"bad model configuration: {exc}") from exc

    def repeat_config(self) -> RepeatConfig:
        a = self.analysis
        return RepeatConfig(a.subset_size, a.n_repeats, tuple(a.conditions), a.angle_jitter_deg, a.sdd_jitter_cm,
                            icc_threshold=a.icc_threshold)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out_dir")
        d.pop("jobs")  # parallelism never changes results
        return d

    def section_dict(self, *names) -> dict:
        d = self.to_dict()
        base = {k: d[k] for k in ("master_seed", "profile", "physics_path")}
        return {**base, **{n: d[n] for n in names}}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    return cls(**data)


def load_config(path=None, **overrides) -> RunConfig:
    """Read YAML (optional) then apply non-None keyword overrides.

    Relative paths in the file resolve against the file's directory.  The
    output directory falls back to ``$PSSF_OUT``.
    """
    data = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base = path.parent
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    top = {}
    for k, v in data.items():
        if k in SECTIONS:
            top[k] = _build(SECTIONS[k], v, k)
        else:
            top[k] = v
    try:
        cfg = _build(RunConfig, top, "config")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for k in ("physics_path",):
        v = getattr(cfg, k)
        if v is not None and not Path(v).is_absolute():
            setattr(cfg, k, str(base / v))
    if cfg.radiomics.template_path and not Path(cfg.radiomics.template_path).is_absolute():
        cfg.radiomics.template_path = str(base / cfg.radiomics.template_path)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if cfg.out_dir is None:
        cfg.out_dir = os.environ.get("PSSF_OUT")
    if cfg.out_dir is None:
        raise ConfigError("no output directory: pass --out or set PSSF_OUT")
    return cfg.validate()
