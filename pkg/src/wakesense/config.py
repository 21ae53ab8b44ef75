"""Run configuration shared by every command: one file, flag overrides on top."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .dataset import CLIP_MM, DEFAULT_SPEEDS
from .estimator import ModelConfig, TaskWeights, TrainHyper
from .wake import NoiseParams, Scenario, SensorGeometry, WakeModel, scenario_grid
from .woa import WoaConfig


class ConfigError(ValueError):
    pass


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class CorpusOptions:
    offsets: list[float] = field(default_factory=lambda: [250.0, 300.0])
    speeds: list[float] = field(default_factory=lambda: list(DEFAULT_SPEEDS))
    directions: list[str] = field(default_factory=lambda: ["P", "N"])
    repeats: int = 10
    dt: float = 0.002
    x_range: float = 175.0
    still_samples: int = 100
    geometry: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    wake: dict = field(default_factory=dict)


@dataclass
class DatasetOptions:
    sl: int = 64
    stride: int = 4
    baseline_len: int = 50
    clip_mm: float = CLIP_MM
    ratio: float = 0.9


@dataclass
class TuneOptions:
    population: int = 6
    max_iters: int = 10
    proxy_epochs: int = 20
    baselines: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    case: int = 1
    out: str = "runs/default"
    corpus: CorpusOptions = field(default_factory=CorpusOptions)
    dataset: DatasetOptions = field(default_factory=DatasetOptions)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    weights: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    tune: TuneOptions = field(default_factory=TuneOptions)
    ablate_seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    sweep_sl: list[int] = field(default_factory=lambda: [32, 48, 64, 80])
    sweep_seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    jobs: int = 1

    # ---- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = copy.deepcopy(raw or {})
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        nested = {"corpus": CorpusOptions, "dataset": DatasetOptions, "tune": TuneOptions}
        kw = {}
        known = {f.name for f in fields(cls)}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in nested:
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be a mapping")
                sub = {f.name for f in fields(nested[key])}
                bad = set(value) - sub
                if bad:
                    raise ConfigError(f"unknown {key} option(s): {sorted(bad)}")
                value = nested[key](**value)
            kw[key] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def with_overrides(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "sl":
                d["dataset"]["sl"] = value
            elif key == "epochs":
                d["train"]["epochs"] = value
            else:
                d[key] = value
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self, *sections: str) -> str:
        d = self.to_dict()
        d.pop("out")
        if sections:
            d = {k: d[k] for k in sections}
        return _digest(d)

    def group_hash(self) -> str:
        """Hash of everything except seed and output dir: identifies repeated-seed runs."""
        d = self.to_dict()
        d.pop("out")
        d.pop("seed")
        return _digest(d)

    # ---- typed views --------------------------------------------------
    def validate(self) -> None:
        try:
            if self.case not in (1, 2):
                raise ConfigError(f"case must be 1 or 2, got {self.case}")
            if self.case > len(self.corpus.offsets):
                raise ConfigError(f"case {self.case} needs at least {self.case} offsets")
            if self.corpus.repeats < 1:
                raise ConfigError("corpus.repeats must be >= 1")
            if not self.corpus.speeds:
                raise ConfigError("corpus.speeds is empty")
            if len(set(self.corpus.speeds)) != len(self.corpus.speeds):
                raise ConfigError("corpus.speeds has duplicates")
            ds = self.dataset
            if ds.sl < 1 or ds.stride < 1 or ds.baseline_len < 1:
                raise ConfigError("dataset.sl, stride and baseline_len must be >= 1")
            if not 0 < ds.ratio < 1:
                raise ConfigError("dataset.ratio must be in (0, 1)")
            if ds.baseline_len > self.corpus.still_samples:
                raise ConfigError("dataset.baseline_len exceeds corpus.still_samples")
            if self.jobs < 1:
                raise ConfigError("jobs must be >= 1")
            if not self.sweep_sl or not self.ablate_seeds or not self.sweep_seeds:
                raise ConfigError("sweep_sl, sweep_seeds and ablate_seeds must be non-empty")
            if self.tune.baselines < 0 or self.tune.proxy_epochs < 0:
                raise ConfigError("tune.baselines and tune.proxy_epochs must be >= 0")
            self.geometry()
            self.scenarios()
            self.hyper()
            self.task_weights()
            self.woa_config()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def validate_model(self) -> None:
        """Checks only the training commands need (a corpus may have a single speed)."""
        try:
            self.model_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc

    def geometry(self) -> SensorGeometry:
        return SensorGeometry(**self.corpus.geometry)

    def scenarios(self, offsets=None) -> list[Scenario]:
        c = self.corpus
        noise = NoiseParams(**c.noise)
        if "bias_per_sensor" not in c.noise and self.geometry().count != len(noise.bias_per_sensor):
            noise = replace(noise, bias_per_sensor=())
        out = []
        for sc in scenario_grid(offsets or c.offsets, c.speeds, c.directions, dt=c.dt,
                                noise=noise, wake=WakeModel(**c.wake),
                                still_samples=c.still_samples):
            sign = 1.0 if sc.d == "P" else -1.0
            out.append(replace(sc, x_start=-sign * c.x_range, x_end=sign * c.x_range))
        return out

    def case_offset(self, case: int | None = None) -> float:
        return float(self.corpus.offsets[(case or self.case) - 1])

    def model_config(self, sl: int | None = None, variant: str | None = None) -> ModelConfig:
        d = dict(self.model)
        d["sl"] = sl or self.dataset.sl
        d.setdefault("n_sensors", self.geometry().count)
        d.setdefault("n_speeds", len(self.corpus.speeds))
        if variant:
            d["variant"] = variant
        return ModelConfig.from_dict(d)

    def hyper(self, seed: int | None = None) -> TrainHyper:
        return TrainHyper(**{**self.train, "seed": self.seed if seed is None else seed})

    def task_weights(self) -> TaskWeights:
        if len(self.weights) != 3:
            raise ConfigError("weights must have three entries")
        return TaskWeights(*map(float, self.weights))

    def woa_config(self) -> WoaConfig:
        return WoaConfig(population=self.tune.population, max_iters=self.tune.max_iters,
                         seed=self.seed)
