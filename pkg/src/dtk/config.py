"""Pipeline configuration: one JSON document with a section per stage."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .gbdt import TrainConfig
from .spyem import SpyEmConfig
from .synthgen import GeneratorConfig
from .trendlab import DEFAULT_ALPHAS, METRICS


class ConfigError(ValueError):
    """Invalid or unreadable pipeline configuration."""


def stage_seed(master_seed: int, stage: str) -> int:
    """Stable 31-bit seed for ``stage`` derived from the master seed."""
    digest = hashlib.sha256(f"{int(master_seed)}:{stage}".encode()).hexdigest()
    return int(digest[:8], 16) & 0x7FFFFFFF


def _default_labeler():
    return {
        "alphas": {m: {"FB": fb, "IB": ib} for m, (fb, ib) in DEFAULT_ALPHAS.items()},
        "min_active_months": 6,
    }


def _default_features():
    return {"top_k": 13, "rough": {"n_trees": 200, "max_depth": 5}}


def _default_train():
    return {m: {} for m in METRICS}


def _default_causal():
    return {"cl": 0.001, "degree": 3, "n_permutations": 2000, "band": [7, 10], "sample": "golden", "reported_only": True}


def _default_abtest():
    return {"test_fraction": 0.8, "recovery": 0.3, "cl": 0.05}


SECTIONS = ("generator", "labeler", "features", "train", "spyem", "causal", "abtest")


@dataclass
class PipelineConfig:
    """Stage sections plus the master seed.

    A section may pin its own ``seed``; otherwise the stage seed is derived
    from ``seed`` and the stage name.
    """

    seed: int = 42
    out: str = "run"
    generator: dict = field(default_factory=dict)
    labeler: dict = field(default_factory=_default_labeler)
    features: dict = field(default_factory=_default_features)
    train: dict = field(default_factory=_default_train)
    spyem: dict = field(default_factory=dict)
    causal: dict = field(default_factory=_default_causal)
    abtest: dict = field(default_factory=_default_abtest)

    def __post_init__(self):
        self.validate()

    # -- typed views ------------------------------------------------------
    def seed_for(self, stage: str, section: dict | None = None) -> int:
        if section and section.get("seed") is not None:
            return int(section["seed"])
        return stage_seed(self.seed, stage)

    def generator_config(self) -> GeneratorConfig:
        d = dict(self.generator)
        d["seed"] = self.seed_for("generate", self.generator)
        return GeneratorConfig.from_dict(d)

    def alphas(self, metric: str) -> tuple[float, float]:
        a = self.labeler["alphas"][metric]
        return float(a["FB"]), float(a["IB"])

    def train_config(self, metric: str) -> TrainConfig:
        d = dict(self.train.get(metric, {}))
        d["seed"] = self.seed_for(f"train_{metric}", d)
        return TrainConfig.from_dict(d)

    def rough_config(self, metric: str) -> TrainConfig:
        d = dict(self.features.get("rough", {}))
        d["seed"] = self.seed_for(f"select_{metric}", d)
        return TrainConfig.from_dict(d)

    def spyem_config(self) -> SpyEmConfig:
        d = copy.deepcopy(self.spyem)
        d["seed"] = self.seed_for("spyem", d)
        base = d.pop("base", None)
        cfg = SpyEmConfig(**d)
        if base is not None:
            cfg.base = TrainConfig.from_dict({**cfg.base.to_dict(), **base})
        return cfg

    # -- validation and (de)serialization ---------------------------------
    def validate(self):
        try:
            self.generator_config()
            for m in METRICS:
                fb, ib = self.alphas(m)
                if fb <= 0 or ib <= 0:
                    raise ValueError(f"alphas for {m} must be positive")
                self.train_config(m)
                self.rough_config(m)
            if int(self.labeler.get("min_active_months", 6)) < 1:
                raise ValueError("labeler.min_active_months must be >= 1")
            if int(self.features.get("top_k", 13)) < 1:
                raise ValueError("features.top_k must be >= 1")
            self.spyem_config()
            c = self.causal
            if not 0.0 < float(c["cl"]) < 1.0:
                raise ValueError("causal.cl must lie in (0, 1)")
            if c["sample"] not in ("golden", "band"):
                raise ValueError("causal.sample must be 'golden' or 'band'")
            lo, hi = c["band"]
            if not 1 <= lo <= hi <= 10:
                raise ValueError("causal.band must be within 1..10")
            a = self.abtest
            fracs = a["test_fraction"].values() if isinstance(a["test_fraction"], dict) else [a["test_fraction"]]
            if any(not 0.0 < float(f) < 1.0 for f in fracs):
                raise ValueError("abtest.test_fraction must lie in (0, 1)")
            if not 0.0 <= float(a["recovery"]) <= 1.0:
                raise ValueError("abtest.recovery must lie in [0, 1]")
            if not 0.0 < float(a["cl"]) < 1.0:
                raise ValueError("abtest.cl must lie in (0, 1)")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_dict(self) -> dict:
        return {"seed": self.seed, "out": self.out, **{s: copy.deepcopy(getattr(self, s)) for s in SECTIONS}}

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        unknown = set(doc) - {"seed", "out", *SECTIONS}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        kwargs = {"seed": int(doc.get("seed", base.seed)), "out": str(doc.get("out", base.out))}
        for s in SECTIONS:
            merged = copy.deepcopy(getattr(base, s))
            _merge(merged, doc.get(s, {}))
            kwargs[s] = merged
        return cls(**kwargs)


def _merge(dst: dict, src: dict):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def load_pipeline_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
    return PipelineConfig.from_dict(doc)
