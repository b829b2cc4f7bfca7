"""Run configuration: one JSON file per run.

Top-level keys::

    seed         master seed (integer >= 0); required by stochastic commands
    out_dir      output directory (default "out"); ADLEARN_OUT_DIR and --out override
    threads      worker processes for chains and counterfactual draws (default 1)
    data         paths of input files: transactions, sites, tags, menus,
                 advertisers, draws, predicted_ctr (relative to the config file)
    market       MarketConfig fields for simulate-market
    estimate     start_date, kappa, menu_window, n_weeks, pointwise_draws, init_jitter
    sampler      SamplerConfig fields (chains, warmup, samples, target_accept, ...)
    scenario     regimes, n_draws, truncation, n_boot, missing_pooled
    pooling      bins, max_tags_per_image, n_boot
    analyze      period_weeks, horizon_days

The digest in each output's provenance line covers everything except
``out_dir`` and ``threads``, which do not change results.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .model import DomainError

OUT_DIR_ENV = "ADLEARN_OUT_DIR"
DATA_KEYS = ("transactions", "sites", "tags", "menus", "advertisers", "draws", "predicted_ctr")
SECTIONS = ("market", "estimate", "sampler", "scenario", "pooling", "analyze")
TOP_LEVEL = ("seed", "out_dir", "threads", "data") + SECTIONS


class ConfigError(DomainError):
    """The configuration file is unreadable or inconsistent."""


@dataclass(frozen=True)
class EstimateSettings:
    start_date: str = "2007-01-01"
    kappa: float = 1.0
    menu_window: int = 4
    n_weeks: int | None = None
    pointwise_draws: int = 50
    init_jitter: float = 0.1


@dataclass(frozen=True)
class ScenarioSettings:
    regimes: tuple = ("C_F", "C_P", "C_FP")
    n_draws: int = 100
    truncation: str = "all"
    n_boot: int = 2000
    missing_pooled: str = "error"


@dataclass(frozen=True)
class PoolingSettings:
    bins: int = 10
    max_tags_per_image: int = 10
    n_boot: int = 1000


@dataclass(frozen=True)
class AnalyzeSettings:
    period_weeks: int = 2
    horizon_days: int = 182
    n_boot: int = 1000


def _section(cls, values: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return cls(**values)


@dataclass
class RunConfig:
    path: Path
    raw: dict
    seed: int | None
    out_dir: Path
    threads: int = 1
    data: dict = field(default_factory=dict)
    estimate: EstimateSettings = field(default_factory=EstimateSettings)
    scenario: ScenarioSettings = field(default_factory=ScenarioSettings)
    pooling: PoolingSettings = field(default_factory=PoolingSettings)
    analyze: AnalyzeSettings = field(default_factory=AnalyzeSettings)

    @property
    def digest(self) -> str:
        content = {k: v for k, v in self.raw.items() if k not in ("out_dir", "threads")}
        content["seed"] = self.seed
        blob = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def input(self, key: str, required: bool = True) -> Path | None:
        p = self.data.get(key)
        if p is None and required:
            raise ConfigError(f"data.{key} is required for this command")
        return p

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        return self.seed


def load_config(path, seed: int | None = None, out: str | None = None,
                threads: int | None = None) -> RunConfig:
    """Parse and check a config file; command-line values override it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if seed is None:
        seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    base = path.parent
    out_dir = out or os.environ.get(OUT_DIR_ENV) or raw.get("out_dir", "out")
    out_path = Path(out_dir)
    if not out_path.is_absolute() and out is None and OUT_DIR_ENV not in os.environ:
        out_path = base / out_path
    n_threads = threads if threads is not None else raw.get("threads", 1)
    if not isinstance(n_threads, int) or n_threads < 1:
        raise ConfigError(f"threads must be a positive integer, got {n_threads!r}")
    data_raw = raw.get("data", {})
    bad = sorted(set(data_raw) - set(DATA_KEYS))
    if bad:
        raise ConfigError(f"unknown data key(s): {', '.join(bad)}")
    data = {k: (base / v if not Path(v).is_absolute() else Path(v)) for k, v in data_raw.items()}
    return RunConfig(
        path=path, raw=raw, seed=seed, out_dir=out_path, threads=n_threads, data=data,
        estimate=_section(EstimateSettings, raw.get("estimate", {}), "estimate"),
        scenario=_section(ScenarioSettings, raw.get("scenario", {}), "scenario"),
        pooling=_section(PoolingSettings, raw.get("pooling", {}), "pooling"),
        analyze=_section(AnalyzeSettings, raw.get("analyze", {}), "analyze"),
    )
