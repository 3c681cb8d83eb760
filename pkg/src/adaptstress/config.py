"""Flat run configuration (JSON file + CLI overrides) and the run manifest."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .numerics import ConfigurationError
from .training import TrainSettings
from .tta import TtaSettings, TtaThresholds
from .windowing import SelectionSettings

TTA_MODES = ("selective", "none", "forced")
PATH_KEYS = ("cohort_dir", "output_dir", "history_path")


@dataclass
class RunConfig:
    # paths (excluded from the manifest hash)
    cohort_dir: str = "cohort"
    output_dir: str = "runs/default"
    history_path: str | None = None          # default: <output_dir>/tta_history.jsonl
    # randomness and windows
    seed: int = 0
    w_in: int = 5
    w_out: int = 1
    w_in_grid: tuple[int, ...] = (3, 5, 7, 9)
    w_out_grid: tuple[int, ...] = (1, 3, 5, 7)
    # preprocessing
    iqr_multiplier: float = 1.0
    rolling_window_days: int = 7
    rolling_k: float = 3.0
    # model
    d_model: int = 128
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int = 256
    dropout: float = 0.1
    grl_alpha: float = 0.1
    scorer_hidden: int = 32
    head_hidden: int = 64
    # training
    epochs: int = 350
    patience: int = 30
    lr: float = 5e-4
    warmup: int = 10
    batch_size: int = 32
    # test-time adaptation
    tta_mode: str = "selective"
    tta_epochs: int = 10
    tta_lr: float = 1e-4
    sigma1: float = 0.01
    sigma2: float = 0.02
    probe_epochs: int = 3
    tta_batch_size: int = 32
    history_improve: float = 0.02
    history_degrade: float = -0.05
    min_history: int = 3
    low_shift: float = 0.3
    high_shift: float = 0.6
    probe_improve: float = 0.02
    shift_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    # feature selection
    n_keep: int = 15
    corr_threshold: float = 0.05
    mi_bins: int = 16
    n_trees: int = 100
    # evaluation
    uncertainty_passes: int = 30
    save_checkpoints: bool = True
    jobs: int = 1
    # explainability
    shap_background: int = 50
    shap_samples: int = 100
    shap_coalitions: int = 4096

    def __post_init__(self):
        self.w_in_grid = tuple(self.w_in_grid)
        self.w_out_grid = tuple(self.w_out_grid)
        self.shift_weights = tuple(self.shift_weights)
        if self.tta_mode not in TTA_MODES:
            raise ConfigurationError(f"tta_mode must be one of {TTA_MODES}, got {self.tta_mode!r}")
        if self.w_in < 1 or self.w_out < 1:
            raise ConfigurationError("w_in and w_out must be positive")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be at least 1")

    @property
    def history_file(self) -> Path:
        return Path(self.history_path) if self.history_path else Path(self.output_dir) / "tta_history.jsonl"

    def model_config(self, d_features: int, n_domains: int | None, w_in: int | None = None,
                     w_out: int | None = None) -> ModelConfig:
        return ModelConfig(d_features=d_features, d_model=self.d_model, n_heads=self.n_heads,
                           n_layers=self.n_layers, d_ff=self.d_ff, w_in=w_in or self.w_in,
                           w_out=w_out or self.w_out, n_domains=n_domains, dropout=self.dropout,
                           grl_alpha=self.grl_alpha, scorer_hidden=self.scorer_hidden,
                           head_hidden=self.head_hidden)

    def train_settings(self, seed: int) -> TrainSettings:
        return TrainSettings(self.epochs, self.patience, self.lr, self.warmup, self.batch_size, seed)

    def tta_settings(self) -> TtaSettings:
        return TtaSettings(self.tta_epochs, self.tta_lr, self.sigma1, self.sigma2,
                           self.probe_epochs, self.tta_batch_size)

    def thresholds(self) -> TtaThresholds:
        return TtaThresholds(self.history_improve, self.history_degrade, self.min_history,
                             self.low_shift, self.high_shift, self.probe_improve)

    def selection_settings(self, seed: int) -> SelectionSettings:
        return SelectionSettings(self.n_keep, self.corr_threshold, self.mi_bins, self.n_trees, seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def overrides(self) -> dict:
        """Keys whose value differs from the default."""
        default = RunConfig().to_dict()
        return {k: v for k, v in self.to_dict().items() if default[k] != v}

    def hash(self) -> str:
        """Content hash of everything except paths (and the parallelism knob)."""
        d = {k: v for k, v in self.to_dict().items() if k not in PATH_KEYS and k != "jobs"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def directory_hash(path: str | Path, pattern: str = "*.csv") -> str:
    h = hashlib.sha256()
    for p in sorted(Path(path).rglob(pattern)):
        h.update(p.relative_to(path).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


@dataclass
class Manifest:
    command: str
    config: dict
    config_hash: str
    overrides: dict
    input_hashes: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        body = {"command": self.command, "config_hash": self.config_hash,
                "inputs": self.input_hashes}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        import numpy, sklearn, torch
        return {"manifest_hash": self.hash, "command": self.command, "config": self.config,
                "config_hash": self.config_hash, "overrides": self.overrides,
                "input_hashes": self.input_hashes, "seeds": self.seeds,
                "versions": {"python": platform.python_version(), "numpy": numpy.__version__,
                             "torch": torch.__version__, "scikit-learn": sklearn.__version__}}

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def make_manifest(command: str, config: RunConfig, inputs: dict[str, str] | None = None) -> Manifest:
    return Manifest(command, config.to_dict(), config.hash(), config.overrides(),
                    dict(sorted((inputs or {}).items())), {"root": config.seed})
