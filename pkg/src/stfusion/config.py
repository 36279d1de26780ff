"""Structured run configuration for the CLI (JSON document).

Sections own their fields exactly once: `data` carries history/horizon/
features, `graph` carries the window size and adjacency handling, `model`
the remaining architecture knobs. Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import SplitSpec
from .errors import ConfigError
from .graphs import FusionLayout
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DataSection:
    signal: str | None = None
    format: str | None = None      # binary | csv | None = infer from extension
    features: int = 1
    history: int = 12
    horizon: int = 12
    split: tuple = (0.6, 0.2, 0.2)
    normalize_stats: str = "train"  # fit z-score stats on train | all steps


@dataclass
class GraphSection:
    spatial: str | None = None     # edge-list path; None = no spatial links
    temporal: str | None = None    # precomputed edge list; None = derive via DTW
    band_width: int = 12
    unbounded_band: bool = False
    alpha: float = 0.01
    window: int = 4
    layout: list | None = None     # K x K grid of block kind names
    self_loops: bool = True
    normalize_adj: str = "none"
    fit_range: str = "train"       # derive the temporal graph from train | all


@dataclass
class ModelSection:
    glu_depth: int = 3
    channels: int = 64
    layers: int = 3
    conv_kernel: int = 2
    share_window_weights: bool = False
    out_hidden: int = 256
    huber_delta: float = 1.0
    use_temporal_conv: bool = True


@dataclass
class TrainSection:
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    learning_rate: float = 0.001
    patience: int | None = None
    grad_clip: float | None = None


@dataclass
class EvalSection:
    epsilon_mask: float = 0.0


@dataclass
class OutputSection:
    directory: str = "runs/out"
    plots: bool = False


_SECTIONS = {
    "data": DataSection,
    "graph": GraphSection,
    "model": ModelSection,
    "train": TrainSection,
    "eval": EvalSection,
    "output": OutputSection,
}


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    graph: GraphSection = field(default_factory=GraphSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def model_config(self) -> ModelConfig:
        """Effective architecture: sizes merged from data/graph/model sections."""
        try:
            return ModelConfig(
                window=self.graph.window,
                glu_depth=self.model.glu_depth,
                channels=self.model.channels,
                layers=self.model.layers,
                history=self.data.history,
                horizon=self.data.horizon,
                features=self.data.features,
                conv_kernel=self.model.conv_kernel,
                share_window_weights=self.model.share_window_weights,
                out_hidden=self.model.out_hidden,
                huber_delta=self.model.huber_delta,
                normalize_adj=self.graph.normalize_adj,
                use_temporal_conv=self.model.use_temporal_conv,
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self, checkpoint_dir=None) -> TrainConfig:
        try:
            return TrainConfig(
                batch_size=self.train.batch_size,
                epochs=self.train.epochs,
                seed=self.train.seed,
                learning_rate=self.train.learning_rate,
                patience=self.train.patience,
                grad_clip=self.train.grad_clip,
                checkpoint_dir=checkpoint_dir,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def fusion_layout(self) -> FusionLayout:
        grid = self.graph.layout
        try:
            return FusionLayout(self.graph.window,
                                grid=None if grid is None else grid,
                                self_loops=self.graph.self_loops)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["data"]["split"] = list(out["data"]["split"])
        return out


def _build_section(cls, payload: dict, section: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in section {section!r}: {sorted(unknown)}")
    try:
        obj = cls(**payload)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc
    return obj


def run_config_from_dict(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("configuration root must be a JSON object")
    unknown = set(payload) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        body = payload.get(name, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {name!r} must be a JSON object")
        sections[name] = _build_section(cls, body, name)
    cfg = RunConfig(**sections)
    if isinstance(cfg.data.split, list):
        cfg.data.split = tuple(cfg.data.split)
    if len(cfg.data.split) != 3:
        raise ConfigError("data.split must hold three fractions")
    try:
        SplitSpec(*cfg.data.split)
    except ValueError as exc:
        raise ConfigError(f"data.split: {exc}") from exc
    cfg.model_config()  # validate cross-section bounds eagerly
    if cfg.graph.fit_range not in ("train", "all"):
        raise ConfigError("graph.fit_range must be 'train' or 'all'")
    return cfg


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return run_config_from_dict(payload)


def write_effective_config(cfg: RunConfig, path) -> None:
    """Dump the fully resolved configuration; loading it back is a fixed point."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
