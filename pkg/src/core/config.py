"""
Config - Training, downstream, path and log settings loaded from INI files
"""

import os
import logging
import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

from ..model.config import ModelConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)

TASK_NAMES = ("mlm", "msom", "mfom", "msg", "intra_mfm", "inter_mfm", "dual_vsa", "legacy_vsa")

# Ablation presets: task set plus the data fraction they train on
PRESETS: Dict[str, Tuple[Tuple[str, ...], float]] = {
    "M1": (("mlm", "msg"), 1.0),
    "M2": (("mlm", "msg", "msom", "mfom"), 1.0),
    "M3": (("mlm", "msg", "msom", "mfom", "intra_mfm", "inter_mfm"), 1.0),
    "M4": (("mlm", "msg", "msom", "mfom", "intra_mfm", "inter_mfm", "legacy_vsa"), 1.0),
    "M5": (("mlm", "msg", "msom", "mfom", "intra_mfm", "inter_mfm", "dual_vsa"), 0.01),
    "M6": (("mlm", "msg", "msom", "mfom", "intra_mfm", "inter_mfm", "dual_vsa"), 1.0),
}


@dataclass
class TaskFlags:
    """Per-proxy-task enable switches (defaults: the full M6 set)"""
    mlm: bool = True
    msom: bool = True
    mfom: bool = True
    msg: bool = True
    intra_mfm: bool = True
    inter_mfm: bool = True
    dual_vsa: bool = True
    legacy_vsa: bool = False

    @classmethod
    def preset(cls, name: str) -> "TaskFlags":
        key = name.upper()
        if key not in PRESETS:
            raise ConfigError(f"Unknown task preset '{name}' (choose from {', '.join(PRESETS)})")
        enabled = PRESETS[key][0]
        return cls(**{task: task in enabled for task in TASK_NAMES})

    def enabled(self) -> List[str]:
        return [task for task in TASK_NAMES if getattr(self, task)]

    def is_enabled(self, task: str) -> bool:
        return bool(getattr(self, task))


@dataclass
class TrainConfig:
    """Pre-training hyper-parameters; defaults are desk scale"""
    model: ModelConfig = field(default_factory=ModelConfig)
    tasks: TaskFlags = field(default_factory=TaskFlags)
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 1
    # Stop after this many steps when > 0, regardless of epochs
    max_steps: int = 0
    temperature: float = 0.7
    momentum: float = 0.999
    queue_capacity: int = 65536
    min_negatives: int = 1
    mlm_rate: float = 0.15
    msom_rate: float = 0.15
    msg_rate: float = 0.15
    mfom_rate: float = 0.15
    frame_mask_rate: float = 0.15
    normalize_embeddings: bool = False
    data_fraction: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_queues: bool = False
    # Fill empty queues with key encodings of the data before the first step
    warm_queues: bool = False
    log_every: int = 10
    prefetch: bool = True
    show_progress: bool = True

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        """Full-scale settings (queue size kept as documented: 65,586)"""
        return cls(model=ModelConfig.full_scale(), batch_size=128, epochs=30, queue_capacity=65586)

    def validate(self) -> None:
        """
        Check value ranges

        Raises:
            ConfigError: Naming the first offending field
        """
        self.model.validate()
        for name in ("mlm_rate", "msom_rate", "msg_rate", "mfom_rate", "frame_mask_rate", "momentum"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"train.{name} must lie in [0, 1], got {value}")
        for name in ("batch_size", "queue_capacity", "min_negatives", "epochs", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("max_steps", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0, got {getattr(self, name)}")
        if self.temperature <= 0:
            raise ConfigError(f"train.temperature must be > 0, got {self.temperature}")
        if self.learning_rate <= 0:
            raise ConfigError(f"train.learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ConfigError(f"train.data_fraction must lie in (0, 1], got {self.data_fraction}")
        if not self.tasks.enabled():
            raise ConfigError("tasks: at least one proxy task must be enabled")
        if self.tasks.legacy_vsa and self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 for legacy_vsa (mismatched pairs come from the batch)")


@dataclass
class DownstreamConfig:
    """Fine-tuning and evaluation settings"""
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-4
    temperature: float = 0.7
    beam_size: int = 5
    max_caption_len: int = 16
    negatives: int = 100
    recall_ks: Tuple[int, ...] = (1, 5, 10, 20)
    plot_classes: int = 0
    top_classes: int = 0
    leaf_classes: int = 0
    eval_workers: int = 4
    seed: int = 0
    show_progress: bool = True

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "beam_size", "max_caption_len", "negatives", "eval_workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"downstream.{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ConfigError("downstream.learning_rate and downstream.temperature must be > 0")
        if not self.recall_ks or min(self.recall_ks) < 1:
            raise ConfigError(f"downstream.recall_ks must be positive integers, got {self.recall_ks}")


@dataclass
class PathsConfig:
    data: str = "data/synthetic.vlrd"
    eval_data: str = ""
    out_dir: str = "runs/default"
    vocab: str = ""


@dataclass
class LogConfig:
    log_file: str = "logs/vidlang.log"
    log_level: str = "INFO"
    max_log_size: int = 1048576
    backup_count: int = 3


@dataclass
class Config:
    """Everything one configuration file describes"""
    train: TrainConfig = field(default_factory=TrainConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    log: LogConfig = field(default_factory=LogConfig)

    def validate(self) -> None:
        self.train.validate()
        self.downstream.validate()
        if self.log.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"log.log_level '{self.log.log_level}' is not a logging level")


def _convert(section: str, name: str, kind: Any, raw: str) -> Any:
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw.strip()
        # Tuple[int, ...]
        return tuple(int(part) for part in raw.replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"{section}.{name}: {e}") from e


def _apply_section(target: Any, section: str, items: List[Tuple[str, str]], skip: Tuple[str, ...] = ()) -> Any:
    """Copy of dataclass ``target`` with the section's keys applied"""
    known = {f.name: f for f in fields(target) if f.name not in ("model", "tasks")}
    updates = {}
    for key, raw in items:
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f"Unknown configuration key {section}.{key}")
        updates[key] = _convert(section, key, known[key].type, raw)
    return replace(target, **updates)


def parse_config(parser: configparser.ConfigParser, source: str = "<config>") -> Config:
    """Build a Config from an already-read parser"""
    sections = set(parser.sections())
    unknown = sections - {"model", "train", "tasks", "downstream", "paths", "log"}
    if unknown:
        raise ConfigError(f"{source}: unknown configuration sections {sorted(unknown)}")

    def items(name):
        return parser.items(name, raw=True) if parser.has_section(name) else []

    model = _apply_section(ModelConfig(), "model", items("model"))
    train = TrainConfig(model=model)
    preset = parser.get("tasks", "preset", fallback="").strip() if parser.has_section("tasks") else ""
    if preset:
        train = replace(train, tasks=TaskFlags.preset(preset), data_fraction=PRESETS[preset.upper()][1])
        logger.debug(f"Applied task preset {preset.upper()}")
    train = _apply_section(train, "train", items("train"))
    train.tasks = _apply_section(train.tasks, "tasks", items("tasks"), skip=("preset",))

    config = Config(
        train=train,
        downstream=_apply_section(DownstreamConfig(), "downstream", items("downstream")),
        paths=_apply_section(PathsConfig(), "paths", items("paths")),
        log=_apply_section(LogConfig(), "log", items("log")),
    )
    config.validate()
    return config


def load_config(path: Optional[str]) -> Config:
    """
    Load and validate a configuration file

    Args:
        path: INI file; None gives the defaults

    Raises:
        ConfigError: If the file is missing or contains unknown or invalid keys
    """
    if not path:
        config = Config()
        config.validate()
        return config
    if not os.path.exists(path):
        raise ConfigError(f"Configuration file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    config = parse_config(parser, path)
    logger.info(f"Loaded configuration from {path} (tasks: {', '.join(config.train.tasks.enabled())})")
    return config


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(config: Config, path: str) -> None:
    """Write every field of ``config`` back out as INI"""
    parser = configparser.ConfigParser(interpolation=None)
    blocks = {
        "model": config.train.model,
        "train": config.train,
        "tasks": config.train.tasks,
        "downstream": config.downstream,
        "paths": config.paths,
        "log": config.log,
    }
    for section, obj in blocks.items():
        parser[section] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)
                           if f.name not in ("model", "tasks")}
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
