import hashlib
import json
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from .attack_data import ArchSpace
from .codecs import DatasetSource
from .constants import (
    DEFAULT_MEMBERSHIP_THRESHOLD,
    DEFAULT_N_RUNS,
    DefenseMode,
    FeatureSet,
    PoisonStrategy,
    RegressorKind,
    TimingMode,
)
from .exceptions import ConfigError
from .nas import SearchConfig
from .timing import CostModel, RemoteChannel
from .validation import ArchValidator, DatasetValidator

load_dotenv()

SECTIONS = ("data", "target", "timing", "cost_model", "remote", "space", "attack", "search", "defense")


@dataclass(frozen=True)
class TargetConfig:
    """
    The victim model trained by setup.

    Attributes:
        layers: Body entries, an int for a conv with that many filters or "MP" for a 2x2 max pool
        kernel: Kernel size of every body conv
        head: "flatten" or "gap" before the dense classifier
        preset: 1, 2 or 3 to use a VGG-like reference target instead of layers
        epochs: Training epochs
        lr: SGD step size
        batch_size: Mini-batch size
    """
    layers: tuple[int | str, ...] = (8, 8, "MP")
    kernel: int = 3
    head: str = "flatten"
    preset: int | None = None
    epochs: int = 30
    lr: float = 0.1
    batch_size: int = 32

    def __post_init__(self):
        for entry in self.layers:
            if entry != "MP":
                ArchValidator.validate_count("target filters", entry)
        if self.head not in ("flatten", "gap"):
            raise ValueError(f"Invalid head: {self.head}. Valid heads are: ('flatten', 'gap')")
        ArchValidator.validate_count("kernel", self.kernel)
        ArchValidator.validate_count("epochs", self.epochs)
        ArchValidator.validate_count("batch_size", self.batch_size)
        DatasetValidator.validate_learning_rate(self.lr, allow_zero=False)


@dataclass(frozen=True)
class TimingConfig:
    """
    How times are collected.

    Attributes:
        mode: "cost-model" or "wall"
        n_archs: Architectures in the attacker dataset
        n_runs: Inferences averaged per architecture, and queries sent to the target
        hardware_tag: Tag for wall-mode rows; DEPTHLEAK_HARDWARE_TAG overrides the file
        remote: Observe the target through the remote channel in [remote]
    """
    mode: TimingMode = "cost-model"
    n_archs: int = 100
    n_runs: int = DEFAULT_N_RUNS
    hardware_tag: str | None = None
    remote: bool = False

    def __post_init__(self):
        ArchValidator.validate_choice("timing mode", self.mode, TimingMode)
        ArchValidator.validate_count("n_archs", self.n_archs)
        ArchValidator.validate_count("n_runs", self.n_runs)


@dataclass(frozen=True)
class AttackConfig:
    """
    Depth inference and training-set reconstruction.

    Attributes:
        regressors: Kinds fitted and reported, the first one drives reconstruction
        feature_set: "time-only" or "time+params"
        hyperparams: Per-kind overrides, e.g. {"ridge": {"alpha": 1e-6}}
        holdout_fraction: Share of the timing dataset held out for scoring
        compare_seeds: Seeds for the regressor ranking table, 0 to skip it
        threshold: Membership threshold on the maximum posterior
        pool_size: Candidate inputs offered to the membership test
        pool_sample_seed: Sample seed of the candidate pool
    """
    regressors: tuple[RegressorKind, ...] = ("random-forest",)
    feature_set: FeatureSet = "time+params"
    hyperparams: dict[str, dict[str, Any]] = field(default_factory=dict)
    holdout_fraction: float = 0.3
    compare_seeds: int = 0
    threshold: float = DEFAULT_MEMBERSHIP_THRESHOLD
    pool_size: int = 512
    pool_sample_seed: int = 1

    def __post_init__(self):
        if not self.regressors:
            raise ValueError("At least one regressor kind is required")
        for kind in self.regressors:
            ArchValidator.validate_choice("regressor kind", kind, RegressorKind)
        ArchValidator.validate_choice("feature set", self.feature_set, FeatureSet)
        DatasetValidator.validate_fraction("holdout_fraction", self.holdout_fraction, open_low=True, open_high=True)
        DatasetValidator.validate_fraction("threshold", self.threshold, open_low=True, open_high=True)
        ArchValidator.validate_count("compare_seeds", self.compare_seeds, minimum=0)
        ArchValidator.validate_count("pool_size", self.pool_size)


@dataclass(frozen=True)
class DefenseConfig:
    mode: DefenseMode = "dummy-layers"
    k: int = 3
    fraction: float = 0.3
    strategy: PoisonStrategy = "label-flip"

    def __post_init__(self):
        ArchValidator.validate_choice("defense mode", self.mode, DefenseMode)
        ArchValidator.validate_count("k", self.k, minimum=0)
        DatasetValidator.validate_fraction("fraction", self.fraction)
        ArchValidator.validate_choice("poison strategy", self.strategy, PoisonStrategy)


@dataclass(frozen=True)
class Config:
    """
    Resolved configuration of every phase.

    Attributes:
        seed: Top-level seed shared by all phases
        out_dir: Artifact directory
        log_level: Root log level for the CLI
        search: [search] keys for SearchConfig; k may be omitted and taken from the attack
    """
    seed: int = 0
    out_dir: str = "artifacts"
    log_level: str = "INFO"
    data: DatasetSource = field(default_factory=DatasetSource)
    target: TargetConfig = field(default_factory=TargetConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    cost_model: CostModel = field(default_factory=CostModel)
    remote: RemoteChannel = field(default_factory=RemoteChannel)
    space: ArchSpace = field(default_factory=ArchSpace)
    attack: AttackConfig = field(default_factory=AttackConfig)
    search: dict[str, Any] = field(default_factory=dict)
    defense: DefenseConfig = field(default_factory=DefenseConfig)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def search_config(self, k: int | None = None) -> SearchConfig:
        """SearchConfig for depth k, falling back to an explicit [search] k."""
        settings = dict(self.search)
        k = k if k is not None else settings.pop("k", None)
        settings.pop("k", None)
        if k is None:
            raise ConfigError("No depth for the search: run attack first or set [search] k")
        try:
            return SearchConfig(k=k, **settings)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[search] {e}") from None

    def to_dict(self) -> dict[str, Any]:
        """Plain-data view of the phase settings; out_dir and log_level are left out."""
        return {"seed": self.seed, **{name: _plain(getattr(self, name)) for name in SECTIONS}}

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _plain(value: Any) -> Any:
    if hasattr(value, "__dataclass_fields__"):
        return asdict(value)
    return value


def _tuples(value: Any) -> Any:
    """Convert JSON/TOML lists to tuples, recursively, leaving mappings as dicts."""
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    if isinstance(value, dict):
        return {k: _tuples(v) for k, v in value.items()}
    return value


SECTION_TYPES = {
    "data": DatasetSource,
    "target": TargetConfig,
    "timing": TimingConfig,
    "cost_model": CostModel,
    "remote": RemoteChannel,
    "space": ArchSpace,
    "attack": AttackConfig,
    "defense": DefenseConfig,
}


def _build_section(name: str, raw: dict[str, Any]) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table, got {type(raw).__name__}")

    if name == "search":
        settings = _tuples(raw)
        try:
            SearchConfig(**{"k": 1, **settings})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[search] {e}") from None
        return settings

    section_type = SECTION_TYPES[name]
    known = {f.name for f in fields(section_type)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {unknown}")

    values = {key: (value if key == "hyperparams" else _tuples(value)) for key, value in raw.items()}
    try:
        return section_type(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}] {e}") from None


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a TOML or JSON config file into a raw mapping."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")

    text = path.read_text()
    try:
        match path.suffix.lower():
            case ".toml":
                return tomllib.loads(text)
            case ".json":
                data = json.loads(text)
            case _:
                raise ConfigError(f"Unsupported config format: {path.suffix}. Use .toml or .json")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from None

    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold an object at the top level")
    return data


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != "hyperparams":
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _environment() -> dict[str, Any]:
    env: dict[str, Any] = {}
    if os.getenv("DEPTHLEAK_OUT_DIR"):
        env["out_dir"] = os.getenv("DEPTHLEAK_OUT_DIR")
    if os.getenv("DEPTHLEAK_LOG_LEVEL"):
        env["log_level"] = os.getenv("DEPTHLEAK_LOG_LEVEL")
    if os.getenv("DEPTHLEAK_HARDWARE_TAG"):
        env["timing"] = {"hardware_tag": os.getenv("DEPTHLEAK_HARDWARE_TAG")}
    return env


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> Config:
    """
    Resolve the configuration.

    Precedence is overrides (CLI flags) > DEPTHLEAK_* environment variables
    > config file > defaults.

    Args:
        path: TOML or JSON file, or None for defaults only
        overrides: Nested mapping shaped like the file, e.g. {"timing": {"n_runs": 5}}

    Returns:
        The validated Config

    Raises:
        ConfigError: If the file is missing, malformed, or holds invalid values
    """
    raw = read_config_file(path) if path is not None else {}
    raw = _merge(_merge(raw, _environment()), overrides or {})

    unknown = sorted(set(raw) - set(SECTIONS) - {"seed", "out_dir", "log_level"})
    if unknown:
        raise ConfigError(f"Unknown config keys: {unknown}")

    seed = raw.get("seed", 0)
    try:
        ArchValidator.validate_count("seed", seed, minimum=0)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None

    sections = {name: _build_section(name, raw[name]) for name in SECTIONS if name in raw}
    return Config(
        seed=seed,
        out_dir=str(raw.get("out_dir", "artifacts")),
        log_level=str(raw.get("log_level", "INFO")).upper(),
        **sections,
    )
