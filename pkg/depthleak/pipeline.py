import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from sklearn.model_selection import train_test_split

from .arch import ArchitectureSpec, depth, param_count, vgg_preset, with_classifier
from .attack_data import (
    TargetOracle,
    TimingDataset,
    build_timing_dataset,
    poison_timing_dataset,
    reconstruct_training_set,
)
from .base import Layer
from .codecs import (
    load_dataset,
    load_labeled,
    read_timing_csv,
    save_labeled,
    synthetic_blobs,
    write_arch_pool,
    write_timing_csv,
)
from .config import Config, TargetConfig
from .exceptions import ClockUnavailableError, ConfigError, PhaseError
from .layers import Activation, Conv2D, MaxPool
from .nas import architecture_id, controller_summary, run_search, write_search_log
from .network import TrainedNetwork, load_network, save_network
from .regression import (
    Regressor,
    compare_regressors,
    fit,
    infer_depth,
    predict,
    score,
    write_ranking_csv,
    write_regressor,
)
from .timing import estimate_processing_time, pad_network, remote_response_time
from .training import LabeledDataset, agreement, evaluate, train_supervised

logger = logging.getLogger(__name__)

TIMING_CSV = "timing.csv"
ARCH_POOL = "arch_pool.json"
RECON_NPZ = "recon.npz"
TARGET_MODEL = "target.model.json"
SUBSTITUTE_MODEL = "substitute.model.json"
ATTACK_JSON = "attack.json"
REPORT_JSON = "report.json"
SEARCH_LOG_CSV = "search_log.csv"
DEFENSE_JSON = "defense.json"
SUMMARY_JSON = "summary.json"
RANKING_CSV = "ranking.csv"


@dataclass(frozen=True)
class ExtractionReport:
    """
    Outcome of the reconstruction phase.

    accuracy_gap is |target_test_acc - substitute_test_acc| and agreement is
    measured on the held-out test inputs.
    """
    inferred_depth: int
    true_depth: int | None
    regressor_kind: str | None
    target_test_acc: float
    substitute_test_acc: float
    accuracy_gap: float
    agreement: float
    substitute_arch_id: str
    substitute_arch: str
    best_val_acc: float
    config_fingerprint: str
    seeds: dict[str, int]
    controller: dict[str, Any]
    failed: bool = False

    def __post_init__(self):
        for name in ("target_test_acc", "substitute_test_acc", "accuracy_gap", "agreement"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.accuracy_gap != abs(self.target_test_acc - self.substitute_test_acc):
            raise ValueError("accuracy_gap must equal |target_test_acc - substitute_test_acc|")

    @classmethod
    def failure(cls, inferred_depth: int, fingerprint: str, seed: int) -> "ExtractionReport":
        return cls(inferred_depth, None, None, 0.0, 0.0, 0.0, 0.0, "", "", 0.0, fingerprint, {"seed": seed}, {}, True)


@dataclass(frozen=True)
class DepthInference:
    """One regressor's answer to the attack."""
    kind: str
    estimate: float
    inferred_depth: int
    holdout_mse: float
    holdout_r2: float | None


def _write_json(data: dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _read_json(path: Path) -> dict[str, Any]:
    if not path.is_file():
        raise FileNotFoundError(f"Artifact not found: {path}")
    return json.loads(path.read_text())


def _progress() -> bool:
    return logging.getLogger().isEnabledFor(logging.INFO)


def target_architecture(target: TargetConfig, input_shape: tuple[int, int, int], num_classes: int) -> ArchitectureSpec:
    """Architecture of the victim described in [target]."""
    if target.preset is not None:
        return vgg_preset(target.preset, input_shape, num_classes)

    body: list[Layer] = []
    for entry in target.layers:
        if entry == "MP":
            body.append(MaxPool(2, 2))
        else:
            body += [Conv2D(int(entry), target.kernel, 1, "same"), Activation("relu")]
    return with_classifier(input_shape, body, num_classes, head=target.head)


def candidate_pool(cfg: Config, data: LabeledDataset) -> np.ndarray:
    """
    Inputs offered to the membership test.

    Synthetic sources draw fresh points from the same generator; file sources
    sample the loaded training inputs.
    """
    size = cfg.attack.pool_size
    if cfg.data.kind == "synthetic-blobs":
        source = replace(cfg.data, n_points=size, sample_seed=cfg.attack.pool_sample_seed)
        return synthetic_blobs(source).inputs

    inputs = data.inputs[data.splits != "test"]
    rng = np.random.default_rng([cfg.seed, cfg.attack.pool_sample_seed])
    return inputs[rng.choice(len(inputs), size=min(size, len(inputs)), replace=False)]


def _mark_partial(paths: list[Path]):
    for path in paths:
        for part in (path, path.with_suffix(".bin")):
            if part.exists():
                part.rename(part.with_name(part.name + ".partial"))


def cmd_setup(cfg: Config) -> dict[str, Path]:
    """
    Setup phase: train the victim, time the attacker's architectures and reconstruct its training set.

    Returns:
        Artifact name to path

    Raises:
        FileNotFoundError, DatasetFormatError: If the data source cannot be read; nothing is written
        PhaseError: If a later step fails; artifacts written so far get a .partial suffix
    """
    data = load_dataset(cfg.data)
    out = cfg.out_path
    written: list[Path] = []

    try:
        arch = target_architecture(cfg.target, data.inputs.shape[1:], int(data.hard_labels().max()) + 1)
        target = train_supervised(arch, data, cfg.target.epochs, cfg.target.lr, cfg.seed, cfg.target.batch_size)
        written.append(save_network(target, out / TARGET_MODEL))
        logger.info("Trained target %s of depth %d", architecture_id(arch), depth(arch))

        space = replace(cfg.space, input_shape=arch.input_shape, num_classes=arch.num_classes)
        ds, archs = build_timing_dataset(
            space, cfg.timing.n_archs, cfg.timing.mode, cfg.cost_model, cfg.timing.n_runs,
            seed=cfg.seed, hardware_tag=cfg.timing.hardware_tag, progress=_progress(),
        )
        written.append(write_timing_csv(ds, out / TIMING_CSV))
        written.append(write_arch_pool(archs, out / ARCH_POOL))
        if ds.is_partial:
            raise PhaseError(f"only {len(ds)} of {ds.n_requested} architectures were timed")

        recon = reconstruct_training_set(target, candidate_pool(cfg, data), cfg.attack.threshold)
        written.append(save_labeled(recon, out / RECON_NPZ))
    except ClockUnavailableError:
        _mark_partial(written)
        raise
    except Exception as e:
        _mark_partial(written)
        raise PhaseError(f"setup failed: {e}") from e

    artifacts = {"target": written[0], "timing": written[1], "arch_pool": written[2], "recon": written[3]}
    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return artifacts


def _load_timing(cfg: Config) -> TimingDataset:
    ds = read_timing_csv(cfg.out_path / TIMING_CSV)
    if len(ds) == 0:
        raise ConfigError("The timing dataset is empty; rerun setup")
    if ds.mode != cfg.timing.mode:
        raise ConfigError(f"Timing dataset was collected in {ds.mode} mode, config asks for {cfg.timing.mode}")
    if ds.mode == "cost-model" and ds.cost_model_id != cfg.cost_model.model_id:
        raise ConfigError(
            f"Timing dataset was built with {ds.cost_model_id}, config describes {cfg.cost_model.model_id}"
        )
    return ds


def _split(ds: TimingDataset, cfg: Config) -> tuple[TimingDataset, TimingDataset]:
    train_idx, test_idx = train_test_split(
        np.arange(len(ds)), test_size=cfg.attack.holdout_fraction, random_state=cfg.seed
    )
    return ds.take(train_idx), ds.take(test_idx)


def observe_target(cfg: Config, target: TrainedNetwork) -> tuple[float, int]:
    """
    Query the target a constant cfg.timing.n_runs times.

    Returns:
        The estimated processing time and the number of queries sent
    """
    oracle = TargetOracle(target, cfg.timing.mode, cfg.cost_model)
    x = np.random.default_rng([cfg.seed, 6]).uniform(size=target.arch.input_shape)
    times = [oracle.query(x)[1] for _ in range(cfg.timing.n_runs)]

    if cfg.timing.remote:
        responses = [remote_response_time(t, cfg.remote, draw) for draw, t in enumerate(times)]
        mean_time = estimate_processing_time(responses, cfg.remote).t_proc
    else:
        mean_time = float(np.mean(times))

    logger.info("Sent %d queries to the target (mean time %.6g s)", oracle.query_count, mean_time)
    return mean_time, oracle.query_count


def _infer_all(
    cfg: Config,
    train: TimingDataset,
    holdout: TimingDataset,
    mean_time: float,
    n_params: int,
) -> tuple[list[DepthInference], list[Regressor]]:
    inferences, regressors = [], []
    for kind in cfg.attack.regressors:
        reg = fit(kind, train, cfg.attack.feature_set, cfg.attack.hyperparams.get(kind), seed=cfg.seed)
        holdout_score = score(reg, holdout)
        params = n_params if cfg.attack.feature_set == "time+params" else None
        inferences.append(DepthInference(
            kind=kind,
            estimate=predict(reg, mean_time, params),
            inferred_depth=infer_depth(reg, mean_time, params),
            holdout_mse=holdout_score.mse,
            holdout_r2=holdout_score.r2,
        ))
        regressors.append(reg)
    return inferences, regressors


def cmd_attack(cfg: Config, target_path: str | Path | None = None) -> dict[str, Any]:
    """
    Attack phase: time the target with a constant number of queries and infer its depth.

    Returns:
        The attack record written to attack.json
    """
    ds = _load_timing(cfg)
    target = load_network(target_path or cfg.out_path / TARGET_MODEL)
    train, holdout = _split(ds, cfg)

    try:
        mean_time, n_queries = observe_target(cfg, target)
        inferences, regressors = _infer_all(cfg, train, holdout, mean_time, param_count(target.arch))
        for reg in regressors:
            write_regressor(reg, cfg.out_path / f"regressor-{reg.kind}.json")
        if cfg.attack.compare_seeds:
            ranking = compare_regressors(
                ds, cfg.attack.regressors, (cfg.attack.feature_set,), range(cfg.attack.compare_seeds),
                cfg.attack.holdout_fraction,
            )
            write_ranking_csv(ranking, cfg.out_path / RANKING_CSV)
    except (ConfigError, FileNotFoundError, ClockUnavailableError):
        raise
    except Exception as e:
        raise PhaseError(f"attack failed: {e}") from e

    record = {
        "mean_time_s": mean_time,
        "n_queries": n_queries,
        "true_depth": depth(target.arch),
        "results": [asdict(inference) for inference in inferences],
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
    }
    _write_json(record, cfg.out_path / ATTACK_JSON)
    for inference in inferences:
        print(f"{inference.kind}: estimate {inference.estimate:.4f} -> depth {inference.inferred_depth}")
    return record


def _inferred_depth(cfg: Config) -> tuple[int | None, str | None]:
    path = cfg.out_path / ATTACK_JSON
    if not path.is_file():
        return None, None
    first = _read_json(path)["results"][0]
    return first["inferred_depth"], first["kind"]


def cmd_reconstruct(cfg: Config, inferred_depth: int | None = None) -> ExtractionReport:
    """
    Reconstruction phase: search a substitute of the inferred depth and score it against the target.

    Writes report.json, search_log.csv and the substitute model. A failed
    search still writes a report, flagged as failed, and raises PhaseError.
    """
    recon = load_labeled(cfg.out_path / RECON_NPZ)
    target = load_network(cfg.out_path / TARGET_MODEL)
    test = load_dataset(cfg.data).split("test")
    if len(test) == 0:
        raise ConfigError("The data source has no test split to score the substitute on")

    kind = None
    if inferred_depth is None:
        inferred_depth, kind = _inferred_depth(cfg)
    search_cfg = cfg.search_config(inferred_depth)
    fingerprint = cfg.fingerprint()

    try:
        if len(recon) == 0:
            raise PhaseError("the reconstruction set is empty; lower [attack] threshold")
        result = run_search(search_cfg, target, recon, cfg.seed, progress=_progress())
    except Exception as e:
        _write_json(asdict(ExtractionReport.failure(search_cfg.k, fingerprint, cfg.seed)), cfg.out_path / REPORT_JSON)
        raise PhaseError(f"reconstruction failed: {e}") from e

    target_acc = evaluate(target, test)
    substitute_acc = evaluate(result.best_net, test)
    report = ExtractionReport(
        inferred_depth=search_cfg.k,
        true_depth=depth(target.arch),
        regressor_kind=kind,
        target_test_acc=target_acc,
        substitute_test_acc=substitute_acc,
        accuracy_gap=abs(target_acc - substitute_acc),
        agreement=agreement(target, result.best_net, test.inputs),
        substitute_arch_id=architecture_id(result.best_arch),
        substitute_arch=result.best_arch.to_json(),
        best_val_acc=result.best_val_acc,
        config_fingerprint=fingerprint,
        seeds={"seed": cfg.seed, "search": cfg.seed},
        controller=controller_summary(result.controller),
    )

    save_network(result.best_net, cfg.out_path / SUBSTITUTE_MODEL)
    write_search_log(result.log, cfg.out_path / SEARCH_LOG_CSV)
    _write_json(asdict(report), cfg.out_path / REPORT_JSON)
    print(
        f"substitute {report.substitute_arch_id}: test acc {substitute_acc:.4f} "
        f"(target {target_acc:.4f}, gap {report.accuracy_gap:.4f}, agreement {report.agreement:.4f})"
    )
    return report


def cmd_defend(cfg: Config, target_path: str | Path | None = None) -> dict[str, Any]:
    """
    Rerun the attack under the configured defense and report depth errors before and after.

    dummy-layers pads the deployed target with [defense] k identity layers;
    poison corrupts the training part of the timing dataset by [defense] fraction.
    """
    ds = _load_timing(cfg)
    target = load_network(target_path or cfg.out_path / TARGET_MODEL)
    true_depth = depth(target.arch)
    train, holdout = _split(ds, cfg)
    defense = cfg.defense

    try:
        mean_time, _ = observe_target(cfg, target)
        before, _ = _infer_all(cfg, train, holdout, mean_time, param_count(target.arch))

        if defense.mode == "dummy-layers":
            defended = pad_network(target, defense.k)
            defended_time, _ = observe_target(cfg, defended)
            after, _ = _infer_all(cfg, train, holdout, defended_time, param_count(defended.arch))
            settings = {"k": defense.k}
        else:
            poisoned = poison_timing_dataset(train, defense.fraction, defense.strategy, seed=cfg.seed)
            after, _ = _infer_all(cfg, poisoned, holdout, mean_time, param_count(target.arch))
            settings = {"fraction": defense.fraction, "strategy": defense.strategy}
    except ClockUnavailableError:
        raise
    except Exception as e:
        raise PhaseError(f"defense run failed: {e}") from e

    record = {
        "mode": defense.mode,
        "settings": settings,
        "true_depth": true_depth,
        "before": [asdict(inference) for inference in before],
        "after": [asdict(inference) for inference in after],
        "depth_error_before": {i.kind: i.inferred_depth - true_depth for i in before},
        "depth_error_after": {i.kind: i.inferred_depth - true_depth for i in after},
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
    }
    _write_json(record, cfg.out_path / DEFENSE_JSON)
    for b, a in zip(before, after):
        print(f"{b.kind}: depth {b.inferred_depth} -> {a.inferred_depth} (true {true_depth}), "
              f"holdout mse {b.holdout_mse:.4f} -> {a.holdout_mse:.4f}")
    return record


def cmd_report(cfg: Config) -> dict[str, Any]:
    """Collect the attack, extraction and defense records into summary.json and print a table."""
    out = cfg.out_path
    summary = {
        name: _read_json(out / filename)
        for name, filename in (("attack", ATTACK_JSON), ("extraction", REPORT_JSON), ("defense", DEFENSE_JSON))
        if (out / filename).is_file()
    }
    if not summary:
        raise FileNotFoundError(f"No attack, extraction or defense records in {out}")

    _write_json(summary, out / SUMMARY_JSON)
    if "attack" in summary:
        for row in summary["attack"]["results"]:
            print(f"attack      {row['kind']:<14} depth {row['inferred_depth']:>3}  "
                  f"(true {summary['attack']['true_depth']})")
    if "extraction" in summary:
        rep = summary["extraction"]
        status = "FAILED" if rep["failed"] else f"gap {rep['accuracy_gap']:.4f}  agreement {rep['agreement']:.4f}"
        print(f"extraction  k={rep['inferred_depth']:<3} {status}")
    if "defense" in summary:
        d = summary["defense"]
        for kind, error in d["depth_error_after"].items():
            print(f"defense     {d['mode']:<14} {kind}: error {d['depth_error_before'][kind]} -> {error}")
    return summary
