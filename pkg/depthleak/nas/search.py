import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from tqdm import tqdm

from ..arch import ArchitectureSpec
from ..constants import SEARCH_LOG_HEADER
from ..exceptions import PhaseError
from ..network import TrainedNetwork, init_network
from ..training import LabeledDataset, train_distilled
from .controller import (
    ControllerState,
    SearchConfig,
    compute_reward,
    init_controller,
    reinforce_update,
    sample_architecture,
)

logger = logging.getLogger(__name__)

# Maps a candidate architecture straight to its reward, bypassing training
CandidateEvaluator = Callable[[ArchitectureSpec], float]


@dataclass(frozen=True)
class SearchLogEntry:
    candidate_idx: int
    arch_json: str
    val_acc: float | None
    reward: float
    cumulative_best: float | None


@dataclass(frozen=True)
class SearchResult:
    """Outcome of run_search: the best candidate, its network and the per-candidate log."""
    best_arch: ArchitectureSpec
    best_net: TrainedNetwork
    best_val_acc: float
    log: tuple[SearchLogEntry, ...]
    controller: ControllerState


def split_reconstruction(data: LabeledDataset, val_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Shuffle a reconstruction set and hold out val_fraction of it, at least one example each side."""
    if len(data) < 2:
        raise ValueError(f"Reconstruction set needs at least 2 examples, got {len(data)}")

    order = np.random.default_rng([seed, 3]).permutation(len(data))
    n_val = min(max(1, int(round(val_fraction * len(data)))), len(data) - 1)
    return data.take(order[n_val:]), data.take(order[:n_val])


def _candidate_seed(seed: int, index: int) -> int:
    return int(np.random.default_rng([seed, 4, index]).integers(2**31))


def run_search(
    cfg: SearchConfig,
    target: TrainedNetwork,
    recon_data: LabeledDataset,
    seed: int,
    evaluator: CandidateEvaluator | None = None,
    progress: bool = False,
) -> SearchResult:
    """
    Search for a substitute of depth cfg.k.

    Each round samples a candidate, distils it on the training part of the
    reconstruction set, rewards it from the validation part and updates the
    controller once per cfg.batch_size candidates.

    Args:
        cfg: Search settings
        target: The target; fixes input shape and class count
        recon_data: Soft-labeled reconstruction set
        seed: Seed of the controller, the sampling stream, the split and candidate training
        evaluator: Optional surrogate that returns a reward per architecture instead of
            training; the returned network is then the untrained best candidate
        progress: Show a progress bar

    Returns:
        SearchResult with the candidate of highest validation accuracy

    Raises:
        PhaseError: If no candidate could be evaluated
    """
    if evaluator is None:
        if not recon_data.is_soft:
            raise ValueError("run_search needs a soft-labeled reconstruction set")
        train, val = split_reconstruction(recon_data, cfg.val_fraction, seed)

    ctrl = init_controller(cfg, seed)
    rng = np.random.default_rng([seed, 5])
    input_shape, num_classes = target.arch.input_shape, target.arch.num_classes

    log: list[SearchLogEntry] = []
    batch = []
    best: tuple[float, ArchitectureSpec, TrainedNetwork | None, int] | None = None

    for index in tqdm(range(cfg.num_candidates), desc="architecture search", disable=not progress):
        arch, trajectory = sample_architecture(ctrl, cfg, rng, input_shape, num_classes)
        candidate_seed = _candidate_seed(seed, index)
        net = None

        try:
            if evaluator is not None:
                reward = float(evaluator(arch))
                val_acc = reward
            else:
                net = train_distilled(
                    arch, train.inputs, train.labels, cfg.epochs_per_candidate, cfg.candidate_lr,
                    seed=candidate_seed, batch_size=cfg.candidate_batch_size,
                    val_inputs=val.inputs, val_posteriors=val.labels,
                )
                accs = net.history.val_accuracies
                val_acc = float(max(accs[-cfg.reward_window:]))
                reward = compute_reward(accs, cfg)
        except Exception as e:
            logger.warning("Candidate %d failed to train (%s); reward set to %g", index, e, cfg.reward_clip[0])
            val_acc, reward = None, cfg.reward_clip[0]

        if val_acc is not None and (best is None or val_acc > best[0]):
            best = (val_acc, arch, net, candidate_seed)

        log.append(SearchLogEntry(
            candidate_idx=index,
            arch_json=arch.to_json(),
            val_acc=val_acc,
            reward=reward,
            cumulative_best=None if best is None else best[0],
        ))
        logger.debug("candidate %d %s val_acc=%s reward=%.6f", index, trajectory.arch_id, val_acc, reward)

        batch.append(replace(trajectory, reward=reward))
        if len(batch) == cfg.batch_size or index == cfg.num_candidates - 1:
            ctrl = reinforce_update(ctrl, batch, cfg)
            batch = []

    if best is None:
        raise PhaseError(f"All {cfg.num_candidates} search candidates failed")

    best_val_acc, best_arch, best_net, best_seed = best
    if best_net is None:
        best_net = init_network(best_arch, best_seed)
    logger.info("Search finished: best validation accuracy %.4f over %d candidates", best_val_acc, len(log))
    return SearchResult(best_arch, best_net, best_val_acc, tuple(log), ctrl)


def write_search_log(log: Iterable[SearchLogEntry], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SEARCH_LOG_HEADER)
        for entry in log:
            writer.writerow([
                entry.candidate_idx,
                entry.arch_json,
                "" if entry.val_acc is None else repr(entry.val_acc),
                repr(entry.reward),
                "" if entry.cumulative_best is None else repr(entry.cumulative_best),
            ])
    return path
