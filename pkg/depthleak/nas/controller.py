import hashlib
import logging
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from ..arch import ArchitectureSpec, with_classifier
from ..base import Layer, Shape
from ..constants import Baseline
from ..layers import Activation, Conv2D
from ..layers.activation import softmax
from ..validation import ArchValidator, DatasetValidator, SearchValidator

logger = logging.getLogger(__name__)

INIT_SCALE = 0.1


@dataclass(frozen=True)
class SearchConfig:
    """
    Settings of the depth-constrained architecture search.

    Attributes:
        k: Number of searched conv layers, normally the inferred depth
        kernel_choices: Kernel sizes the controller picks from
        filter_choices: Filter counts the controller picks from
        num_candidates: Architectures sampled and trained
        epochs_per_candidate: Distillation epochs per candidate
        reward_window: Trailing epochs whose best validation accuracy is cubed
        reward_clip: (low, high) clip range. The default +-0.05 on the advantage keeps each
            controller step small, so a 50-candidate search stays close to its uniform start;
            short searches need a wider clip, a larger controller_lr or literal_reward
        maxpool_substitution: Make every second searched conv stride 2 while the map is larger than 4
        baseline: "none" or "ema"
        baseline_decay: EMA decay of the baseline
        controller_lr: Step size of the policy-gradient ascent
        literal_reward: Clip the reward itself; by default the advantage R - b is clipped
        batch_size: Trajectories per controller update
        hidden_size: LSTM hidden units
        embedding_size: Width of the action embeddings
        candidate_lr: SGD step size for candidate distillation
        candidate_batch_size: Mini-batch size for candidate distillation
        val_fraction: Share of the reconstruction set held out for rewards
    """
    k: int
    kernel_choices: tuple[int, ...] = (3, 5)
    filter_choices: tuple[int, ...] = (32, 64, 128)
    num_candidates: int = 50
    epochs_per_candidate: int = 20
    reward_window: int = 5
    reward_clip: tuple[float, float] = (-0.05, 0.05)
    maxpool_substitution: bool = True
    baseline: Baseline = "ema"
    baseline_decay: float = 0.8
    controller_lr: float = 0.05
    literal_reward: bool = False
    batch_size: int = 1
    hidden_size: int = 32
    embedding_size: int = 32
    candidate_lr: float = 0.5
    candidate_batch_size: int = 32
    val_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "kernel_choices", tuple(self.kernel_choices))
        object.__setattr__(self, "filter_choices", tuple(self.filter_choices))
        object.__setattr__(self, "reward_clip", tuple(float(v) for v in self.reward_clip))

        for name in ("k", "num_candidates", "epochs_per_candidate", "reward_window", "batch_size",
                     "hidden_size", "embedding_size", "candidate_batch_size"):
            ArchValidator.validate_count(name, getattr(self, name))
        SearchValidator.validate_choices("kernel_choices", self.kernel_choices)
        SearchValidator.validate_choices("filter_choices", self.filter_choices)
        SearchValidator.validate_clip(self.reward_clip)
        ArchValidator.validate_choice("baseline", self.baseline, Baseline)
        DatasetValidator.validate_fraction("baseline_decay", self.baseline_decay)
        DatasetValidator.validate_fraction("val_fraction", self.val_fraction, open_low=True, open_high=True)
        DatasetValidator.validate_learning_rate(self.controller_lr)
        DatasetValidator.validate_learning_rate(self.candidate_lr, allow_zero=False)

    @property
    def n_actions(self) -> int:
        return 2 * self.k


@dataclass(frozen=True)
class Trajectory:
    """
    One sampled action sequence: kernel and filter indices alternating per layer.

    Attributes:
        actions: Choice indices, kernel first
        log_probs: Log-probability of each action under the sampling policy
        reward: Reward assigned after evaluation
        arch_id: Identifier of the resulting architecture
    """
    actions: tuple[int, ...]
    log_probs: tuple[float, ...]
    reward: float | None = None
    arch_id: str | None = None

    def __post_init__(self):
        if len(self.actions) != len(self.log_probs):
            raise ValueError(f"{len(self.actions)} actions but {len(self.log_probs)} log-probabilities")
        if any(lp > 0 for lp in self.log_probs):
            raise ValueError("log-probabilities must be <= 0")

    @property
    def log_prob(self) -> float:
        return float(sum(self.log_probs))


@dataclass(frozen=True)
class ControllerState:
    """
    Parameters of the LSTM policy plus its optimiser state.

    params holds read-only arrays: "embed" (one row per kernel then filter
    choice), the fused gate weights "W" acting on [input, hidden] with bias
    "b" in (input, forget, output, cell) order, and the heads "Wk"/"bk" and
    "Wf"/"bf".
    """
    params: dict[str, np.ndarray]
    n_kernels: int
    n_filters: int
    seed: int = 0
    baseline: float | None = None
    n_updates: int = 0
    n_skipped: int = 0

    @property
    def hidden_size(self) -> int:
        return self.params["b"].shape[0] // 4

    @property
    def embedding_size(self) -> int:
        return self.params["embed"].shape[1]


@dataclass
class _Step:
    z: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    probs: np.ndarray
    action: int


def _freeze(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    for array in params.values():
        array.flags.writeable = False
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _head(t: int) -> tuple[str, str]:
    return ("Wk", "bk") if t % 2 == 0 else ("Wf", "bf")


def _embedding_row(ctrl: ControllerState, t: int, action: int) -> int:
    return action if t % 2 == 0 else ctrl.n_kernels + action


def init_controller(cfg: SearchConfig, seed: int) -> ControllerState:
    """
    Seeded controller with weights uniform in [-0.1, 0.1] and zero biases.

    With zero biases and a zero initial state the first action is exactly
    uniform; later steps stay close to uniform.
    """
    rng = np.random.default_rng(seed)
    n_k, n_f = len(cfg.kernel_choices), len(cfg.filter_choices)
    hidden, embed = cfg.hidden_size, cfg.embedding_size

    params = {
        "embed": rng.uniform(-INIT_SCALE, INIT_SCALE, (n_k + n_f, embed)),
        "W": rng.uniform(-INIT_SCALE, INIT_SCALE, (4 * hidden, embed + hidden)),
        "b": np.zeros(4 * hidden),
        "Wk": rng.uniform(-INIT_SCALE, INIT_SCALE, (n_k, hidden)),
        "bk": np.zeros(n_k),
        "Wf": rng.uniform(-INIT_SCALE, INIT_SCALE, (n_f, hidden)),
        "bf": np.zeros(n_f),
    }
    return ControllerState(params=_freeze(params), n_kernels=n_k, n_filters=n_f, seed=seed)


def _unroll(
    ctrl: ControllerState,
    n_steps: int,
    actions: tuple[int, ...] | None = None,
    rng: np.random.Generator | None = None,
) -> list[_Step]:
    """Run the LSTM for n_steps, either following actions or sampling them from rng."""
    p = ctrl.params
    hidden = ctrl.hidden_size
    h, c = np.zeros(hidden), np.zeros(hidden)
    x = np.zeros(ctrl.embedding_size)

    steps = []
    for t in range(n_steps):
        z = np.concatenate([x, h])
        gates = p["W"] @ z + p["b"]
        i = _sigmoid(gates[:hidden])
        f = _sigmoid(gates[hidden:2 * hidden])
        o = _sigmoid(gates[2 * hidden:3 * hidden])
        g = np.tanh(gates[3 * hidden:])

        c_prev = c
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c

        w_name, b_name = _head(t)
        probs = softmax(p[w_name] @ h + p[b_name])
        if actions is None:
            action = int(rng.choice(len(probs), p=probs))
        else:
            action = int(actions[t])
            if not 0 <= action < len(probs):
                raise ValueError(f"action {action} at step {t} is outside [0, {len(probs)})")

        steps.append(_Step(z, i, f, o, g, c_prev, tanh_c, h, probs, action))
        x = p["embed"][_embedding_row(ctrl, t, action)]
    return steps


def step_distributions(ctrl: ControllerState, actions: tuple[int, ...]) -> list[np.ndarray]:
    """Policy distribution at every step when the controller follows actions."""
    return [step.probs for step in _unroll(ctrl, len(actions), actions=tuple(actions))]


def log_prob(ctrl: ControllerState, actions: tuple[int, ...]) -> float:
    steps = _unroll(ctrl, len(actions), actions=tuple(actions))
    return float(sum(np.log(step.probs[step.action]) for step in steps))


def trajectory_log_prob_grad(
    ctrl: ControllerState,
    actions: tuple[int, ...],
) -> tuple[float, dict[str, np.ndarray]]:
    """
    Gradient of log P(actions) with respect to every controller parameter.

    Back-propagates through the unrolled LSTM, including the embeddings fed
    back as inputs.

    Returns:
        The log-probability and one gradient array per parameter name
    """
    p = ctrl.params
    hidden, embed = ctrl.hidden_size, ctrl.embedding_size
    steps = _unroll(ctrl, len(actions), actions=tuple(actions))
    grads = {name: np.zeros_like(array) for name, array in p.items()}

    dh_next, dc_next = np.zeros(hidden), np.zeros(hidden)
    for t in range(len(steps) - 1, -1, -1):
        s = steps[t]
        dlogits = -s.probs
        dlogits[s.action] += 1.0

        w_name, b_name = _head(t)
        grads[w_name] += np.outer(dlogits, s.h)
        grads[b_name] += dlogits

        dh = p[w_name].T @ dlogits + dh_next
        dc = dc_next + dh * s.o * (1.0 - s.tanh_c ** 2)
        do = dh * s.tanh_c
        di, dg, df = dc * s.g, dc * s.i, dc * s.c_prev
        dc_next = dc * s.f

        dgates = np.concatenate([
            di * s.i * (1.0 - s.i),
            df * s.f * (1.0 - s.f),
            do * s.o * (1.0 - s.o),
            dg * (1.0 - s.g ** 2),
        ])
        grads["W"] += np.outer(dgates, s.z)
        grads["b"] += dgates

        dz = p["W"].T @ dgates
        dh_next = dz[embed:]
        if t > 0:
            grads["embed"][_embedding_row(ctrl, t - 1, steps[t - 1].action)] += dz[:embed]

    total = float(sum(np.log(step.probs[step.action]) for step in steps))
    return total, grads


def sample_trajectory(ctrl: ControllerState, cfg: SearchConfig, rng: np.random.Generator) -> Trajectory:
    steps = _unroll(ctrl, cfg.n_actions, rng=rng)
    return Trajectory(
        actions=tuple(step.action for step in steps),
        log_probs=tuple(float(np.log(step.probs[step.action])) for step in steps),
    )


def build_candidate(
    actions: tuple[int, ...],
    cfg: SearchConfig,
    input_shape: Shape,
    num_classes: int,
) -> ArchitectureSpec:
    """
    Turn 2*k actions into k conv layers closed by global average pooling and a classifier.

    With maxpool_substitution every second conv uses stride 2 while the
    feature map is larger than 4.
    """
    if len(actions) != cfg.n_actions:
        raise ValueError(f"expected {cfg.n_actions} actions, got {len(actions)}")

    layers: list[Layer] = []
    shape = tuple(input_shape)
    for index in range(cfg.k):
        kernel = cfg.kernel_choices[actions[2 * index]]
        filters = cfg.filter_choices[actions[2 * index + 1]]
        stride = 2 if cfg.maxpool_substitution and index % 2 == 1 and min(shape[:2]) > 4 else 1
        conv = Conv2D(filters, kernel, stride, "same")
        layers += [conv, Activation("relu")]
        shape = conv.output_shape(shape)
    return with_classifier(input_shape, layers, num_classes, head="gap")


def architecture_id(arch: ArchitectureSpec) -> str:
    return "arch-" + hashlib.sha256(arch.to_json().encode()).hexdigest()[:12]


def sample_architecture(
    ctrl: ControllerState,
    cfg: SearchConfig,
    seed: int | np.random.Generator,
    input_shape: Shape = (32, 32, 3),
    num_classes: int = 10,
) -> tuple[ArchitectureSpec, Trajectory]:
    """
    Sample 2*k decisions and build the architecture they describe.

    Args:
        ctrl: Controller
        cfg: Search settings
        seed: Seed, or a generator to continue drawing from
        input_shape: Input shape of the candidate
        num_classes: Classifier width

    Returns:
        The candidate, whose depth is exactly cfg.k, and its trajectory
    """
    trajectory = sample_trajectory(ctrl, cfg, np.random.default_rng(seed))
    arch = build_candidate(trajectory.actions, cfg, input_shape, num_classes)
    return arch, replace(trajectory, arch_id=architecture_id(arch))


def compute_reward(val_accuracies: list[float], cfg: SearchConfig) -> float:
    """
    Cube of the best validation accuracy over the trailing reward window.

    The result is clipped to cfg.reward_clip only with literal_reward; by
    default clipping happens on the advantage inside reinforce_update.
    """
    if len(val_accuracies) == 0:
        raise ValueError("At least one epoch of validation accuracy is required")

    reward = float(max(val_accuracies[-cfg.reward_window:])) ** 3
    if cfg.literal_reward:
        low, high = cfg.reward_clip
        reward = float(np.clip(reward, low, high))
    return reward


def reinforce_update(
    ctrl: ControllerState,
    trajectories: list[Trajectory],
    cfg: SearchConfig,
) -> ControllerState:
    """
    One REINFORCE ascent step on a batch of rewarded trajectories.

    theta += lr * mean_b(advantage_b * grad log P(trajectory_b)), with the
    advantage R - b under the configured baseline. A non-finite gradient
    leaves the parameters unchanged and counts the update as skipped.
    """
    if not trajectories:
        raise ValueError("reinforce_update needs at least one trajectory")
    if any(t.reward is None for t in trajectories):
        raise ValueError("Every trajectory needs a reward before the update")

    rewards = np.array([t.reward for t in trajectories], dtype=np.float64)
    if cfg.baseline == "ema":
        baseline = ctrl.baseline if ctrl.baseline is not None else float(rewards.mean())
        next_baseline: float | None = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * float(rewards.mean())
    else:
        baseline, next_baseline = 0.0, ctrl.baseline

    advantages = rewards - baseline
    if not cfg.literal_reward:
        advantages = np.clip(advantages, *cfg.reward_clip)

    total = {name: np.zeros_like(array) for name, array in ctrl.params.items()}
    for trajectory, advantage in zip(trajectories, advantages):
        if advantage == 0:
            continue
        _, grads = trajectory_log_prob_grad(ctrl, trajectory.actions)
        for name in total:
            total[name] += advantage * grads[name]

    if not all(np.all(np.isfinite(g)) for g in total.values()):
        logger.warning("Skipping controller update %d: non-finite policy gradient", ctrl.n_updates + ctrl.n_skipped)
        return replace(ctrl, n_skipped=ctrl.n_skipped + 1)

    step = cfg.controller_lr / len(trajectories)
    params = {name: ctrl.params[name] + step * total[name] for name in ctrl.params}
    return replace(ctrl, params=_freeze(params), baseline=next_baseline, n_updates=ctrl.n_updates + 1)


def controller_summary(ctrl: ControllerState) -> dict[str, Any]:
    return {
        "seed": ctrl.seed,
        "n_updates": ctrl.n_updates,
        "n_skipped": ctrl.n_skipped,
        "baseline": ctrl.baseline,
    }
