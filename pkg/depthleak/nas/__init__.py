from .controller import (
    ControllerState,
    SearchConfig,
    Trajectory,
    architecture_id,
    build_candidate,
    compute_reward,
    controller_summary,
    init_controller,
    log_prob,
    reinforce_update,
    sample_architecture,
    sample_trajectory,
    step_distributions,
    trajectory_log_prob_grad,
)
from .search import SearchLogEntry, SearchResult, run_search, split_reconstruction, write_search_log

__all__ = [
    "ControllerState",
    "SearchConfig",
    "SearchLogEntry",
    "SearchResult",
    "Trajectory",
    "architecture_id",
    "build_candidate",
    "compute_reward",
    "controller_summary",
    "init_controller",
    "log_prob",
    "reinforce_update",
    "run_search",
    "sample_architecture",
    "sample_trajectory",
    "split_reconstruction",
    "step_distributions",
    "trajectory_log_prob_grad",
    "write_search_log",
]
