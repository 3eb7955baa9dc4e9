import argparse
import logging
import sys
from pathlib import Path
from typing import Any, get_args

from . import __version__
from .config import Config, load_config
from .constants import DEFAULT_N_RUNS, RegressorKind
from .exceptions import ClockUnavailableError, ConfigError, DatasetFormatError, PhaseError
from .pipeline import cmd_attack, cmd_defend, cmd_reconstruct, cmd_report, cmd_setup

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PHASE = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

REGRESSOR_ALIASES = {"rf": "random-forest", "gb": "boosted-trees", "svr": "linear-svr", "tree": "decision-tree"}


def _regressor_list(value: str) -> tuple[str, ...]:
    kinds = tuple(REGRESSOR_ALIASES.get(v.strip(), v.strip()) for v in value.split(",") if v.strip())
    valid = get_args(RegressorKind)
    for kind in kinds:
        if kind not in valid:
            raise argparse.ArgumentTypeError(f"invalid regressor {kind!r}; choose from {', '.join(valid)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON config file")
    common.add_argument("--seed", type=int, help="top-level seed")
    common.add_argument("--timing-mode", choices=("wall", "cost-model"), help="how inference time is measured")
    common.add_argument("--regressor", type=_regressor_list, help="comma-separated regressor kinds, e.g. ridge,rf")
    common.add_argument("--n-runs", type=int, help=f"queries averaged per timing (default {DEFAULT_N_RUNS})")
    common.add_argument("--literal-reward", action="store_true", default=None, help="clip the reward itself")
    common.add_argument("--out", type=Path, help="artifact directory")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="depthleak", description="Timing side-channel model extraction toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("setup", parents=[common], help="train the target, build the timing dataset and reconstruct its data")
    attack = sub.add_parser("attack", parents=[common], help="infer the target depth from its timing")
    attack.add_argument("--target", type=Path, help="target model header (default <out>/target.model.json)")
    reconstruct = sub.add_parser("reconstruct", parents=[common], help="search a substitute of the inferred depth")
    reconstruct.add_argument("--depth", type=int, help="depth to search; default from the attack record")
    defend = sub.add_parser("defend", parents=[common], help="rerun the attack under a defense")
    defend.add_argument("--mode", choices=("dummy-layers", "poison"), help="defense to apply")
    defend.add_argument("--k", type=int, help="dummy layers to add")
    defend.add_argument("--fraction", type=float, help="fraction of the timing dataset to poison")
    defend.add_argument("--target", type=Path, help="target model header")
    sub.add_parser("report", parents=[common], help="summarise every record in the artifact directory")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}

    def put(section: str | None, key: str, value: Any):
        if value is None:
            return
        if section is None:
            overrides[key] = value
        else:
            overrides.setdefault(section, {})[key] = value

    put(None, "seed", args.seed)
    put(None, "out_dir", str(args.out) if args.out else None)
    put(None, "log_level", args.log_level)
    put("timing", "mode", args.timing_mode)
    put("timing", "n_runs", args.n_runs)
    put("attack", "regressors", args.regressor)
    put("search", "literal_reward", args.literal_reward)
    put("defense", "mode", getattr(args, "mode", None))
    put("defense", "k", getattr(args, "k", None))
    put("defense", "fraction", getattr(args, "fraction", None))
    return overrides


def configure_logging(cfg: Config):
    """Stream handler at the configured level plus the timestamped sidecar log in the artifact directory."""
    level = getattr(logging, cfg.log_level, None)
    if not isinstance(level, int):
        raise ConfigError(f"Invalid log level: {cfg.log_level}")

    cfg.out_path.mkdir(parents=True, exist_ok=True)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    sidecar = logging.FileHandler(cfg.out_path / "depthleak.log")
    sidecar.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, "depthleak", False)]:
        root.removeHandler(handler)
        handler.close()
    for handler in (stream, sidecar):
        handler.depthleak = True
        root.addHandler(handler)
    root.setLevel(level)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        cfg = load_config(args.config, _overrides(args))
        configure_logging(cfg)
        logger.info("depthleak %s: %s (config %s)", args.command, cfg.out_dir, cfg.fingerprint()[:12])

        match args.command:
            case "setup":
                cmd_setup(cfg)
            case "attack":
                cmd_attack(cfg, args.target)
            case "reconstruct":
                cmd_reconstruct(cfg, args.depth)
            case "defend":
                cmd_defend(cfg, args.target)
            case "report":
                cmd_report(cfg)
    except (ConfigError, DatasetFormatError, FileNotFoundError, ClockUnavailableError) as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except PhaseError as e:
        logger.error("%s", e)
        return EXIT_PHASE
    except Exception:
        logger.exception("depthleak %s failed", args.command)
        return EXIT_PHASE

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
