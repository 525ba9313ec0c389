"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .harness import (
    ConfigError,
    ExperimentConfig,
    sweep,
    write_outputs,
)

log = logging.getLogger("cbms")

PRESETS = ("exp3-rate", "exp4-rate", "exp4-class-size", "nested-prior-baseline", "switching", "lstar-test", "pacbayes", "pareto", "probe")


def preset_path(name: str) -> Path:
    path = Path(str(resources.files("cbms") / "presets" / f"{name}.json"))
    if not path.exists():
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return path


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``a.b.0.c=value`` in place; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, value = assignment.split("=", 1)
    parts = key.split(".")
    node = data
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise ConfigError(f"bad list index {part!r} in {key!r}") from None
        elif isinstance(node, dict):
            if part not in node:
                node[part] = {}
            node = node[part]
        else:
            raise ConfigError(f"cannot descend into {'.'.join(parts[:i + 1])!r}")
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = _parse_value(value)
        except (ValueError, IndexError):
            raise ConfigError(f"bad list index {last!r} in {key!r}") from None
    else:
        node[last] = _parse_value(value)


def load_config(args: argparse.Namespace, path: Path) -> ExperimentConfig:
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    data = copy.deepcopy(data)
    for assignment in args.set or []:
        apply_override(data, assignment)
    if args.seeds is not None:
        data["seeds"] = args.seeds
    if args.tmax is not None:
        data["horizons"] = [T for T in data.get("horizons", []) if T <= args.tmax]
        if not data["horizons"]:
            raise ConfigError(f"no horizon in the config is <= --tmax {args.tmax}")
    return ExperimentConfig.from_dict(data)


def _out_dir(args: argparse.Namespace, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output.get("dir"):
        return Path(cfg.output["dir"])
    return Path(os.environ.get("CBMS_OUT_DIR", "out")) / cfg.name


def _execute(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    print("config: " + json.dumps(cfg.to_dict(), sort_keys=True))
    result = sweep(cfg, parallelism=args.parallelism)
    paths = write_outputs(result, _out_dir(args, cfg))
    for name, p in sorted(paths.items()):
        print(f"wrote {p}")
    for fit in json.loads(paths["ratefit.json"].read_text())["fits"]:
        if "alpha_hat" in fit:
            print(f"rate {fit['algo']} / {fit['env']} / {fit['comparator']}: alpha_hat={fit['alpha_hat']:.4f} r2={fit['r2']:.4f}")
    if result.failures:
        for c in result.failures:
            print(f"cell {c['algo']}/{c['env']}/T={c['T']}/seed={c['seed']} failed: {c['error']}", file=sys.stderr)
        return 2
    return 0


def cmd_sweep(args) -> int:
    return _execute(args, load_config(args, Path(args.config)))


def cmd_run(args) -> int:
    cfg = load_config(args, Path(args.config))
    cfg.horizons = [max(cfg.horizons)]
    cfg.seeds = 1
    return _execute(args, cfg)


def cmd_audit(args) -> int:
    cfg = load_config(args, Path(args.config))
    cfg.comparators.setdefault("audit", {})
    return _execute(args, cfg)


def cmd_preset(args) -> int:
    if args.list:
        for name in PRESETS:
            print(name)
        return 0
    if not args.name:
        raise ConfigError("preset name required (see --list)")
    return _execute(args, load_config(args, preset_path(args.name)))


def cmd_validate(args) -> int:
    paths = [Path(p) for p in args.paths] or ([Path(args.config)] if args.config else [preset_path(n) for n in PRESETS])
    for p in paths:
        load_config(args, p)
        print(f"ok {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbms", description="Contextual-bandit model selection experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required)
        p.add_argument("--out", help="output directory (default: $CBMS_OUT_DIR/<name>)")
        p.add_argument("--seeds", type=int)
        p.add_argument("--tmax", type=int, help="drop horizons above this value")
        p.add_argument("--parallelism", type=int, default=None, help="worker processes (default: CPU count)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")

    p = sub.add_parser("run", help="one seed at the largest horizon")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="all horizons and seeds")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("audit", help="sweep with the PAC-Bayes audit enabled (full-information learners)")
    common(p)
    p.set_defaults(func=cmd_audit)
    p = sub.add_parser("preset", help="run a shipped experiment config")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    common(p, config_required=False)
    p.set_defaults(func=cmd_preset)
    p = sub.add_parser("validate-config", help="check configs against the schema")
    p.add_argument("paths", nargs="*")
    common(p, config_required=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
