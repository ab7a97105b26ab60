"""fedsim command line: run a config, run a preset, or sweep a config directory."""
from __future__ import annotations

import argparse
import dataclasses
import glob
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor

from .config import (
    ConfigError,
    parse_config,
    preset,
    preset_names,
    serialize_config,
    to_full_mnist,
    to_synthetic,
)
from .runner import run_experiment

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _apply_overrides(cfg, args):
    if getattr(args, "synthetic", False):
        cfg = to_synthetic(cfg)
    if getattr(args, "full_mnist", False):
        cfg = to_full_mnist(cfg)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, federation=dataclasses.replace(cfg.federation, seed=args.seed)
        )
    return cfg


def _run_one(cfg, out_dir, workers):
    csv_path, svg_path = run_experiment(cfg, out_dir, workers=workers)
    print(f"{cfg.name}: wrote {csv_path} and {svg_path}")


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    cfg = _apply_overrides(cfg, args)
    _run_one(cfg, args.out, args.workers)
    return EXIT_OK


def cmd_preset(args) -> int:
    if args.list:
        for name in preset_names():
            print(name)
        return EXIT_OK
    if not args.name:
        print("preset: a NAME is required (or --list)", file=sys.stderr)
        return EXIT_CONFIG
    cfg = preset(args.name, synthetic=args.synthetic)
    cfg = _apply_overrides(cfg, args)
    if args.dump_config:
        with open(args.dump_config, "w", encoding="utf-8") as f:
            f.write(serialize_config(cfg))
        print(f"wrote {args.dump_config}")
        return EXIT_OK
    _run_one(cfg, args.out, args.workers)
    return EXIT_OK


def cmd_sweep(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.dir, "*.toml")))
    if not paths:
        print(f"sweep: no .toml configs under {args.dir}", file=sys.stderr)
        return EXIT_CONFIG
    configs = []
    failed = False
    for path in paths:
        try:
            configs.append((path, _apply_overrides(parse_config(path), args)))
        except ConfigError as exc:
            failed = True
            print(f"sweep: invalid config {path}:\n{exc}", file=sys.stderr)

    def one(item):
        path, cfg = item
        stem = os.path.splitext(os.path.basename(path))[0]
        try:
            _run_one(cfg, os.path.join(args.out, stem), args.workers)
            return None
        except Exception as exc:  # noqa: BLE001 - sweep reports and keeps going
            return f"sweep: run failed for {path}: {type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        for error in pool.map(one, configs):
            if error is not None:
                failed = True
                print(error, file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Deterministic federated-learning robustness testbed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--full-mnist", action="store_true", dest="full_mnist",
                       help="use the full MNIST dataset instead of the desk-scale subset")
        p.add_argument("--synthetic", action="store_true",
                       help="swap the dataset for synthetic blobs (no MNIST files needed)")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel client execution within a round")

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True)
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_preset = sub.add_parser("preset", help="run a named figure preset")
    p_preset.add_argument("name", nargs="?", default=None)
    p_preset.add_argument("--list", action="store_true", help="list preset names")
    p_preset.add_argument("--dump-config", default=None,
                          help="write the preset's config TOML and exit")
    common(p_preset)
    p_preset.set_defaults(func=cmd_preset)

    p_sweep = sub.add_parser("sweep", help="run every config in a directory")
    p_sweep.add_argument("--dir", required=True)
    p_sweep.add_argument("--jobs", type=int, default=1, help="concurrent experiments")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:  # noqa: BLE001 - partial CSV is already flushed
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
