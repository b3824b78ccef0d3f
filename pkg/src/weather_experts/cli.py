"""Command-line entry point: run, sweep, eval, verify, dump-samples.

Exit codes: 0 on success, 2 for configuration errors, 3 when a run aborts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, verify_checkpoint
from .harness import SWEEP_AXES, ConfigError, RunConfig, run_ablation_sweep, run_continual
from .library import CapacityError
from .synth import Family, dump_samples
from .tensor import NonFiniteError

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.steps is not None:
        changes["steps_per_task"] = args.steps
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("an output directory is required (--out or output_dir in the config)")
    return Path(out)


def cmd_run(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    run = run_continual(cfg, out)
    rows = run.task_rows()
    return {"out": str(out), "tasks": [{k: r[k] for k in ("task", "family", "input_psnr", "end_psnr")}
                                       for r in rows]}


def cmd_sweep(args) -> dict:
    cfg = _config(args)
    path, rows = run_ablation_sweep(cfg, args.axis, _out_dir(args, cfg))
    return {"csv": str(path), "rows": len(rows)}


def cmd_eval(args) -> dict:
    run = load_checkpoint(args.checkpoint)
    ids = [t.task_id for t in run.tasks] if args.task is None else [args.task]
    results = []
    for tid in ids:
        if not 0 <= tid < len(run.tasks):
            raise ConfigError(f"checkpoint has no task {tid} (it holds {len(run.tasks)})")
        task = run.tasks[tid]
        p, s, ip, isim = run.evaluate(task, run._val_indices(task.episode))
        results.append({"task": tid, "family": task.family, "psnr": p, "ssim": s,
                        "input_psnr": ip, "input_ssim": isim})
    return {"results": results}


def cmd_verify(args) -> dict:
    return verify_checkpoint(args.checkpoint)


def cmd_dump(args) -> dict:
    if args.n <= 0:
        raise ConfigError("--n must be positive")
    return {"manifest": str(dump_samples(args.family, args.n, args.out, seed=args.seed or 0, size=args.size))}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="weather-experts", description="Continual multi-weather restoration at toy scale.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(sp):
        sp.add_argument("--config", help="JSON file with RunConfig fields")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the initialisation seed")
        sp.add_argument("--steps", type=int, help="override steps_per_task")

    sp = sub.add_parser("run", help="train over a task sequence")
    run_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run one ablation axis")
    run_flags(sp)
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eval", help="evaluate tasks stored in a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--task", type=int, help="task id (default: all)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("verify", help="reload a checkpoint and check it bit for bit")
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("dump-samples", help="write synthetic pairs as PPM files")
    sp.add_argument("--family", required=True, choices=[f.value for f in Family])
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--out", default="samples")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=32)
    sp.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, CapacityError, NonFiniteError, RuntimeError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps(result, indent=1, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
