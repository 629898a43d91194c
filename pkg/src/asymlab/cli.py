"""Command-line front end.

Exit codes: 0 when every expected verdict held, 1 when a check or
experiment reported a mismatch, 2 for usage or configuration errors.
An existing non-empty output directory is refused unless --force is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments, tensorio
from .asymmetry import (
    check_interaction_asymmetry,
    check_no_interaction,
    check_order_at_most_n,
    check_within_slot_order,
    sufficient_independence_check,
)
from .generators import GeneratorSpec
from .sprites import DataConfig


class UsageError(Exception):
    pass


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists():
        if not out.is_dir():
            raise UsageError(f"output path is not a directory: {out}")
        if any(out.iterdir()) and not force:
            raise UsageError(
                f"output directory {out} is not empty; pass --force to reuse it")
    else:
        out.mkdir(parents=True)
    return out


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"{path} is not valid JSON: {e}") from e


def _cmd_check(args) -> int:
    out = _prepare_out(args.out, args.force)
    spec_json = _load_json(args.generator)
    try:
        spec = GeneratorSpec.from_json(spec_json)
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"bad generator file: {e}") from e
    part = spec.partition
    rng = np.random.default_rng(args.seed)
    probes = rng.uniform(-0.8, 0.8, size=(args.probes, part.latent_dim))

    if args.order == 0:
        order_rep = check_no_interaction(spec, part, probes)
    else:
        order_rep = check_order_at_most_n(spec, part, args.order, probes)
    reports = {
        "cross_order": order_rep,
        "within_slot": check_within_slot_order(spec, part, args.order, probes),
        "sufficient_independence": sufficient_independence_check(
            spec, part, args.order, probes),
    }
    if args.equiv > 0:
        reports["asymmetry"] = check_interaction_asymmetry(
            spec, part, args.order, probes,
            equiv_samples=args.equiv, rng_seed=args.seed)

    passed = all(r.passed for r in reports.values())
    tensorio.save_json(out / "results.json", {
        "experiment_id": "check",
        "config": {"generator": args.generator, "order": args.order,
                   "probes": args.probes, "seed": args.seed,
                   "equiv": args.equiv},
        "passed": passed,
        "reports": {k: r.to_json() for k, r in reports.items()},
    })
    tensorio.save_csv(out / "metrics.csv",
                      ["run_id", "metric", "value", "excluded_pixels"],
                      [[k, "margin", r.margin, 0] for k, r in reports.items()]
                      + [[k, "passed", float(r.passed), 0]
                         for k, r in reports.items()])
    for k, r in reports.items():
        print(f"{k}: {'pass' if r.passed else 'FAIL'} (margin {r.margin:.3e})")
    return 0 if passed else 1


def _run_experiment(fn, config, out_path, force) -> int:
    out = _prepare_out(out_path, force)
    try:
        result = fn(config, out=out)
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad configuration: {e}") from e
    print(f"{result.experiment_id}: {'pass' if result.passed else 'FAIL'} "
          f"({result.wall_clock:.1f}s, config {result.config_hash})")
    return 0 if result.passed else 1


def _cmd_compgen(args) -> int:
    config = _load_json(args.config) if args.config else None
    return _run_experiment(experiments.exp_compgen, config, args.out, args.force)


def _cmd_train(args) -> int:
    config = _load_json(args.config) if args.config else None
    return _run_experiment(experiments.exp_train, config, args.out, args.force)


def _cmd_ablate(args) -> int:
    config = _load_json(args.config) if args.config else {}
    if args.seeds is not None:
        config["seeds"] = list(range(args.seeds))
    return _run_experiment(experiments.exp_train_ablation, config or None,
                           args.out, args.force)


def _cmd_jac_check(args) -> int:
    config = _load_json(args.config) if args.config else {}
    if args.trials is not None:
        config["trials"] = args.trials
    return _run_experiment(experiments.exp_jacobian_check, config or None,
                           args.out, args.force)


def _cmd_characterize(args) -> int:
    config = _load_json(args.config) if args.config else None
    return _run_experiment(experiments.exp_characterization, config,
                           args.out, args.force)


def _cmd_gen_data(args) -> int:
    out = _prepare_out(args.out, args.force)
    raw = _load_json(args.config) if args.config else None
    try:
        cfg = DataConfig.from_json(raw) if raw else DataConfig()
        result = experiments.exp_gen_data(cfg.to_json(), out=out)
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad configuration: {e}") from e
    print(f"gen-data: wrote {cfg.count} scenes to {out}")
    return 0 if result.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="asymlab",
        description="interaction-asymmetry verification lab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--force", action="store_true",
                        help="reuse a non-empty output directory")

    sp = sub.add_parser("check", help="certify a generator from a JSON spec")
    sp.add_argument("--generator", required=True, help="generator spec JSON")
    sp.add_argument("--order", type=int, required=True,
                    help="interaction order to certify at")
    sp.add_argument("--probes", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--equiv", type=int, default=3,
                    help="random equivalent generators to include (0 skips)")
    common(sp)
    sp.set_defaults(fn=_cmd_check)

    sp = sub.add_parser("compgen", help="band-support extrapolation contest")
    sp.add_argument("--config", help="config JSON (optional)")
    common(sp)
    sp.set_defaults(fn=_cmd_compgen)

    sp = sub.add_parser("train", help="single autoencoder training run")
    sp.add_argument("--config", help="config JSON (optional)")
    common(sp)
    sp.set_defaults(fn=_cmd_train)

    sp = sub.add_parser("ablate", help="regularizer ablation grid")
    sp.add_argument("--config", help="config JSON (optional)")
    sp.add_argument("--seeds", type=int, help="number of seeds per cell")
    common(sp)
    sp.set_defaults(fn=_cmd_ablate)

    sp = sub.add_parser("jac-check", help="decoder Jacobian verification")
    sp.add_argument("--config", help="config JSON (optional)")
    sp.add_argument("--trials", type=int, help="random instances to test")
    common(sp)
    sp.set_defaults(fn=_cmd_jac_check)

    sp = sub.add_parser("characterize", help="preset generator certification suite")
    sp.add_argument("--config", help="config JSON (optional)")
    common(sp)
    sp.set_defaults(fn=_cmd_characterize)

    sp = sub.add_parser("gen-data", help="render a sprite dataset")
    sp.add_argument("--config", help="data config JSON (optional)")
    common(sp)
    sp.set_defaults(fn=_cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
