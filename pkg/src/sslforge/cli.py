"""ssl-forge command line.

Subcommands: synth, train, grid, ablation, eval. Exit codes: 0 on full
success, 1 when any grid/ablation cell failed, 2 on configuration or
input-file problems.
"""

import argparse
import os
import sys

from . import configio, data, harness
from .errors import ConfigError, SslForgeError
from .model import load_checkpoint, save_checkpoint, with_params
from .trainer import evaluate, train


def _cmd_synth(args):
    cp = configio.read_config(args.config)
    cfg = configio.parse_synth(cp)
    examples = data.synth_generate(cfg)
    data.save(examples, args.out)
    n_pos = sum(ex.label for ex in examples)
    print(f"wrote {len(examples)} examples ({n_pos} damaged) to {args.out}")
    return 0


def _load_examples_for(cp, job):
    if job["dataset_path"]:
        return data.load(job["dataset_path"])
    if cp.has_section("synth"):
        return data.synth_generate(configio.parse_synth(cp))
    raise ConfigError("no [dataset] path and no [synth] section to generate from")


def _cmd_train(args):
    cp = configio.read_config(args.config)
    tc, job = configio.parse_train(cp)
    examples = _load_examples_for(cp, job)
    if job["n_labeled"] is None:
        split = data.split_full_pool(examples, job["split_seed"], job["test_fraction"])
    else:
        split = data.split(examples, data.SplitSpec(
            n_labeled=job["n_labeled"], split_seed=job["split_seed"],
            test_fraction=job["test_fraction"]))
    out_dir = job["out_dir"] or "run"
    os.makedirs(out_dir, exist_ok=True)
    result = train(tc, split, metrics_path=os.path.join(out_dir, "metrics.log"))
    save_checkpoint(os.path.join(out_dir, "checkpoint.bin"),
                    result.model, result.ema.shadow)
    print(f"{tc.method}: test accuracy {result.test_accuracy:.4f} "
          f"({len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled)")
    print(f"metrics: {os.path.join(out_dir, 'metrics.log')}")
    return 0


def _print_agg(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            print("  " + line.rstrip("\n"))


def _cmd_grid(args):
    spec = configio.parse_grid(configio.read_config(args.spec))
    results = harness.run_grid(spec, args.out_dir)
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"FAILED {r.method} n={r.n_labeled} seed={r.seed}: {r.error}",
              file=sys.stderr)
    print(f"grid: {len(results) - len(failed)}/{len(results)} cells ok")
    _print_agg(os.path.join(args.out_dir, "grid_agg.csv"))
    return 1 if failed else 0


def _cmd_ablation(args):
    spec = configio.parse_grid(configio.read_config(args.spec))
    results = harness.run_ablation(spec, args.out_dir)
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"FAILED {r.method} seed={r.seed}: {r.error}", file=sys.stderr)
    print(f"ablation: {len(results) - len(failed)}/{len(results)} cells ok")
    _print_agg(os.path.join(args.out_dir, "ablation_agg.csv"))
    return 1 if failed else 0


def _cmd_eval(args):
    model, ema = load_checkpoint(args.checkpoint)
    examples = [ex for ex in data.load(args.dataset) if ex.label is not None]
    if not examples:
        raise ConfigError(f"{args.dataset} holds no labeled examples to score")
    if ema:
        model = with_params(model, ema)
    acc = evaluate(model, examples)
    print(f"accuracy {acc:.4f} over {len(examples)} labeled examples"
          + (" (EMA weights)" if ema else ""))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ssl-forge",
        description="Semi-supervised damage classification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("grid", help="run the method x label-count x seed grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_grid)

    p = sub.add_parser("ablation", help="run the 7-policy augmentation ablation")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_ablation)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=_cmd_eval)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SslForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
