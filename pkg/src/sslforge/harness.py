"""Experiment orchestration: the accuracy grid, the augmentation
ablation, and CSV reporting.

Every cell is fully determined by its own (method, n_labeled, seed)
key: split_seed = seed = run seed, so execution order and worker count
cannot change any result. Cells run in parallel processes when
spec.workers > 1; each worker re-reads the dataset once and pins its
kernel threads to 1 to avoid oversubscription.
"""

import math
import os
import time
from dataclasses import dataclass, field, replace

from . import data as D
from .augment import CANONICAL_POLICIES
from .errors import ConfigError
from .model import save_checkpoint
from .trainer import METHODS, TrainConfig, train

ABLATION_ORDER = ("cutout", "ra-color", "ra-color-cutout", "ra-geo",
                  "ra-geo-cutout", "ra-colorgeo", "ra-colorgeo-cutout")

GRID_HEADER = "dataset,method,n_labeled,seed,accuracy,wall_time_s"
GRID_AGG_HEADER = "dataset,method,n_labeled,mean,std"
ABLATION_HEADER = "dataset,policy,seed,accuracy,wall_time_s,fingerprint"
ABLATION_AGG_HEADER = "dataset,policy,mean,std"


@dataclass
class GridSpec:
    methods: tuple = METHODS
    label_counts: tuple = (10, 50, 100, 500)
    n_seeds: int = 5
    dataset_path: str = None
    synth: D.SynthConfig = None
    dataset_name: str = "synth"
    train_template: TrainConfig = field(
        default_factory=lambda: TrainConfig(method="supervised", total_steps=10000))
    # None = let each cell pick the per-method default rate
    lr_override: float = None
    wd_override: float = None
    test_fraction: float = 0.10
    workers: int = 1
    include_upper_bound: bool = True
    ablation_n_labeled: int = 50
    ablation_n_unlabeled: int = 50
    ablation_literal_unlabeled: bool = True
    ablation_n_seeds: int = 5

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if self.n_seeds < 1 or self.ablation_n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if list(self.label_counts) != sorted(self.label_counts):
            raise ConfigError(f"label_counts must be ascending, got {self.label_counts}")
        if self.dataset_path is None and self.synth is None:
            raise ConfigError("grid needs either a dataset path or a synth section")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class RunResult:
    dataset: str
    method: str
    n_labeled: int
    seed: int
    accuracy: float = math.nan
    wall_time_s: float = 0.0
    final_ls: float = math.nan
    final_lu: float = math.nan
    fingerprint: str = ""
    ok: bool = True
    error: str = ""


_DATASET_CACHE = {}


def _load_examples(spec):
    if spec.dataset_path is not None:
        key = ("path", spec.dataset_path)
    else:
        s = spec.synth
        key = ("synth", s.n_examples, s.positive_fraction, s.noise_sigma,
               s.damage_min, s.damage_max, s.illum_max, s.seed)
    if key not in _DATASET_CACHE:
        _DATASET_CACHE.clear()
        if spec.dataset_path is not None:
            _DATASET_CACHE[key] = D.load(spec.dataset_path)
        else:
            _DATASET_CACHE[key] = D.synth_generate(spec.synth)
    return _DATASET_CACHE[key]


def _run_cell(spec, cell, out_dir):
    kind, method, n_labeled, seed, policy_name = cell
    examples = _load_examples(spec)
    t0 = time.perf_counter()
    if kind == "upper":
        split = D.split_full_pool(examples, seed, spec.test_fraction)
        n_labeled = len(split.labeled)
        run_name = f"supervised-full_s{seed}"
        record_method = "supervised-full"
    else:
        split = D.split(examples, D.SplitSpec(
            n_labeled=n_labeled, split_seed=seed, test_fraction=spec.test_fraction))
        record_method = method
        run_name = f"{method}_n{n_labeled}_s{seed}"

    tc = replace(spec.train_template, method=method, seed=seed,
                 lr=spec.lr_override, weight_decay=spec.wd_override)
    fingerprint = ""
    if kind == "ablation":
        policy = CANONICAL_POLICIES[policy_name]
        tc = replace(tc, aug_policy=policy)
        fingerprint = policy.fingerprint()
        record_method = policy_name
        run_name = f"ablation_{policy_name}_s{seed}"
        if spec.ablation_literal_unlabeled:
            split = D.SplitDataset(labeled=split.labeled,
                                   unlabeled=split.unlabeled[:spec.ablation_n_unlabeled],
                                   test=split.test)

    run_dir = os.path.join(out_dir, "runs", run_name)
    os.makedirs(run_dir, exist_ok=True)
    result = train(tc, split, metrics_path=os.path.join(run_dir, "metrics.log"))
    save_checkpoint(os.path.join(run_dir, "checkpoint.bin"),
                    result.model, result.ema.shadow)

    final_ls = final_lu = math.nan
    if result.metrics_lines:
        parts = result.metrics_lines[-1].split(",")
        final_ls, final_lu = float(parts[1]), float(parts[2])
    return RunResult(dataset=spec.dataset_name, method=record_method,
                     n_labeled=n_labeled, seed=seed,
                     accuracy=result.test_accuracy,
                     wall_time_s=time.perf_counter() - t0,
                     final_ls=final_ls, final_lu=final_lu,
                     fingerprint=fingerprint)


def _run_cell_safe(args):
    spec, cell, out_dir = args
    try:
        return _run_cell(spec, cell, out_dir)
    except Exception as e:
        kind, method, n_labeled, seed, policy_name = cell
        return RunResult(dataset=spec.dataset_name,
                         method=policy_name if kind == "ablation" else method,
                         n_labeled=n_labeled, seed=seed,
                         ok=False, error=f"{type(e).__name__}: {e}")


def _worker_init():
    try:
        import numba
        numba.set_num_threads(1)
    except ImportError:
        pass


def _execute(spec, cells, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(spec, cell, out_dir) for cell in cells]
    if spec.workers > 1:
        import multiprocessing as mp
        ctx = mp.get_context("spawn")
        with ctx.Pool(spec.workers, initializer=_worker_init) as pool:
            return pool.map(_run_cell_safe, jobs)
    return [_run_cell_safe(j) for j in jobs]


def run_grid(spec, out_dir):
    """All (method, n_labeled, seed) cells plus the full-pool upper bound."""
    cells = [("grid", method, n, seed, "")
             for method in spec.methods
             for n in spec.label_counts
             for seed in range(spec.n_seeds)]
    if spec.include_upper_bound:
        cells.append(("upper", "supervised", -1, 0, ""))
    results = _execute(spec, cells, out_dir)
    report(results, out_dir)
    return results


def run_ablation(spec, out_dir):
    """FixMatch under each of the 7 canonical augmentation policies."""
    cells = [("ablation", "fixmatch", spec.ablation_n_labeled, seed, name)
             for name in ABLATION_ORDER
             for seed in range(spec.ablation_n_seeds)]
    results = _execute(spec, cells, out_dir)
    _write_csv(os.path.join(out_dir, "ablation.csv"), ABLATION_HEADER, [
        f"{r.dataset},{r.method},{r.seed},{_fmt_acc(r)},{r.wall_time_s:.2f},{r.fingerprint}"
        for r in results])
    _write_csv(os.path.join(out_dir, "ablation_agg.csv"), ABLATION_AGG_HEADER, [
        f"{dataset},{policy},{mean:.4f},{std:.4f}"
        for (dataset, policy), (mean, std) in _aggregate(results, key=lambda r: (r.dataset, r.method))])
    return results


def _fmt_acc(r):
    return f"{r.accuracy:.4f}" if r.ok else "nan"


def _mean_std(values):
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def _aggregate(results, key):
    order = []
    groups = {}
    for r in results:
        if not r.ok:
            continue
        k = key(r)
        if k not in groups:
            groups[k] = []
            order.append(k)
        groups[k].append(r.accuracy)
    return [(k, _mean_std(groups[k])) for k in order]


def _write_csv(path, header, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")


def report(results, out_dir):
    """grid.csv (one row per run) and grid_agg.csv (mean, sample std)."""
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "grid.csv"), GRID_HEADER, [
        f"{r.dataset},{r.method},{r.n_labeled},{r.seed},{_fmt_acc(r)},{r.wall_time_s:.2f}"
        for r in results])
    agg = _aggregate(results, key=lambda r: (r.dataset, r.method, r.n_labeled))
    _write_csv(os.path.join(out_dir, "grid_agg.csv"), GRID_AGG_HEADER, [
        f"{dataset},{method},{n},{mean:.4f},{std:.4f}"
        for (dataset, method, n), (mean, std) in agg])
