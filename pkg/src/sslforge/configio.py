"""INI config files for runs, grids, and the synthesizer.

Plain configparser syntax. Every hyperparameter of the training
protocol is a named key whose default is the reference value
(batch 64, momentum 0.9, EMA 0.999, mu 3, lambda_u 1, tau 0.95,
alpha 0.5, K 2, T 0.5); lr and weight_decay default per method
(0.03/0.0005 for fixmatch, 0.002/0.002 otherwise) when left unset.
Anything malformed raises ConfigError, which the CLI maps to exit 2.
"""

import configparser
import os

from .augment import CANONICAL_POLICIES, AugPolicy
from .data import SynthConfig
from .errors import ConfigError, SslForgeError
from .model import ModelConfig
from .semisup import SslConfig
from .trainer import TrainConfig


def read_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return cp


def _get(cp, section, key, cast, default):
    try:
        raw = cp.get(section, key, fallback=None)
        if raw is None or raw.strip() == "":
            return default
        if cast is bool:
            return cp.getboolean(section, key)
        return cast(raw)
    except (ValueError, configparser.Error) as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e


def _int_list(raw):
    return tuple(int(v) for v in raw.replace(",", " ").split())


def parse_synth(cp):
    d = SynthConfig()  # absent keys keep the library defaults
    try:
        return SynthConfig(
            n_examples=_get(cp, "synth", "n_examples", int, d.n_examples),
            positive_fraction=_get(cp, "synth", "positive_fraction", float,
                                   d.positive_fraction),
            noise_sigma=_get(cp, "synth", "noise_sigma", float, d.noise_sigma),
            damage_min=_get(cp, "synth", "damage_min", float, d.damage_min),
            damage_max=_get(cp, "synth", "damage_max", float, d.damage_max),
            illum_max=_get(cp, "synth", "illum_max", float, d.illum_max),
            nuisance_min=_get(cp, "synth", "nuisance_min", float, d.nuisance_min),
            nuisance_max=_get(cp, "synth", "nuisance_max", float, d.nuisance_max),
            seed=_get(cp, "synth", "seed", int, d.seed),
        )
    except SslForgeError as e:
        raise ConfigError(f"[synth]: {e}") from e


def parse_model(cp):
    try:
        return ModelConfig(
            in_channels=_get(cp, "model", "in_channels", int, 6),
            block_filters=_get(cp, "model", "block_filters", _int_list,
                               (32, 64, 128, 256)),
            num_classes=_get(cp, "model", "num_classes", int, 2),
            seed=_get(cp, "model", "seed", int, 0),
        )
    except SslForgeError as e:
        raise ConfigError(f"[model]: {e}") from e


def parse_ssl(cp):
    try:
        return SslConfig(
            K=_get(cp, "ssl", "k", int, 2),
            T=_get(cp, "ssl", "t", float, 0.5),
            alpha=_get(cp, "ssl", "alpha", float, 0.5),
            tau=_get(cp, "ssl", "tau", float, 0.95),
            lambda_u=_get(cp, "ssl", "lambda_u", float, 1.0),
            mu=_get(cp, "ssl", "mu", int, 3),
        )
    except SslForgeError as e:
        raise ConfigError(f"[ssl]: {e}") from e


def parse_policy(cp):
    name = _get(cp, "augment", "policy", str, "ra-colorgeo-cutout")
    try:
        if name != "custom":
            if name not in CANONICAL_POLICIES:
                raise ConfigError(
                    f"[augment] policy: unknown name {name!r}; use one of "
                    f"{sorted(CANONICAL_POLICIES)} or 'custom'")
            base = CANONICAL_POLICIES[name]
            return AugPolicy(
                use_randaugment=base.use_randaugment,
                pools=base.pools,
                use_cutout=base.use_cutout,
                ops_per_image=_get(cp, "augment", "ops_per_image", int,
                                   base.ops_per_image),
                cutout_fraction=_get(cp, "augment", "cutout_fraction", float,
                                     base.cutout_fraction),
            )
        pools = _get(cp, "augment", "pools", str, "color,geometric")
        pools = frozenset(p.strip() for p in pools.split(",") if p.strip())
        return AugPolicy(
            use_randaugment=_get(cp, "augment", "use_randaugment", bool, True),
            pools=pools,
            use_cutout=_get(cp, "augment", "use_cutout", bool, True),
            ops_per_image=_get(cp, "augment", "ops_per_image", int, 2),
            cutout_fraction=_get(cp, "augment", "cutout_fraction", float, 0.5),
        )
    except SslForgeError as e:
        raise ConfigError(f"[augment]: {e}") from e


def parse_train(cp):
    """TrainConfig plus job-level keys (dataset path, split, out_dir)."""
    try:
        tc = TrainConfig(
            method=_get(cp, "train", "method", str, "supervised"),
            total_steps=_get(cp, "train", "total_steps", int, 10000),
            batch_size=_get(cp, "train", "batch_size", int, 64),
            lr=_get(cp, "train", "lr", float, None),
            weight_decay=_get(cp, "train", "weight_decay", float, None),
            momentum=_get(cp, "train", "momentum", float, 0.9),
            ema_decay=_get(cp, "train", "ema_decay", float, 0.999),
            ssl=parse_ssl(cp),
            aug_policy=parse_policy(cp),
            model=parse_model(cp),
            seed=_get(cp, "train", "seed", int, 0),
            supervised_mixup=_get(cp, "train", "supervised_mixup", bool, True),
            lambda_ramp_frac=_get(cp, "train", "lambda_ramp_frac", float, 0.25),
            debug_checks=_get(cp, "train", "debug_checks", bool, False),
        )
    except SslForgeError as e:
        raise ConfigError(f"[train]: {e}") from e
    raw_n = _get(cp, "train", "n_labeled", str, "100")
    job = {
        "dataset_path": _get(cp, "dataset", "path", str, None),
        # "full" trains on the whole 90% pool: the upper-bound run
        "n_labeled": None if raw_n == "full" else int(raw_n),
        "split_seed": _get(cp, "train", "split_seed", int, None),
        "test_fraction": _get(cp, "dataset", "test_fraction", float, 0.10),
        "out_dir": _get(cp, "train", "out_dir", str, None),
    }
    if job["split_seed"] is None:
        job["split_seed"] = tc.seed
    return tc, job


def parse_grid(cp):
    from .harness import GridSpec
    methods = _get(cp, "grid", "methods", str, "supervised,mixmatch,fixmatch")
    methods = tuple(m.strip() for m in methods.split(",") if m.strip())
    counts = _get(cp, "grid", "label_counts", _int_list, (10, 50, 100, 500))
    tc, job = parse_train(cp)
    try:
        return GridSpec(
            methods=methods,
            label_counts=counts,
            n_seeds=_get(cp, "grid", "n_seeds", int, 5),
            dataset_path=job["dataset_path"],
            synth=parse_synth(cp) if job["dataset_path"] is None else None,
            dataset_name=_get(cp, "grid", "dataset_name", str, "synth"),
            train_template=tc,
            lr_override=_get(cp, "train", "lr", float, None),
            wd_override=_get(cp, "train", "weight_decay", float, None),
            test_fraction=job["test_fraction"],
            workers=_get(cp, "grid", "workers", int, 1),
            include_upper_bound=_get(cp, "grid", "upper_bound", bool, True),
            ablation_n_labeled=_get(cp, "ablation", "n_labeled", int, 50),
            ablation_n_unlabeled=_get(cp, "ablation", "n_unlabeled", int, 50),
            ablation_literal_unlabeled=_get(cp, "ablation", "literal_unlabeled",
                                            bool, True),
            ablation_n_seeds=_get(cp, "ablation", "n_seeds", int, 5),
        )
    except SslForgeError as e:
        raise ConfigError(f"[grid]: {e}") from e
