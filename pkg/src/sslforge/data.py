"""Dataset container, binary format, splits, and the synthetic generator.

Examples are 6x64x64 float images in [0,1]: channels 0-2 pre-disaster,
3-5 post-disaster. On disk each pixel is one unsigned byte; in memory
values live on the u8/255 grid until augmentation touches them, so a
load/save round trip is lossless.

File layout (no padding, no compression):

    magic   8 bytes ASCII  "SSLDMG01"
    count   u64 little-endian record count
    record  label byte (0, 1, or 255 = unlabeled)
            6*64*64 = 24576 bytes, channel-major then row-major
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FormatError, SplitError
from .rng import RngStream

MAGIC = b"SSLDMG01"
IMAGE_SHAPE = (6, 64, 64)
_REC_PIXELS = 6 * 64 * 64
UNLABELED_BYTE = 255


@dataclass
class Example:
    image: np.ndarray
    label: int = None


@dataclass
class SplitSpec:
    n_labeled: int
    split_seed: int
    test_fraction: float = 0.10

    def __post_init__(self):
        if self.n_labeled <= 0 or self.n_labeled % 2:
            raise SplitError(f"n_labeled must be a positive even count, got {self.n_labeled}")
        if not 0 < self.test_fraction < 1:
            raise SplitError(f"test_fraction must be in (0,1), got {self.test_fraction}")


@dataclass
class SplitDataset:
    labeled: list
    unlabeled: list
    test: list


def save(examples, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(examples)))
        for ex in examples:
            label = UNLABELED_BYTE if ex.label is None else int(ex.label)
            fh.write(struct.pack("<B", label))
            q = np.rint(np.asarray(ex.image) * 255.0)
            fh.write(np.clip(q, 0, 255).astype(np.uint8).tobytes())


def load(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte 0, expected {MAGIC!r}")
        raw = fh.read(8)
        if len(raw) != 8:
            raise FormatError(f"truncated record count at byte {8 + len(raw)}")
        (count,) = struct.unpack("<Q", raw)
        examples = []
        for i in range(count):
            offset = fh.tell()
            rec = fh.read(1 + _REC_PIXELS)
            if len(rec) != 1 + _REC_PIXELS:
                raise FormatError(
                    f"truncated record {i + 1} of {count} at byte {offset + len(rec)}")
            label = rec[0]
            if label not in (0, 1, UNLABELED_BYTE):
                raise FormatError(f"record {i + 1}: invalid label byte {label} at byte {offset}")
            img = np.frombuffer(rec, dtype=np.uint8, offset=1).reshape(IMAGE_SHAPE)
            examples.append(Example(
                image=(img.astype(np.float32) / 255.0),
                label=None if label == UNLABELED_BYTE else int(label)))
        return examples


def split(examples, spec):
    """90/10 train/test, then a class-balanced labeled draw from the pool."""
    n = len(examples)
    if any(ex.label is None for ex in examples):
        raise SplitError("split requires a fully labeled dataset")
    perm = RngStream(spec.split_seed).derive("split").permutation(n)
    n_test = int(n * spec.test_fraction)
    pool_idx = perm[:n - n_test]
    test = [examples[i] for i in perm[n - n_test:]]

    per_class = spec.n_labeled // 2
    chosen = set()
    rng = RngStream(spec.split_seed)
    for cls in (0, 1):
        members = [i for i in pool_idx if examples[i].label == cls]
        if len(members) < per_class:
            raise SplitError(
                f"class {cls} has {len(members)} pool members, need {per_class}")
        pick = rng.derive("labeled-draw", cls).choice_without_replacement(
            len(members), per_class)
        chosen.update(members[j] for j in pick)

    labeled = [examples[i] for i in pool_idx if i in chosen]
    unlabeled = [Example(image=examples[i].image) for i in pool_idx if i not in chosen]
    return SplitDataset(labeled=labeled, unlabeled=unlabeled, test=test)


def split_full_pool(examples, split_seed, test_fraction=0.10):
    """Same 90/10 shuffle, entire train pool labeled: the upper-bound run."""
    n = len(examples)
    if any(ex.label is None for ex in examples):
        raise SplitError("split requires a fully labeled dataset")
    perm = RngStream(split_seed).derive("split").permutation(n)
    n_test = int(n * test_fraction)
    labeled = [examples[i] for i in perm[:n - n_test]]
    test = [examples[i] for i in perm[n - n_test:]]
    return SplitDataset(labeled=labeled, unlabeled=[], test=test)


# ---------------------------------------------------------------- synth

@dataclass
class SynthConfig:
    """Generative rule parameters for the stand-in paired dataset.

    Each example is a textured background with one bright building.
    The post image repeats the pre scene through an illumination shift
    and sensor noise; damaged examples additionally darken and scramble
    the building footprint by a per-example intensity drawn from
    [damage_min, damage_max]. Every scene, either class, also gets one
    or two nuisance changes (rectangles outside the footprint whose
    brightness shifts between frames), so "something changed" is never
    diagnostic by itself. The class signal therefore lives in what
    happened to the building, not in either frame alone and not in the
    mere presence of a pre/post difference.
    """
    n_examples: int = 4444
    positive_fraction: float = 0.5
    noise_sigma: float = 0.025
    damage_min: float = 0.35
    damage_max: float = 0.9
    illum_max: float = 0.09
    nuisance_min: float = 0.1
    nuisance_max: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.positive_fraction < 1:
            raise ArgumentError(
                f"positive_fraction must be in (0,1), got {self.positive_fraction}")
        if self.damage_min > self.damage_max:
            raise ArgumentError("damage_min must not exceed damage_max")
        if self.nuisance_min > self.nuisance_max:
            raise ArgumentError("nuisance_min must not exceed nuisance_max")


_YY, _XX = np.meshgrid(np.arange(64, dtype=np.float64),
                       np.arange(64, dtype=np.float64), indexing="ij")


def _rect_mask(cy, cx, bh, bw, ang):
    cs, sn = np.cos(ang), np.sin(ang)
    u = cs * (_YY - cy) + sn * (_XX - cx)
    v = -sn * (_YY - cy) + cs * (_XX - cx)
    return (np.abs(u) <= bh / 2) & (np.abs(v) <= bw / 2)


def _render_example(cfg, rng, label):
    r_bg = rng.derive("bg")
    r_bld = rng.derive("building")
    r_noise = rng.derive("noise")
    r_damage = rng.derive("damage")

    base = r_bg.uniform(0.15, 0.5)
    gy, gx = r_bg.uniform(-0.15, 0.15), r_bg.uniform(-0.15, 0.15)
    bg = (base + gy * (_YY / 64 - 0.5) + gx * (_XX / 64 - 0.5)
          + r_bg.normal((64, 64)) * 0.02)
    for _ in range(2):
        amp = r_bg.uniform(0.02, 0.07)
        fy, fx = r_bg.uniform(2.0, 9.0), r_bg.uniform(2.0, 9.0)
        ph = r_bg.uniform(0.0, 2 * np.pi)
        bg = bg + amp * np.sin(2 * np.pi * (fy * _YY + fx * _XX) / 64 + ph)

    # intact distractor buildings, then the building of interest on top
    scene = bg
    for _ in range(r_bld.integers(1, 4)):
        mask = _rect_mask(r_bld.uniform(10, 54), r_bld.uniform(10, 54),
                          r_bld.uniform(8, 20), r_bld.uniform(8, 20),
                          r_bld.uniform(0.0, np.pi))
        level = r_bld.uniform(0.5, 0.95)
        scene = np.where(mask, level + r_bld.normal((64, 64)) * 0.04, scene)

    cy, cx = r_bld.uniform(20, 44), r_bld.uniform(20, 44)
    footprint = _rect_mask(cy, cx, r_bld.uniform(14, 32), r_bld.uniform(14, 32),
                           r_bld.uniform(0.0, np.pi))
    brightness = r_bld.uniform(0.55, 0.95)
    tex = r_bld.normal((64, 64)) * r_bld.uniform(0.02, 0.08)
    pre = np.where(footprint, brightness + tex, scene)

    post = pre.copy()
    if label == 1:
        t = r_damage.uniform(cfg.damage_min, cfg.damage_max)
        vals = post[footprint]
        scrambled = vals[r_damage.permutation(vals.size)]
        post[footprint] = ((1 - t) * vals + t * scrambled) * (1.0 - 0.5 * t)

    # label-independent scene changes: brightness of 1-2 rectangles
    # shifts between frames, always clear of the building footprint
    r_change = rng.derive("change")
    for _ in range(r_change.integers(1, 3)):
        region = _rect_mask(r_change.uniform(10, 54), r_change.uniform(10, 54),
                            r_change.uniform(8, 22), r_change.uniform(8, 22),
                            r_change.uniform(0.0, np.pi)) & ~footprint
        delta = r_change.uniform(cfg.nuisance_min, cfg.nuisance_max)
        post[region] += delta if r_change.uniform() < 0.5 else -delta

    shift = r_noise.uniform(-cfg.illum_max, cfg.illum_max)
    post = post + shift + r_noise.normal((64, 64)) * cfg.noise_sigma

    img = np.empty((6, 64, 64), dtype=np.float64)
    for c in range(3):
        off = r_bg.uniform(-0.03, 0.03)
        img[c] = pre + off
        img[3 + c] = post + off
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return u8.astype(np.float32) / 255.0, footprint


def synth_generate(cfg, return_footprints=False):
    """Procedural paired dataset; same config and seed is byte-stable."""
    root = RngStream(cfg.seed)
    examples = []
    footprints = []
    for i in range(cfg.n_examples):
        rng = root.derive("synth", i)
        label = 1 if rng.derive("label").uniform() < cfg.positive_fraction else 0
        image, fp = _render_example(cfg, rng, label)
        examples.append(Example(image=image, label=label))
        if return_footprints:
            footprints.append(fp)
    if return_footprints:
        return examples, footprints
    return examples
