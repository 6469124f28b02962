"""Weak and strong augmentation for paired 6-channel imagery.

Images are float arrays in [0,1], channels 0-2 pre-disaster and 3-5
post-disaster. Geometric transforms always hit all six channels with the
same parameters so the halves stay aligned; color transforms reuse the
sampled parameters on each 3-channel half.

Samplers and appliers are split: sample_* consumes an RngStream and
returns a plain parameter record, apply_* is deterministic. Tests force
edge cases by constructing parameter records directly.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ArgumentError, PolicyError

COLOR_POOL = ("brightness", "contrast", "saturation", "solarize",
              "posterize", "equalize", "identity")
GEO_POOL = ("rotate", "shear", "translate", "scale", "flip")

# documented magnitude ranges, sampled uniformly
ENHANCE_RANGE = (0.2, 1.8)      # brightness / contrast / saturation factor
ROTATE_MAX_DEG = 30.0
SHEAR_MAX = 0.3
TRANSLATE_MAX = 0.3             # fraction of side length
SCALE_RANGE = (0.7, 1.3)
POSTERIZE_BITS = (1, 4)         # inclusive


@dataclass(frozen=True)
class AugPolicy:
    use_randaugment: bool = True
    pools: frozenset = frozenset(("color", "geometric"))
    use_cutout: bool = True
    ops_per_image: int = 2
    cutout_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "pools", frozenset(self.pools))
        bad = self.pools - {"color", "geometric"}
        if bad:
            raise PolicyError(f"unknown transform pools {sorted(bad)}")
        if self.use_randaugment and not self.pools:
            raise PolicyError("RandAugment enabled with an empty transform pool")
        if self.ops_per_image < 1:
            raise PolicyError("ops_per_image must be >= 1")
        if not 0 < self.cutout_fraction <= 1:
            raise PolicyError(f"cutout_fraction must be in (0,1], got {self.cutout_fraction}")

    def op_names(self):
        names = ()
        if "color" in self.pools:
            names += COLOR_POOL
        if "geometric" in self.pools:
            names += GEO_POOL
        return names

    def fingerprint(self):
        ra = "+".join(sorted(self.pools)) if self.use_randaugment else "off"
        co = f"{self.cutout_fraction:g}" if self.use_cutout else "off"
        return f"ra={ra};ops={self.ops_per_image};cutout={co}"


CANONICAL_POLICIES = {
    "cutout": AugPolicy(use_randaugment=False, pools=frozenset(), use_cutout=True),
    "ra-color": AugPolicy(pools=frozenset(("color",)), use_cutout=False),
    "ra-color-cutout": AugPolicy(pools=frozenset(("color",))),
    "ra-geo": AugPolicy(pools=frozenset(("geometric",)), use_cutout=False),
    "ra-geo-cutout": AugPolicy(pools=frozenset(("geometric",))),
    "ra-colorgeo": AugPolicy(use_cutout=False),
    "ra-colorgeo-cutout": AugPolicy(),
}


# ---------------------------------------------------------------- weak

@dataclass(frozen=True)
class WeakParams:
    flip: bool = False
    rot_quarters: int = 0
    shift: tuple = (0, 0)       # (dy, dx), positive moves content down/right


def sample_weak(rng):
    return WeakParams(
        flip=bool(rng.integers(0, 2)),
        rot_quarters=int(rng.integers(0, 4)),
        shift=(int(rng.integers(-4, 5)), int(rng.integers(-4, 5))),
    )


def _shift2d(img, dy, dx):
    if dy == 0 and dx == 0:
        return img
    out = np.zeros_like(img)
    h, w = img.shape[1], img.shape[2]
    ys = slice(max(0, dy), h + min(0, dy))
    xs = slice(max(0, dx), w + min(0, dx))
    yr = slice(max(0, -dy), h + min(0, -dy))
    xr = slice(max(0, -dx), w + min(0, -dx))
    out[:, ys, xs] = img[:, yr, xr]
    return out


def apply_weak(img, p):
    out = img
    if p.flip:
        out = out[:, :, ::-1]
    if p.rot_quarters % 4:
        out = np.rot90(out, k=p.rot_quarters % 4, axes=(1, 2))
    out = _shift2d(out, p.shift[0], p.shift[1])
    return np.ascontiguousarray(out)


def weak_augment(img, rng):
    """Random flip, quarter-turn rotation, and up-to-4px shift."""
    return apply_weak(img, sample_weak(rng))


# --------------------------------------------------------------- color

def _per_half(img, fn):
    out = np.empty_like(img)
    out[:3] = fn(img[:3])
    out[3:] = fn(img[3:])
    return out


def _clip01(a):
    return np.clip(a, 0.0, 1.0)


def _apply_color(img, name, value):
    if name == "identity":
        return img.copy()
    if name == "brightness":
        return _clip01(img * value)
    if name == "contrast":
        return _per_half(img, lambda h: _clip01(h.mean() + value * (h - h.mean())))
    if name == "saturation":
        def desat(h):
            gray = h.mean(axis=0, keepdims=True)
            return _clip01(gray + value * (h - gray))
        return _per_half(img, desat)
    if name == "solarize":
        return np.where(img < value, img, 1.0 - img)
    if name == "posterize":
        levels = 1 << int(value)
        q = np.minimum(np.floor(img * levels), levels - 1)
        return (q / levels).astype(img.dtype)
    if name == "equalize":
        return _per_half(img, lambda h: np.stack([_equalize_channel(c) for c in h]))
    raise ArgumentError(f"unknown color transform {name!r}")


def _equalize_channel(ch):
    idx = np.clip(np.rint(ch * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(idx.ravel(), minlength=256)
    cdf = hist.cumsum()
    lo = cdf[hist.nonzero()[0][0]]
    if cdf[-1] == lo:
        return ch.copy()
    lut = ((cdf - lo) / (cdf[-1] - lo)).astype(ch.dtype)
    return lut[idx]


# ----------------------------------------------------------- geometric

_GRID_CACHE = {}


def _grid(h, w):
    if (h, w) not in _GRID_CACHE:
        _GRID_CACHE[(h, w)] = np.meshgrid(
            np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
            indexing="ij")
    return _GRID_CACHE[(h, w)]


def _affine_nn(img, mat):
    """Inverse-map nearest-neighbor resample; out-of-bounds reads as 0."""
    h, w = img.shape[1], img.shape[2]
    yy, xx = _grid(h, w)
    sy = mat[0][0] * yy + mat[0][1] * xx + mat[0][2]
    sx = mat[1][0] * yy + mat[1][1] * xx + mat[1][2]
    iy = np.rint(sy).astype(np.int64)
    ix = np.rint(sx).astype(np.int64)
    valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    out = img[:, np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
    out[:, ~valid] = 0.0
    return out


def _apply_geo(img, name, value):
    h, w = img.shape[1], img.shape[2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    if name == "rotate":
        t = np.deg2rad(value)
        c, s = np.cos(t), np.sin(t)
        mat = ((c, -s, cy - c * cy + s * cx), (s, c, cx - s * cy - c * cx))
    elif name == "shear":
        mat = ((1.0, 0.0, 0.0), (-value, 1.0, value * cy))
    elif name == "translate":
        dy, dx = value
        mat = ((1.0, 0.0, -dy * h), (0.0, 1.0, -dx * w))
    elif name == "scale":
        f = 1.0 / value
        mat = ((f, 0.0, cy - f * cy), (0.0, f, cx - f * cx))
    elif name == "flip":
        mat = ((1.0, 0.0, 0.0), (0.0, -1.0, w - 1.0))
    else:
        raise ArgumentError(f"unknown geometric transform {name!r}")
    return _affine_nn(img, mat)


# -------------------------------------------------------------- strong

@dataclass(frozen=True)
class StrongParams:
    ops: tuple = ()             # (name, value) applied in order
    cutout_center: tuple = None


def _sample_magnitude(name, rng):
    if name in ("brightness", "contrast", "saturation"):
        return float(rng.uniform(*ENHANCE_RANGE))
    if name == "solarize":
        return float(rng.uniform(0.0, 1.0))
    if name == "posterize":
        return int(rng.integers(POSTERIZE_BITS[0], POSTERIZE_BITS[1] + 1))
    if name == "rotate":
        return float(rng.uniform(-ROTATE_MAX_DEG, ROTATE_MAX_DEG))
    if name == "shear":
        return float(rng.uniform(-SHEAR_MAX, SHEAR_MAX))
    if name == "translate":
        return (float(rng.uniform(-TRANSLATE_MAX, TRANSLATE_MAX)),
                float(rng.uniform(-TRANSLATE_MAX, TRANSLATE_MAX)))
    if name == "scale":
        return float(rng.uniform(*SCALE_RANGE))
    return None                 # equalize / identity / flip take no magnitude


def sample_strong(policy, rng):
    ops = ()
    if policy.use_randaugment:
        pool = policy.op_names()
        if not pool:
            raise PolicyError("RandAugment enabled with an empty transform pool")
        for _ in range(policy.ops_per_image):
            name = pool[int(rng.integers(0, len(pool)))]
            ops += ((name, _sample_magnitude(name, rng)),)
    center = None
    if policy.use_cutout:
        center = (int(rng.integers(0, 64)), int(rng.integers(0, 64)))
    return StrongParams(ops=ops, cutout_center=center)


def apply_strong(img, params, policy):
    out = img.copy()
    for name, value in params.ops:
        if name in COLOR_POOL:
            out = _apply_color(out, name, value)
        else:
            out = _apply_geo(out, name, value)
    if params.cutout_center is not None:
        out = apply_cutout(out, params.cutout_center, policy.cutout_fraction)
    return np.ascontiguousarray(out)


def strong_augment(img, policy, rng):
    """RandAugment chain from the enabled pools, then optional cutout."""
    return apply_strong(img, sample_strong(policy, rng), policy)


# -------------------------------------------------------------- cutout

def sample_cutout_center(rng, side=64):
    return (int(rng.integers(0, side)), int(rng.integers(0, side)))


def apply_cutout(img, center, fraction):
    if not 0 < fraction <= 1:
        raise ArgumentError(f"cutout fraction must be in (0,1], got {fraction}")
    h, w = img.shape[1], img.shape[2]
    side = int(round(fraction * w))
    if side == 0:
        return img.copy()
    cy, cx = center
    y0 = cy - side // 2
    x0 = cx - side // 2
    out = img.copy()
    out[:, max(0, y0):min(h, y0 + side), max(0, x0):min(w, x0 + side)] = 0.5
    return out


def cutout(img, rng, fraction=0.5):
    """Gray out one random square patch, same location on both halves."""
    return apply_cutout(img, sample_cutout_center(rng, img.shape[2]), fraction)


# --------------------------------------------------------------- mixup

def sample_mixup_lam(rng, alpha):
    """Beta(alpha, alpha) draw folded so the first argument dominates."""
    if alpha <= 0:
        raise ArgumentError(f"mixup alpha must be positive, got {alpha}")
    lam = float(rng.beta(alpha, alpha))
    return max(lam, 1.0 - lam)


def apply_mixup(a_img, a_label, b_img, b_label, lam):
    img = lam * a_img + (1.0 - lam) * b_img
    label = lam * a_label + (1.0 - lam) * b_label
    return img.astype(a_img.dtype, copy=False), label


def mixup(a, b, alpha, rng):
    """Convex combination of (image, distribution) pairs, a-dominant."""
    lam = sample_mixup_lam(rng, alpha)
    return apply_mixup(a[0], a[1], b[0], b[1], lam)
