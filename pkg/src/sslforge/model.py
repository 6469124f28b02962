"""The damage classifier: a small Wide-ResNet variant.

Stem conv, four pre-activation residual blocks (blocks 2-4 downsample by
stride 2), then BN -> ReLU -> global average pool -> dense logits over
{undamaged, damaged}. A 64x64 input reaches the pool at 8x8.

Checkpoints are a flat container of named float32 arrays plus the model
config; the exact byte layout is documented in the README and kept
stable.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ArgumentError, FormatError, ShapeError
from .rng import RngStream

CHECKPOINT_MAGIC = b"SSLCKPT1"


@dataclass
class ModelConfig:
    in_channels: int = 6
    block_filters: tuple = (32, 64, 128, 256)
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        self.block_filters = tuple(int(f) for f in self.block_filters)
        if len(self.block_filters) == 0 or any(f <= 0 for f in self.block_filters):
            raise ArgumentError(f"block_filters must be positive, got {self.block_filters}")
        if self.in_channels <= 0 or self.num_classes <= 1:
            raise ArgumentError("in_channels must be positive and num_classes >= 2")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF


@dataclass
class Model:
    config: ModelConfig
    params: dict = field(repr=False)
    bn_states: dict = field(repr=False)
    dtype: object = np.float32

    def n_parameters(self):
        return sum(p.data.size for p in self.params.values())

    def param_names(self):
        return sorted(self.params)

    def logits(self, images, train):
        """Forward pass returning a [N, num_classes] logits Tensor."""
        x = images if isinstance(images, T.Tensor) else T.Tensor(images, dtype=self.dtype)
        if x.data.ndim != 4 or x.data.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected [N,{self.config.in_channels},H,W] input, got {x.data.shape}")
        p, st = self.params, self.bn_states
        out = T.conv2d(x, p["stem.w"], stride=1, padding=1)
        c_in = self.config.block_filters[0]
        for i, c_out in enumerate(self.config.block_filters, start=1):
            pre = f"block{i}"
            stride = 1 if i == 1 else 2
            a1 = T.relu(T.batch_norm(out, p[f"{pre}.bn1.gamma"], p[f"{pre}.bn1.beta"],
                                     st[f"{pre}.bn1"], train))
            h = T.conv2d(a1, p[f"{pre}.conv1.w"], stride=stride, padding=1)
            a2 = T.relu(T.batch_norm(h, p[f"{pre}.bn2.gamma"], p[f"{pre}.bn2.beta"],
                                     st[f"{pre}.bn2"], train))
            h = T.conv2d(a2, p[f"{pre}.conv2.w"], stride=1, padding=1)
            if stride != 1 or c_in != c_out:
                skip = T.conv2d(a1, p[f"{pre}.proj.w"], stride=stride, padding=0)
            else:
                skip = out
            out = T.add(h, skip)
            c_in = c_out
        a = T.relu(T.batch_norm(out, p["head.bn.gamma"], p["head.bn.beta"],
                                st["head.bn"], train))
        pooled = T.global_avg_pool(a)
        return T.dense(pooled, p["head.dense.w"], p["head.dense.b"])

    def predict(self, images, train=False):
        """Class probabilities as a plain array; no gradients recorded."""
        with T.no_grad():
            return T.softmax(self.logits(images, train)).data


def build(config, dtype=np.float32):
    """Construct a model with He-normal fan-in init from config.seed."""
    root = RngStream(config.seed)
    params = {}
    bn_states = {}

    def conv_param(name, f, c, k):
        fan_in = c * k * k
        w = root.derive("init", name).normal((f, c, k, k)) * np.sqrt(2.0 / fan_in)
        params[name] = T.Tensor(w.astype(dtype), requires_grad=True)

    def bn_param(name, c):
        params[f"{name}.gamma"] = T.Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        params[f"{name}.beta"] = T.Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        bn_states[name] = T.BnState(c, dtype=dtype)

    filters = config.block_filters
    conv_param("stem.w", filters[0], config.in_channels, 3)
    c_in = filters[0]
    for i, c_out in enumerate(filters, start=1):
        stride = 1 if i == 1 else 2
        bn_param(f"block{i}.bn1", c_in)
        conv_param(f"block{i}.conv1.w", c_out, c_in, 3)
        bn_param(f"block{i}.bn2", c_out)
        conv_param(f"block{i}.conv2.w", c_out, c_out, 3)
        if stride != 1 or c_in != c_out:
            conv_param(f"block{i}.proj.w", c_out, c_in, 1)
        c_in = c_out
    bn_param("head.bn", c_in)
    fan_in = c_in
    w = root.derive("init", "head.dense.w").normal((c_in, config.num_classes))
    params["head.dense.w"] = T.Tensor(
        (w * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True)
    params["head.dense.b"] = T.Tensor(
        np.zeros(config.num_classes, dtype=dtype), requires_grad=True)
    return Model(config=config, params=params, bn_states=bn_states, dtype=dtype)


def with_params(model, arrays):
    """A read-only variant of model using the given parameter arrays.

    Used to evaluate EMA shadow weights; BN running stats are shared
    with the source model (eval mode never mutates them).
    """
    params = {}
    for name, p in model.params.items():
        a = arrays.get(name)
        params[name] = T.Tensor(p.data if a is None else a)
    return Model(config=model.config, params=params,
                 bn_states=model.bn_states, dtype=model.dtype)


def _write_array(fh, name, arr):
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path, model, ema_arrays=None):
    """Write config plus all named arrays (params, BN stats, optional EMA)."""
    entries = {}
    for name, p in model.params.items():
        entries[f"param.{name}"] = p.data
    for name, st in model.bn_states.items():
        entries[f"bn.{name}.mean"] = st.running_mean
        entries[f"bn.{name}.var"] = st.running_var
    if ema_arrays is not None:
        for name, a in ema_arrays.items():
            entries[f"ema.{name}"] = a
    cfg = json.dumps({
        "in_channels": model.config.in_channels,
        "block_filters": list(model.config.block_filters),
        "num_classes": model.config.num_classes,
        "seed": model.config.seed,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<Q", len(entries)))
        for name in sorted(entries):
            _write_array(fh, name, entries[name])


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"checkpoint truncated reading {what} at byte {fh.tell() - len(buf)}")
    return buf


def load_checkpoint(path):
    """Read a checkpoint; returns (model, ema_arrays or None)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r} at byte 0")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        cfg = json.loads(_read_exact(fh, cfg_len, "config"))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "array count"))
        arrays = {}
        for k in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, f"name length of array {k}"))
            name = _read_exact(fh, nlen, f"name of array {k}").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of {name}"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"shape of {name}"))
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = _read_exact(fh, 4 * size, f"data of {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    config = ModelConfig(in_channels=cfg["in_channels"],
                         block_filters=tuple(cfg["block_filters"]),
                         num_classes=cfg["num_classes"], seed=cfg["seed"])
    model = build(config)
    ema = {}
    for name, arr in arrays.items():
        if name.startswith("param."):
            key = name[len("param."):]
            if key not in model.params or model.params[key].data.shape != arr.shape:
                raise FormatError(f"checkpoint array {name} does not fit the config")
            model.params[key].data[:] = arr
        elif name.startswith("bn."):
            key, _, stat = name[len("bn."):].rpartition(".")
            buf = model.bn_states[key].running_mean if stat == "mean" \
                else model.bn_states[key].running_var
            buf[:] = arr
        elif name.startswith("ema."):
            ema[name[len("ema."):]] = arr
    return model, (ema or None)
