"""Single-exit and multi-exit CNNs built from valid 3x3 convolutions.

A network of depth ``L`` has ``L - 1`` convolutional layers (ReLU after
each) and fully-connected softmax heads. A head at *position* ``p`` reads
the flattened activation after ``p`` convolutions, so position 0 is the
raw input. Single-exit networks carry one head at position ``L - 1``;
multi-exit networks carry one head at every position ``0 .. L - 1``.
Exit numbers exposed to users are 1-based (exit ``l`` sits at position
``l - 1``).

Initialisation draws every layer from its own generator keyed on
``(seed, kind, index)``, so the trunk and top head of a depth-``l``
single-exit model are bit-identical to the corresponding layers of a
multi-exit model built with the same seed.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .engine import (
    ConvFilterBank,
    FcWeights,
    PROB_FLOOR,
    conv2d_backward,
    conv2d_forward,
    dropout_mask,
    fc_forward,
    softmax,
)
from .errors import (
    ArchError,
    CheckpointError,
    MagicError,
    ShapeError,
    StateError,
    TruncatedError,
    VersionError,
)

KERNEL = 3
CHECKPOINT_MAGIC = b"MXEC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Arch:
    depth: int
    width: int
    input_shape: tuple[int, int, int] = (32, 32, 3)
    class_count: int = 10
    exits: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.depth < 1:
            raise ArchError(f"depth must be >= 1, got {self.depth}")
        if self.depth > 1 and self.width < 1:
            raise ArchError(f"width must be >= 1, got {self.width}")
        h, w, _ = self.input_shape
        for layer in range(1, self.depth):
            oh, ow = h - (KERNEL - 1) * layer, w - (KERNEL - 1) * layer
            if oh < 1 or ow < 1:
                raise ArchError(
                    f"conv layer {layer} of depth-{self.depth} network would output "
                    f"{oh}x{ow} from a {h}x{w} input"
                )
        if not self.exits:
            object.__setattr__(self, "exits", (self.depth - 1,))
        exits = tuple(int(p) for p in self.exits)
        if list(exits) != sorted(set(exits)) or exits[0] < 0 or exits[-1] != self.depth - 1:
            raise ArchError(f"exit positions {exits} must be ascending and end at {self.depth - 1}")
        object.__setattr__(self, "exits", exits)

    @classmethod
    def single(cls, depth, width, input_shape=(32, 32, 3), class_count=10) -> "Arch":
        return cls(depth, width, input_shape, class_count, (depth - 1,))

    @classmethod
    def multi_exit(cls, depth, width, input_shape=(32, 32, 3), class_count=10) -> "Arch":
        return cls(depth, width, input_shape, class_count, tuple(range(depth)))

    @property
    def conv_count(self) -> int:
        return self.depth - 1

    @property
    def is_multi_exit(self) -> bool:
        return len(self.exits) > 1

    def activation_shape(self, position: int) -> tuple[int, int, int]:
        h, w, c = self.input_shape
        shrink = (KERNEL - 1) * position
        return (h - shrink, w - shrink, c if position == 0 else self.width)

    def conv_shape(self, layer: int) -> tuple[int, int, int, int]:
        """Filter shape of 0-based conv layer ``layer``."""
        cin = self.input_shape[2] if layer == 0 else self.width
        return (KERNEL, KERNEL, cin, self.width)

    def head_inputs(self, position: int) -> int:
        return int(np.prod(self.activation_shape(position)))

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "width": self.width,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "exits": list(self.exits),
        }

    @classmethod
    def from_dict(cls, d) -> "Arch":
        return cls(d["depth"], d["width"], tuple(d["input_shape"]), d["class_count"],
                   tuple(d["exits"]))


@dataclass
class MultiExitModel:
    arch: Arch
    trunk: list[ConvFilterBank]
    heads: list[FcWeights]
    # per-exit training-set accuracy, filled in by training.calibrate
    calibration: list[float] | None = None

    def __post_init__(self):
        if len(self.trunk) != self.arch.conv_count:
            raise ShapeError(f"expected {self.arch.conv_count} conv layers, got {len(self.trunk)}")
        if len(self.heads) != len(self.arch.exits):
            raise ShapeError(f"expected {len(self.arch.exits)} heads, got {len(self.heads)}")
        for i, bank in enumerate(self.trunk):
            if bank.filters.shape != self.arch.conv_shape(i):
                raise ShapeError(f"conv {i + 1} filters {bank.filters.shape} != {self.arch.conv_shape(i)}")
        for pos, head in zip(self.arch.exits, self.heads):
            if head.weights.shape != (self.arch.head_inputs(pos), self.arch.class_count):
                raise ShapeError(f"head at position {pos} has shape {head.weights.shape}")

    @property
    def exit_count(self) -> int:
        return len(self.heads)

    @property
    def dtype(self):
        return self.heads[0].weights.dtype

    def params(self) -> dict[str, np.ndarray]:
        """Live parameter arrays in checkpoint order."""
        out = {}
        for i, bank in enumerate(self.trunk):
            out[f"trunk.{i}.filters"] = bank.filters
            out[f"trunk.{i}.bias"] = bank.bias
        for j, head in enumerate(self.heads):
            out[f"head.{j}.weights"] = head.weights
            out[f"head.{j}.bias"] = head.bias
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.params().items():
            v[...] = snap[k]

    def astype(self, dtype) -> "MultiExitModel":
        return MultiExitModel(
            self.arch,
            [ConvFilterBank(b.filters.astype(dtype), b.bias.astype(dtype)) for b in self.trunk],
            [FcWeights(h.weights.astype(dtype), h.bias.astype(dtype)) for h in self.heads],
            None if self.calibration is None else list(self.calibration),
        )

    def copy(self) -> "MultiExitModel":
        return self.astype(self.dtype)


def _conv_init(arch: Arch, layer: int, seed: int, dtype) -> ConvFilterBank:
    shape = arch.conv_shape(layer)
    rng = np.random.default_rng([seed, 0, layer])
    fan_in = shape[0] * shape[1] * shape[2]
    filters = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return ConvFilterBank(filters.astype(dtype), np.zeros(shape[3], dtype=dtype))


def _head_init(arch: Arch, position: int, seed: int, dtype) -> FcWeights:
    fan_in, fan_out = arch.head_inputs(position), arch.class_count
    rng = np.random.default_rng([seed, 1, position])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return FcWeights(weights.astype(dtype), np.zeros(fan_out, dtype=dtype))


def build(arch: Arch, seed: int, dtype=np.float32) -> MultiExitModel:
    trunk = [_conv_init(arch, i, seed, dtype) for i in range(arch.conv_count)]
    heads = [_head_init(arch, p, seed, dtype) for p in arch.exits]
    return MultiExitModel(arch, trunk, heads)


def build_single(depth, width, input_shape=(32, 32, 3), class_count=10, seed=0,
                 dtype=np.float32) -> MultiExitModel:
    return build(Arch.single(depth, width, input_shape, class_count), seed, dtype)


def build_multi_exit(depth, width, input_shape=(32, 32, 3), class_count=10, seed=0,
                     dtype=np.float32) -> MultiExitModel:
    return build(Arch.multi_exit(depth, width, input_shape, class_count), seed, dtype)


def build_multiplexed_bank(depth, width, input_shape=(32, 32, 3), class_count=10, seed=0,
                           dtype=np.float32) -> list[MultiExitModel]:
    """Independent single-exit networks of depths ``1 .. depth``."""
    return [build_single(d, width, input_shape, class_count, seed, dtype)
            for d in range(1, depth + 1)]


def _arch_params(arch: Arch) -> int:
    total = 0
    for i in range(arch.conv_count):
        kh, kw, cin, f = arch.conv_shape(i)
        total += kh * kw * cin * f + f
    for p in arch.exits:
        total += arch.head_inputs(p) * arch.class_count + arch.class_count
    return total


def count_params(obj) -> int:
    """Weights plus biases of an ``Arch``, a model, or an iterable of either."""
    if isinstance(obj, Arch):
        return _arch_params(obj)
    if isinstance(obj, MultiExitModel):
        return _arch_params(obj.arch)
    return sum(count_params(o) for o in obj)


@dataclass
class ForwardCache:
    acts: list[np.ndarray]              # acts[p] = activation after p convs (acts[0] = input)
    head_inputs: dict[int, np.ndarray]  # head index -> flattened (and dropped-out) input
    masks: dict[int, np.ndarray | None]
    probs: dict[int, np.ndarray]


def forward(model: MultiExitModel, x: np.ndarray, heads: Iterable[int] | None = None,
            train: bool = False, keep_prob: float = 1.0,
            rng: np.random.Generator | None = None) -> ForwardCache:
    """Batched forward pass through the trunk and the requested heads.

    ``heads`` are indices into ``model.heads`` (default: all). The trunk
    is only evaluated as deep as the deepest requested head. In training
    mode with ``keep_prob < 1`` each head input gets its own inverted
    dropout mask drawn from ``rng`` in ascending head order.
    """
    arch = model.arch
    if x.ndim == 3:
        x = x[None]
    if tuple(x.shape[1:]) != arch.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match arch {arch.input_shape}")
    x = np.ascontiguousarray(x, dtype=model.dtype)
    heads = sorted(range(model.exit_count) if heads is None else set(heads))
    top = max(arch.exits[h] for h in heads) if heads else 0
    acts = [x]
    for i in range(top):
        acts.append(np.maximum(conv2d_forward(acts[-1], model.trunk[i]), 0))
    n = len(x)
    cache = ForwardCache(acts, {}, {}, {})
    for h in heads:
        inp = acts[arch.exits[h]].reshape(n, -1)
        mask = None
        if train and keep_prob < 1.0:
            if rng is None:
                raise StateError("dropout in training mode needs a random generator")
            mask = dropout_mask(inp.shape, keep_prob, rng, dtype=inp.dtype)
            inp = inp * mask
        cache.head_inputs[h] = inp
        cache.masks[h] = mask
        cache.probs[h] = softmax(fc_forward(inp, model.heads[h]))
    return cache


def forward_all_exits(model: MultiExitModel, image: np.ndarray) -> list[np.ndarray]:
    """Probability vectors for every exit (per image when given a batch)."""
    cache = forward(model, image)
    out = [cache.probs[h] for h in range(model.exit_count)]
    return [p[0] for p in out] if image.ndim == 3 else out


def predict_exits(model: MultiExitModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Stacked probabilities, shape ``exits x N x K``, evaluated in chunks."""
    chunks = [np.stack(forward_all_exits(model, images[i:i + batch_size]))
              for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks, axis=1)


def regularized_names(model: MultiExitModel, heads: Iterable[int]) -> list[str]:
    """Weight arrays (never biases) that carry the L2 penalty for a loss over ``heads``."""
    names = [f"trunk.{i}.filters" for i in range(len(model.trunk))]
    return names + [f"head.{h}.weights" for h in sorted(heads)]


def loss_value(model: MultiExitModel, cache: ForwardCache, labels: np.ndarray,
               l2_lambda: float = 0.0) -> float:
    """Summed mean cross-entropy over cached heads plus ``l2_lambda * sum(w**2)``."""
    n = len(labels)
    total = 0.0
    for p in cache.probs.values():
        total += float(-np.log(np.maximum(p[np.arange(n), labels], PROB_FLOOR)).mean())
    if l2_lambda:
        params = model.params()
        total += l2_lambda * sum(float(np.sum(params[k].astype(np.float64) ** 2))
                                 for k in regularized_names(model, cache.probs))
    return total


def backward_pass(model: MultiExitModel, cache: ForwardCache | None, labels: np.ndarray,
                  l2_lambda: float = 0.0, wrt: Iterable[str] | None = None
                  ) -> dict[str, np.ndarray]:
    """Gradients of :func:`loss_value` with respect to the parameters in ``wrt``.

    Parameters in ``wrt`` with no path to the loss get zero gradients.
    Backpropagation through the trunk is skipped when no trunk parameter
    is requested.
    """
    if cache is None or not cache.probs:
        raise StateError("backward_pass needs the cache of a forward pass")
    arch = model.arch
    params = model.params()
    wrt = set(params) if wrt is None else set(wrt)
    unknown = wrt - set(params)
    if unknown:
        raise KeyError(f"unknown parameters: {sorted(unknown)}")
    n = len(labels)
    dtype = model.dtype
    need_trunk = [any(f"trunk.{i}." in k for k in wrt) for i in range(len(model.trunk))]
    # deepest conv layer whose parameters are wanted; activations below it need grads
    lowest = min((i for i, v in enumerate(need_trunk) if v), default=None)
    grads: dict[str, np.ndarray] = {}
    act_grads: dict[int, np.ndarray] = {}
    for h, probs in cache.probs.items():
        d = probs.astype(dtype, copy=True)
        d[np.arange(n), labels] -= 1
        d /= n
        head = model.heads[h]
        if f"head.{h}.weights" in wrt:
            grads[f"head.{h}.weights"] = cache.head_inputs[h].T @ d
        if f"head.{h}.bias" in wrt:
            grads[f"head.{h}.bias"] = d.sum(axis=0)
        pos = arch.exits[h]
        if lowest is not None and pos > lowest:
            dinp = d @ head.weights.T
            if cache.masks[h] is not None:
                dinp *= cache.masks[h]
            dinp = dinp.reshape(cache.acts[pos].shape)
            if pos in act_grads:
                act_grads[pos] += dinp
            else:
                act_grads[pos] = dinp
    if lowest is not None:
        for pos in range(max(act_grads, default=0), lowest, -1):
            if pos not in act_grads:
                continue
            layer = pos - 1
            dz = act_grads.pop(pos) * (cache.acts[pos] > 0)
            gx, gw, gb = conv2d_backward(cache.acts[pos - 1], model.trunk[layer], dz,
                                         need_input_grad=layer > lowest)
            if f"trunk.{layer}.filters" in wrt:
                grads[f"trunk.{layer}.filters"] = gw
            if f"trunk.{layer}.bias" in wrt:
                grads[f"trunk.{layer}.bias"] = gb
            if gx is not None:
                if pos - 1 in act_grads:
                    act_grads[pos - 1] += gx
                else:
                    act_grads[pos - 1] = gx
    if l2_lambda:
        for k in regularized_names(model, cache.probs):
            if k in wrt:
                g = grads.get(k)
                reg = (2.0 * l2_lambda) * params[k]
                grads[k] = reg.astype(dtype) if g is None else g + reg
    for k in wrt:
        if k not in grads:
            grads[k] = np.zeros_like(params[k])
    return grads


# --- checkpoints ---------------------------------------------------------

def checkpoint_bytes(model: MultiExitModel) -> bytes:
    """Serialise ``model`` in the MXEC layout (float32 little-endian)."""
    desc = model.arch.to_dict()
    if model.calibration is not None:
        desc["calibration"] = [float(v) for v in model.calibration]
    blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(blob)), blob]
    for arr in model.params().values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: MultiExitModel, path) -> None:
    """Write ``model`` to ``path`` atomically."""
    _atomic_write(path, checkpoint_bytes(model))


def _atomic_write(path, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, dtype=np.float32) -> MultiExitModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        if data[:4] != CHECKPOINT_MAGIC[:len(data[:4])]:
            raise MagicError(f"{path}: not an MXEC checkpoint")
        raise TruncatedError(f"{path}: header truncated ({len(data)} bytes)")
    if data[:4] != CHECKPOINT_MAGIC:
        raise MagicError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    (n_desc,) = struct.unpack_from("<I", data, 8)
    offset = 12 + n_desc
    if len(data) < offset:
        raise TruncatedError(f"{path}: architecture descriptor truncated")
    try:
        desc = json.loads(data[12:offset].decode("utf-8"))
        arch = Arch.from_dict(desc)
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable architecture descriptor: {exc}") from exc
    model = build(arch, seed=0, dtype=dtype)
    for name, arr in model.params().items():
        nbytes = arr.size * 4
        if len(data) < offset + nbytes:
            raise TruncatedError(f"{path}: parameter {name} truncated")
        arr[...] = np.frombuffer(data, dtype="<f4", count=arr.size, offset=offset).reshape(arr.shape)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    model.calibration = desc.get("calibration")
    return model


def head_index_for_exit(model: MultiExitModel, exit_number: int) -> int:
    """Translate a 1-based exit number into an index into ``model.heads``."""
    if not 1 <= exit_number <= model.exit_count:
        raise IndexError(f"exit {exit_number} out of range 1..{model.exit_count}")
    return exit_number - 1

