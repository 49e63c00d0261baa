"""Training protocols and the sweep/comparison experiments built on them.

All procedures share one loop: Adam on the summed mean cross-entropy of
the selected heads plus an L2 penalty on weights, inverted dropout on
head inputs, a seeded per-epoch reshuffle, and early stopping on
validation loss with the best weights restored at the end.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, split_validation
from .energy import mac_network
from .engine import AdamState, adam_step
from .errors import ArchError, ParameterError
from .kernels import flush_denormals
from .model import (
    Arch,
    MultiExitModel,
    backward_pass,
    build_multi_exit,
    build_single,
    forward,
    loss_value,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta_m: float = 0.9
    beta_v: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    l2_lambda: float = 0.001
    dropout_keep: float = 0.8
    # read dropout_keep as a drop probability instead
    dropout_is_drop_prob: bool = False
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ParameterError("dropout_keep must lie in (0, 1]")
        if self.l2_lambda < 0:
            raise ParameterError("l2_lambda must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ParameterError("batch_size must be >= 1 and max_epochs >= 0")

    @property
    def keep_prob(self) -> float:
        keep = 1.0 - self.dropout_keep if self.dropout_is_drop_prob else self.dropout_keep
        if keep <= 0.0:
            raise ParameterError("dropout would drop every unit")
        return keep


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    phase: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.epoch)

    def extend(self, other: "TrainHistory") -> None:
        for name in ("epoch", "phase", "train_loss", "train_acc", "val_loss", "val_acc"):
            getattr(self, name).extend(getattr(other, name))
        self.best_epoch = other.best_epoch
        self.stopped_early = other.stopped_early

    def rows(self):
        return zip(self.phase, self.epoch, self.train_loss, self.train_acc,
                   self.val_loss, self.val_acc)


def evaluate(model: MultiExitModel, data: Dataset, heads=None, batch_size: int = 500):
    """Summed per-head mean cross-entropy and per-head accuracy (inference mode)."""
    heads = list(range(model.exit_count)) if heads is None else sorted(heads)
    n = len(data)
    loss = np.zeros(len(heads))
    correct = np.zeros(len(heads), dtype=np.int64)
    for start in range(0, n, batch_size):
        x = data.images[start:start + batch_size]
        y = data.labels[start:start + batch_size]
        cache = forward(model, x, heads)
        for i, h in enumerate(heads):
            p = cache.probs[h]
            loss[i] += -np.log(np.maximum(p[np.arange(len(y)), y], 1e-12)).astype(np.float64).sum()
            correct[i] += int((p.argmax(axis=1) == y).sum())
    return float(loss.sum() / n), correct / n


def exit_accuracies(model: MultiExitModel, data: Dataset) -> np.ndarray:
    return evaluate(model, data)[1]


def calibrate(model: MultiExitModel, train: Dataset) -> list[float]:
    """Store per-exit training accuracy on ``model`` (used by the exit policy)."""
    model.calibration = [float(a) for a in exit_accuracies(model, train)]
    return model.calibration


def _fit(model, train: Dataset, val: Dataset, cfg: TrainConfig, heads, wrt, seed,
         phase: int = 1) -> TrainHistory:
    # weight decay parks dead weights in the subnormal range, which is very slow
    with flush_denormals():
        return _fit_epochs(model, train, val, cfg, heads, wrt, seed, phase)


def _fit_epochs(model, train, val, cfg, heads, wrt, seed, phase) -> TrainHistory:
    hist = TrainHistory()
    if cfg.max_epochs == 0:
        return hist
    rng = np.random.default_rng(seed)
    state = AdamState()
    params = model.params()
    wrt = list(wrt)
    keep = cfg.keep_prob
    n = len(train)
    best_loss, best_snap = math.inf, None
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        run_loss = run_correct = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = train.images[idx], train.labels[idx]
            cache = forward(model, x, heads, train=True, keep_prob=keep, rng=rng)
            run_loss += loss_value(model, cache, y) * len(idx)
            run_correct += np.mean([(p.argmax(axis=1) == y).sum() for p in cache.probs.values()])
            grads = backward_pass(model, cache, y, cfg.l2_lambda, wrt)
            adam_step(params, grads, state, cfg.lr, cfg.beta_m, cfg.beta_v, cfg.eps)
        val_loss, val_acc = evaluate(model, val, heads)
        hist.epoch.append(epoch)
        hist.phase.append(phase)
        hist.train_loss.append(run_loss / n)
        hist.train_acc.append(run_correct / n)
        hist.val_loss.append(val_loss)
        hist.val_acc.append(float(np.mean(val_acc)))
        log.debug("phase %d epoch %d: val loss %.4f acc %.4f", phase, epoch, val_loss,
                  hist.val_acc[-1])
        if val_loss < best_loss:
            best_loss, best_snap, hist.best_epoch = val_loss, model.snapshot(), epoch
        elif epoch - hist.best_epoch >= cfg.patience:
            hist.stopped_early = True
            break
    model.restore(best_snap)
    return hist


def _prepare(model: MultiExitModel, data: Dataset, cfg: TrainConfig, val: Dataset | None):
    if len(data) == 0:
        raise ParameterError("cannot train on an empty dataset")
    if tuple(data.image_shape) != model.arch.input_shape:
        raise ParameterError(
            f"dataset images {data.image_shape} do not match model input {model.arch.input_shape}"
        )
    if val is None:
        data, val = split_validation(data, cfg.val_fraction, cfg.seed)
    if len(val) == 0:
        raise ParameterError("validation split is empty")
    return data, val


def _trunk_names(model):
    return [k for k in model.params() if k.startswith("trunk.")]


def _head_names(h):
    return [f"head.{h}.weights", f"head.{h}.bias"]


def train_single(model: MultiExitModel, data: Dataset, cfg: TrainConfig,
                 val: Dataset | None = None):
    """Train a single-exit network. ``data`` is split for validation unless ``val`` is given."""
    if model.exit_count != 1:
        raise ParameterError("train_single expects a single-exit model")
    train, val = _prepare(model, data, cfg, val)
    hist = _fit(model, train, val, cfg, [0], model.params(), cfg.seed)
    return model, hist


def train_combined(model: MultiExitModel, data: Dataset, cfg: TrainConfig,
                   val: Dataset | None = None):
    """Joint training of trunk and every head on the plain sum of exit losses."""
    train, val = _prepare(model, data, cfg, val)
    heads = list(range(model.exit_count))
    hist = _fit(model, train, val, cfg, heads, model.params(), cfg.seed)
    return model, hist


def train_individual(model: MultiExitModel, data: Dataset, cfg: TrainConfig,
                     val: Dataset | None = None):
    """Two phases: trunk + final head, then the other heads on the frozen trunk."""
    train, val = _prepare(model, data, cfg, val)
    last = model.exit_count - 1
    hist = _fit(model, train, val, cfg, [last], _trunk_names(model) + _head_names(last),
                cfg.seed, phase=1)
    if last > 0:
        rest = list(range(last))
        wrt = [name for h in rest for name in _head_names(h)]
        hist.extend(_fit(model, train, val, cfg, rest, wrt, [cfg.seed, 2], phase=2))
    return model, hist


# --- experiments -----------------------------------------------------------

def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("EXITWISE_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items)) or 1
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class SweepRow:
    mode: str
    param: int
    macs: int | None
    train_acc: float
    test_acc: float
    error: str = ""


def _sweep_point(mode, depth, width, train, test, cfg) -> SweepRow:
    param = depth if mode == "depth" else width
    try:
        model = build_single(depth, width, train.image_shape, train.class_count, cfg.seed)
    except ArchError as exc:
        return SweepRow(mode, param, None, math.nan, math.nan, str(exc))
    train_single(model, train, cfg)
    return SweepRow(mode, param, mac_network(model.arch).total,
                    float(exit_accuracies(model, train)[0]),
                    float(exit_accuracies(model, test)[0]))


def sweep_depth(depths, width: int, train: Dataset, test: Dataset, cfg: TrainConfig):
    """One single-exit network per depth at fixed width."""
    return _map(lambda d: _sweep_point("depth", d, width, train, test, cfg), depths)


def sweep_width(depth: int, widths, train: Dataset, test: Dataset, cfg: TrainConfig):
    """One single-exit network per width at fixed depth."""
    return _map(lambda w: _sweep_point("width", depth, w, train, test, cfg), widths)


@dataclass
class DeltaResult:
    baseline: np.ndarray    # test accuracy of the depth-l single network, per exit l
    individual: np.ndarray
    combined: np.ndarray

    @property
    def delta_individual(self) -> np.ndarray:
        return self.individual - self.baseline

    @property
    def delta_combined(self) -> np.ndarray:
        return self.combined - self.baseline

    @property
    def mean_delta_individual(self) -> float:
        return float(self.delta_individual.mean())

    @property
    def mean_delta_combined(self) -> float:
        return float(self.delta_combined.mean())


def train_bank(depth: int, width: int, train: Dataset, cfg: TrainConfig) -> list[MultiExitModel]:
    """Train the multiplexed bank: single-exit networks of depths ``1 .. depth``."""
    def one(d):
        model = build_single(d, width, train.image_shape, train.class_count, cfg.seed)
        return train_single(model, train, cfg)[0]
    return _map(one, range(1, depth + 1))


def experiment_delta_accuracy(train: Dataset, test: Dataset, cfg: TrainConfig,
                              depth: int = 6, width: int = 64, bank=None,
                              individual=None, combined=None) -> DeltaResult:
    """Per-exit test accuracy change of the multi-exit model against the bank.

    Already-trained models may be passed in to avoid retraining.
    """
    shape, k = train.image_shape, train.class_count
    if bank is None:
        bank = train_bank(depth, width, train, cfg)
    if individual is None:
        individual = train_individual(build_multi_exit(depth, width, shape, k, cfg.seed),
                                      train, cfg)[0]
    if combined is None:
        combined = train_combined(build_multi_exit(depth, width, shape, k, cfg.seed),
                                  train, cfg)[0]
    baseline = np.array([exit_accuracies(m, test)[0] for m in bank])
    return DeltaResult(baseline, exit_accuracies(individual, test),
                       exit_accuracies(combined, test))


def arch_of(data: Dataset, depth: int, width: int, multi_exit: bool = True) -> Arch:
    ctor = Arch.multi_exit if multi_exit else Arch.single
    return ctor(depth, width, data.image_shape, data.class_count)
