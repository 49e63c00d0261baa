"""Confidence-gated dynamic exit for multi-exit networks.

An input leaves at the shallowest exit ``l`` where either the exit's
calibrated training accuracy clears the target
(``beta_acc * A_train[l] >= target``) or the exit's own confidence
does (``conf[l] >= beta_conf * target``). It falls through to the last
exit otherwise.

The accuracy test does not depend on the input, so an exit's head only
has to be evaluated when the decision rests on its confidence, or when
the input leaves there. A confidence test against a threshold above 1
cannot pass, so that head is skipped too. Energy is charged
accordingly: the trunk up to the chosen exit plus every head evaluated
on the way.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .energy import MacBreakdown, mac_network
from .engine import fc_forward, softmax, conv2d_forward
from .errors import ParameterError, StateError
from .model import MultiExitModel, predict_exits
from .dataset import Dataset

BETA_PRESETS = ((1.0, 1.0), (0.8, 1.1))
DEFAULT_THRESHOLDS = np.round(np.arange(0, 101) / 100.0, 2)


@dataclass(frozen=True)
class ExitPolicyParams:
    desired_accuracy: float
    beta_acc: float = 1.0
    beta_conf: float = 1.0
    per_layer_train_acc: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "per_layer_train_acc",
                           tuple(float(a) for a in self.per_layer_train_acc))
        if not 0.0 <= self.desired_accuracy <= 1.0:
            raise ParameterError(f"desired accuracy must lie in [0, 1], got {self.desired_accuracy}")
        if self.beta_acc <= 0 or self.beta_conf <= 0:
            raise ParameterError("beta coefficients must be positive")
        if not self.per_layer_train_acc:
            raise ParameterError("per-layer training accuracies are required")
        if any(not 0.0 <= a <= 1.0 for a in self.per_layer_train_acc):
            raise ParameterError("training accuracies must lie in [0, 1]")

    @classmethod
    def for_model(cls, model: MultiExitModel, desired_accuracy: float,
                  beta_acc: float = 1.0, beta_conf: float = 1.0) -> "ExitPolicyParams":
        if model.calibration is None:
            raise StateError("model has no calibration; run training.calibrate on the training set")
        return cls(desired_accuracy, beta_acc, beta_conf, tuple(model.calibration))

    @property
    def exit_count(self) -> int:
        return len(self.per_layer_train_acc)

    def accuracy_gate(self, exit_number: int) -> bool:
        return self.beta_acc * self.per_layer_train_acc[exit_number - 1] >= self.desired_accuracy

    @property
    def confidence_threshold(self) -> float:
        return self.beta_conf * self.desired_accuracy

    @property
    def confidence_can_pass(self) -> bool:
        # softmax confidence never exceeds 1
        return self.confidence_threshold <= 1.0

    def needs_head(self, exit_number: int) -> bool:
        """Whether exit ``exit_number`` must be evaluated once reached."""
        return (exit_number == self.exit_count or self.accuracy_gate(exit_number)
                or self.confidence_can_pass)


def confidence(probs: np.ndarray):
    """Largest softmax output (per row for a batch)."""
    probs = np.asarray(probs)
    return float(probs.max()) if probs.ndim == 1 else probs.max(axis=-1)


def select_exit(confidences: Callable[[int], float] | Sequence[float],
                params: ExitPolicyParams, exit_count: int | None = None) -> int:
    """Shallowest qualifying 1-based exit, evaluating confidences lazily.

    ``confidences`` is either a sequence (index ``l - 1``) or a callable
    taking the 1-based exit number; it is consulted only for exits whose
    accuracy gate fails, which are not the last, and whose threshold is
    reachable.
    """
    last = params.exit_count if exit_count is None else exit_count
    conf_at = confidences if callable(confidences) else (lambda l: confidences[l - 1])
    for l in range(1, last + 1):
        if params.accuracy_gate(l) or l == last:
            return l
        if params.confidence_can_pass and conf_at(l) >= params.confidence_threshold:
            return l
    return last


@dataclass
class ConfidenceTable:
    thresholds: np.ndarray   # T
    accuracy: np.ndarray     # exits x T, NaN where no sample qualifies
    fraction: np.ndarray     # exits x T
    mean_confidence: np.ndarray  # exits

    def rows(self):
        for e in range(self.accuracy.shape[0]):
            for t, a, f in zip(self.thresholds, self.accuracy[e], self.fraction[e]):
                yield e + 1, float(t), float(a), float(f)


def build_confidence_table(model: MultiExitModel, data: Dataset,
                           thresholds=DEFAULT_THRESHOLDS) -> ConfidenceTable:
    """Accuracy among samples whose exit confidence is at least each threshold."""
    thresholds = np.asarray(thresholds, dtype=float)
    probs = predict_exits(model, data.images)
    conf = probs.max(axis=2)
    correct = probs.argmax(axis=2) == data.labels[None, :]
    n_exits, n = conf.shape
    acc = np.full((n_exits, thresholds.size), np.nan)
    frac = np.zeros((n_exits, thresholds.size))
    for e in range(n_exits):
        for i, t in enumerate(thresholds):
            keep = conf[e] >= t
            k = int(keep.sum())
            frac[e, i] = k / n
            if k:
                acc[e, i] = correct[e, keep].mean()
    return ConfidenceTable(thresholds, acc, frac, conf.mean(axis=1))


@dataclass
class PolicyReport:
    desired_accuracy: float
    beta_acc: float
    beta_conf: float
    accuracy: float
    mean_macs: float
    usage: np.ndarray            # samples leaving at each exit
    max_macs: int                # cost of the full fixed-depth network
    baseline_accuracy: np.ndarray
    baseline_macs: np.ndarray
    matched_baseline_macs: float  # baseline cost at this accuracy (NaN if out of reach)
    head_evaluations: int
    conv_evaluations: int        # sample x conv-layer applications

    @property
    def normalized_energy(self) -> float:
        return self.mean_macs / self.max_macs

    @property
    def savings(self) -> float:
        return (self.matched_baseline_macs - self.mean_macs) / self.max_macs


def fixed_depth_baseline(model: MultiExitModel, data: Dataset, macs: MacBreakdown | None = None):
    """Per-exit test accuracy and stand-alone cost of each exit."""
    macs = macs or mac_network(model.arch)
    probs = predict_exits(model, data.images)
    accs = (probs.argmax(axis=2) == data.labels[None, :]).mean(axis=1)
    return accs, np.asarray(macs.per_exit_cumulative, dtype=float)


def baseline_macs_at(accuracy: float, baseline_acc, baseline_macs) -> float:
    """Cost the fixed-depth family needs to reach ``accuracy``.

    Exits are taken in cost order and only those more accurate than every
    cheaper exit are kept; the cost is interpolated linearly between them.
    Below the cheapest exit's accuracy the cheapest cost applies; above
    the best accuracy the result is NaN.
    """
    order = np.argsort(baseline_macs, kind="stable")
    acc_front, mac_front = [], []
    for i in order:
        if not acc_front or baseline_acc[i] > acc_front[-1]:
            acc_front.append(float(baseline_acc[i]))
            mac_front.append(float(baseline_macs[i]))
    if accuracy <= acc_front[0]:
        return mac_front[0]
    if accuracy > acc_front[-1]:
        return float("nan")
    return float(np.interp(accuracy, acc_front, mac_front))


def evaluate_policy(model: MultiExitModel, data: Dataset, params: ExitPolicyParams,
                    batch_size: int = 500, baseline=None, macs: MacBreakdown | None = None
                    ) -> PolicyReport:
    """Run the dynamic exit rule over ``data`` with lazy, per-sample early termination."""
    if params.exit_count != model.exit_count:
        raise ParameterError(
            f"policy has {params.exit_count} calibrated exits, model has {model.exit_count}"
        )
    arch = model.arch
    macs = macs or mac_network(arch)
    n_exits = model.exit_count
    usage = np.zeros(n_exits, dtype=np.int64)
    correct = 0
    energy = 0
    head_evals = conv_evals = 0
    for start in range(0, len(data), batch_size):
        act = np.ascontiguousarray(data.images[start:start + batch_size], dtype=model.dtype)
        labels = data.labels[start:start + batch_size]
        depth = 0
        heads_spent = 0  # head MACs already paid by every sample still in flight
        for l in range(1, n_exits + 1):
            if not params.needs_head(l):
                continue
            pos = arch.exits[l - 1]
            while depth < pos:
                act = np.maximum(conv2d_forward(act, model.trunk[depth]), 0)
                depth += 1
                conv_evals += len(act)
            probs = softmax(fc_forward(act.reshape(len(act), -1), model.heads[l - 1]))
            head_evals += len(act)
            heads_spent += macs.head_macs[l - 1]
            if params.accuracy_gate(l) or l == n_exits:
                leave = np.ones(len(act), dtype=bool)
            else:
                leave = probs.max(axis=1) >= params.confidence_threshold
            k = int(leave.sum())
            usage[l - 1] += k
            correct += int((probs[leave].argmax(axis=1) == labels[leave]).sum())
            energy += k * (macs.trunk_cumulative[pos] + heads_spent)
            act, labels = act[~leave], labels[~leave]
            if not len(act):
                break
    n = len(data)
    accuracy = correct / n
    if baseline is None:
        baseline = fixed_depth_baseline(model, data, macs)
    b_acc, b_macs = baseline
    return PolicyReport(
        params.desired_accuracy, params.beta_acc, params.beta_conf, accuracy, energy / n, usage,
        macs.per_exit_cumulative[-1], np.asarray(b_acc), np.asarray(b_macs),
        baseline_macs_at(accuracy, b_acc, b_macs), head_evals, conv_evals,
    )


def policy_reports(model: MultiExitModel, data: Dataset, desired_grid,
                   beta_sets=BETA_PRESETS) -> list[PolicyReport]:
    macs = mac_network(model.arch)
    baseline = fixed_depth_baseline(model, data, macs)
    reports = []
    for beta_acc, beta_conf in beta_sets:
        for target in desired_grid:
            params = ExitPolicyParams.for_model(model, float(target), beta_acc, beta_conf)
            reports.append(evaluate_policy(model, data, params, baseline=baseline, macs=macs))
    return reports


def accuracy_vs_desired_sweep(model: MultiExitModel, data: Dataset, desired_grid,
                              beta_sets=BETA_PRESETS):
    """Rows ``(beta_acc, beta_conf, desired, test accuracy)``."""
    return [(r.beta_acc, r.beta_conf, r.desired_accuracy, r.accuracy)
            for r in policy_reports(model, data, desired_grid, beta_sets)]


@dataclass
class EnergyAccuracyTable:
    baseline: list[tuple[int, float, float]]   # (exit, accuracy, normalised energy)
    policy: list[tuple[float, float, float, float, float, float, float]]
    # (beta_acc, beta_conf, desired, accuracy, energy, baseline energy, savings)

    @property
    def max_savings(self) -> float:
        vals = [row[-1] for row in self.policy if np.isfinite(row[-1])]
        return max(vals) if vals else float("nan")


def energy_accuracy_with_policy(model: MultiExitModel, data: Dataset, desired_grid,
                                beta_sets=BETA_PRESETS, reports=None) -> EnergyAccuracyTable:
    """Policy energy against the fixed-depth baseline, normalised by the full network's cost."""
    reports = reports if reports is not None else policy_reports(model, data, desired_grid, beta_sets)
    first = reports[0]
    top = first.max_macs
    baseline = [(e + 1, float(a), float(m) / top)
                for e, (a, m) in enumerate(zip(first.baseline_accuracy, first.baseline_macs))]
    policy = [(r.beta_acc, r.beta_conf, r.desired_accuracy, r.accuracy, r.normalized_energy,
               r.matched_baseline_macs / top, r.savings) for r in reports]
    return EnergyAccuracyTable(baseline, policy)
