"""Multiply-accumulate counts as an energy proxy, and the cost algebra
built on them.

Energy is measured in MACs. Activations, softmax and bias additions are
free; only convolutions and fully-connected products count.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError, ShapeError
from .model import KERNEL, Arch


@dataclass(frozen=True)
class MacBreakdown:
    """MAC counts of one architecture.

    ``per_layer`` lists ``(layer id, MACs)`` for each conv layer then each
    head. ``trunk_cumulative[p]`` is the cost of the first ``p`` convs.
    ``per_exit_cumulative[j]`` is the cost of running exit ``j + 1`` as a
    stand-alone network: trunk up to its position plus its own head.
    """

    per_layer: tuple[tuple[str, int], ...]
    trunk_cumulative: tuple[int, ...]
    head_macs: tuple[int, ...]
    per_exit_cumulative: tuple[int, ...]
    total: int


@dataclass(frozen=True)
class CostParams:
    alpha: float
    e_d_max: float
    e_x: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.e_d_max <= 0:
            raise ParameterError("e_d_max must be positive")
        if self.gamma is not None and self.gamma < 1.0:
            raise ParameterError(f"gamma must be >= 1, got {self.gamma}")


def mac_conv(w_in: int, h_in: int, w_f: int, h_f: int, n_c: int, n_f: int) -> int:
    if min(w_in, h_in, w_f, h_f, n_c, n_f) < 1:
        raise ShapeError("all convolution extents must be positive")
    if w_f > w_in or h_f > h_in:
        raise ShapeError(f"filter {w_f}x{h_f} larger than input {w_in}x{h_in}")
    return (w_in - w_f + 1) * (h_in - h_f + 1) * n_c * w_f * h_f * n_f


def mac_fc(n_u: int, n_y: int) -> int:
    if n_u < 1 or n_y < 1:
        raise ShapeError("fc extents must be positive")
    return n_u * n_y


def mac_network(arch: Arch) -> MacBreakdown:
    per_layer = []
    trunk = [0]
    for i in range(arch.conv_count):
        h, w, c = arch.activation_shape(i)
        m = mac_conv(w, h, KERNEL, KERNEL, c, arch.width)
        per_layer.append((f"conv{i + 1}", m))
        trunk.append(trunk[-1] + m)
    heads = []
    for j, pos in enumerate(arch.exits):
        m = mac_fc(arch.head_inputs(pos), arch.class_count)
        per_layer.append((f"head{j + 1}", m))
        heads.append(m)
    cumulative = tuple(trunk[pos] + m for pos, m in zip(arch.exits, heads))
    return MacBreakdown(tuple(per_layer), tuple(trunk), tuple(heads), cumulative, cumulative[-1])


def network_macs(depth: int, width: int, input_shape=(32, 32, 3), class_count: int = 10) -> int:
    """Total MACs of a single-exit network."""
    return mac_network(Arch.single(depth, width, input_shape, class_count)).total


def decision_cost(e_d: float, e_d_max: float) -> float:
    if e_d_max <= 0:
        raise ParameterError(f"e_d_max must be positive, got {e_d_max}")
    return e_d / e_d_max


def total_cost(c_d: float, c_x: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * c_d + (1.0 - alpha) * c_x


def classification_cost(e_d: float, e_d_max: float, accuracy: float, alpha: float) -> float:
    """Cost of a classifier whose execution cost is its error rate ``1 - A``."""
    return total_cost(decision_cost(e_d, e_d_max), 1.0 - accuracy, alpha)


def expected_binary_energy(e_d: float, e_x: float, gamma: float, accuracy: float) -> float:
    """Expected energy per binary decision when a wrong call costs ``gamma * e_x``."""
    if gamma < 1.0:
        raise ParameterError(f"gamma must be >= 1, got {gamma}")
    if not 0.0 <= accuracy <= 1.0:
        raise ParameterError(f"accuracy must lie in [0, 1], got {accuracy}")
    return e_d + accuracy * e_x + (1.0 - accuracy) * gamma * e_x
