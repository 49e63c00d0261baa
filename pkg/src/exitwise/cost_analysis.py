"""Energy-accuracy curve fits and the closed-form optimal operating points.

Two curve families map accuracy ``A`` to normalised decision cost:

* exponential ``C_D = a * exp(b * A)`` (depth sweeps)
* rational ``C_D = a * (A - 0.1) / (1 - b * A)`` (width sweeps); the 0.1
  offset is ten-class chance accuracy and is not fitted.

Both are fitted by Gauss-Newton least squares from a linearised warm
start. Optimal accuracies use the natural logarithm.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FitError, ParameterError, PoleError

CHANCE_OFFSET = 0.1
GRAD_TOL = 1e-10
MAX_ITER = 1000


@dataclass(frozen=True)
class ExpFit:
    a: float
    b: float
    residual: float
    iterations: int = 0

    def __call__(self, accuracy):
        return self.a * np.exp(self.b * np.asarray(accuracy, dtype=float))


@dataclass(frozen=True)
class RatFit:
    a: float
    b: float
    residual: float
    iterations: int = 0

    def __call__(self, accuracy):
        acc = np.asarray(accuracy, dtype=float)
        return self.a * (acc - CHANCE_OFFSET) / (1.0 - self.b * acc)


class NearZeroSlopeWarning(UserWarning):
    """An exponential fit collapsed to a (near) constant curve."""


class ClampWarning(UserWarning):
    """An optimal accuracy was unbounded and has been clamped."""


def _points(points) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise ParameterError("need at least two (accuracy, cost) points")
    acc, cost = arr[:, 0], arr[:, 1]
    if not np.all(np.isfinite(acc)):
        raise ParameterError("accuracy values must be finite")
    if len(np.unique(acc)) < 2:
        raise ParameterError("need at least two distinct accuracy values")
    return acc, cost


def _gauss_newton(residual_jac, theta0, valid=lambda th: True, label="fit"):
    """Minimise ``sum(r**2)`` from ``theta0``.

    ``residual_jac(theta)`` returns ``(r, J)`` with ``r = data - model``
    and ``J = d model / d theta``. Steps that do not lower the residual
    (or leave the ``valid`` region) are halved up to 60 times.
    """
    theta = np.asarray(theta0, dtype=float)
    r, jac = residual_jac(theta)
    sse = float(r @ r)
    for it in range(1, MAX_ITER + 1):
        grad = -2.0 * jac.T @ r
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= GRAD_TOL:
            return theta, sse, it - 1
        step, *_ = np.linalg.lstsq(jac, r, rcond=None)
        accepted = False
        for _ in range(60):
            cand = theta + step
            if valid(cand):
                r_new, jac_new = residual_jac(cand)
                sse_new = float(r_new @ r_new)
                if np.isfinite(sse_new) and sse_new <= sse:
                    accepted = True
                    break
            step = 0.5 * step
        if not accepted or np.all(np.abs(cand - theta) <= 1e-15 * (1.0 + np.abs(theta))):
            # no representable improvement left: stationary to machine precision
            scale = 1.0 + float(np.linalg.norm(jac)) * math.sqrt(max(sse, 0.0))
            if gnorm <= 1e-7 * scale:
                if accepted:
                    theta, r, jac, sse = cand, r_new, jac_new, sse_new
                return theta, sse, it
            raise FitError(f"{label}: stalled with gradient norm {gnorm:.3e}",
                           iterations=it, grad_norm=gnorm, params=tuple(theta))
        theta, r, jac, sse = cand, r_new, jac_new, sse_new
    raise FitError(f"{label}: no convergence after {MAX_ITER} iterations "
                   f"(gradient norm {gnorm:.3e})",
                   iterations=MAX_ITER, grad_norm=gnorm, params=tuple(theta))


def fit_exponential(points: Iterable[Sequence[float]]) -> ExpFit:
    """Least-squares fit of ``C_D = a * exp(b * A)``."""
    acc, cost = _points(points)
    if np.all(cost > 0):
        b0, log_a0 = np.polyfit(acc, np.log(cost), 1)
        theta0 = (math.exp(log_a0), b0)
    else:
        theta0 = (float(np.mean(cost)), 0.0)

    def residual_jac(theta):
        a, b = theta
        e = np.exp(b * acc)
        return cost - a * e, np.column_stack([e, a * acc * e])

    (a, b), sse, iters = _gauss_newton(residual_jac, theta0, label="exponential fit")
    if abs(b) < 1e-8:
        warnings.warn(f"exponential fit has near-zero rate b={b:.3e}; the cost is flat in accuracy",
                      NearZeroSlopeWarning, stacklevel=2)
    return ExpFit(float(a), float(b), sse, iters)


def _pole_free(acc, b) -> bool:
    den = 1.0 - b * acc
    return bool(np.all(den > 1e-12) or np.all(den < -1e-12))


def fit_rational(points: Iterable[Sequence[float]]) -> RatFit:
    """Least-squares fit of ``C_D = a * (A - 0.1) / (1 - b * A)``."""
    acc, cost = _points(points)
    if not np.all(np.isfinite(cost)):
        raise PoleError("rational fit: non-finite cost values mark a pole inside the data")
    # C (1 - bA) = a (A - 0.1)  ->  C = a (A - 0.1) + b (A C)
    lin = np.column_stack([acc - CHANCE_OFFSET, acc * cost])
    theta0, *_ = np.linalg.lstsq(lin, cost, rcond=None)
    if not _pole_free(acc, theta0[1]):
        theta0 = np.array([theta0[0], 0.0])

    def residual_jac(theta):
        a, b = theta
        den = 1.0 - b * acc
        num = acc - CHANCE_OFFSET
        return cost - a * num / den, np.column_stack([num / den, a * num * acc / den ** 2])

    (a, b), sse, iters = _gauss_newton(residual_jac, theta0,
                                       valid=lambda th: _pole_free(acc, th[1]),
                                       label="rational fit")
    if not _pole_free(acc, b):
        raise PoleError(f"rational fit: pole A = 1/b = {1.0 / b:.6g} lies inside the data range")
    return RatFit(float(a), float(b), sse, iters)


def _check_exp(fit: ExpFit):
    if fit.a <= 0 or fit.b <= 0:
        raise ParameterError(f"closed-form optimum needs a, b > 0 (got a={fit.a}, b={fit.b})")


def _clamp(value: float, bounds) -> float:
    lo, hi = bounds
    return float(min(max(value, lo), hi))


def unclamped_accuracy_alpha(fit: ExpFit, alpha: float) -> float:
    """``(1/b) ln((1 - alpha) / (alpha a b))``; infinite at the edges."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    _check_exp(fit)
    if alpha == 0.0:
        return math.inf
    arg = (1.0 - alpha) / (alpha * fit.a * fit.b)
    return -math.inf if arg <= 0 else math.log(arg) / fit.b


def optimal_accuracy_alpha(fit: ExpFit, alpha: float, bounds=(0.0, 1.0)) -> float:
    """Accuracy minimising ``alpha * C_D(A) + (1 - alpha)(1 - A)``, clamped to ``bounds``."""
    raw = unclamped_accuracy_alpha(fit, alpha)
    if alpha == 0.0:
        warnings.warn("alpha = 0 leaves the optimum unbounded; clamped to the maximum accuracy",
                      ClampWarning, stacklevel=2)
    return _clamp(raw, bounds)


def alpha_from_binary(gamma: float, e_x: float, e_d_max: float) -> float:
    """Relative importance equivalent to a binary decision with penalty ``gamma``."""
    if gamma < 1.0:
        raise ParameterError(f"gamma must be >= 1, got {gamma}")
    if e_x < 0:
        raise ParameterError(f"e_x must be >= 0, got {e_x}")
    if e_d_max <= 0:
        raise ParameterError(f"e_d_max must be positive, got {e_d_max}")
    return 1.0 / (1.0 + (gamma - 1.0) * e_x / e_d_max)


def unclamped_accuracy_binary(fit: ExpFit, gamma: float, e_x: float, e_d_max: float) -> float:
    alpha_from_binary(gamma, e_x, e_d_max)  # validation only
    _check_exp(fit)
    arg = (gamma - 1.0) * e_x / (e_d_max * fit.a * fit.b)
    return -math.inf if arg <= 0 else math.log(arg) / fit.b


def optimal_accuracy_binary(fit: ExpFit, gamma: float, e_x: float, e_d_max: float,
                            bounds=(0.0, 1.0)) -> float:
    """Accuracy minimising the expected energy of a binary decision, clamped to ``bounds``."""
    return _clamp(unclamped_accuracy_binary(fit, gamma, e_x, e_d_max), bounds)


@dataclass(frozen=True)
class AchievableSet:
    """``(depth, accuracy, decision cost)`` entries in ascending depth."""

    entries: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        entries = tuple(sorted((int(d), float(a), float(c)) for d, a, c in self.entries))
        if not entries:
            raise ParameterError("achievable set is empty")
        if len({d for d, _, _ in entries}) != len(entries):
            raise ParameterError("achievable depths must be unique")
        object.__setattr__(self, "entries", entries)

    @property
    def bounds(self) -> tuple[float, float]:
        accs = [a for _, a, _ in self.entries]
        return min(accs), max(accs)

    @property
    def max_depth(self) -> int:
        return self.entries[-1][0]

    def pareto(self) -> "AchievableSet":
        """Drop depths that are no more accurate than some shallower depth."""
        kept, best = [], -math.inf
        for d, a, c in self.entries:
            if a > best:
                kept.append((d, a, c))
                best = a
        return AchievableSet(tuple(kept))


def nearest_achievable(a_star: float, achievable: AchievableSet) -> tuple[int, float]:
    """Entry closest in accuracy to ``a_star``; ties go to the shallower depth."""
    best = None
    for d, a, _ in achievable.entries:
        gap = abs(a - a_star)
        if best is None or gap < best[0] - 1e-12:
            best = (gap, d, a)
    return best[1], best[2]


def region_map(fit: ExpFit, achievable: AchievableSet, gamma_grid, ratio_grid) -> np.ndarray:
    """Optimal depth for each ``(gamma, E_X / E_Dmax)`` cell.

    Rows follow ``gamma_grid`` and columns ``ratio_grid``. Dominated depths
    are pruned first, so depth grows monotonically with both axes.
    """
    gammas = np.asarray(list(gamma_grid), dtype=float)
    ratios = np.asarray(list(ratio_grid), dtype=float)
    if gammas.size == 0 or ratios.size == 0:
        raise ParameterError("region map grids must be non-empty")
    front = achievable.pareto()
    bounds = front.bounds
    out = np.empty((gammas.size, ratios.size), dtype=int)
    for i, g in enumerate(gammas):
        for j, r in enumerate(ratios):
            a_star = optimal_accuracy_binary(fit, g, r, 1.0, bounds)
            out[i, j] = nearest_achievable(a_star, front)[0]
    return out


def parse_grid(text: str) -> np.ndarray:
    """Grid from ``"v1,v2,..."`` or ``"start:stop[:lin|log][:count]"`` (count defaults to 25)."""
    if ":" not in text:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    parts = text.split(":")
    start, stop = float(parts[0]), float(parts[1])
    kind = parts[2] if len(parts) > 2 and parts[2] else "lin"
    count = int(parts[3]) if len(parts) > 3 else 25
    if kind == "log":
        if start <= 0 or stop <= 0:
            raise ParameterError("log grids need positive endpoints")
        return np.geomspace(start, stop, count)
    if kind == "lin":
        return np.linspace(start, stop, count)
    raise ParameterError(f"unknown grid spacing {kind!r}")
