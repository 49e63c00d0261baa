"""Acceptance suite: one test per criterion, summarised at the end of the run.

Criteria 6 and 7 share one desk-scale training run (about five minutes
on a single core). Criterion 9 needs the CIFAR-10 binaries in
``EXITWISE_CIFAR_DIR`` and several hours; it is skipped otherwise.
"""
import math
import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from exitwise.cost_analysis import (
    AchievableSet,
    ExpFit,
    alpha_from_binary,
    fit_exponential,
    fit_rational,
    parse_grid,
    region_map,
    unclamped_accuracy_alpha,
    unclamped_accuracy_binary,
)
from exitwise.dataset import load_cifar10, split_validation, synthetic_blobs
from exitwise.energy import mac_conv, mac_network
from exitwise.exit_policy import BETA_PRESETS, ExitPolicyParams, evaluate_policy, policy_reports
from exitwise.model import (
    Arch,
    backward_pass,
    build_multi_exit,
    build_multiplexed_bank,
    count_params,
    forward,
    loss_value,
    predict_exits,
)
from exitwise.training import (
    TrainConfig,
    calibrate,
    exit_accuracies,
    experiment_delta_accuracy,
    sweep_depth,
    train_combined,
)

from oracles import binary_energy, counted_conv_macs, exp_cost, grid_argmin

# desk-scale task: 10 classes of 16x16x3 blobs with class-oriented texture
DESK_DATA = dict(n_per_class=800, class_count=10, image_shape=(16, 16, 3), separation=11.0,
                 seed=1, texture=0.08, wavelength=8.0, spread=1.0)
DESK_TRAIN = TrainConfig(lr=2e-3, batch_size=32, max_epochs=100, patience=10, seed=0)
DESK_DEPTH, DESK_WIDTH = 6, 8
DESIRED_GRID = np.round(np.arange(1, 100) / 100.0, 2)


def detail(record_property, text):
    record_property("detail", text)


# --- 1 ---------------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_c1_parameter_counts(record_property):
    start = time.perf_counter()
    multi = count_params(Arch.multi_exit(6, 64))
    bank = count_params(build_multiplexed_bank(6, 64))
    reduction = (bank - multi) / bank
    elapsed = time.perf_counter() - start
    detail(record_property, f"multi-exit {multi:,}, bank {bank:,}, reduction {reduction:.1%}, "
                            f"{elapsed:.2f} s")
    assert multi == 2_369_084 and bank == 2_597_820
    assert round(reduction, 3) == 0.088
    assert elapsed < 1.0


# --- 2 ---------------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_c2_mac_oracle(record_property):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        w_in, h_in = (int(v) for v in rng.integers(1, 33, 2))
        w_f, h_f = int(rng.integers(1, w_in + 1)), int(rng.integers(1, h_in + 1))
        n_c, n_f = (int(v) for v in rng.integers(1, 17, 2))
        mismatches += mac_conv(w_in, h_in, w_f, h_f, n_c, n_f) != counted_conv_macs(
            w_in, h_in, w_f, h_f, n_c, n_f)
    elapsed = time.perf_counter() - start
    detail(record_property, f"{100 - mismatches}/100 shapes exact, {elapsed:.2f} s")
    assert mismatches == 0 and elapsed < 10.0


# --- 3 ---------------------------------------------------------------------------------

def interior_draws(n, seed):
    """``n`` random ``(a, b, alpha, gamma, ratio)`` with both optima inside (0, 1)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        a, b = rng.uniform(0.001, 0.1), rng.uniform(2.0, 10.0)
        alpha, gamma, ratio = rng.uniform(0.02, 0.98), rng.uniform(1.0, 50.0), rng.uniform(0.01, 10.0)
        fit = ExpFit(a, b, 0.0)
        if 0.01 < unclamped_accuracy_alpha(fit, alpha) < 0.99 and \
                0.01 < unclamped_accuracy_binary(fit, gamma, ratio, 1.0) < 0.99:
            out.append((a, b, alpha, gamma, ratio))
    return out


@pytest.mark.criterion(3)
def test_c3_closed_form_optima(record_property):
    worst_alpha = worst_binary = worst_identity = 0.0
    for a, b, alpha, gamma, ratio in interior_draws(100, seed=3):
        fit = ExpFit(a, b, 0.0)
        worst_alpha = max(worst_alpha, abs(unclamped_accuracy_alpha(fit, alpha)
                                           - grid_argmin(exp_cost(a, b, alpha))))
        star = unclamped_accuracy_binary(fit, gamma, ratio, 1.0)
        worst_binary = max(worst_binary, abs(star - grid_argmin(binary_energy(a, b, gamma, ratio))))
        via_alpha = unclamped_accuracy_alpha(fit, alpha_from_binary(gamma, ratio, 1.0))
        worst_identity = max(worst_identity, abs(star - via_alpha))
    detail(record_property, f"max grid gap {worst_alpha:.1e} (cost) / {worst_binary:.1e} (energy), "
                            f"identity gap {worst_identity:.1e}")
    assert worst_alpha <= 1e-4 and worst_binary <= 1e-4 and worst_identity <= 1e-12


# --- 4 ---------------------------------------------------------------------------------

@pytest.mark.criterion(4)
def test_c4_gradients(record_property):
    start = time.perf_counter()
    model = build_multi_exit(3, 4, (8, 8, 3), 10, seed=4, dtype=np.float64)
    rng = np.random.default_rng(4)
    x, y = rng.random((6, 8, 8, 3)), rng.integers(0, 10, 6)
    lam, eps = 0.001, 1e-6

    def loss():
        return loss_value(model, forward(model, x), y, lam)

    grads = backward_pass(model, forward(model, x), y, lam)
    worst, name_worst = 0.0, ""
    for name, arr in model.params().items():
        numeric = np.empty_like(arr)
        flat, nflat = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            nflat[i] = (up - down) / (2 * eps)
        err = np.linalg.norm(grads[name] - numeric) / max(
            np.linalg.norm(grads[name]), np.linalg.norm(numeric), 1e-12)
        if err > worst:
            worst, name_worst = err, name
    elapsed = time.perf_counter() - start
    detail(record_property, f"worst relative error {worst:.1e} ({name_worst}), "
                            f"{count_params(model):,} parameters, {elapsed:.1f} s")
    assert worst <= 1e-6 and elapsed < 30.0


# --- 5 ---------------------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_c5_fit_recovery(record_property):
    worst = 0.0

    @settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
    @given(st.floats(0.005, 0.2), st.floats(1.0, 8.0), st.floats(0.01, 0.5), st.floats(0.1, 1.0),
           st.floats(0.2, 0.5))
    def check(a_exp, b_exp, a_rat, b_rat, lo):
        nonlocal worst
        acc = np.linspace(lo, 0.9, 6)
        assume(np.all(1 - b_rat * acc > 0.05))
        e = fit_exponential(np.column_stack([acc, a_exp * np.exp(b_exp * acc)]))
        r = fit_rational(np.column_stack([acc, a_rat * (acc - 0.1) / (1 - b_rat * acc)]))
        gap = max(abs(e.a - a_exp), abs(e.b - b_exp), abs(r.a - a_rat), abs(r.b - b_rat))
        worst = max(worst, gap)
        assert gap <= 1e-6

    try:
        check()
    finally:
        detail(record_property, f"worst parameter error {worst:.1e}")


# --- 6 and 7 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk():
    full = synthetic_blobs(**DESK_DATA)
    train, test = split_validation(full, 0.3, seed=1)
    start = time.perf_counter()
    shape, k = train.image_shape, train.class_count
    combined = train_combined(build_multi_exit(DESK_DEPTH, DESK_WIDTH, shape, k, DESK_TRAIN.seed),
                              train, DESK_TRAIN)[0]
    delta = experiment_delta_accuracy(train, test, DESK_TRAIN, DESK_DEPTH, DESK_WIDTH,
                                      combined=combined)
    elapsed = time.perf_counter() - start
    calibrate(combined, train)
    return dict(train=train, test=test, model=combined, delta=delta, seconds=elapsed)


@pytest.mark.criterion(6)
@pytest.mark.slow
def test_c6_desk_training(desk, record_property):
    model, test, delta = desk["model"], desk["test"], desk["delta"]
    acc = exit_accuracies(model, test)
    conf = predict_exits(model, test.images).max(axis=2).mean(axis=1)
    chance = 1.0 / test.class_count
    detail(record_property,
           f"exit accuracy {np.round(acc, 3).tolist()}, mean confidence {np.round(conf.astype(float), 3).tolist()}, "
           f"mean delta combined {delta.mean_delta_combined:+.4f} vs individual "
           f"{delta.mean_delta_individual:+.4f}, {desk['seconds']:.0f} s")
    assert (acc > 3 * chance).all()
    assert (np.diff(conf) >= -0.02).all()
    assert delta.mean_delta_combined >= delta.mean_delta_individual
    assert desk["seconds"] < 600


@pytest.mark.criterion(7)
@pytest.mark.slow
def test_c7_policy_dominance(desk, record_property):
    model, test = desk["model"], desk["test"]
    reports = policy_reports(model, test, DESIRED_GRID, BETA_PRESETS)
    savings = np.array([r.savings for r in reports])
    matched = np.isfinite(savings)
    macs = mac_network(model.arch)
    cal = model.calibration
    n = len(test)

    forced_ok = True
    for beta_acc, beta_conf in BETA_PRESETS:
        target = beta_acc * cal[0]
        r = evaluate_policy(model, test, ExitPolicyParams.for_model(model, target, beta_acc, beta_conf))
        forced_ok &= r.usage[0] == n and r.mean_macs == macs.head_macs[0]

    # no gate can pass and the confidence threshold exceeds 1
    r = evaluate_policy(model, test, ExitPolicyParams.for_model(model, 0.99, 0.8, 1.1))
    fallback_ok = r.usage[-1] == n and r.mean_macs == macs.total

    worst = float(savings[matched].min())
    detail(record_property,
           f"{int(matched.sum())} matched points, min savings {worst:+.4f}, "
           f"max {float(savings[matched].max()):+.4f}, exit-1 forcing {'ok' if forced_ok else 'broken'}, "
           f"fallback {'ok' if fallback_ok else 'broken'}")
    assert forced_ok and fallback_ok
    losing = [f"beta={r.beta_acc:g},{r.beta_conf:g} desired={r.desired_accuracy:g} savings={r.savings:+.4f}"
              for r in reports if r.savings < -1e-12]
    assert not losing, f"policy costs more than the baseline at {len(losing)} points: {losing}"
    assert (savings[matched] > 0).any()


# --- 8 ---------------------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_c8_region_map(record_property):
    rng = np.random.default_rng(8)
    gammas, ratios = parse_grid("1:1e6:log:25"), parse_grid("1e-4:1e6:log:25")
    monotone = 0
    for _ in range(20):
        a, b = rng.uniform(0.001, 0.2), rng.uniform(1.0, 10.0)
        accs = np.sort(rng.uniform(0.2, 0.95, 6))
        ach = AchievableSet(tuple((d + 1, float(v), 0.1 * (d + 1)) for d, v in enumerate(accs)))
        fit = ExpFit(a, b, 0.0)
        m = region_map(fit, ach, gammas, ratios)
        assert (region_map(fit, ach, [1.0], ratios) == 1).all()
        assert (region_map(fit, ach, [1e6], [1e6]) == ach.pareto().max_depth).all()
        monotone += bool((np.diff(m, axis=0) >= 0).all() and (np.diff(m, axis=1) >= 0).all())
    detail(record_property, f"{monotone}/20 maps monotone in both axes")
    assert monotone == 20


# --- 9 ---------------------------------------------------------------------------------

CIFAR_DIR = os.environ.get("EXITWISE_CIFAR_DIR")


@pytest.mark.criterion(9)
@pytest.mark.extended
@pytest.mark.skipif(not CIFAR_DIR, reason="optional; set EXITWISE_CIFAR_DIR to run")
def test_c9_cifar_extended(record_property):
    train, test = load_cifar10(CIFAR_DIR)
    cfg = TrainConfig()
    rows = sweep_depth(range(1, 12), 64, train, test, cfg)
    accs = np.array([r.test_acc for r in rows])
    best = int(np.nanargmax(accs)) + 1
    model = train_combined(build_multi_exit(6, 64), train, cfg)[0]
    calibrate(model, train)
    reports = policy_reports(model, test, DESIRED_GRID, [(0.8, 1.1)])
    above = np.mean([r.accuracy > r.desired_accuracy for r in reports
                     if r.desired_accuracy <= max(exit_accuracies(model, test))])
    savings = max(r.savings for r in reports if math.isfinite(r.savings))
    detail(record_property, f"best depth {best}, peak accuracy {np.nanmax(accs):.3f}, "
                            f"share above y=x {above:.2f}, max savings {savings:.1%}")
    assert best == 6
    assert abs(np.nanmax(accs) - 0.80) <= 0.03
    assert above > 0.5
    assert abs(savings - 0.42) <= 0.10
