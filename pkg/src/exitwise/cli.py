"""Command-line front end.

Subcommands: ``train``, ``sweep``, ``analyze``, ``exit-eval``, ``macs``
and ``delta-acc``. Settings come from command-line flags, then a flat
``key = value`` file given with ``--config``, then built-in defaults.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 numerical, 4 state.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from . import __version__
from .cost_analysis import (
    AchievableSet,
    ExpFit,
    alpha_from_binary,
    fit_exponential,
    fit_rational,
    nearest_achievable,
    optimal_accuracy_alpha,
    optimal_accuracy_binary,
    parse_grid,
    region_map,
)
from .dataset import Dataset, load_cifar10, split_validation, synthetic_blobs
from .energy import mac_network
from .errors import (
    ArchError,
    CheckpointError,
    FitError,
    FormatError,
    ParameterError,
    StateError,
)
from .exit_policy import (
    BETA_PRESETS,
    ExitPolicyParams,
    build_confidence_table,
    energy_accuracy_with_policy,
    evaluate_policy,
    policy_reports,
)
from .model import Arch, build_multi_exit, build_single, checkpoint_bytes, load_checkpoint
from .report import Outputs, bar_plot, fmt, heatmap, line_plot, read_csv
from .training import (
    TrainConfig,
    calibrate,
    evaluate,
    experiment_delta_accuracy,
    sweep_depth,
    sweep_width,
    train_combined,
    train_individual,
    train_single,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_STATE = 0, 1, 2, 3, 4

log = logging.getLogger("exitwise")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- option groups -----------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", metavar="FILE", help="flat 'key = value' file of option defaults")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, default=0, help="seed for initialisation and training")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_data(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", default="synthetic",
                   help="'synthetic' or a directory holding the CIFAR-10 binary batches")
    g.add_argument("--train-limit", type=int, default=0,
                   help="use only the first N training images (0 = all)")
    g.add_argument("--test-limit", type=int, default=0,
                   help="use only the first N test images (0 = all)")
    g.add_argument("--per-class", type=int, default=800, help="synthetic images per class")
    g.add_argument("--classes", type=int, default=10, help="synthetic class count")
    g.add_argument("--image-size", type=int, default=16, help="synthetic image height and width")
    g.add_argument("--channels", type=int, default=3, help="synthetic image channels")
    g.add_argument("--separation", type=float, default=11.0,
                   help="synthetic class-centre distance in noise standard deviations")
    g.add_argument("--noise", type=float, default=0.1, help="synthetic pixel noise std")
    g.add_argument("--jitter", type=int, default=0, help="synthetic max template shift in pixels")
    g.add_argument("--texture", type=float, default=0.08,
                   help="amplitude of the class-oriented grating (0 disables it)")
    g.add_argument("--wavelength", type=float, default=8.0, help="grating wavelength in pixels")
    g.add_argument("--spread", type=float, default=1.0,
                   help="per-sample template scale drawn from U(1 - spread, 1 + spread)")
    g.add_argument("--test-fraction", type=float, default=0.3,
                   help="share of synthetic data held out as the test set")
    g.add_argument("--data-seed", type=int, default=1, help="seed of the synthetic generator")


def _add_train(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--beta-m", type=float, default=0.9, help="Adam first-moment decay")
    g.add_argument("--beta-v", type=float, default=0.999, help="Adam second-moment decay")
    g.add_argument("--eps", type=float, default=1e-8, help="Adam epsilon")
    g.add_argument("--batch-size", type=int, default=128)
    g.add_argument("--max-epochs", type=int, default=100)
    g.add_argument("--patience", type=int, default=10,
                   help="epochs without validation improvement before stopping")
    g.add_argument("--l2", type=float, default=0.001, help="L2 penalty on weights")
    g.add_argument("--dropout-keep", type=float, default=0.8,
                   help="keep probability of the dropout on head inputs")
    g.add_argument("--dropout-is-drop-prob", action="store_true",
                   help="interpret --dropout-keep as a drop probability")
    g.add_argument("--val-fraction", type=float, default=0.1,
                   help="stratified validation share for early stopping")


def _add_arch(p, depth=6, width=64):
    p.add_argument("--depth", type=int, default=depth, help="total layers (convs + 1 head)")
    p.add_argument("--width", type=int, default=width, help="filters per conv layer")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exitwise", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a network and write checkpoint, history and calibration")
    _add_common(p)
    _add_data(p)
    _add_train(p)
    _add_arch(p)
    p.add_argument("--mode", choices=("single", "combined", "individual"), default="combined")

    p = sub.add_parser("sweep", help="depth or width sweep of single-exit networks")
    _add_common(p)
    _add_data(p)
    _add_train(p)
    p.add_argument("--mode", choices=("depth", "width"), default="depth")
    p.add_argument("--range", dest="values", default="1:6",
                   help="depths or widths: 'lo:hi' (inclusive) or a comma list")
    p.add_argument("--depth", type=int, default=6, help="fixed depth for width sweeps")
    p.add_argument("--width", type=int, default=64, help="fixed width for depth sweeps")
    p.add_argument("--alphas", default="0,0.5,1", help="comma list of alpha values for cost columns")

    p = sub.add_parser("analyze", help="curve fit, optimal operating points and region map")
    _add_common(p)
    p.add_argument("--input", help="sweep.csv produced by 'sweep'")
    p.add_argument("--fit", choices=("exp", "rat"), default="exp", help="curve family to fit")
    p.add_argument("--fit-max-depth", type=int, default=6,
                   help="only depth-sweep rows up to this depth enter the fit")
    p.add_argument("--a", type=float, help="explicit exponential coefficient a")
    p.add_argument("--b", type=float, help="explicit exponential rate b")
    p.add_argument("--achievable", help="comma list of accuracies for depths 1, 2, ...")
    p.add_argument("--alpha", help="comma list of alpha values for optimal.csv")
    p.add_argument("--binary", action="store_true", help="binary-decision optimum for --gamma/--ratio")
    p.add_argument("--gamma", help="value (binary) or grid 'lo:hi[:lin|log][:n]' (region map)")
    p.add_argument("--ratio", help="E_X / E_Dmax; value (binary) or grid (region map)")
    p.add_argument("--region-map", action="store_true", help="write region_map.csv and .svg")

    p = sub.add_parser("exit-eval", help="evaluate the dynamic exit policy of a checkpoint")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--desired-acc", type=float, default=0.8,
                   help="target accuracy for policy_report.csv")
    p.add_argument("--betas", default="1,1;0.8,1.1",
                   help="';'-separated beta_acc,beta_conf pairs")
    p.add_argument("--grid", default="0:1:lin:21", help="desired-accuracy grid for the sweeps")

    p = sub.add_parser("macs", help="print the MAC breakdown of an architecture")
    _add_arch(p)
    p.add_argument("--input-shape", default="32x32x3", help="HxWxC")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--multi-exit", action="store_true", help="one head per position")
    p.add_argument("--config", metavar="FILE", help=argparse.SUPPRESS)

    p = sub.add_parser("delta-acc", help="multi-exit vs multiplexed-bank accuracy change")
    _add_common(p)
    _add_data(p)
    _add_train(p)
    _add_arch(p)
    return parser


# --- config file -------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    command = next((a for a in argv if not a.startswith("-")), None)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub = sub_action.choices.get(command)
    if sub is None:
        return
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for '{command}'")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = raw  # argparse applies the option's type to string defaults
    sub.set_defaults(**defaults)


# --- helpers -------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, beta_m=args.beta_m, beta_v=args.beta_v, eps=args.eps,
                       batch_size=args.batch_size, max_epochs=args.max_epochs,
                       patience=args.patience, l2_lambda=args.l2,
                       dropout_keep=args.dropout_keep,
                       dropout_is_drop_prob=args.dropout_is_drop_prob,
                       val_fraction=args.val_fraction, seed=args.seed)


def load_data(args) -> tuple[Dataset, Dataset]:
    if args.dataset == "synthetic":
        shape = (args.image_size, args.image_size, args.channels)
        full = synthetic_blobs(args.per_class, args.classes, shape, args.separation,
                               args.data_seed, noise=args.noise, jitter=args.jitter,
                               texture=args.texture, wavelength=args.wavelength,
                               spread=args.spread)
        train, test = split_validation(full, args.test_fraction, args.data_seed)
        train.name, test.name = f"{full.name}-train", f"{full.name}-test"
    else:
        train, test = load_cifar10(args.dataset)
    if args.train_limit:
        train = train.subset(np.arange(min(args.train_limit, len(train))))
    if args.test_limit:
        test = test.subset(np.arange(min(args.test_limit, len(test))))
    return train, test


def parse_int_range(text: str) -> list[int]:
    if ":" in text:
        lo, hi = (int(v) for v in text.split(":", 1))
        return list(range(lo, hi + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_betas(text: str) -> list[tuple[float, float]]:
    out = []
    for pair in text.split(";"):
        vals = parse_floats(pair)
        if len(vals) != 2:
            raise UsageError(f"beta pair {pair!r} needs two values")
        out.append((vals[0], vals[1]))
    return out


def parse_shape(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.lower().split("x")]
    if len(parts) != 3:
        raise UsageError(f"input shape {text!r} must be HxWxC")
    return tuple(parts)


def _alpha_column(alpha: float) -> str:
    return f"cost_alpha{alpha:g}"


SWEEP_BASE_COLUMNS = ["mode", "param", "macs", "c_d", "train_acc", "test_acc"]


def sweep_header(alphas) -> list[str]:
    return SWEEP_BASE_COLUMNS + [_alpha_column(a) for a in alphas] + ["error"]


# --- commands --------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _train_config(args)
    train, test = load_data(args)
    shape, k = train.image_shape, train.class_count
    if args.mode == "single":
        model = build_single(args.depth, args.width, shape, k, args.seed)
        model, hist = train_single(model, train, cfg)
    elif args.mode == "combined":
        model = build_multi_exit(args.depth, args.width, shape, k, args.seed)
        model, hist = train_combined(model, train, cfg)
    else:
        model = build_multi_exit(args.depth, args.width, shape, k, args.seed)
        model, hist = train_individual(model, train, cfg)
    calibrate(model, train)
    test_acc = evaluate(model, test)[1]
    out = Outputs(args.out)
    out.add("model.mxec", checkpoint_bytes(model))
    out.add_csv("history.csv", ["phase", "epoch", "train_loss", "train_acc", "val_loss", "val_acc"],
                hist.rows())
    out.add_csv("calibration.csv", ["exit", "train_acc", "test_acc"],
                [(i + 1, a, t) for i, (a, t) in enumerate(zip(model.calibration, test_acc))])
    out.commit()
    print(f"trained {args.mode} depth={args.depth} width={args.width}: "
          f"{len(hist)} epochs, best epoch {hist.best_epoch}, "
          f"test accuracy per exit {', '.join(f'{a:.3f}' for a in test_acc)}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _train_config(args)
    alphas = parse_floats(args.alphas)
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise UsageError(f"alpha {a} outside [0, 1]")
    values = parse_int_range(args.values)
    if not values:
        raise UsageError("empty sweep range")
    train, test = load_data(args)
    if args.mode == "depth":
        rows = sweep_depth(values, args.width, train, test, cfg)
    else:
        rows = sweep_width(args.depth, values, train, test, cfg)
    ok = [r for r in rows if not r.error]
    if not ok:
        for r in rows:
            print(f"error: {args.mode} {r.param}: {r.error}", file=sys.stderr)
        return EXIT_USAGE
    e_max = max(r.macs for r in ok)
    table = []
    for r in rows:
        if r.error:
            table.append([r.mode, r.param, None, math.nan, math.nan, math.nan]
                         + [math.nan] * len(alphas) + [r.error])
            continue
        c_d = r.macs / e_max
        costs = [a * c_d + (1 - a) * (1 - r.test_acc) for a in alphas]
        table.append([r.mode, r.param, r.macs, c_d, r.train_acc, r.test_acc] + costs + [""])
    out = Outputs(args.out)
    out.add_csv("sweep.csv", sweep_header(alphas), table)
    xs = [r.param for r in ok]
    series = {"train accuracy": (xs, [r.train_acc for r in ok]),
              "test accuracy": (xs, [r.test_acc for r in ok])}
    costs = {f"cost (alpha={a:g})": (xs, [row[6 + i] for row in table if not row[-1]])
             for i, a in enumerate(alphas)}
    out.add("sweep.svg", line_plot(series, args.mode, "accuracy",
                                   f"accuracy and cost vs {args.mode}", secondary=costs))
    out.commit()
    for r in rows:
        if r.error:
            print(f"warning: {args.mode} {r.param}: {r.error}", file=sys.stderr)
    print(f"wrote {len(rows)} sweep rows to {args.out}/sweep.csv")
    return EXIT_OK


def _sweep_points(path, max_depth):
    rows = [r for r in read_csv(path) if not r.get("error")]
    if not rows:
        raise UsageError(f"{path} holds no usable sweep rows")
    mode = rows[0]["mode"]
    if mode == "depth":
        rows = [r for r in rows if int(r["param"]) <= max_depth]
    macs = np.array([float(r["macs"]) for r in rows])
    c_d = macs / macs.max()
    acc = np.array([float(r["test_acc"]) for r in rows])
    params = [int(r["param"]) for r in rows]
    return mode, params, acc, c_d


def cmd_analyze(args) -> int:
    out = Outputs(args.out)
    fit = None
    achievable = None
    if args.input:
        mode, params, acc, c_d = _sweep_points(args.input, args.fit_max_depth)
        if mode == "depth":
            achievable = AchievableSet(tuple(zip(params, acc, c_d)))
        points = np.column_stack([acc, c_d])
        if args.a is None:
            fitted = fit_exponential(points) if args.fit == "exp" else fit_rational(points)
            out.add_csv("fit.csv", ["a", "b", "residual"], [(fitted.a, fitted.b, fitted.residual)])
            if args.fit == "exp":
                fit = fitted
    if args.a is not None or args.b is not None:
        if args.a is None or args.b is None:
            raise UsageError("--a and --b must be given together")
        fit = ExpFit(args.a, args.b, math.nan)
    if args.achievable:
        accs = parse_floats(args.achievable)
        achievable = AchievableSet(tuple((i + 1, a, math.nan) for i, a in enumerate(accs)))
    if args.alpha and args.binary:
        raise UsageError("--alpha and --binary both write optimal.csv; choose one")
    front = achievable.pareto() if achievable is not None else None
    bounds = front.bounds if front is not None else (0.0, 1.0)

    def need_fit():
        if fit is None:
            raise UsageError("optimal points need an exponential fit: use --input with "
                             "--fit exp, or --a and --b")
        return fit

    def depth_for(a_star):
        return nearest_achievable(a_star, front)[0] if front is not None else None

    if args.alpha:
        rows = []
        for alpha in parse_floats(args.alpha):
            a_star = optimal_accuracy_alpha(need_fit(), alpha, bounds)
            rows.append((alpha, a_star, depth_for(a_star)))
        out.add_csv("optimal.csv", ["alpha", "a_star", "depth"], rows)
    if args.binary:
        if args.gamma is None or args.ratio is None:
            raise UsageError("--binary needs --gamma and --ratio")
        rows = []
        for g in parse_grid(args.gamma):
            for r in parse_grid(args.ratio):
                alpha_from_binary(g, r, 1.0)
                if (g - 1.0) * r == 0.0:
                    # wrong decisions cost nothing extra: the cheapest network wins for any curve
                    rows.append((g, r, bounds[0], depth_for(bounds[0]) or 1))
                    continue
                a_star = optimal_accuracy_binary(need_fit(), g, r, 1.0, bounds)
                rows.append((g, r, a_star, depth_for(a_star)))
        out.add_csv("optimal.csv", ["gamma", "ratio", "a_star", "depth"], rows)
    if args.region_map:
        if achievable is None:
            raise UsageError("--region-map needs an achievable set (--input depth sweep or --achievable)")
        if args.gamma is None or args.ratio is None:
            raise UsageError("--region-map needs --gamma and --ratio grids")
        gammas, ratios = parse_grid(args.gamma), parse_grid(args.ratio)
        depths = region_map(need_fit(), achievable, gammas, ratios)
        header = ["gamma\\ratio"] + [fmt(r) for r in ratios]
        out.add_csv("region_map.csv", header,
                    [[g] + list(row) for g, row in zip(gammas, depths)])
        out.add("region_map.svg", heatmap(depths, gammas, ratios, "gamma", "E_X / E_Dmax",
                                          "optimal number of layers"))
    if not out.files:
        raise UsageError("nothing to do: give --input, --alpha, --binary or --region-map")
    out.commit()
    for name in out.files:
        print(f"wrote {args.out}/{name}")
    return EXIT_OK


def cmd_exit_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if model.calibration is None:
        raise StateError(f"{args.checkpoint} carries no calibration; re-run 'exitwise train', "
                         "which calibrates on the training set before saving")
    betas = parse_betas(args.betas)
    grid = parse_grid(args.grid)
    train, test = load_data(args)
    if tuple(test.image_shape) != model.arch.input_shape:
        raise UsageError(f"dataset images {test.image_shape} do not fit model input "
                         f"{model.arch.input_shape}")
    reports = policy_reports(model, test, grid, betas)
    single = [evaluate_policy(model, test,
                              ExitPolicyParams.for_model(model, args.desired_acc, ba, bc),
                              baseline=(reports[0].baseline_accuracy, reports[0].baseline_macs))
              for ba, bc in betas]
    table = energy_accuracy_with_policy(model, test, grid, betas, reports=reports)
    conf = build_confidence_table(model, train)
    n_exits = model.exit_count
    out = Outputs(args.out)
    out.add_csv(
        "policy_report.csv",
        ["beta_acc", "beta_conf", "desired", "accuracy", "mean_macs", "normalized_energy",
         "baseline_macs", "savings"] + [f"usage_exit{l}" for l in range(1, n_exits + 1)],
        [(r.beta_acc, r.beta_conf, r.desired_accuracy, r.accuracy, r.mean_macs,
          r.normalized_energy, r.matched_baseline_macs, r.savings, *r.usage) for r in single],
    )
    out.add_csv("acc_vs_desired.csv", ["beta_acc", "beta_conf", "desired", "test_acc"],
                [(r.beta_acc, r.beta_conf, r.desired_accuracy, r.accuracy) for r in reports])
    rows = [("baseline", None, None, None, e, a, en, en, 0.0) for e, a, en in table.baseline]
    rows += [("policy", ba, bc, d, None, a, en, ben, s) for ba, bc, d, a, en, ben, s in table.policy]
    out.add_csv("energy_vs_acc.csv",
                ["series", "beta_acc", "beta_conf", "desired", "exit", "accuracy", "energy",
                 "baseline_energy", "savings"], rows)
    out.add_csv("confidence_table.csv", ["exit", "min_confidence", "train_acc", "fraction"],
                conf.rows())
    curves = {}
    for ba, bc in betas:
        sel = [r for r in reports if (r.beta_acc, r.beta_conf) == (ba, bc)]
        curves[f"beta=({ba:g}, {bc:g})"] = ([r.desired_accuracy for r in sel],
                                            [r.accuracy for r in sel])
    out.add("acc_vs_desired.svg", line_plot(curves, "desired accuracy", "test accuracy",
                                            "test vs desired accuracy", identity=True))
    energy = {"fixed depth": ([a for _, a, _ in table.baseline], [e for _, _, e in table.baseline])}
    for ba, bc in betas:
        sel = sorted((a, en) for b1, b2, _, a, en, _, _ in table.policy if (b1, b2) == (ba, bc))
        energy[f"dynamic beta=({ba:g}, {bc:g})"] = ([a for a, _ in sel], [e for _, e in sel])
    out.add("energy_vs_acc.svg", line_plot(energy, "test accuracy", "normalised energy",
                                           "energy vs accuracy"))
    out.add("confidence.svg", line_plot(
        {f"exit {e + 1}": (conf.thresholds, conf.accuracy[e]) for e in range(n_exits)},
        "minimum confidence", "training accuracy", "accuracy vs minimum confidence"))
    out.commit()
    for r in single:
        print(f"beta=({r.beta_acc:g}, {r.beta_conf:g}) desired={r.desired_accuracy:g}: "
              f"accuracy {r.accuracy:.4f}, energy {r.normalized_energy:.4f}, "
              f"usage {list(map(int, r.usage))}")
    print(f"maximum savings over fixed depth: {table.max_savings:.4f}")
    return EXIT_OK


def cmd_macs(args) -> int:
    shape = parse_shape(args.input_shape)
    ctor = Arch.multi_exit if args.multi_exit else Arch.single
    breakdown = mac_network(ctor(args.depth, args.width, shape, args.classes))
    print("layer,macs")
    for name, m in breakdown.per_layer:
        print(f"{name},{m}")
    print("exit,cumulative_macs")
    for i, m in enumerate(breakdown.per_exit_cumulative, 1):
        print(f"{i},{m}")
    print(f"total,{breakdown.total}")
    return EXIT_OK


def cmd_delta_acc(args) -> int:
    cfg = _train_config(args)
    train, test = load_data(args)
    res = experiment_delta_accuracy(train, test, cfg, args.depth, args.width)
    rows = [(l + 1, b, i, c, di, dc) for l, (b, i, c, di, dc) in enumerate(zip(
        res.baseline, res.individual, res.combined, res.delta_individual, res.delta_combined))]
    rows.append(("mean", float(res.baseline.mean()), float(res.individual.mean()),
                 float(res.combined.mean()), res.mean_delta_individual, res.mean_delta_combined))
    out = Outputs(args.out)
    out.add_csv("delta_acc.csv", ["exit", "baseline_acc", "individual_acc", "combined_acc",
                                  "delta_individual", "delta_combined"], rows)
    exits = list(range(1, args.depth + 1))
    out.add("delta_acc.svg", bar_plot(exits, {"individual": res.delta_individual,
                                              "combined": res.delta_combined},
                                      "change in test accuracy", "multi-exit vs bank"))
    out.commit()
    print(f"mean change: individual {res.mean_delta_individual:+.4f}, "
          f"combined {res.mean_delta_combined:+.4f}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "exit-eval": cmd_exit_eval,
    "macs": cmd_macs,
    "delta-acc": cmd_delta_acc,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except UsageError as exc:
        print(f"exitwise: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"exitwise: error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.DEBUG, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ParameterError, ArchError) as exc:
        code, msg = EXIT_USAGE, exc
    except (OSError, FormatError, CheckpointError) as exc:
        code, msg = EXIT_IO, exc
    except (FitError, FloatingPointError, ArithmeticError) as exc:
        code, msg = EXIT_NUMERIC, exc
    except StateError as exc:
        code, msg = EXIT_STATE, exc
    print(f"exitwise {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
