"""Command-line entry point: ``advmp <command> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 non-finite numerics, 4 I/O error.
"""
import argparse
import os
import sys

import numpy as np

from . import analysis, config as cfgmod, export, runner
from .attacks import adv_loss_exact_linreg, as_mixture, pgd_rows, robust_evaluate
from .data import generate_dataset
from .errors import EXIT_OK, ConfigError, exit_code_for
from .models import SQUARED_ERROR
from .training import default_loss_kind


def load_config(path, overrides, output_dir=None):
    config = cfgmod.load(path) if path else cfgmod.ExperimentConfig()
    pairs = dict(cfgmod.parse_assignment(s, "--set") for s in overrides or ())
    if output_dir:
        pairs["output_dir"] = output_dir
    return cfgmod.apply_overrides(config, pairs)


def _setup(args):
    config = load_config(args.config, args.set, args.output_dir)
    data = generate_dataset(config.data)
    model = export.load_params(args.params) if getattr(args, "params", None) else runner.build_model(config.model, data)
    if model.input_dim != data.train.d:
        raise ConfigError(f"model expects d={model.input_dim} but data has d={data.train.d}")
    return config, data, model


def _print_table(reports, out):
    out.write(export.SUMMARY_HEADER + "\n")
    for label, rep in reports.items():
        row = rep.as_row()
        out.write(",".join([label] + [f"{row[c]:.4f}" for c in export.SUMMARY_COLUMNS]) + "\n")


def cmd_train(args, out):
    config = load_config(args.config, args.set, args.output_dir)
    res = runner.run_experiment(config)
    if res.reports:
        _print_table(res.reports, out)
    for k, v in res.scalars.items():
        out.write(f"{k} = {v:.6g}\n")
    out.write(f"artifacts: {os.path.dirname(res.paths['config'])}\n")


def cmd_attack(args, out):
    config, data, model = _setup(args)
    mixture = runner.build_mixture(config.threat, config.threat.eval_steps, config.threat.restarts)
    rng = np.random.default_rng(config.seed)
    if model.is_classifier:
        _print_table({"model": robust_evaluate(model, data.test, mixture, default_loss_kind(model), rng)}, out)
        return
    out.write("kind,epsilon,pgd_loss,exact_loss\n")
    for spec in as_mixture(mixture):
        _, losses = pgd_rows(model, data.test.X, data.test.y, spec, SQUARED_ERROR, rng)
        exact = adv_loss_exact_linreg(model.params, data.test.X, data.test.y, spec.kind, spec.epsilon)
        out.write(f"{spec.kind.value},{spec.epsilon:g},{losses.sum():.10g},{exact:.10g}\n")


def cmd_evaluate(args, out):
    config, data, model = _setup(args)
    if not model.is_classifier:
        raise ConfigError("evaluate reports robust accuracy and needs a classifier")
    mixture = runner.build_mixture(config.threat, config.threat.eval_steps, config.threat.restarts)
    rep = robust_evaluate(model, data.test, mixture, default_loss_kind(model), np.random.default_rng(config.seed))
    _print_table({"model": rep}, out)
    if args.out:
        export.write_summary({"model": rep}, args.out)


def cmd_landscape(args, out):
    config = load_config(args.config, args.set, args.output_dir)
    data = generate_dataset(config.data)
    grid = runner.run_landscape(config, data)
    path = args.out or os.path.join(config.resolved_output_dir(), "landscape.csv")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    export.write_landscape_csv(grid, path)
    if grid.resolution >= analysis.MIN_KINK_RESOLUTION and grid.resolution % 2:
        kinks = sorted(analysis.detect_gradient_discontinuity(grid))
        out.write(f"kinks: {', '.join(kinks) if kinks else 'none'}\n")
    out.write(f"wrote {path}\n")


def cmd_stability(args, out):
    config, data, model = _setup(args)
    mixture = runner.build_mixture(config.threat)
    rep = runner.run_stability(config, data, model, mixture, default_loss_kind(model),
                               np.random.default_rng(config.seed))
    out.write("trial,final_loss_gap,lipschitz_L,bound\n")
    for i, t in enumerate(rep.traces):
        out.write(f"{i},{t.final_loss_gap:.6g},{t.lipschitz_L:.6g},{t.theoretical_bound:.6g}\n")
    out.write(f"mean gap {rep.mean_gap:.6g} <= mean bound {rep.mean_bound:.6g}: {rep.mean_gap <= rep.mean_bound}\n")


def cmd_smoothness(args, out):
    config, data, model = _setup(args)
    mixture = runner.build_mixture(config.threat)
    est = runner.run_smoothness(config, data, model, mixture, default_loss_kind(model),
                                np.random.default_rng(config.seed))
    out.write(f"L = {est.lipschitz_L:.6g}\nbeta = {est.grad_lipschitz_beta:.6g}\n"
              f"eta = {est.nonsmooth_offset_eta:.6g}\nsamples = {est.sample_count}\n")


def cmd_suite(args, out):
    configs = [load_config(p, args.set, args.output_dir) for p in (args.configs or [None])]
    if args.seeds:
        configs = [c for base in configs for c in runner.seed_sweep(base, args.seeds)]
    results = runner.run_suite(configs, args.jobs)
    failed = None
    for i, res in enumerate(results):
        status = "ok" if res.ok else "FAILED " + res.error.splitlines()[0]
        mix = res.reports["final"].mix_acc if res.ok and "final" in res.reports else float("nan")
        out.write(f"{i},{res.config.name},seed={res.config.seed},mix={mix:.4f},{status}\n")
        if not res.ok and failed is None:
            failed = res
    return failed.exit_code if failed is not None else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="advmp", description="Adversarial training against multiple lp threats.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, params=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--output-dir", help="output root (default $%s or ./runs)" % cfgmod.OUTPUT_ROOT_ENV)
        if params:
            sp.add_argument("--params", help="model parameters saved by a previous run (.npz)")
        return sp

    common(sub.add_parser("train", help="train and evaluate one configuration")).set_defaults(func=cmd_train)
    common(sub.add_parser("attack", help="attack a model on the held-out split"), True).set_defaults(func=cmd_attack)
    ev = common(sub.add_parser("evaluate", help="robust accuracy table for saved parameters"), True)
    ev.add_argument("--out", help="also write the summary CSV here")
    ev.set_defaults(func=cmd_evaluate)
    ls = common(sub.add_parser("landscape", help="closed-form loss landscape of 2-D linear regression"))
    ls.add_argument("--out", help="landscape CSV path")
    ls.set_defaults(func=cmd_landscape)
    common(sub.add_parser("stability", help="neighbouring-dataset stability probe"), True).set_defaults(func=cmd_stability)
    common(sub.add_parser("smoothness", help="Lipschitz, smoothness and offset estimates"), True).set_defaults(func=cmd_smoothness)
    su = sub.add_parser("suite", help="run several configurations")
    su.add_argument("configs", nargs="*", help="config files (defaults if none)")
    su.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    su.add_argument("--output-dir")
    su.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",")], help="comma-separated seeds")
    su.add_argument("--jobs", type=int, default=1, help="worker processes")
    su.set_defaults(func=cmd_suite)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args, out)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == 1:
            raise
        print(f"advmp: error: {exc}", file=sys.stderr)
        return code
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
