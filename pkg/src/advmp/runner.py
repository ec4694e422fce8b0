"""Build experiments from configs, run them, and write their artifacts."""
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis, config as cfgmod, export
from .attacks import MixtureSpec, PerturbationSpec, robust_evaluate, spec_streams
from .data import generate_dataset
from .errors import ConfigError, InvalidInputError, NumericError, UnsupportedModelError, exit_code_for
from .geometry import NormKind
from .models import Activation, ModelKind, init_linear_regression, init_logistic, init_mlp
from .training import (
    LrSchedule, StrategyKind, TrainConfig, default_loss_kind, task_losses_and_grads, train,
)


@dataclass
class RunResult:
    config: object
    trajectory: object = None
    reports: dict = field(default_factory=dict)
    risk: object = None
    scalars: dict = field(default_factory=dict)
    kinks: frozenset = None
    wall_clock: float = 0.0
    paths: dict = field(default_factory=dict)
    error: str = None
    exit_code: int = 0

    @property
    def ok(self):
        return self.error is None


def build_mixture(threat, steps=None, restarts=0):
    specs = []
    for k in threat.kinds:
        try:
            kind = NormKind.parse(k)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        eps = getattr(threat, f"eps_{kind.value}")
        step = getattr(threat, f"step_{kind.value}")
        try:
            specs.append(PerturbationSpec(kind, eps, steps=steps or threat.steps, step_size=step,
                                          restarts=restarts, l1_k=threat.l1_k))
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return MixtureSpec(specs)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None


def build_model(model_cfg, data):
    d = data.train.d
    rng = np.random.default_rng(model_cfg.seed)
    try:
        kind = ModelKind(model_cfg.kind)
        if kind is ModelKind.LINEAR_REGRESSION:
            if data.train.K:
                raise ConfigError("linear regression needs regression data")
            return init_linear_regression(d)
        if not data.train.K:
            raise ConfigError(f"{kind.value} models need classification data")
        if kind is ModelKind.LOGISTIC:
            return init_logistic(d, data.train.K)
        return init_mlp(d, model_cfg.hidden, data.train.K, Activation(model_cfg.activation), rng)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def build_train_config(config):
    t = config.train
    try:
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size,
            lr=LrSchedule(t.lr_kind, t.lr_peak, t.lr_mid, t.lr_phases),
            momentum=t.momentum, weight_decay=t.weight_decay,
            swa_start_epoch=t.swa_start_epoch, swa_gamma=t.swa_gamma,
            label_smoothing=t.label_smoothing, label_noise=t.label_noise,
            delta_mixup=t.delta_mixup, loss_floor=t.loss_floor, alpha_caps=t.alpha_caps,
            early_stop_metric=t.early_stop_metric, eval_examples=t.eval_examples,
            eval_steps=config.threat.eval_steps, eval_restarts=config.threat.restarts,
            probe_examples=t.probe_examples, log_grad_norms=t.log_grad_norms)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None


def parse_strategy(name):
    try:
        return StrategyKind(str(name).lower())
    except ValueError:
        raise ConfigError(f"unknown strategy {name!r}") from None


def _epsilons(threat):
    return {NormKind.parse(k): getattr(threat, f"eps_{NormKind.parse(k).value}") for k in threat.kinds}


def landscape_surrogate(config):
    kinds = config.threat.kinds
    if len(kinds) == 1:
        return NormKind.parse(kinds[0])
    return parse_strategy(config.train.strategy)


def run_landscape(config, data):
    if config.model.kind != "linear" or data.train.d != 2:
        raise ConfigError("landscapes need a 2-D linear-regression config")
    threat = config.threat
    eps = {k: getattr(threat, f"eps_{k.value}") for k in NormKind}
    a = config.analysis
    return analysis.landscape_grid(data.train.X, data.train.y, landscape_surrogate(config), eps,
                                   a.landscape_range, a.landscape_resolution)


def run_smoothness(config, data, model, mixture, loss_kind, rng):
    a = config.analysis
    box = analysis.Box.around(model.params, a.smoothness_radius)
    if model.kind is ModelKind.LINEAR_REGRESSION:
        f, g = analysis.surrogate_functions(data.train.X, data.train.y, landscape_surrogate(config),
                                            _epsilons(config.threat))
    else:
        sub = data.train.subset(np.arange(min(64, data.train.n)))
        seed = int(rng.integers(0, 2**63 - 1))

        def f(theta):
            return analysis.mixture_risk(model.with_params(theta), sub, mixture, loss_kind, seed)

        def g(theta):
            streams = spec_streams(np.random.default_rng(seed), len(mixture))[:-1]
            _, _, grads = task_losses_and_grads(model.with_params(theta), sub.X, sub.y, mixture,
                                                loss_kind, streams)
            return np.mean(grads, axis=0)
    return analysis.estimate_smoothness(f, g, box, a.smoothness_samples, rng)


def run_stability(config, data, model, mixture, loss_kind, rng):
    if not model.is_convex:
        raise UnsupportedModelError("stability probes need a convex (linear or logistic) model")
    a = config.analysis
    task = analysis.StabilityTask(lambda n, r: data.generator.sample(n, r), data.train.n,
                                  model, mixture, parse_strategy(config.train.strategy), loss_kind)
    return analysis.stability_probe(task, a.stability_steps, a.stability_alpha, a.stability_trials, rng)


def _check_scalars(scalars):
    bad = [k for k, v in scalars.items() if not math.isfinite(v)]
    if bad:
        raise NumericError(f"non-finite results: {', '.join(bad)}")


def run_experiment(config):
    """Train, evaluate, run the requested analyses and write every artifact."""
    t0 = time.perf_counter()
    out = config.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    data = generate_dataset(config.data)
    model = build_model(config.model, data)
    strategy = parse_strategy(config.train.strategy)
    mixture = build_mixture(config.threat)
    eval_mixture = build_mixture(config.threat, config.threat.eval_steps, config.threat.restarts)
    tc = build_train_config(config)
    loss_kind = default_loss_kind(model, tc.label_smoothing)
    eval_loss = default_loss_kind(model)
    train_seed, eval_seed, analysis_seed = np.random.SeedSequence(
        [config.seed, config.fingerprint()]).generate_state(3)
    classifier = model.is_classifier
    result = train(data.train, model, mixture, strategy, tc, np.random.default_rng(train_seed),
                   eval_set=data.test if classifier else None, loss_kind=loss_kind)
    run = RunResult(config, result.trajectory)
    if classifier:
        models = {"final": result.final_model, "best": result.best_model}
        if result.swa_model is not None:
            models["swa"] = result.swa_model
        for label, m in models.items():
            run.reports[label] = robust_evaluate(m, data.test, eval_mixture, eval_loss,
                                                 np.random.default_rng(eval_seed))
    arng = np.random.default_rng(analysis_seed)
    scalars = {"best_epoch": float(result.best_epoch)}
    a = config.analysis
    if a.risk:
        run.risk = analysis.excess_risk_report(result.final_model, data.train, data.test, eval_mixture,
                                               result.best_model.params, arng, eval_loss)
        scalars.update({f"risk.{k}": v for k, v in vars(run.risk).items()})
    paths = {}
    if a.landscape:
        grid = run_landscape(config, data)
        paths["landscape"] = os.path.join(out, "landscape.csv")
        export.write_landscape_csv(grid, paths["landscape"])
        if grid.resolution >= analysis.MIN_KINK_RESOLUTION and grid.resolution % 2:
            run.kinks = analysis.detect_gradient_discontinuity(grid)
    if a.smoothness:
        est = run_smoothness(config, data, result.final_model, mixture, loss_kind, arng)
        scalars.update({"smooth.L": est.lipschitz_L, "smooth.beta": est.grad_lipschitz_beta,
                        "smooth.eta": est.nonsmooth_offset_eta, "smooth.samples": float(est.sample_count)})
    if a.stability:
        rep = run_stability(config, data, model, mixture, loss_kind, arng)
        scalars.update({"stability.mean_gap": rep.mean_gap, "stability.mean_bound": rep.mean_bound,
                        "stability.max_L": max(t.lipschitz_L for t in rep.traces)})
    _check_scalars(scalars)
    run.scalars = scalars

    paths["config"] = os.path.join(out, "config.txt")
    cfgmod.save(config, paths["config"])
    paths["trajectory"] = os.path.join(out, "trajectory.csv")
    export.write_trajectory_csv(result.trajectory, paths["trajectory"])
    if run.reports:
        paths["summary"] = os.path.join(out, "summary.csv")
        export.write_summary(run.reports, paths["summary"])
    paths["scalars"] = os.path.join(out, "scalars.csv")
    export.write_scalars(scalars, paths["scalars"])
    for label, m in (("final", result.final_model), ("best", result.best_model), ("swa", result.swa_model)):
        if m is not None:
            paths[f"params_{label}"] = os.path.join(out, f"params_{label}.npz")
            export.save_params(m, paths[f"params_{label}"])
    run.paths = paths
    run.wall_clock = time.perf_counter() - t0
    return run


def _safe_run(config):
    try:
        return run_experiment(config)
    except Exception as exc:  # noqa: BLE001 - a failed run must not take down the suite
        return RunResult(config, error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}",
                         exit_code=exit_code_for(exc))


def run_suite(configs, parallelism=1):
    """Run configs independently; results come back in input order."""
    configs = list(configs)
    if not configs:
        return []
    if parallelism <= 1:
        return [_safe_run(c) for c in configs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_safe_run, configs))


def seed_sweep(config, seeds):
    return [replace(config, seed=int(s)) for s in seeds]
