"""Outer minimisation: strategy-specific SGD steps (MAX, AVG, MSD, SAT and the
adaptive loss-weighted ADT), cyclic learning rate, SWA and early stopping."""
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import (
    RobustReport, as_mixture, joint_pgd_rows, mixture_rows, robust_evaluate, spec_streams,
)
from .errors import InvalidInputError, NumericError
from .models import CROSS_ENTROPY, SQUARED_ERROR, LossKind, LossName, loss_and_grads, noisy_labels

LOSS_FLOOR = 1e-8


class StrategyKind(enum.Enum):
    MAX = "max"
    AVG = "avg"
    MSD = "msd"
    SAT = "sat"
    ADT = "adt"


@dataclass(frozen=True)
class LrSchedule:
    """Constant rate, or piecewise linear 0 -> peak -> mid -> 0 over three phases."""

    kind: str = "cyclic"
    peak: float = 0.1
    mid: float = 0.005
    phase_epochs: tuple = (40, 40, 20)

    def __post_init__(self):
        if self.kind not in ("constant", "cyclic"):
            raise InvalidInputError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "phase_epochs", tuple(self.phase_epochs))
        if len(self.phase_epochs) != 3 or min(self.phase_epochs) < 0 or sum(self.phase_epochs) <= 0:
            raise InvalidInputError("phase_epochs must be three nonnegative lengths with a positive sum")


def cyclic_lr(fraction, schedule):
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError(f"training fraction must lie in [0, 1], got {fraction}")
    if schedule.kind == "constant":
        return float(schedule.peak)
    e1, e2, e3 = schedule.phase_epochs
    total = e1 + e2 + e3
    return float(np.interp(fraction, [0.0, e1 / total, (e1 + e2) / total, 1.0],
                           [0.0, schedule.peak, schedule.mid, 0.0]))


@dataclass(frozen=True, eq=False)
class SwaState:
    averaged_params: np.ndarray
    gamma: float
    start_epoch: int
    n_updates: int = 0
    last_skipped: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInputError(f"SWA gamma must lie in [0, 1], got {self.gamma}")


def swa_update(state, current_params, epoch=None):
    """``avg <- gamma * avg + (1 - gamma) * current``; a no-op before ``start_epoch``."""
    if epoch is not None and epoch < state.start_epoch:
        return replace(state, last_skipped=True)
    avg = state.gamma * state.averaged_params + (1.0 - state.gamma) * np.asarray(current_params)
    return replace(state, averaged_params=avg, n_updates=state.n_updates + 1, last_skipped=False)


@dataclass(frozen=True)
class StepWeights:
    alphas: tuple
    base_alpha: float
    clamped: bool = False


def adt_weights(losses, base_alpha, floor=LOSS_FLOOR):
    """Per-task stepsizes ``alpha * (sum of losses) / (P * loss_p)``.

    Losses at or below ``floor`` are raised to it first and ``clamped`` is set.
    """
    L = [float(v) for v in losses]
    if not L:
        raise InvalidInputError("need at least one task loss")
    clamped = any(v <= floor for v in L)
    L = [max(v, floor) for v in L]
    total = 0.0
    for v in L:
        total += v
    P = len(L)
    return StepWeights(tuple(base_alpha * (total / (P * v)) for v in L), base_alpha, clamped)


def weighted_update(params, task_gradients, weights):
    """``params - (1/P) * sum_p alpha_p * grad_p``."""
    grads = [np.asarray(g, dtype=np.float64) for g in task_gradients]
    if len(grads) != len(weights.alphas):
        raise InvalidInputError(f"{len(grads)} gradients but {len(weights.alphas)} stepsizes")
    params = np.asarray(params, dtype=np.float64)
    acc = np.zeros_like(params)
    for a, g in zip(weights.alphas, grads):
        if g.shape != params.shape:
            raise InvalidInputError(f"gradient shape {g.shape} does not match params {params.shape}")
        acc += a * g
    return params - acc / len(grads)


@dataclass
class Sgd:
    """Heavy-ball momentum and L2 weight decay around :func:`weighted_update`.

    With both at zero the update is exactly :func:`weighted_update`.
    """

    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: np.ndarray = None

    def apply(self, params, grads, weights):
        if not self.momentum and not self.weight_decay:
            return weighted_update(params, grads, weights)
        step = params - weighted_update(params, grads, weights)
        if self.weight_decay:
            step = step + weights.base_alpha * self.weight_decay * params
        if self.momentum:
            self.velocity = step if self.velocity is None else self.momentum * self.velocity + step
            step = self.velocity
        return params - step


@dataclass
class StepDiagnostics:
    aggregate_loss: float
    weights: StepWeights
    task_losses: tuple = None
    sat_choice: int = None


def task_losses_and_grads(model, X, y, mixture, loss_kind, streams):
    """Per-threat mean attacked loss and its parameter gradient on a batch."""
    deltas, losses = mixture_rows(model, X, y, mixture, loss_kind, streams)
    grads = [loss_and_grads(model, X + dl, y, loss_kind).grad_params for dl in deltas]
    return deltas, losses, grads


def task_losses(model, X, y, mixture, loss_kind, rng):
    mixture = as_mixture(mixture)
    if len(y) == 0:
        raise InvalidInputError("empty batch")
    streams = spec_streams(rng, len(mixture))
    _, losses = mixture_rows(model, X, y, mixture, loss_kind, streams[:-1])
    return [float(v) for v in losses.mean(axis=1)]


def strategy_step(model, X, y, mixture, strategy, base_alpha, loss_kind, rng, *,
                  loss_floor=LOSS_FLOOR, alpha_caps=None, delta_mixup=False, optimizer=None):
    """One outer SGD step on a batch under the given multi-threat strategy.

    Every strategy draws the same per-threat generator seeds from ``rng``, so
    with a single threat all five strategies produce identical updates.
    Returns ``(new_params, StepDiagnostics)``.
    """
    mixture = as_mixture(mixture)
    strategy = StrategyKind(strategy)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y)
    if len(y) == 0:
        raise InvalidInputError("empty batch")
    P = len(mixture)
    streams = spec_streams(rng, P)
    attack_streams, select = streams[:-1], streams[-1]
    optimizer = optimizer or Sgd()
    single = StepWeights((base_alpha,), base_alpha)
    rows = np.arange(len(y))
    task_l = None
    choice = None

    if delta_mixup:
        deltas, losses = mixture_rows(model, X, y, mixture, loss_kind, attack_streams)
        lg = loss_and_grads(model, X + deltas.sum(axis=0) / P, y, loss_kind)
        grads, weights, agg = [lg.grad_params], single, float(lg.losses.mean())
        task_l = tuple(float(v) for v in losses.mean(axis=1))
    elif strategy is StrategyKind.MAX:
        deltas, losses = mixture_rows(model, X, y, mixture, loss_kind, attack_streams)
        worst = np.argmax(losses, axis=0)
        lg = loss_and_grads(model, X + deltas[worst, rows], y, loss_kind)
        grads, weights = [lg.grad_params], single
        agg = float(losses[worst, rows].mean())
        task_l = tuple(float(v) for v in losses.mean(axis=1))
    elif strategy is StrategyKind.SAT:
        choice = int(select.integers(P))
        delta, losses = joint_pgd_rows(model, X, y, [mixture[choice]], loss_kind,
                                       attack_streams[choice])
        lg = loss_and_grads(model, X + delta, y, loss_kind)
        grads, weights, agg = [lg.grad_params], single, float(losses.mean())
    elif strategy is StrategyKind.MSD:
        delta, losses = joint_pgd_rows(model, X, y, list(mixture), loss_kind, attack_streams[0])
        lg = loss_and_grads(model, X + delta, y, loss_kind)
        grads, weights, agg = [lg.grad_params], single, float(losses.mean())
    else:
        _, losses, grads = task_losses_and_grads(model, X, y, mixture, loss_kind, attack_streams)
        task_l = tuple(float(v) for v in losses.mean(axis=1))
        if strategy is StrategyKind.ADT:
            weights = adt_weights(task_l, base_alpha, loss_floor)
        else:
            weights = StepWeights((base_alpha,) * P, base_alpha)
        if alpha_caps is not None:
            weights = replace(weights, alphas=tuple(min(a, c) for a, c in zip(weights.alphas, alpha_caps)))
        agg = float(np.mean(task_l))

    new_params = optimizer.apply(model.params, grads, weights)
    return new_params, StepDiagnostics(agg, weights, task_l, choice)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: LrSchedule = field(default_factory=LrSchedule)
    momentum: float = 0.0
    weight_decay: float = 0.0
    swa_start_epoch: int = 60
    swa_gamma: float = 0.9
    label_smoothing: float = 0.0
    label_noise: float = 0.0
    delta_mixup: bool = False
    loss_floor: float = LOSS_FLOOR
    alpha_caps: tuple = None
    early_stop_metric: str = "mix"
    eval_examples: int = 128
    eval_steps: int = 100
    eval_restarts: int = 0
    probe_examples: int = 128
    log_grad_norms: bool = True
    eval_swa: bool = True
    record_params: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInputError("epochs must be >= 0 and batch_size >= 1")
        if self.early_stop_metric not in ("mix", "union"):
            raise InvalidInputError(f"early_stop_metric must be 'mix' or 'union', got {self.early_stop_metric!r}")
        if not 0.0 <= self.label_noise <= 1.0:
            raise InvalidInputError("label_noise must lie in [0, 1]")


@dataclass
class TrajectoryRecord:
    epoch: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    task_losses: list = field(default_factory=list)
    aggregate_loss: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    robust: list = field(default_factory=list)
    swa_robust: list = field(default_factory=list)
    mean_alphas: list = field(default_factory=list)
    clamped_steps: list = field(default_factory=list)
    params: list = field(default_factory=list)
    kinds: tuple = ()

    def __len__(self):
        return len(self.epoch)


@dataclass
class TrainResult:
    final_model: object
    swa_model: object
    trajectory: TrajectoryRecord
    best_model: object
    best_epoch: int


def probe_metrics(model, X, y, mixture, loss_kind, rng):
    """Attacked losses and final-layer gradient norms per threat plus avg/wst aggregates."""
    streams = spec_streams(rng, len(mixture))[:-1]
    deltas, losses, grads = task_losses_and_grads(model, X, y, mixture, loss_kind, streams)
    sl = model.final_layer_slice()
    norms = {s.kind.value if len(set(mixture.kinds)) == len(mixture) else str(i):
             float(np.linalg.norm(g[sl])) for i, (s, g) in enumerate(zip(mixture, grads))}
    norms["avg"] = float(np.linalg.norm(np.mean([g[sl] for g in grads], axis=0)))
    rows = np.arange(len(y))
    worst = np.argmax(losses, axis=0)
    g_wst = loss_and_grads(model, X + deltas[worst, rows], y, loss_kind).grad_params
    norms["wst"] = float(np.linalg.norm(g_wst[sl]))
    return tuple(float(v) for v in losses.mean(axis=1)), norms


def default_loss_kind(model, label_smoothing=0.0):
    if model.is_classifier:
        return LossKind(LossName.CROSS_ENTROPY, label_smoothing) if label_smoothing else CROSS_ENTROPY
    return SQUARED_ERROR


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what}")


def train(dataset, model, mixture, strategy, config, rng, eval_set=None, loss_kind=None):
    """Shuffled mini-batch adversarial training with per-epoch bookkeeping.

    Tracks per-threat probe losses and gradient norms, robust accuracy on
    ``eval_set`` (when given), the SWA average and the best checkpoint by
    ``config.early_stop_metric``. Deterministic for a fixed ``rng`` state.
    """
    mixture = as_mixture(mixture)
    strategy = StrategyKind(strategy)
    loss_kind = loss_kind or default_loss_kind(model, config.label_smoothing)
    seeds = rng.integers(0, 2**63 - 1, size=3)
    train_rng, eval_rng, probe_rng = (np.random.default_rng(int(s)) for s in seeds)
    n = dataset.n
    nb = math.ceil(n / config.batch_size)
    total_steps = max(config.epochs * nb, 1)
    probe = dataset.subset(np.arange(min(config.probe_examples, n)))
    eval_subset = None
    if eval_set is not None:
        eval_subset = eval_set.subset(np.arange(min(config.eval_examples, eval_set.n)))
    eval_mix = replace(mixture, specs=tuple(
        replace(s, steps=config.eval_steps, restarts=config.eval_restarts) for s in mixture))
    opt = Sgd(config.momentum, config.weight_decay)
    params = model.params.copy()
    traj = TrajectoryRecord(kinds=tuple(k.value for k in mixture.kinds))
    swa = None
    best_params, best_epoch, best_score = params.copy(), 0, -np.inf
    alpha = 0.0

    for epoch in range(1, config.epochs + 1):
        perm = train_rng.permutation(n)
        aggs, alphas, clamped = [], [], 0
        for b in range(nb):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            X, y = dataset.X[idx], dataset.y[idx]
            if config.label_noise and dataset.K:
                y = noisy_labels(y, dataset.K, config.label_noise, train_rng)
            t = (epoch - 1) * nb + b
            alpha = cyclic_lr((t + 0.5) / total_steps, config.lr)
            params, diag = strategy_step(
                model.with_params(params), X, y, mixture, strategy, alpha, loss_kind, train_rng,
                loss_floor=config.loss_floor, alpha_caps=config.alpha_caps,
                delta_mixup=config.delta_mixup, optimizer=opt)
            _check_finite(params, f"parameters at epoch {epoch}, batch {b}")
            aggs.append(diag.aggregate_loss)
            alphas.append(diag.weights.alphas)
            clamped += diag.weights.clamped
        current = model.with_params(params)

        traj.epoch.append(epoch)
        traj.lr.append(alpha)
        traj.aggregate_loss.append(float(np.mean(aggs)))
        traj.clamped_steps.append(clamped)
        width = max(len(a) for a in alphas)
        traj.mean_alphas.append(tuple(float(np.mean([a[i] for a in alphas if len(a) == width]))
                                      for i in range(width)))
        if config.log_grad_norms:
            tl, norms = probe_metrics(current, probe.X, probe.y, mixture, loss_kind, probe_rng)
            traj.task_losses.append(tl)
            traj.grad_norms.append(norms)
        if config.record_params:
            traj.params.append(params.copy())

        if config.swa_start_epoch is not None and epoch >= config.swa_start_epoch:
            if swa is None:
                swa = SwaState(params.copy(), config.swa_gamma, config.swa_start_epoch)
            else:
                swa = swa_update(swa, params, epoch)

        report = None
        if eval_subset is not None:
            report = robust_evaluate(current, eval_subset, eval_mix, loss_kind, eval_rng)
            score = report.mix_acc if config.early_stop_metric == "mix" else report.union_acc
            if score > best_score:
                best_score, best_params, best_epoch = score, params.copy(), epoch
        traj.robust.append(report)
        swa_report = None
        if swa is not None and eval_subset is not None and config.eval_swa:
            swa_report = robust_evaluate(model.with_params(swa.averaged_params), eval_subset,
                                         eval_mix, loss_kind, eval_rng)
        traj.swa_robust.append(swa_report)

    if eval_subset is None or config.epochs == 0:
        best_params, best_epoch = params.copy(), config.epochs
    final = model.with_params(params)
    swa_model = model.with_params(swa.averaged_params) if swa is not None else None
    return TrainResult(final, swa_model, traj, model.with_params(best_params), best_epoch)


def robust_row(report):
    return report.as_row() if isinstance(report, RobustReport) else None
