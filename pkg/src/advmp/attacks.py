"""PGD attacks for l1/l2/l-inf threats, the AVG and WST inner objectives,
closed-form adversarial linear regression and robust evaluation."""
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import InvalidInputError, UnsupportedModelError
from .geometry import FEASIBILITY_TOL, NormKind, ascent_rows, norm, project_rows, random_rows_in_ball
from .models import Example, LossName, ModelKind, loss_and_grads, per_example_losses, predict

DEFAULT_EPSILONS = {NormKind.L1: 12.0, NormKind.L2: 0.5, NormKind.LINF: 0.03}
DEFAULT_STEP_SIZES = {NormKind.L1: 1.0, NormKind.L2: 0.05, NormKind.LINF: 0.003}
TRAIN_STEPS = 50
EVAL_STEPS = 100


@dataclass(frozen=True)
class PerturbationSpec:
    """One lp threat.

    ``restarts`` counts random restarts on top of the zero-perturbation start,
    so ``restarts=0`` runs a single PGD trajectory from the clean input.
    """

    kind: NormKind
    epsilon: float
    steps: int = TRAIN_STEPS
    step_size: float = None
    restarts: int = 0
    l1_k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind.parse(self.kind))
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise InvalidInputError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidInputError(f"steps must be a positive integer, got {self.steps}")
        if self.step_size is None:
            default = 2.5 * self.epsilon / self.steps if self.epsilon > 0 else 1.0
            object.__setattr__(self, "step_size", default)
        if not self.step_size > 0:
            raise InvalidInputError(f"step_size must be positive, got {self.step_size}")
        if int(self.restarts) != self.restarts or self.restarts < 0:
            raise InvalidInputError(f"restarts must be a nonnegative integer, got {self.restarts}")
        if int(self.l1_k) != self.l1_k or self.l1_k < 1:
            raise InvalidInputError(f"l1_k must be a positive integer, got {self.l1_k}")


@dataclass(frozen=True)
class MixtureSpec:
    """Ordered threats faced jointly.

    Distinct norm kinds are required unless ``require_distinct`` is off, which
    the degenerate repeated-threat checks rely on.
    """

    specs: tuple
    require_distinct: bool = True

    def __post_init__(self):
        specs = tuple(self.specs)
        object.__setattr__(self, "specs", specs)
        if not specs:
            raise InvalidInputError("a mixture needs at least one perturbation spec")
        kinds = [s.kind for s in specs]
        if self.require_distinct and len(set(kinds)) != len(kinds):
            raise InvalidInputError(f"mixture kinds must be distinct, got {[k.value for k in kinds]}")

    def __len__(self):
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __getitem__(self, i):
        return self.specs[i]

    @property
    def kinds(self):
        return tuple(s.kind for s in self.specs)

    def with_steps(self, steps):
        return replace(self, specs=tuple(replace(s, steps=steps) for s in self.specs))


def default_mixture(steps=TRAIN_STEPS, restarts=0, l1_k=1):
    """The three CIFAR-scale threats with the published budgets and step sizes."""
    return MixtureSpec(tuple(
        PerturbationSpec(k, DEFAULT_EPSILONS[k], steps, DEFAULT_STEP_SIZES[k], restarts, l1_k)
        for k in (NormKind.L1, NormKind.L2, NormKind.LINF)
    ))


def as_mixture(mixture):
    if isinstance(mixture, MixtureSpec):
        return mixture
    if isinstance(mixture, PerturbationSpec):
        return MixtureSpec((mixture,))
    return MixtureSpec(tuple(mixture), require_distinct=False)


@dataclass(eq=False)
class AttackResult:
    adversarial_example: Example
    achieved_loss: float
    spec_index: int
    delta: np.ndarray


def _check_specs(specs, d):
    for s in specs:
        if not 1 <= s.l1_k <= d:
            raise InvalidInputError(f"l1_k={s.l1_k} exceeds input dimension {d}")


def _uses_linreg_kernel(model, loss_kind):
    return model.kind is ModelKind.LINEAR_REGRESSION and loss_kind.kind is LossName.SQUARED_ERROR


def _pgd_from(model, X, y, specs, loss_kind, delta0):
    """One PGD trajectory per row from ``delta0``; returns the best iterate."""
    if _uses_linreg_kernel(model, loss_kind):
        return kernels.pgd_linreg(
            X, y, model.params, delta0,
            np.array([s.kind.code for s in specs], dtype=np.int32),
            np.array([s.epsilon for s in specs]),
            np.array([s.step_size for s in specs]),
            np.array([s.l1_k for s in specs], dtype=np.int32),
            max(s.steps for s in specs),
        )
    n = X.shape[0]
    P = len(specs)
    rows = np.arange(n)
    delta = delta0.copy()
    lg = loss_and_grads(model, X + delta, y, loss_kind)
    best_delta, best_loss = delta.copy(), lg.losses.copy()
    gin = lg.grad_input
    y_stack = np.tile(y, P)
    for _ in range(max(s.steps for s in specs)):
        cands = np.stack([
            project_rows(delta + ascent_rows(gin, s.kind, s.step_size, s.l1_k), s.kind, s.epsilon)
            for s in specs
        ])
        lg = loss_and_grads(model, (X[None] + cands).reshape(P * n, -1), y_stack, loss_kind)
        closs = lg.losses.reshape(P, n)
        pick = np.argmax(closs, axis=0)
        delta = cands[pick, rows]
        loss = closs[pick, rows]
        gin = lg.grad_input.reshape(P, n, -1)[pick, rows]
        improved = loss > best_loss
        best_loss[improved] = loss[improved]
        best_delta[improved] = delta[improved]
    return best_delta, best_loss


def joint_pgd_rows(model, X, y, specs, loss_kind, rng):
    """PGD over the candidate threats ``specs`` for every row of ``X``.

    With one spec this is plain PGD; with several, every inner step keeps the
    loss-maximising candidate step per row (multi steepest descent). Restart 0
    starts from the zero perturbation, later restarts from a uniform point in
    the ball of spec ``(r - 1) mod P``. Returns ``(delta, loss)`` of the best
    iterate visited over all restarts.
    """
    specs = list(specs)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y)
    n, d = X.shape
    _check_specs(specs, d)
    best_delta, best_loss = None, None
    for r in range(1 + max(s.restarts for s in specs)):
        if r == 0:
            delta0 = np.zeros((n, d))
        else:
            s0 = specs[(r - 1) % len(specs)]
            delta0 = random_rows_in_ball(n, d, s0.kind, s0.epsilon, rng)
        delta, loss = _pgd_from(model, X, y, specs, loss_kind, delta0)
        if best_delta is None:
            best_delta, best_loss = delta, loss
        else:
            improved = loss > best_loss
            best_loss[improved] = loss[improved]
            best_delta[improved] = delta[improved]
    return best_delta, best_loss


def pgd_rows(model, X, y, spec, loss_kind, rng):
    return joint_pgd_rows(model, X, y, [spec], loss_kind, rng)


def pgd_attack(model, example, spec, loss_kind, rng):
    delta, loss = pgd_rows(model, example.x[None, :], np.array([example.y]), spec, loss_kind, rng)
    return AttackResult(Example(example.x + delta[0], example.y), float(loss[0]), 0, delta[0])


def spec_streams(rng, P):
    """Independent generators for P per-threat attacks plus one selection stream."""
    seeds = rng.integers(0, 2**63 - 1, size=P + 1)
    return [np.random.default_rng(int(s)) for s in seeds]


def mixture_rows(model, X, y, mixture, loss_kind, streams):
    """Attack every row under each threat separately: deltas (P, n, d), losses (P, n)."""
    out = [pgd_rows(model, X, y, s, loss_kind, g) for s, g in zip(mixture, streams)]
    return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])


def h_wst(model, example, mixture, loss_kind, rng):
    """Worst threat for one example: the max-loss per-threat PGD result."""
    mixture = as_mixture(mixture)
    results = [pgd_attack(model, example, s, loss_kind, rng) for s in mixture]
    i = int(np.argmax([r.achieved_loss for r in results]))
    res = results[i]
    res.spec_index = i
    return res


def h_avg(model, example, mixture, loss_kind, rng):
    """Mean over threats of the per-threat PGD loss for one example."""
    mixture = as_mixture(mixture)
    return float(np.mean([pgd_attack(model, example, s, loss_kind, rng).achieved_loss
                          for s in mixture]))


def mixup_adversarial_example(example, deltas):
    deltas = [np.asarray(dl, dtype=np.float64) for dl in deltas]
    if not deltas:
        raise InvalidInputError("mixup needs at least one perturbation")
    if any(dl.shape != example.x.shape for dl in deltas):
        raise InvalidInputError("perturbation shapes must match the example")
    return Example(example.x + sum(deltas) / len(deltas), example.y)


def _linreg_terms(theta, X, y, p, epsilon):
    theta = np.asarray(theta, dtype=np.float64).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[1] != theta.size or X.shape[0] != y.size:
        raise InvalidInputError(f"X {X.shape}, theta {theta.shape} and y {y.shape} do not align")
    if epsilon < 0:
        raise InvalidInputError("epsilon must be >= 0")
    return X @ theta - y, epsilon * norm(theta, NormKind.parse(p).dual)


def adv_loss_closed_form_linreg(theta, X, y, p, epsilon):
    """``[||X theta - y||_2 + sqrt(n) eps ||theta||_{p*}]^2`` (summed risk, not mean).

    This is exact when every row has the same absolute residual and an upper
    bound on the per-row worst case otherwise; see
    :func:`adv_loss_exact_linreg`.
    """
    r, c = _linreg_terms(theta, X, y, p, epsilon)
    return float((np.linalg.norm(r) + np.sqrt(r.size) * c) ** 2)


def adv_loss_exact_linreg(theta, X, y, p, epsilon):
    """Summed squared loss under independent per-row lp perturbations of size eps.

    Each row's worst case is ``(|r_i| + eps ||theta||_{p*})^2`` by Hoelder.
    """
    r, c = _linreg_terms(theta, X, y, p, epsilon)
    return float(np.sum((np.abs(r) + c) ** 2))


@dataclass
class RobustReport:
    clean_acc: float
    per_attack_acc: tuple
    union_acc: float
    mix_acc: float
    kinds: tuple = ()

    def as_row(self):
        """Metrics keyed like the results table: clean, l1, l2, linf, union, mix."""
        row = {"clean": self.clean_acc}
        for k in (NormKind.L1, NormKind.L2, NormKind.LINF):
            row[k.value] = (self.per_attack_acc[self.kinds.index(k)]
                            if k in self.kinds else float("nan"))
        row["union"] = self.union_acc
        row["mix"] = self.mix_acc
        return row


def robust_evaluate(model, dataset, mixture, loss_kind, rng):
    """Clean, per-threat, union (correct under every threat) and mix (mean) accuracy."""
    if not model.is_classifier or loss_kind.kind is not LossName.CROSS_ENTROPY:
        raise UnsupportedModelError("robust accuracy needs a classifier with cross-entropy loss")
    mixture = as_mixture(mixture)
    X, y = dataset.X, dataset.y
    correct_all = np.ones(len(y), dtype=bool)
    per = []
    for spec in mixture:
        delta, _ = pgd_rows(model, X, y, spec, loss_kind, rng)
        ok = predict(model, X + delta) == y
        correct_all &= ok
        per.append(float(ok.mean()))
    clean = float((predict(model, X) == y).mean())
    return RobustReport(clean, tuple(per), float(correct_all.mean()), float(np.mean(per)),
                        mixture.kinds)


def feasible(delta, spec, tol=FEASIBILITY_TOL):
    return norm(delta, spec.kind) <= spec.epsilon + tol
