"""Empirical probes of the smoothness, stability and optimisation-bias theory.

Constants (L, beta, eta, B) are sample maxima or fits and therefore lower
bounds on the true quantities, reported together with their sample counts.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import as_mixture, mixture_rows, spec_streams
from .errors import InvalidInputError, UnsupportedModelError
from .geometry import NormKind, row_norms
from .models import Dataset, loss_and_grads
from .training import StrategyKind, default_loss_kind, strategy_step, task_losses_and_grads

SURROGATES = ("p1", "p2", "pinf", "wst", "avg")
_SURROGATE_KIND = {"p1": NormKind.L1, "p2": NormKind.L2, "pinf": NormKind.LINF}

AXIS1, AXIS2 = "theta1=0", "theta2=0"
DIAG, ANTIDIAG = "theta1=theta2", "theta1=-theta2"
ORIGIN = "origin"
AXES = frozenset({AXIS1, AXIS2})
DIAGONALS = frozenset({DIAG, ANTIDIAG})
MIN_KINK_RESOLUTION = 201


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if lo.shape != hi.shape or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise InvalidInputError("box bounds must be finite and of equal shape")
        if np.any(hi <= lo):
            raise InvalidInputError("degenerate box: every upper bound must exceed its lower bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, center, radius):
        center = np.asarray(center, dtype=np.float64)
        return cls(center - radius, center + radius)

    @property
    def dim(self):
        return self.lo.size

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=(size, self.dim))


def _pairs(box, samples, rng):
    if samples < 2:
        raise InvalidInputError(f"need at least 2 samples, got {samples}")
    a, b = box.sample(rng, samples), box.sample(rng, samples)
    dist = np.linalg.norm(a - b, axis=1)
    keep = dist > 0
    return a[keep], b[keep], dist[keep]


def estimate_lipschitz(f, box, samples, rng):
    """Largest ``|f(a) - f(b)| / ||a - b||`` over random pairs in ``box``."""
    a, b, dist = _pairs(box, samples, rng)
    diffs = np.array([abs(f(u) - f(v)) for u, v in zip(a, b)])
    return float(np.max(diffs / dist))


def _grad_diffs(grad, box, samples, rng):
    a, b, dist = _pairs(box, samples, rng)
    diffs = np.array([np.linalg.norm(np.asarray(grad(u)) - np.asarray(grad(v))) for u, v in zip(a, b)])
    return dist, diffs


def estimate_grad_lipschitz(grad, box, samples, rng):
    """Largest ``||grad(a) - grad(b)|| / ||a - b||`` over random pairs in ``box``."""
    dist, diffs = _grad_diffs(grad, box, samples, rng)
    return float(np.max(diffs / dist))


def _local_pairs(box, samples, rng):
    # Short pairs with isotropic directions and uniform lengths up to a quarter
    # of the narrowest side, so every distance bin sees every direction.
    if samples < 2:
        raise InvalidInputError(f"need at least 2 samples, got {samples}")
    h = 0.25 * float(np.min(box.hi - box.lo))
    a = box.sample(rng, samples)
    u = rng.standard_normal((samples, box.dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    dist = h * (1.0 - rng.random(samples))
    b = a + dist[:, None] * u
    keep = np.all((b >= box.lo) & (b <= box.hi), axis=1)
    return a[keep], b[keep], dist[keep]


def estimate_nonsmooth_offset(grad, box, samples, rng, bins=8):
    """Fit ``||grad(a) - grad(b)|| <= slope * ||a - b|| + eta`` to sampled pairs.

    Pairs are short random steps inside ``box``. They are grouped into
    equal-count distance bins; the pair with the largest gradient difference in
    each bin gives one upper-envelope point (a running maximum over the shorter
    bins), and the envelope is fitted by least squares. Returns ``(slope, eta)`` with both clamped at zero.
    """
    a, b, dist = _local_pairs(box, samples, rng)
    if dist.size < 2:
        raise InvalidInputError("too few sampled pairs stayed inside the box")
    diffs = np.array([np.linalg.norm(np.asarray(grad(u)) - np.asarray(grad(v))) for u, v in zip(a, b)])
    order = np.argsort(dist, kind="stable")
    xs, ys = [], []
    for chunk in np.array_split(order, min(bins, order.size)):
        if chunk.size:
            top = chunk[np.argmax(diffs[chunk])]
            xs.append(dist[top])
            ys.append(diffs[top])
    # The bound is nondecreasing in distance, so a difference seen at a shorter
    # distance also bounds every longer one.
    ys = np.maximum.accumulate(ys)
    A = np.column_stack([xs, np.ones(len(xs))])
    (slope, eta), *_ = np.linalg.lstsq(A, ys, rcond=None)
    return max(float(slope), 0.0), max(float(eta), 0.0)


@dataclass(frozen=True)
class SmoothnessEstimate:
    lipschitz_L: float
    grad_lipschitz_beta: float
    nonsmooth_offset_eta: float
    sample_count: int
    parameter_box: Box


def estimate_smoothness(f, grad, box, samples, rng):
    L = estimate_lipschitz(f, box, samples, rng)
    beta = estimate_grad_lipschitz(grad, box, samples, rng)
    _, eta = estimate_nonsmooth_offset(grad, box, samples, rng)
    return SmoothnessEstimate(L, beta, eta, int(samples), box)


# Adversarial linear-regression surrogates in closed form.

def _as_surrogate(s):
    if isinstance(s, str) and s.lower() in SURROGATES:
        return s.lower()
    if isinstance(s, StrategyKind):
        return {StrategyKind.AVG: "avg", StrategyKind.ADT: "avg"}.get(s, "wst")
    kind = NormKind.parse(s)
    return {NormKind.L1: "p1", NormKind.L2: "p2", NormKind.LINF: "pinf"}[kind]


def _epsilons(epsilons):
    if isinstance(epsilons, dict):
        return {NormKind.parse(k): float(v) for k, v in epsilons.items()}
    return {k: float(epsilons) for k in NormKind}


def linreg_adv_risk(thetas, X, y, kind, epsilon):
    """Closed-form adversarial risk for many parameter rows at once."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    a = np.linalg.norm(X @ thetas.T - y[:, None], axis=0)
    b = math.sqrt(len(y)) * epsilon * row_norms(thetas, NormKind.parse(kind).dual)
    return (a + b) ** 2


def _dual_subgradient(theta, dual):
    if dual is NormKind.L1:
        return np.sign(theta)
    if dual is NormKind.L2:
        nrm = np.linalg.norm(theta)
        return theta / nrm if nrm > 0 else np.zeros_like(theta)
    g = np.zeros_like(theta)
    i = int(np.argmax(np.abs(theta)))
    g[i] = np.sign(theta[i])
    return g


def linreg_adv_grad(theta, X, y, kind, epsilon):
    """A (sub)gradient of :func:`linreg_adv_risk` at a single ``theta``."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    r = X @ theta - y
    a = np.linalg.norm(r)
    scale = math.sqrt(len(y)) * epsilon
    dual = NormKind.parse(kind).dual
    b = scale * float(row_norms(theta[None, :], dual)[0])
    ga = X.T @ r / a if a > 0 else np.zeros_like(theta)
    return 2.0 * (a + b) * (ga + scale * _dual_subgradient(theta, dual))


def surrogate_values(thetas, X, y, surrogate, epsilons):
    surrogate = _as_surrogate(surrogate)
    eps = _epsilons(epsilons)
    if surrogate in _SURROGATE_KIND:
        k = _SURROGATE_KIND[surrogate]
        return linreg_adv_risk(thetas, X, y, k, eps[k])
    stack = np.stack([linreg_adv_risk(thetas, X, y, k, eps[k]) for k in NormKind])
    return stack.max(axis=0) if surrogate == "wst" else stack.mean(axis=0)


def surrogate_functions(X, y, surrogate, epsilons):
    """``(value, gradient)`` callables on a single parameter vector."""
    surrogate = _as_surrogate(surrogate)
    eps = _epsilons(epsilons)

    def value(theta):
        return float(surrogate_values(theta, X, y, surrogate, eps)[0])

    def grad(theta):
        if surrogate in _SURROGATE_KIND:
            k = _SURROGATE_KIND[surrogate]
            return linreg_adv_grad(theta, X, y, k, eps[k])
        kinds = list(NormKind)
        if surrogate == "avg":
            return np.mean([linreg_adv_grad(theta, X, y, k, eps[k]) for k in kinds], axis=0)
        vals = [float(linreg_adv_risk(theta, X, y, k, eps[k])[0]) for k in kinds]
        k = kinds[int(np.argmax(vals))]
        return linreg_adv_grad(theta, X, y, k, eps[k])

    return value, grad


@dataclass(frozen=True, eq=False)
class LandscapeGrid:
    """``values[i, j]`` is the surrogate at ``(theta1_axis[i], theta2_axis[j])``."""

    theta1_axis: np.ndarray
    theta2_axis: np.ndarray
    values: np.ndarray
    surrogate: str

    @property
    def resolution(self):
        return self.theta1_axis.size


def landscape_grid(X, y, surrogate, epsilons, theta_range=(-2.0, 2.0), resolution=MIN_KINK_RESOLUTION):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != 2:
        raise InvalidInputError(f"landscape grids need d = 2, got d = {X.shape[1]}")
    if resolution < 2:
        raise InvalidInputError("resolution must be at least 2")
    lo, hi = (-float(theta_range), float(theta_range)) if np.isscalar(theta_range) else map(float, theta_range)
    if not hi > lo:
        raise InvalidInputError("theta_range must be increasing")
    axis = np.linspace(lo, hi, int(resolution))
    t1, t2 = np.meshgrid(axis, axis, indexing="ij")
    thetas = np.column_stack([t1.ravel(), t2.ravel()])
    values = surrogate_values(thetas, X, y, surrogate, epsilons).reshape(t1.shape)
    return LandscapeGrid(axis, axis.copy(), values, _as_surrogate(surrogate))


def _second_differences(V):
    """Absolute second differences across each candidate line, on interior points."""
    c = V[1:-1, 1:-1]
    return {
        AXIS1: np.abs(V[2:, 1:-1] - 2 * c + V[:-2, 1:-1]),
        AXIS2: np.abs(V[1:-1, 2:] - 2 * c + V[1:-1, :-2]),
        DIAG: np.abs(V[2:, :-2] - 2 * c + V[:-2, 2:]),
        ANTIDIAG: np.abs(V[2:, 2:] - 2 * c + V[:-2, :-2]),
    }


def detect_gradient_discontinuity(grid, threshold=10.0, origin_radius=3, band=2):
    """Kink lines among the axes and diagonals of a symmetric grid.

    A line is flagged when the median second difference taken across it
    exceeds ``threshold`` times the median of the same stencil away from all
    candidate lines. Points within ``origin_radius`` cells of the origin are
    left out of the line scores; the origin is reported on its own only when
    it is kinked while no line is.
    """
    V = np.asarray(grid.values, dtype=np.float64)
    res = V.shape[0]
    a1, a2 = np.asarray(grid.theta1_axis), np.asarray(grid.theta2_axis)
    if V.shape != (res, res) or res < MIN_KINK_RESOLUTION:
        raise InvalidInputError(f"kink detection needs a square grid with >= {MIN_KINK_RESOLUTION} points per axis")
    if res % 2 == 0 or not np.allclose(a1, -a1[::-1]) or not np.allclose(a1, a2):
        raise InvalidInputError("kink detection needs identical, symmetric, odd-length axes")
    if not np.all(np.isfinite(V)):
        raise InvalidInputError("grid values must be finite")
    jumps = _second_differences(V)
    i, j = np.meshgrid(np.arange(1, res - 1), np.arange(1, res - 1), indexing="ij")
    c = res // 2
    di, dj = i - c, j - c
    near_origin = np.maximum(np.abs(di), np.abs(dj)) <= origin_radius
    on = {AXIS1: di == 0, AXIS2: dj == 0, DIAG: di == dj, ANTIDIAG: di == -dj}
    off = ((np.abs(di) > band) & (np.abs(dj) > band) & (np.abs(di - dj) > band)
           & (np.abs(di + dj) > band))
    flagged, ratios = set(), {}
    tiny = np.finfo(float).tiny
    for label, S in jumps.items():
        base = max(float(np.median(S[off])), tiny)
        score = float(np.median(S[on[label] & ~near_origin]))
        ratios[label] = score / base
        if score > threshold * base:
            flagged.add(label)
    if not flagged:
        centre = (c - 1, c - 1)
        origin_ratio = max(float(S[centre]) / max(float(np.median(S[off])), tiny) for S in jumps.values())
        if origin_ratio > threshold:
            flagged.add(ORIGIN)
    return frozenset(flagged)


# Stability, stepsizes and risk accounting.

def stability_bound(L, alphas_per_step, n):
    """``2 L^2 sum_t alpha_t / n`` with ``alpha_t`` the (mean) stepsize of step t."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    total = float(np.sum(np.asarray(alphas_per_step, dtype=np.float64)))
    return 2.0 * L * L * total / n


def stepsize_recommendation(betas, D, L, T, n):
    """Stepsize caps from per-task smoothness and the balanced-error stepsize."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.size == 0 or np.any(betas <= 0) or not np.all(np.isfinite(betas)):
        raise InvalidInputError("every beta must be positive and finite")
    if T < 1 or n < 1:
        raise InvalidInputError("T and n must be >= 1")
    P = betas.size
    return {
        "alpha_avg_cap": float(P / np.sum(betas)),
        "alpha_sw_cap": float(np.sum(1.0 / betas) / P),
        "alpha_star": float(D * math.sqrt(n) / (L * math.sqrt(T * (n + 2 * T)))),
    }


def optimization_bias_report(alphas, B_estimate):
    """Bias ``B * sum_p |alpha_sw - alpha_p| / alpha_sw`` of non-uniform task stepsizes."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.size == 0:
        raise InvalidInputError("need at least one stepsize")
    a_sw = float(np.mean(alphas))
    if a_sw <= 0:
        raise InvalidInputError("mean stepsize must be positive")
    return float(B_estimate * np.sum(np.abs(a_sw - alphas)) / a_sw)


def estimate_bias_constant(task_loss_history, best_index=None):
    """``max_{t,p} |h^p(theta_t) - h^p(theta_best)|`` from a (T, P) loss history.

    ``theta_best`` is the iterate with the lowest mean task loss unless given.
    """
    H = np.asarray(task_loss_history, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise InvalidInputError("loss history must be a non-empty (T, P) array")
    if best_index is None:
        best_index = int(np.argmin(H.mean(axis=1)))
    return float(np.max(np.abs(H - H[best_index])))


@dataclass
class RiskReport:
    empirical_risk: float
    held_out_risk: float
    gen_gap: float
    opt_gap_vs_best: float


def mixture_risk(model, dataset, mixture, loss_kind, seed):
    """Mean over threats of the mean attacked loss."""
    if dataset.n == 0:
        raise InvalidInputError("empty dataset")
    mixture = as_mixture(mixture)
    streams = spec_streams(np.random.default_rng(seed), len(mixture))[:-1]
    _, losses = mixture_rows(model, dataset.X, dataset.y, mixture, loss_kind, streams)
    return float(losses.mean(axis=1).mean())


def excess_risk_report(model, train_set, held_out, mixture, best_known_params, rng, loss_kind=None):
    loss_kind = loss_kind or default_loss_kind(model)
    seed = int(rng.integers(0, 2**63 - 1))
    emp = mixture_risk(model, train_set, mixture, loss_kind, seed)
    held = mixture_risk(model, held_out, mixture, loss_kind, seed)
    best = mixture_risk(model.with_params(best_known_params), train_set, mixture, loss_kind, seed)
    return RiskReport(emp, held, held - emp, emp - best)


def grad_norm_trace(trajectory):
    """Per-epoch final-layer gradient norms keyed by task name plus ``avg``/``wst``."""
    if len(trajectory) and not trajectory.grad_norms:
        raise InvalidInputError("trajectory was recorded with gradient logging disabled")
    keys = list(trajectory.grad_norms[0]) if trajectory.grad_norms else []
    return {k: np.array([row[k] for row in trajectory.grad_norms]) for k in keys}


def task_betas(model, dataset, mixture, box, samples, rng, loss_kind=None):
    """Per-threat smoothness of the empirical attacked risk over a parameter box."""
    loss_kind = loss_kind or default_loss_kind(model)
    mixture = as_mixture(mixture)
    out = []
    for spec in mixture:
        seed = int(rng.integers(0, 2**63 - 1))

        def grad(theta, spec=spec, seed=seed):
            m = model.with_params(theta)
            streams = spec_streams(np.random.default_rng(seed), 1)[:-1]
            _, _, grads = task_losses_and_grads(m, dataset.X, dataset.y, as_mixture([spec]), loss_kind, streams)
            return grads[0]

        out.append(estimate_grad_lipschitz(grad, box, samples, rng))
    return out


def update_map(model, x, y, mixture, alphas, loss_kind, seed):
    """``G_z(theta) = theta - (1/P) sum_p alpha_p grad h^p(theta, z)`` as a callable."""
    mixture = as_mixture(mixture)
    X, Y = np.atleast_2d(x), np.atleast_1d(y)

    def G(theta):
        m = model.with_params(theta)
        streams = spec_streams(np.random.default_rng(seed), len(mixture))[:-1]
        _, _, grads = task_losses_and_grads(m, X, Y, mixture, loss_kind, streams)
        acc = np.zeros_like(m.params)
        for a, g in zip(alphas, grads):
            acc += a * g
        return m.params - acc / len(grads)

    return G


@dataclass(frozen=True)
class StabilityTask:
    """A convex training problem: ``sampler(n, rng) -> Dataset`` plus a model and threats."""

    sampler: object
    n: int
    model: object
    mixture: object
    strategy: StrategyKind = StrategyKind.AVG
    loss_kind: object = None


@dataclass
class StabilityTrace:
    delta_t: np.ndarray
    touched: np.ndarray
    mean_alphas: np.ndarray
    final_loss_gap: float
    lipschitz_L: float
    theoretical_bound: float
    differing_index: int


@dataclass
class StabilityReport:
    traces: list = field(default_factory=list)

    @property
    def mean_gap(self):
        return float(np.mean([t.final_loss_gap for t in self.traces]))

    @property
    def mean_bound(self):
        return float(np.mean([t.theoretical_bound for t in self.traces]))


def _objective(model, X, y, mixture, strategy, loss_kind, seed):
    streams = spec_streams(np.random.default_rng(seed), len(mixture))[:-1]
    _, losses = mixture_rows(model, X, y, mixture, loss_kind, streams)
    return losses.max(axis=0) if strategy in (StrategyKind.MAX, StrategyKind.MSD) else losses.mean(axis=0)


def _max_grad_norm(model, data, mixture, loss_kind, seed):
    streams = spec_streams(np.random.default_rng(seed), len(mixture))[:-1]
    deltas, _ = mixture_rows(model, data.X, data.y, mixture, loss_kind, streams)
    best = 0.0
    for dl in deltas:
        for i in range(data.n):
            g = loss_and_grads(model, data.X[i:i + 1] + dl[i:i + 1], data.y[i:i + 1], loss_kind).grad_params
            best = max(best, float(np.linalg.norm(g)))
    return best


def stability_probe(task, steps, alpha, trials, rng, probe_size=512, identical=False,
                    force=False, lipschitz_checkpoints=5):
    """Run identical-seed SGD on neighbouring datasets and compare the results.

    Each trial draws ``S``, replaces one random example to get ``S'`` (or keeps
    ``S' = S`` when ``identical``), and runs ``steps`` single-example updates on
    both with shared sampling and attack seeds. ``alpha`` is a constant or a
    callable of the step index. The loss gap is the largest absolute
    difference of the strategy objective over a shared probe set, and the bound
    is ``2 L^2 sum_t mean_p alpha_p^t / n`` with ``L`` the largest per-example
    attacked gradient norm seen at a few checkpoints of both runs.
    """
    model = task.model
    if not model.is_convex and not force:
        raise UnsupportedModelError("stability bounds assume a convex loss; pass force=True to run anyway")
    mixture = as_mixture(task.mixture)
    strategy = StrategyKind(task.strategy)
    loss_kind = task.loss_kind or default_loss_kind(model)
    step_alpha = alpha if callable(alpha) else (lambda t: float(alpha))
    probe = task.sampler(probe_size, np.random.default_rng(int(rng.integers(0, 2**63 - 1))))
    report = StabilityReport()
    checkpoints = set(np.linspace(0, steps, max(lipschitz_checkpoints, 2)).astype(int).tolist())
    for _ in range(trials):
        data_rng = np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
        S = task.sampler(task.n, data_rng)
        j = int(data_rng.integers(task.n))
        if identical:
            S2 = S
        else:
            z = task.sampler(1, data_rng)
            X2, y2 = S.X.copy(), S.y.copy()
            X2[j], y2[j] = z.X[0], z.y[0]
            S2 = Dataset(X2, y2, S.K)
        order_seed, attack_seed, eval_seed = (int(s) for s in rng.integers(0, 2**63 - 1, size=3))
        order = np.random.default_rng(order_seed).integers(task.n, size=steps)
        attack_seeds = np.random.default_rng(attack_seed).integers(0, 2**63 - 1, size=steps)
        th1, th2 = model.params.copy(), model.params.copy()
        deltas = np.zeros(steps + 1)
        mean_alphas = np.zeros(steps)
        L_hat = 0.0
        for t in range(steps + 1):
            if t in checkpoints:
                for th, data in ((th1, S), (th2, S2)):
                    L_hat = max(L_hat, _max_grad_norm(model.with_params(th), data, mixture, loss_kind, eval_seed))
            if t == steps:
                break
            i = order[t]
            a = step_alpha(t)
            new = []
            for th, data in ((th1, S), (th2, S2)):
                p, diag = strategy_step(model.with_params(th), data.X[i:i + 1], data.y[i:i + 1], mixture,
                                        strategy, a, loss_kind, np.random.default_rng(int(attack_seeds[t])))
                new.append(p)
            th1, th2 = new
            mean_alphas[t] = float(np.mean(diag.weights.alphas))
            deltas[t + 1] = float(np.linalg.norm(th1 - th2))
        h1 = _objective(model.with_params(th1), probe.X, probe.y, mixture, strategy, loss_kind, eval_seed)
        h2 = _objective(model.with_params(th2), probe.X, probe.y, mixture, strategy, loss_kind, eval_seed)
        touched = (order == j) if not identical else np.zeros(steps, dtype=bool)
        report.traces.append(StabilityTrace(
            deltas, touched, mean_alphas, float(np.max(np.abs(h1 - h2))), L_hat,
            stability_bound(L_hat, mean_alphas, task.n), j))
    return report
