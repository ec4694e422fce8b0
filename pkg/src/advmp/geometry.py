"""lp-ball geometry for p in {1, 2, inf}: norms, duality, projections and
steepest-ascent steps.

Single-vector functions take 1-D arrays; the ``*_rows`` helpers operate on a
batch (one perturbation per row) and dispatch to the compiled kernels.
"""
import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError

FEASIBILITY_TOL = 1e-9


class NormKind(enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @property
    def code(self):
        return _CODES[self]

    @property
    def dual(self):
        return _DUALS[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("ℓ", "l").replace("∞", "inf")
        aliases = {"1": "l1", "2": "l2", "inf": "linf", "l_inf": "linf", "infinity": "linf"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise InvalidInputError(f"unknown norm kind {value!r}") from None


_CODES = {NormKind.L1: 0, NormKind.L2: 1, NormKind.LINF: 2}
_DUALS = {NormKind.L1: NormKind.LINF, NormKind.L2: NormKind.L2, NormKind.LINF: NormKind.L1}


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    kind: NormKind
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _finite(self.center, "center"))
        object.__setattr__(self, "kind", NormKind.parse(self.kind))
        if not np.isfinite(self.radius) or self.radius < 0:
            raise InvalidInputError(f"ball radius must be finite and >= 0, got {self.radius}")

    def contains(self, v, tol=FEASIBILITY_TOL):
        return norm(np.asarray(v, dtype=float) - self.center, self.kind) <= self.radius + tol


def _finite(v, name="v"):
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return v


def norm(v, p):
    v = _finite(v)
    p = NormKind.parse(p)
    if p is NormKind.L1:
        return float(np.sum(np.abs(v)))
    if p is NormKind.L2:
        return float(np.sqrt(np.dot(v.ravel(), v.ravel())))
    return float(np.max(np.abs(v))) if v.size else 0.0


def row_norms(V, p):
    V = np.asarray(V, dtype=np.float64)
    p = NormKind.parse(p)
    if p is NormKind.L1:
        return np.abs(V).sum(axis=-1)
    if p is NormKind.L2:
        return np.sqrt(np.einsum("...i,...i->...", V, V))
    return np.abs(V).max(axis=-1)


def dual_norm_kind(p):
    return NormKind.parse(p).dual


def project_onto_ball(v, ball):
    """Euclidean projection of ``v`` onto ``ball``.

    l-inf clamps coordinates, l2 rescales radially when outside, l1 uses the
    sort-and-threshold simplex projection on ``|v - center|``.
    """
    v = _finite(v)
    if v.shape != ball.center.shape:
        raise InvalidInputError(f"shape {v.shape} does not match ball centre {ball.center.shape}")
    offset = (v - ball.center).reshape(1, -1)
    return ball.center + kernels.project_rows(offset, ball.kind.code, float(ball.radius))[0]


def project_rows(D, kind, radius):
    """Project every row of ``D`` onto the origin-centred ball of the given kind."""
    return kernels.project_rows(np.asarray(D, dtype=np.float64), NormKind.parse(kind).code,
                                float(radius))


def steepest_ascent_step(grad, p, step, k=1):
    """Step-scaled direction maximising ``<d, grad>`` over the unit ball.

    l-inf gives ``sign(grad)``, l2 the normalised gradient (zero for a zero
    gradient) and l1 spreads mass ``1/k`` over the ``k`` largest-magnitude
    coordinates.
    """
    grad = _finite(grad, "grad")
    if step <= 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    p = NormKind.parse(p)
    if not 1 <= k <= grad.size:
        raise InvalidInputError(f"top-k must satisfy 1 <= k <= {grad.size}, got {k}")
    return kernels.ascent_rows(grad.reshape(1, -1), p.code, float(step), int(k))[0]


def ascent_rows(G, kind, step, k=1):
    return kernels.ascent_rows(np.asarray(G, dtype=np.float64), NormKind.parse(kind).code,
                               float(step), int(k))


def random_rows_in_ball(n, d, kind, radius, rng):
    """``n`` points drawn uniformly from the origin-centred ball, one per row."""
    kind = NormKind.parse(kind)
    if radius == 0:
        return np.zeros((n, d))
    if kind is NormKind.LINF:
        return rng.uniform(-radius, radius, size=(n, d))
    if kind is NormKind.L2:
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = rng.random(n) ** (1.0 / d)
        return project_rows(radius * u[:, None] * g, kind, radius)
    # Uniform on the l1 ball: first d coordinates of a flat Dirichlet(d+1)
    # sample with random signs.
    e = rng.exponential(size=(n, d + 1))
    w = e[:, :d] / e.sum(axis=1, keepdims=True)
    signs = rng.choice((-1.0, 1.0), size=(n, d))
    return project_rows(radius * signs * w, kind, radius)


def random_point_in_ball(ball, rng):
    d = ball.center.size
    return ball.center + random_rows_in_ball(1, d, ball.kind, ball.radius, rng)[0]
