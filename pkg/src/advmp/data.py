"""Synthetic datasets (linear regression, Gaussian blobs, two moons) and a CSV importer.

A generator fixes the population (regression weights, class centres) from
its own seed; ``sample(n, rng)`` then draws fresh i.i.d. examples, so train,
held-out and probe sets all come from one distribution.
"""
import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ConfigError, InvalidInputError
from .models import Dataset


@dataclass
class GeneratedData:
    train: Dataset
    test: Dataset
    generator: object = None
    meta: dict = field(default_factory=dict)


class LinearRegressionGenerator:
    def __init__(self, d, noise, rng):
        self.theta = rng.standard_normal(d)
        self.noise = noise

    def sample(self, n, rng):
        X = rng.standard_normal((n, self.theta.size))
        return Dataset(X, X @ self.theta + self.noise * rng.standard_normal(n), 0)


def blob_centers(K, d, min_distance, rng):
    """``K`` Gaussian-drawn centres rescaled so the closest pair is ``min_distance`` apart."""
    C = rng.standard_normal((K, d))
    closest = min(np.linalg.norm(C[a] - C[b]) for a, b in combinations(range(K), 2))
    return C * (min_distance / closest)


class BlobGenerator:
    """Isotropic Gaussian classes with balanced labels.

    The first ``d`` coordinates carry centres whose closest pair is
    ``separation * noise`` apart; ``weak_features`` extra coordinates carry
    class means of ``+-weak_scale * noise``, each one weakly informative.
    """

    def __init__(self, d, K, noise, separation, rng, weak_features=0, weak_scale=0.5):
        if K < 2:
            raise InvalidInputError("blobs need K >= 2")
        self.K, self.noise = K, noise
        strong = blob_centers(K, d, separation * noise, rng)
        weak = weak_scale * noise * rng.choice((-1.0, 1.0), size=(K, weak_features))
        self.centers = np.hstack([strong, weak])

    def sample(self, n, rng):
        y = rng.permutation(np.arange(n) % self.K)
        X = self.centers[y] + self.noise * rng.standard_normal((n, self.centers.shape[1]))
        return Dataset(X, y, self.K)


class MoonsGenerator:
    def __init__(self, noise):
        self.noise = noise

    def sample(self, n, rng):
        y = rng.permutation(np.arange(n) % 2)
        t = rng.uniform(0.0, np.pi, size=n)
        X = np.where(y[:, None] == 0,
                     np.column_stack([np.cos(t), np.sin(t)]),
                     np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)]))
        return Dataset(X + self.noise * rng.standard_normal((n, 2)), y, 2)


class ResampleGenerator:
    """Bootstrap draws from a fixed dataset (used for imported CSV data)."""

    def __init__(self, dataset):
        self.dataset = dataset

    def sample(self, n, rng):
        return self.dataset.subset(rng.integers(self.dataset.n, size=n))


def load_csv(path, K=0):
    """Rows ``x1,...,xd,y``; a non-numeric first row is taken as a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    try:
        arr = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise InvalidInputError(f"{path}: need at least one feature column and a label column")
    y = arr[:, -1].astype(np.int64) if K else arr[:, -1]
    return Dataset(arr[:, :-1], y, K)


def make_generator(spec, rng):
    if spec.d < 1:
        raise ConfigError(f"invalid data dimension d={spec.d}")
    try:
        if spec.kind == "linreg":
            return LinearRegressionGenerator(spec.d, spec.noise, rng)
        if spec.kind == "blobs":
            return BlobGenerator(spec.d, spec.K, spec.noise, spec.separation, rng,
                                 spec.weak_features, spec.weak_scale)
        if spec.kind == "moons":
            if spec.d != 2:
                raise ConfigError("two moons are 2-dimensional")
            return MoonsGenerator(spec.noise)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown dataset kind {spec.kind!r}")


def generate_dataset(spec):
    """Train/test splits for a data config; deterministic in ``spec.seed``."""
    if spec.n < 1 or spec.n_test < 1:
        raise ConfigError(f"invalid data sizes n={spec.n}, n_test={spec.n_test}")
    pop_rng, sample_rng = (np.random.default_rng(s) for s in
                           np.random.SeedSequence(spec.seed).generate_state(2))
    if spec.kind == "csv":
        try:
            full = load_csv(spec.path, spec.K)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        idx = sample_rng.permutation(full.n)
        n = min(spec.n, full.n - 1)
        if n < 1:
            raise ConfigError(f"{spec.path}: need at least two rows for a train/test split")
        train = full.subset(idx[:n])
        return GeneratedData(train, full.subset(idx[n:n + spec.n_test]), ResampleGenerator(full))
    gen = make_generator(spec, pop_rng)
    train = gen.sample(spec.n, sample_rng)
    test = gen.sample(spec.n_test, sample_rng)
    meta = {"theta_true": gen.theta} if spec.kind == "linreg" else {}
    return GeneratedData(train, test, gen, meta)
