"""Synthetic Gaussian-blob datasets, stratified splits, label-noise injection
and the two batch samplers used by the training loop.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .transition import check_pairing, cyclic_pairing, oracle_asymmetric, oracle_symmetric

# Per-class std giving a nearest-true-mean (Bayes) accuracy of about 0.95
# for 4 classes; see tests/test_data.py::test_default_spread_calibration.
DEFAULT_SPREAD = 0.34
CALIBRATED_BAYES_ACCURACY = 0.9515


class ConfigError(ValueError):
    """Inputs that cannot satisfy a sampler or split precondition."""


@dataclass
class Samples:
    """Feature rows with their latent, original-noisy and live labels.

    ``ids`` are stable sample identities (row index at generation time);
    noise injection keys its random draws on them.
    """

    x: np.ndarray
    y_true: np.ndarray
    y_star: np.ndarray
    y_current: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return len(self.y_true)

    def subset(self, idx) -> "Samples":
        y_star = self.y_star[idx].copy()
        y_star.setflags(write=self.y_star.flags.writeable)
        return Samples(self.x[idx], self.y_true[idx].copy(), y_star,
                       self.y_current[idx].copy(), self.ids[idx].copy())

    def copy(self) -> "Samples":
        return self.subset(np.arange(len(self)))

    def class_counts(self, n_classes: int, which: str = "y_current") -> np.ndarray:
        return np.bincount(getattr(self, which), minlength=n_classes)


@dataclass
class DatasetSplits:
    noisy_train: Samples
    clean_train: Samples
    valid: Samples
    test: Samples
    n_classes: int

    def copy(self) -> "DatasetSplits":
        return DatasetSplits(self.noisy_train.copy(), self.clean_train.copy(),
                             self.valid.copy(), self.test.copy(), self.n_classes)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "symmetric"
    gamma: float = 0.0
    pairing: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "symmetric":
            if not 0.0 <= self.gamma < 1.0:
                raise ConfigError("symmetric gamma must lie in [0, 1)")
        elif self.kind == "asymmetric":
            if not 0.0 <= self.gamma < 0.5:
                raise ConfigError("asymmetric gamma must lie in [0, 0.5)")
        else:
            raise ConfigError(f"unknown noise kind {self.kind!r}")


def blob_means(n_classes: int, dim: int, seed: int) -> np.ndarray:
    """Class centres on random orthonormal directions (all pairwise distances sqrt 2).

    Falls back to standard-normal centres when ``n_classes > dim``.
    """
    rng = np.random.default_rng([seed, 0])
    if n_classes <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return q[:, :n_classes].T.copy()
    return rng.standard_normal((n_classes, dim))


def generate_blobs(n_classes: int, n_per_class: int, dim: int, spread: float = DEFAULT_SPREAD,
                   seed: int = 0) -> Samples:
    if n_classes < 2 or dim < 2:
        raise ConfigError("need at least 2 classes and 2 dimensions")
    if spread <= 0:
        raise ConfigError("spread must be positive")
    means = blob_means(n_classes, dim, seed)
    rng = np.random.default_rng([seed, 1])
    y = np.repeat(np.arange(n_classes), n_per_class)
    x = means[y] + spread * rng.standard_normal((len(y), dim))
    return Samples(x, y.copy(), y.copy(), y.copy(), np.arange(len(y)))


def nearest_mean_predict(x, means) -> np.ndarray:
    d = ((np.asarray(x)[:, None, :] - means[None]) ** 2).sum(axis=-1)
    return d.argmin(axis=1)


def bayes_accuracy(samples: Samples, means) -> float:
    """Accuracy of the nearest-true-mean rule, Bayes-optimal for equal isotropic blobs."""
    return float(np.mean(nearest_mean_predict(samples.x, means) == samples.y_true))


def split_counts(n: int, fractions) -> list[int]:
    # small epsilon keeps 1200 * (5/6) from flooring to 999
    return [int(np.floor(f * n + 1e-9)) for f in fractions]


def split(samples: Samples, fractions=(0.8, 0.05, 0.05, 0.1), seed: int = 0,
          n_classes: int | None = None, min_clean_per_class: int = 1) -> DatasetSplits:
    """Stratified disjoint split into (noisy_train, clean_train, valid, test).

    Per-class sizes are ``floor(fraction * class_size)``; leftovers are dropped.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 4 or any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise ConfigError("need four positive split fractions summing to at most 1")
    n_classes = int(samples.y_true.max()) + 1 if n_classes is None else n_classes
    rng = np.random.default_rng([seed, 2])
    parts = [[], [], [], []]
    for c in range(n_classes):
        idx = np.flatnonzero(samples.y_true == c)
        idx = idx[rng.permutation(len(idx))]
        counts = split_counts(len(idx), fractions)
        if counts[1] < min_clean_per_class:
            raise ConfigError(f"class {c}: clean split gets {counts[1]} samples, "
                              f"need at least {min_clean_per_class}")
        start = 0
        for part, k in zip(parts, counts):
            part.append(idx[start:start + k])
            start += k
    subsets = [samples.subset(np.sort(np.concatenate(p))) for p in parts]
    return DatasetSplits(*subsets, n_classes=n_classes)


def per_sample_uniforms(seed: int, ids, n_draws: int = 1) -> np.ndarray:
    """One independent stream per sample id, so draws do not depend on order."""
    out = np.empty((len(ids), n_draws))
    for row, sid in enumerate(np.asarray(ids, dtype=np.int64)):
        out[row] = np.random.default_rng([seed, 3, int(sid)]).random(n_draws)
    return out


def _draw_labels(T: np.ndarray, y_true: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(T, axis=1)
    cdf[:, -1] = 1.0
    rows = cdf[y_true]
    return (u[:, None] >= rows).sum(axis=1)


def _inject(samples: Samples, T: np.ndarray, seed: int) -> Samples:
    u = per_sample_uniforms(seed, samples.ids)[:, 0]
    y_star = _draw_labels(T, samples.y_true, u)
    y_star.setflags(write=False)
    samples.y_star = y_star
    samples.y_current = y_star.copy()
    return samples


def inject_symmetric_noise(samples: Samples, gamma: float, seed: int,
                           n_classes: int | None = None) -> Samples:
    """Draw each original noisy label from the symmetric-noise row of its true class.

    Mutates and returns ``samples``; ``y_star`` becomes read-only.
    """
    n = int(samples.y_true.max()) + 1 if n_classes is None else n_classes
    return _inject(samples, oracle_symmetric(n, gamma), seed)


def inject_asymmetric_noise(samples: Samples, gamma: float, pairing=None, seed: int = 0,
                            n_classes: int | None = None) -> Samples:
    n = int(samples.y_true.max()) + 1 if n_classes is None else n_classes
    pairing = cyclic_pairing(n) if pairing is None else check_pairing(pairing, n)
    return _inject(samples, oracle_asymmetric(n, gamma, pairing), seed)


def inject_noise(samples: Samples, spec: NoiseSpec, n_classes: int) -> Samples:
    if spec.kind == "symmetric":
        return inject_symmetric_noise(samples, spec.gamma, spec.seed, n_classes)
    return inject_asymmetric_noise(samples, spec.gamma, spec.pairing, spec.seed, n_classes)


def noise_level(samples: Samples) -> float:
    return float(np.mean(samples.y_current != samples.y_true))


class CleanBatchSampler:
    """Draws exactly K samples of every class, without replacement within a batch."""

    def __init__(self, labels, n_classes: int, K: int, rng: np.random.Generator):
        labels = np.asarray(labels, dtype=int)
        counts = np.bincount(labels, minlength=n_classes)
        if K < 1 or counts.min() < K:
            raise ConfigError(f"clean set has per-class counts {counts.tolist()}, need K={K}")
        self.K = K
        self.rng = rng
        width = counts.max()
        self._table = np.full((n_classes, width), -1)
        for c in range(n_classes):
            members = np.flatnonzero(labels == c)
            self._table[c, :len(members)] = members
        # padding slots get an infinite key so they are never among the K smallest
        self._pad = np.where(self._table < 0, np.inf, 0.0)
        self._rows = np.arange(n_classes)[:, None]
        # labels of every batch: class-major, K per class
        self.labels = np.repeat(np.arange(n_classes), K)
        self.labels.flags.writeable = False

    def sample(self) -> np.ndarray:
        keys = self.rng.random(self._table.shape) + self._pad
        cols = np.argpartition(keys, self.K - 1, axis=1)[:, :self.K]
        return self._table[self._rows, cols].ravel()


def sample_clean_batch(clean_train: Samples, K: int, rng: np.random.Generator,
                       n_classes: int | None = None) -> np.ndarray:
    n = int(clean_train.y_true.max()) + 1 if n_classes is None else n_classes
    return CleanBatchSampler(clean_train.y_true, n, K, rng).sample()


class NoisyBatchSampler:
    """Epochs are seeded permutations cut into consecutive batches of size M.

    The last batch of an epoch is short when M does not divide the set size.
    """

    def __init__(self, n: int, M: int, rng: np.random.Generator):
        if not 1 <= M <= n:
            raise ConfigError(f"noisy batch size {M} must lie in [1, {n}]")
        self.n, self.M, self.rng = n, M, rng

    def __len__(self):
        return -(-self.n // self.M)

    def epoch(self):
        order = self.rng.permutation(self.n)
        for start in range(0, self.n, self.M):
            yield order[start:start + self.M]


def write_samples_csv(samples: Samples, path_or_buf=None) -> str | None:
    """CSV with columns ``x0..x{d-1},y_true,y_star,y_current``; round-trips byte-exact."""
    d = samples.x.shape[1]
    lines = [",".join([f"x{k}" for k in range(d)] + ["y_true", "y_star", "y_current"])]
    for row, a, b, c in zip(samples.x, samples.y_true, samples.y_star, samples.y_current):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(a)), str(int(b)), str(int(c))]))
    text = "\n".join(lines) + "\n"
    if path_or_buf is None:
        return text
    if isinstance(path_or_buf, io.TextIOBase):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
    return None


def read_samples_csv(path_or_buf) -> Samples:
    if isinstance(path_or_buf, io.TextIOBase):
        text = path_or_buf.read()
    else:
        with open(path_or_buf) as fh:
            text = fh.read()
    lines = text.rstrip("\n").split("\n")
    header = lines[0].split(",")
    if header[-3:] != ["y_true", "y_star", "y_current"]:
        raise ValueError("sample CSV must end with y_true,y_star,y_current columns")
    d = len(header) - 3
    if header[:d] != [f"x{k}" for k in range(d)]:
        raise ValueError("feature columns must be named x0..x{d-1}")
    rows = [ln.split(",") for ln in lines[1:]]
    x = np.array([[float(v) for v in r[:d]] for r in rows]).reshape(len(rows), d)
    labels = np.array([[int(v) for v in r[d:]] for r in rows], dtype=int).reshape(len(rows), 3)
    return Samples(x, labels[:, 0].copy(), labels[:, 1].copy(), labels[:, 2].copy(),
                   np.arange(len(rows)))
