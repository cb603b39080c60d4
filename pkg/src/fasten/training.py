"""The per-iteration transition-estimation training loop with label correction.

Each iteration draws a class-balanced clean batch and a random noisy batch,
runs the shared extractor once over both, estimates ``T_hat`` from the noisy
head's outputs on the clean batch, and takes one momentum-SGD step on
``L_clean + lam * L_noisy``. Noisy-batch labels are then relabelled from the
clean head's (pre-step) predictions.

The same loop, with switches, also drives the baselines in
:mod:`fasten.baselines`.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import CleanBatchSampler, DatasetSplits, NoisyBatchSampler, Samples, noise_level
from .metrics import test_accuracy
from .transition import chi2_divergence, estimate_transition_grouped, mean_diagonal, true_transition_empirical

TRANSITION_MODES = ("estimate", "fixed", "none")
BATCHING_MODES = ("balanced", "pooled")


@dataclass
class TrainConfig:
    rho: float = 0.9
    lam: float = 0.5
    K: int = 10
    M: int | None = None  # noisy batch size, defaults to K * N
    epochs: int = 30
    lr: float = 5e-4  # losses are batch sums: about 0.04 on a mean loss at batch 80
    decay_epochs: tuple[int, ...] | None = None  # default: 70% and 85% of epochs
    decay_factor: float = 0.1
    momentum: float = 0.9
    hidden: tuple[int, ...] = (64, 64)
    correction_enabled: bool = True
    correction_cadence: str = "iteration"  # or "epoch"
    perturbation_rate: float = 0.0
    seed: int = 0
    # loop switches used by the baselines
    transition_mode: str = "estimate"
    fixed_T: np.ndarray | None = field(default=None, repr=False)
    batching: str = "balanced"
    pool: str = "noisy+clean"  # which sets "pooled" batching draws from

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.K < 1 or self.epochs < 1:
            raise ValueError("K and epochs must be positive")
        if not 0.0 <= self.perturbation_rate <= 1.0:
            raise ValueError("perturbation_rate must lie in [0, 1]")
        if self.correction_cadence not in ("iteration", "epoch"):
            raise ValueError(f"unknown correction cadence {self.correction_cadence!r}")
        if self.transition_mode not in TRANSITION_MODES:
            raise ValueError(f"unknown transition mode {self.transition_mode!r}")
        if self.transition_mode == "fixed" and self.fixed_T is None:
            raise ValueError("transition_mode='fixed' needs fixed_T")
        if self.batching not in BATCHING_MODES:
            raise ValueError(f"unknown batching {self.batching!r}")
        if self.pool not in ("noisy", "noisy+clean"):
            raise ValueError(f"unknown pool {self.pool!r}")
        decay = self.resolved_decay_epochs()
        if any(b <= a for a, b in zip(decay, decay[1:])) or any(not 0 < e < self.epochs for e in decay):
            raise ValueError(f"decay epochs {decay} must be strictly increasing and inside (0, epochs)")

    def resolved_decay_epochs(self) -> tuple[int, ...]:
        if self.decay_epochs is not None:
            return tuple(self.decay_epochs)
        marks = sorted({int(round(self.epochs * 0.7)), int(round(self.epochs * 0.85))})
        return tuple(m for m in marks if 0 < m < self.epochs)

    def lr_at(self, epoch: int) -> float:
        n_decays = sum(epoch >= e for e in self.resolved_decay_epochs())
        return self.lr * self.decay_factor ** n_decays

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class IterationRecord:
    iteration: int
    loss_clean: float
    loss_noisy: float
    loss_total: float
    T_hat: np.ndarray | None
    corrected: int
    reverted: int
    seconds: float


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    valid_acc: float
    test_acc: float
    noise_level: float
    chi2: float | None
    mean_diag_hat: float | None
    mean_diag_true: float
    corrections: int
    reverted: int
    epoch_seconds: float
    lr: float
    T_hat_mean: np.ndarray | None = field(default=None, repr=False)
    T_true: np.ndarray | None = field(default=None, repr=False)


@dataclass
class RunHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    iterations: list[IterationRecord] = field(default_factory=list)
    initial_noise_level: float = float("nan")
    best_epoch: int = -1
    extra_seconds: float = 0.0  # e.g. a preceding training stage
    wall_seconds: float | None = None  # clock time across the epoch loop, measured on its own

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch]

    @property
    def final_noise_level(self) -> float:
        return self.epochs[-1].noise_level

    @property
    def total_seconds(self) -> float:
        """Clock time of the run; the epoch sum stands in when no clock reading was taken."""
        loop = self.wall_seconds
        if loop is None:
            loop = math.fsum(e.epoch_seconds for e in self.epochs)
        return self.extra_seconds + loop

    def iteration_seconds(self) -> np.ndarray:
        return np.array([r.seconds for r in self.iterations])


@dataclass
class TrainResult:
    params: nn.ModelParams  # best-validation snapshot
    final_params: nn.ModelParams
    history: RunHistory
    splits: DatasetSplits  # with the (possibly corrected) noisy_train


def correct_labels(y_star, clean_probs, rho: float, y_current=None):
    """Relabel from clean-head confidence.

    Samples whose top probability is below ``rho`` go back to their original
    label; the rest take the arg-max class (lowest index on ties).
    Returns ``(new_labels, corrected_mask, reverted_mask)`` where
    ``corrected_mask`` marks arg-max labels that differ from ``y_star`` and
    ``reverted_mask`` marks below-threshold samples whose live label (if
    ``y_current`` is given) was not already ``y_star``.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    probs = np.asarray(clean_probs, dtype=float)
    y_star = np.asarray(y_star, dtype=int)
    unsure = probs.max(axis=1) < rho
    new = np.where(unsure, y_star, probs.argmax(axis=1))
    corrected = new != y_star
    reverted = unsure if y_current is None else unsure & (np.asarray(y_current) != y_star)
    return new, corrected, reverted


def perturb_corrections(labels, mask, rate: float, n_classes: int, rng: np.random.Generator):
    """With probability ``rate``, move each masked label to a uniformly random other class."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    labels = np.array(labels, dtype=int)
    idx = np.flatnonzero(mask)
    if rate == 0.0 or idx.size == 0:
        return labels, 0
    hit = idx[rng.random(idx.size) < rate]
    shift = rng.integers(1, n_classes, size=hit.size)
    labels[hit] = (labels[hit] + shift) % n_classes
    return labels, int(hit.size)


def compute_clean_loss(params: nn.ModelParams, T_hat, clean_x, clean_y, noisy_x, noisy_y) -> float:
    batch = nn.Batch(clean_x, clean_y, noisy_x, noisy_y)
    return nn.joint_loss_value(params, batch, nn.JointLoss(T_hat=T_hat, lam=0.0))


def compute_noisy_loss(params: nn.ModelParams, noisy_x, noisy_y) -> float:
    feats = nn.forward_features(params.extractor, noisy_x)
    return nn.cross_entropy(nn.head_forward(params.noisy, feats),
                            nn.one_hot(noisy_y, params.n_classes))


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, 100 + tag])


def loss_descriptor(config: TrainConfig, T_hat=None) -> nn.JointLoss:
    if config.batching == "pooled":
        return nn.JointLoss(T_hat=None, lam=0.0, clean_term=False)
    if config.transition_mode == "none":
        T_hat = None
    return nn.JointLoss(T_hat=T_hat, lam=config.lam)


def _evaluate_epoch(params, splits: DatasetSplits, T_hats, n_classes):
    noisy = splits.noisy_train
    probs = nn.predict_proba(params, noisy.x)
    train_acc = float(np.mean(probs.argmax(axis=1) == noisy.y_current))
    T_true = true_transition_empirical(noisy.y_true, noisy.y_current, n_classes)
    if T_hats:
        T_mean = np.mean(T_hats, axis=0)
        chi2, diag_hat = chi2_divergence(T_mean, T_true), mean_diagonal(T_mean)
    else:
        T_mean, chi2, diag_hat = None, None, None
    return dict(train_acc=train_acc,
                valid_acc=test_accuracy(params, splits.valid),
                test_acc=test_accuracy(params, splits.test),
                noise_level=noise_level(noisy), chi2=chi2, mean_diag_hat=diag_hat,
                mean_diag_true=mean_diagonal(T_true), T_hat_mean=T_mean, T_true=T_true)


def train(config: TrainConfig, splits: DatasetSplits, params: nn.ModelParams | None = None,
          keep_T_hat: bool = False) -> TrainResult:
    """Run the loop on a private copy of ``splits``; the caller's splits stay untouched.

    ``keep_T_hat`` stores every iteration's estimate in the history (memory
    heavy on long runs); epoch means are always kept.
    """
    splits = splits.copy()
    n_cls = splits.n_classes
    noisy, clean = splits.noisy_train, splits.clean_train
    if params is None:
        params = nn.init_params(noisy.x.shape[1], n_cls, config.hidden, seed=[config.seed, 1])
    else:
        params = params.copy()
    opt = nn.SGD(config.lr, config.momentum)
    history = RunHistory(initial_noise_level=noise_level(noisy))

    M = config.M or config.K * n_cls
    balanced = config.batching == "balanced"
    if balanced:
        pool = noisy
        # one gather per iteration builds [clean batch; noisy batch]
        both_x = np.concatenate([clean.x, noisy.x])
        offset = len(clean)
        clean_sampler = CleanBatchSampler(clean.y_true, n_cls, config.K, _stream(config.seed, 2))
        batch_size = M
    else:
        pool = noisy if config.pool == "noisy" else _concat(noisy, clean)
        clean_sampler = None
        batch_size = M + config.K * n_cls if config.pool == "noisy+clean" else M
    noisy_sampler = NoisyBatchSampler(len(pool), min(batch_size, len(pool)), _stream(config.seed, 3))
    perturb_rng = _stream(config.seed, 4)
    correcting = balanced and config.correction_enabled
    fixed_T = None if config.fixed_T is None else np.asarray(config.fixed_T, dtype=float)
    use_noisy_head = balanced and (config.lam != 0.0 or config.transition_mode == "estimate")

    best_valid = -1.0
    best_params = params.copy()
    it = 0
    t_loop = time.perf_counter()
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        t_epoch = time.perf_counter()
        T_hats = []
        n_corr = n_rev = 0
        for nidx in noisy_sampler.epoch():
            t0 = time.perf_counter()
            if balanced:
                cidx = clean_sampler.sample()
                x = both_x[np.concatenate([cidx, nidx + offset])]
                nc = len(cidx)
                batch = nn.Batch(x[:nc], clean_sampler.labels, x[nc:], noisy.y_current[nidx])
            else:
                x = pool.x[nidx]
                batch = nn.Batch(x[:0], pool.y_current[:0], x, pool.y_current[nidx])
            cache = nn.forward_joint(params, x, noisy_head=use_noisy_head)
            T_hat = None
            if balanced:
                if config.transition_mode == "estimate":
                    T_hat = estimate_transition_grouped(cache.p_noisy[:batch.n_clean], n_cls)
                elif config.transition_mode == "fixed":
                    T_hat = fixed_T
                T_hats.append(np.eye(n_cls) if T_hat is None else T_hat)
            try:
                parts, grads = nn.backward_joint(params, batch, loss_descriptor(config, T_hat), cache)
            except nn.NumericError as exc:
                exc.history = history
                exc.location = dict(epoch=epoch, iteration=it)
                raise
            corrected = reverted = 0
            if correcting and config.correction_cadence == "iteration":
                corrected, reverted = _apply_correction(
                    noisy, nidx, cache.p_clean[batch.n_clean:], config, n_cls, perturb_rng)
            opt.step(params, grads, lr)
            dt = time.perf_counter() - t0
            history.iterations.append(IterationRecord(
                it, parts.clean, parts.noisy, parts.total,
                T_hat if keep_T_hat else None, corrected, reverted, dt))
            n_corr += corrected
            n_rev += reverted
            it += 1
        if correcting and config.correction_cadence == "epoch":
            all_idx = np.arange(len(noisy))
            n_corr, n_rev = _apply_correction(
                noisy, all_idx, nn.predict_proba(params, noisy.x), config, n_cls, perturb_rng)
        ev = _evaluate_epoch(params, splits, T_hats, n_cls)
        if ev["valid_acc"] > best_valid:
            best_valid = ev["valid_acc"]
            best_params = params.copy()
            history.best_epoch = epoch
        history.epochs.append(EpochRecord(epoch=epoch, corrections=n_corr, reverted=n_rev,
                                          epoch_seconds=time.perf_counter() - t_epoch, lr=lr, **ev))
    history.wall_seconds = time.perf_counter() - t_loop
    return TrainResult(best_params, params, history, splits)


def _apply_correction(noisy: Samples, idx, probs, config: TrainConfig, n_cls, rng):
    new, corrected, reverted = correct_labels(noisy.y_star[idx], probs, config.rho,
                                              noisy.y_current[idx])
    if config.perturbation_rate > 0:
        new, _ = perturb_corrections(new, corrected, config.perturbation_rate, n_cls, rng)
    noisy.y_current[idx] = new
    return int(np.count_nonzero(corrected)), int(np.count_nonzero(reverted))


def _concat(a: Samples, b: Samples) -> Samples:
    return Samples(np.concatenate([a.x, b.x]), np.concatenate([a.y_true, b.y_true]),
                   np.concatenate([a.y_star, b.y_star]), np.concatenate([a.y_current, b.y_current]),
                   np.concatenate([a.ids, b.ids]))
