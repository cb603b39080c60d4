"""Reference procedures that FasTEN is compared against.

All of them reuse :func:`fasten.training.train` with different switches, so
batching, evaluation and model selection are shared code.
"""
from __future__ import annotations

import enum
import time

import numpy as np

from . import nn
from .data import DatasetSplits
from .training import TrainConfig, TrainResult, train
from .transition import estimate_transition


class BaselineKind(str, enum.Enum):
    FASTEN = "fasten"
    VANILLA_CE = "vanilla"
    NAIVE_OVERSAMPLING = "oversampling"
    GLC_TWO_STAGE = "glc"
    ORACLE_T = "oracle_t"
    FASTEN_NO_LC = "fasten_no_lc"


def vanilla_config(config: TrainConfig) -> TrainConfig:
    return config.replace(batching="pooled", pool="noisy+clean", correction_enabled=False,
                          transition_mode="none", lam=0.0)


def oversampling_config(config: TrainConfig) -> TrainConfig:
    return config.replace(transition_mode="none", lam=0.0, correction_enabled=False)


def oracle_t_config(config: TrainConfig, T_oracle) -> TrainConfig:
    return config.replace(transition_mode="fixed", fixed_T=np.asarray(T_oracle, dtype=float),
                          correction_enabled=False)


def no_lc_config(config: TrainConfig) -> TrainConfig:
    return config.replace(correction_enabled=False)


def train_vanilla(config: TrainConfig, splits: DatasetSplits) -> TrainResult:
    """Single-head CE on noisy_train + clean_train pooled, no class balancing."""
    return train(vanilla_config(config), splits)


def train_naive_oversampling(config: TrainConfig, splits: DatasetSplits) -> TrainResult:
    """Balanced clean batch + random noisy batch, plain CE on both, one head."""
    return train(oversampling_config(config), splits)


def train_oracle_t(config: TrainConfig, splits: DatasetSplits, T_oracle) -> TrainResult:
    return train(oracle_t_config(config, T_oracle), splits)


def train_fasten_no_lc(config: TrainConfig, splits: DatasetSplits) -> TrainResult:
    return train(no_lc_config(config), splits)


def glc_transition(params: nn.ModelParams, splits: DatasetSplits) -> np.ndarray:
    """One-shot estimate from the whole clean set through a noisy-label model."""
    clean = splits.clean_train
    probs = nn.predict_proba(params, clean.x)
    return estimate_transition(clean.y_true, probs, splits.n_classes)


def train_glc_two_stage(config: TrainConfig, splits: DatasetSplits) -> TrainResult:
    """Stage 1: fit noisy_train alone. Stage 2: fresh model, loss corrected by frozen T.

    The returned history is stage 2's; stage 1's wall time is carried in
    ``history.extra_seconds`` and the stage-1 result on ``result.stage1``.
    """
    t0 = time.perf_counter()
    stage1 = train(config.replace(batching="pooled", pool="noisy", correction_enabled=False,
                                  transition_mode="none", lam=0.0), splits)
    T_glc = glc_transition(stage1.final_params, splits)
    T_glc.setflags(write=False)
    stage1_seconds = time.perf_counter() - t0
    stage2 = train(config.replace(transition_mode="fixed", fixed_T=T_glc, correction_enabled=False,
                                  lam=0.0, seed=config.seed + 7919), splits)
    stage2.history.extra_seconds = stage1_seconds
    stage2.stage1 = stage1
    stage2.T_glc = T_glc
    return stage2


def run_method(kind: BaselineKind | str, config: TrainConfig, splits: DatasetSplits,
               T_oracle=None) -> TrainResult:
    kind = BaselineKind(kind)
    if kind is BaselineKind.FASTEN:
        return train(config, splits)
    if kind is BaselineKind.VANILLA_CE:
        return train_vanilla(config, splits)
    if kind is BaselineKind.NAIVE_OVERSAMPLING:
        return train_naive_oversampling(config, splits)
    if kind is BaselineKind.GLC_TWO_STAGE:
        return train_glc_two_stage(config, splits)
    if kind is BaselineKind.ORACLE_T:
        if T_oracle is None:
            raise ValueError("oracle_t needs the injection oracle matrix")
        return train_oracle_t(config, splits, T_oracle)
    return train_fasten_no_lc(config, splits)
