"""The acceptance suite: property checks plus desk-scale directional reproductions.

Shared by ``fasten verify`` and ``tests/test_acceptance.py``. Training runs
are cached inside a :class:`Suite` so criteria that look at the same setup
do not retrain.

Standard setup: Gaussian blobs, 4 classes, dim 16, 4000 noisy-train / 200
clean / 200 valid / 400 test, symmetric noise, seeds 0-4, default
:class:`~fasten.training.TrainConfig`. Accuracy means the test accuracy of
the best-validation epoch.
"""
from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, metrics, nn, runner
from .baselines import run_method
from .config import DatasetConfig, ExperimentConfig
from .training import TrainConfig
from .transition import (chi2_divergence, estimate_transition, hoeffding_bound, mc_bound_check,
                         oracle_symmetric, true_transition_empirical)

SEEDS = (0, 1, 2, 3, 4)
SETUP = DatasetConfig(n_classes=4, per_class=1200, dim=16)


@dataclass
class Criterion:
    number: int
    title: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  [{self.number:2d}] {self.title}: {self.detail}"


class Suite:
    def __init__(self, seeds=SEEDS, train: TrainConfig | None = None, log=None):
        self.seeds = tuple(seeds)
        self.train = TrainConfig() if train is None else train
        self.log = log or (lambda msg: None)
        self._splits = {}
        self._runs = {}

    # ---- shared fixtures ----

    def splits(self, seed: int, gamma: float) -> data.DatasetSplits:
        key = (seed, gamma)
        if key not in self._splits:
            s = data.generate_blobs(SETUP.n_classes, SETUP.per_class, SETUP.dim, SETUP.spread, seed=seed)
            sp = data.split(s, SETUP.fractions, seed=seed, n_classes=SETUP.n_classes)
            data.inject_symmetric_noise(sp.noisy_train, gamma, seed, SETUP.n_classes)
            self._splits[key] = sp
        return self._splits[key]

    def result(self, method: str, gamma: float, seed: int, **overrides):
        key = (method, gamma, seed, tuple(sorted(overrides.items())))
        if key not in self._runs:
            t0 = time.perf_counter()
            cfg = self.train.replace(seed=seed, **overrides)
            T = oracle_symmetric(SETUP.n_classes, gamma)
            self._runs[key] = run_method(method, cfg, self.splits(seed, gamma), T_oracle=T)
            self.log(f"  trained {method} gamma={gamma} seed={seed} {overrides or ''} "
                     f"in {time.perf_counter() - t0:.1f}s")
        return self._runs[key]

    def accuracies(self, method, gamma, **overrides) -> np.ndarray:
        return np.array([self.result(method, gamma, s, **overrides).history.best.test_acc
                         for s in self.seeds])

    # ---- criteria ----

    def c1_gradient_oracle(self) -> Criterion:
        rng = np.random.default_rng(101)
        params = nn.init_params(6, 4, (12, 12), seed=101)
        batch = nn.Batch(rng.normal(size=(8, 6)), np.repeat(np.arange(4), 2),
                         rng.normal(size=(10, 6)), rng.integers(0, 4, 10))
        T = rng.dirichlet(np.ones(4) * 2, size=4)
        loss = nn.JointLoss(T_hat=T, lam=0.7)
        n_params = sum(a.size for a in params.arrays())
        err = nn.finite_diff_check(params, batch, loss, n_params=min(200, n_params), seed=7)
        return Criterion(1, "gradient oracle", err < 1e-4,
                         f"max relative error {err:.2e} over {min(200, n_params)} parameters (< 1e-4)",
                         {"max_rel_error": err})

    def c2_estimator_exactness(self) -> Criterion:
        rng = np.random.default_rng(202)
        worst_exact = 0.0
        for _ in range(50):
            n = int(rng.integers(2, 8))
            k = int(rng.integers(1, 20))
            labels = np.repeat(np.arange(n), k)
            noisy = rng.integers(0, n, labels.size)
            T = estimate_transition(labels, np.eye(n)[noisy], n)
            worst_exact = max(worst_exact, float(np.abs(T - true_transition_empirical(labels, noisy, n)).max()))
        worst_row = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 10))
            k = int(rng.integers(1, 8))
            labels = rng.permutation(np.repeat(np.arange(n), k))
            probs = rng.dirichlet(np.full(n, float(rng.uniform(0.05, 5))), size=labels.size)
            T = estimate_transition(labels, probs, n)
            worst_row = max(worst_row, float(np.abs(T.sum(axis=1) - 1).max()))
        ok = worst_exact <= 1e-12 and worst_row <= 1e-9
        return Criterion(2, "estimator exactness", ok,
                         f"one-hot deviation {worst_exact:.1e} (<= 1e-12), row-sum deviation "
                         f"{worst_row:.1e} over 1000 trials (<= 1e-9)",
                         {"onehot_dev": worst_exact, "rowsum_dev": worst_row})

    def c3_concentration_bound(self) -> Criterion:
        T = oracle_symmetric(4, 0.6)
        trials = 10_000
        cells, ok, notes = {}, True, []
        for eps in (0.05, 0.1, 0.2):
            prev = None
            for K in (5, 20, 100):
                freq = mc_bound_check(T, K, eps, trials=trials, seed=int(1000 * eps) + K, per_entry=True)
                bound = hoeffding_bound(eps, K)
                b = min(bound, 1.0)
                slack = 3 * math.sqrt(b * (1 - b) / trials)
                cells[f"eps={eps},K={K}"] = {"freq": freq, "bound": bound}
                if freq > bound + slack:
                    ok = False
                    notes.append(f"eps={eps} K={K}: {freq:.4f} > {bound:.4f}+{slack:.4f}")
                if prev is not None:
                    sd = math.sqrt((prev * (1 - prev) + freq * (1 - freq)) / trials)
                    if freq > prev + 3 * sd:
                        ok = False
                        notes.append(f"eps={eps}: frequency rose from {prev:.4f} to {freq:.4f} at K={K}")
                prev = freq
        name, tight = min(cells.items(), key=lambda kv: kv[1]["bound"] - kv[1]["freq"])
        detail = "; ".join(notes) if notes else \
            (f"all 9 cells within bound + 3 sigma, monotone in K (tightest {name}: "
             f"freq {tight['freq']:.4f} vs bound {tight['bound']:.4f})")
        return Criterion(3, "concentration bound", ok, detail, cells)

    def c4_noise_fidelity(self) -> Criterion:
        s = data.generate_blobs(10, 600, 4, seed=404)
        data.inject_symmetric_noise(s, 0.8, seed=404, n_classes=10)
        n = len(s)
        kept = float(np.mean(s.y_star == s.y_true))
        sd = math.sqrt(0.28 * 0.72 / n)
        T = oracle_symmetric(10, 0.8)
        emp = true_transition_empirical(s.y_true, s.y_star, 10)
        per_class = np.bincount(s.y_true, minlength=10)[:, None]
        band = 3 * np.sqrt(T * (1 - T) / per_class)
        entry_ok = bool(np.all(np.abs(emp - T) <= band))
        ok = abs(kept - 0.28) <= 3 * sd and entry_ok
        return Criterion(4, "noise-model fidelity", ok,
                         f"unflipped {kept:.4f} vs 0.28 +/- {3 * sd:.4f} on {n} samples; "
                         f"entrywise within 3 sigma: {entry_ok}",
                         {"unflipped": kept, "max_abs_dev": float(np.abs(emp - T).max())})

    def c5_learning_gain(self) -> Criterion:
        f = self.accuracies("fasten", 0.6)
        v = self.accuracies("vanilla", 0.6)
        nl = self.accuracies("fasten_no_lc", 0.6)
        gain = f.mean() - v.mean()
        gain_ok = gain >= 0.05
        ablation_ok = f.mean() >= nl.mean() - 0.005
        final = {m: float(np.mean([self.result(m, 0.6, s).history.epochs[-1].test_acc for s in self.seeds]))
                 for m in ("fasten", "vanilla", "fasten_no_lc")}
        detail = (f"FasTEN {100 * f.mean():.2f} vs vanilla {100 * v.mean():.2f} "
                  f"(gain {100 * gain:+.2f}, need >= +5.00: {'ok' if gain_ok else 'no'}); "
                  f"vs no-LC {100 * nl.mean():.2f} (need >= -0.50: {'ok' if ablation_ok else 'no'}); "
                  f"final-epoch: FasTEN {100 * final['fasten']:.2f}, vanilla {100 * final['vanilla']:.2f}")
        return Criterion(5, "desk-scale learning gain", gain_ok and ablation_ok, detail,
                         {"fasten": f.tolist(), "vanilla": v.tolist(), "no_lc": nl.tolist(),
                          "final_epoch": final})

    def c6_cleansing(self) -> Criterion:
        rows, ok = [], True
        for gamma in (0.4, 0.6):
            for s in self.seeds:
                h = self.result("fasten", gamma, s).history
                rows.append((gamma, s, h.initial_noise_level, h.final_noise_level))
                ok &= h.final_noise_level < h.initial_noise_level
        by_gamma = {g: (np.mean([r[2] for r in rows if r[0] == g]), np.mean([r[3] for r in rows if r[0] == g]))
                    for g in (0.4, 0.6)}
        detail = ", ".join(f"gamma {g}: {a:.3f} -> {b:.3f}" for g, (a, b) in by_gamma.items()) + \
            f" (mean over seeds; every seed reduced: {ok})"
        return Criterion(6, "cleansing", bool(ok), detail, {"runs": rows})

    def c7_miscorrection(self) -> Criterion:
        p = self.accuracies("fasten", 0.6, perturbation_rate=1.0)
        nl = self.accuracies("fasten_no_lc", 0.6)
        ok = p.mean() >= nl.mean() - 0.01
        return Criterion(7, "miscorrection robustness", bool(ok),
                         f"FasTEN with every correction perturbed {100 * p.mean():.2f} vs no-LC "
                         f"{100 * nl.mean():.2f} (need >= -1.00)",
                         {"perturbed": p.tolist(), "no_lc": nl.tolist()})

    def c8_estimation_tracking(self) -> Criterion:
        ok, rows = True, []
        for s in self.seeds:
            h = self.result("fasten_no_lc", 0.6, s).history
            first, last = h.epochs[0].chi2, h.epochs[-1].chi2
            glc = self.result("glc", 0.6, s)
            noisy = self.splits(s, 0.6).noisy_train
            glc_chi2 = chi2_divergence(glc.T_glc, true_transition_empirical(noisy.y_true, noisy.y_star, 4))
            rows.append({"seed": s, "first": first, "final": last, "glc": glc_chi2})
            ok &= last <= 0.5 * first and last <= 2 * glc_chi2
        m = {k: float(np.mean([r[k] for r in rows])) for k in ("first", "final", "glc")}
        return Criterion(8, "estimation tracking", bool(ok),
                         f"chi2 first epoch {m['first']:.4f} -> final {m['final']:.4f}, GLC one-shot "
                         f"{m['glc']:.4f} (mean over seeds; every seed within 1/2 and 2x: {ok})",
                         {"runs": rows})

    def c9_efficiency(self) -> Criterion:
        # per-iteration cost: interleave pairs of runs of about equal wall time so
        # machine drift hits both methods alike; each side of a pair has >= 200
        # iterations and the pair ratios are summarised by their median
        cfg = self.train.replace(decay_epochs=())
        sp = self.splits(self.seeds[0], 0.6)
        run_method("fasten", cfg.replace(epochs=1), sp)
        run_method("vanilla", cfg.replace(epochs=1), sp)  # warm-up
        ratios, f_med, v_med, n_f, n_v = [], [], [], [], []
        for r in range(7):
            f = run_method("fasten", cfg.replace(seed=r, epochs=2), sp).history.iteration_seconds()
            v = run_method("vanilla", cfg.replace(seed=r, epochs=4), sp).history.iteration_seconds()
            f_med.append(np.median(f))
            v_med.append(np.median(v))
            ratios.append(f_med[-1] / v_med[-1])
            n_f.append(len(f))
            n_v.append(len(v))
        ratio = float(np.median(ratios))
        f_it, v_it = f_med, v_med
        fasten_total = float(np.mean([self.result("fasten", 0.6, s).history.total_seconds for s in self.seeds]))
        glc_total = float(np.mean([self.result("glc", 0.6, s).history.total_seconds for s in self.seeds]))
        ok = ratio <= 1.5 and fasten_total < glc_total and min(n_f + n_v) >= 200
        return Criterion(9, "efficiency", ok,
                         f"median iteration {1e3 * np.median(f_it):.3f} ms vs vanilla "
                         f"{1e3 * np.median(v_it):.3f} ms (ratio {ratio:.2f}, need <= 1.5; "
                         f"pair ratios {min(ratios):.2f}-{max(ratios):.2f}, >= {min(n_f + n_v)} "
                         f"iterations per side); total {fasten_total:.1f} s vs GLC {glc_total:.1f} s",
                         {"ratio": ratio, "pair_ratios": [float(x) for x in ratios], "fasten_total": fasten_total, "glc_total": glc_total})

    def c10_determinism(self) -> Criterion:
        base = ExperimentConfig(dataset=DatasetConfig(4, 300, 8), noise=data.NoiseSpec("symmetric", 0.6),
                                train=TrainConfig(epochs=3), seeds=[3])
        mismatches = []
        with tempfile.TemporaryDirectory() as tmp:
            for method in ("fasten", "glc"):
                cfg = ExperimentConfig(base.dataset, base.noise, method, base.train, None, [3])
                dirs = []
                for _ in range(2):
                    code, d = runner.run(cfg, out=Path(tmp) / method, strict=True, log=lambda m: None)
                    if code != 0:
                        mismatches.append(f"{method}: exit {code}")
                    dirs.append(d / f"{method}-seed3")
                a, b = (comparable_artifacts(d) for d in dirs)
                if a != b:
                    mismatches.append(method)
        ok = not mismatches
        return Criterion(10, "determinism", ok,
                         "history CSV and summary JSON byte-identical across strict reruns (timing excluded)"
                         if ok else f"differences in {mismatches}")

    def c11_metric_oracles(self) -> Criterion:
        rng = np.random.default_rng(1111)
        exact = True
        for _ in range(200):
            n = int(rng.integers(2, 201))
            scores = rng.integers(0, 10, n) / 10.0  # coarse grid forces ties
            pos = rng.random(n) < rng.uniform(0.1, 0.9)
            if pos.all() or not pos.any():
                continue
            exact &= metrics.auroc(scores, pos) == brute_force_auroc(scores, pos)
        n = 1000
        pos = rng.random(n) < 0.72
        sims = np.array([metrics.auprc(rng.random(n), pos) for _ in range(500)])
        sd = float(sims.std(ddof=1))
        observed = metrics.auprc(rng.random(n), pos)
        prev = float(pos.mean())
        ok = bool(exact) and abs(observed - prev) <= 3 * sd
        return Criterion(11, "metric oracles", ok,
                         f"AUROC equals pairwise definition on 200 sets: {bool(exact)}; random AUPRC "
                         f"{observed:.4f} vs prevalence {prev:.4f} (3 sigma = {3 * sd:.4f})",
                         {"auprc": observed, "prevalence": prev, "sd": sd})

    def c12_k_insensitivity(self) -> Criterion:
        k10 = self.accuracies("fasten", 0.4)
        k2 = self.accuracies("fasten", 0.4, K=2, M=self.train.K * SETUP.n_classes)
        diff = abs(k10.mean() - k2.mean())
        return Criterion(12, "K-insensitivity", bool(diff <= 0.03),
                         f"K=10 {100 * k10.mean():.2f} vs K=2 {100 * k2.mean():.2f} "
                         f"(|diff| {100 * diff:.2f}, need <= 3.00)",
                         {"K10": k10.tolist(), "K2": k2.tolist()})

    CRITERIA = ("c1_gradient_oracle", "c2_estimator_exactness", "c3_concentration_bound",
                "c4_noise_fidelity", "c5_learning_gain", "c6_cleansing", "c7_miscorrection",
                "c8_estimation_tracking", "c9_efficiency", "c10_determinism", "c11_metric_oracles",
                "c12_k_insensitivity")

    def run(self, number: int) -> Criterion:
        t0 = time.perf_counter()
        c = getattr(self, self.CRITERIA[number - 1])()
        c.seconds = time.perf_counter() - t0
        return c


def brute_force_auroc(scores, positives) -> float:
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    sp, sn = scores[positives][:, None], scores[~positives][None, :]
    return float(((sp > sn).sum() + 0.5 * (sp == sn).sum()) / (sp.size * sn.size))


def comparable_artifacts(run_dir: Path) -> tuple[str, str]:
    """History CSV without its timing column, summary JSON without its timing block."""
    lines = (run_dir / "history.csv").read_text().splitlines()
    header = lines[0].split(",")
    keep = [i for i, h in enumerate(header) if h != "epoch_seconds"]
    hist = "\n".join(",".join(row.split(",")[i] for i in keep) for row in lines)
    summary = json.loads((run_dir / "summary.json").read_text())
    summary.pop("timing", None)
    return hist, json.dumps(summary, sort_keys=True)


def run_all(seeds=SEEDS, log=print, numbers=None) -> list[Criterion]:
    suite = Suite(seeds, log=log)
    results = []
    with runner.single_thread():
        for k in numbers or range(1, 13):
            c = suite.run(k)
            log(c.line())
            results.append(c)
    return results
