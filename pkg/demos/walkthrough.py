"""
Learning through label noise on Gaussian blobs
==============================================

Four classes, 60% symmetric label noise, a small trusted clean set.
Trains the transition-estimating two-head model and a plain single-head
baseline on the same data and compares them.

    python3 demos/walkthrough.py
"""
import numpy as np

from fasten import data
from fasten.baselines import train_vanilla
from fasten.training import TrainConfig, train
from fasten.transition import oracle_symmetric, true_transition_empirical

np.set_printoptions(precision=3, suppress=True)
N, seed = 4, 0

# 1200 points per class in 16 dims; split into noisy / clean / valid / test
samples = data.generate_blobs(N, 1200, 16, seed=seed)
splits = data.split(samples, (5 / 6, 1 / 24, 1 / 24, 1 / 12), seed=seed, n_classes=N)
print({k: len(getattr(splits, k)) for k in ("noisy_train", "clean_train", "valid", "test")})

# corrupt the big split; a label survives with probability 1 - (N-1)/N * gamma
data.inject_symmetric_noise(splits.noisy_train, 0.6, seed, N)
noisy = splits.noisy_train
print("noise level", data.noise_level(noisy))
print("oracle T\n", oracle_symmetric(N, 0.6))
print("empirical T\n", true_transition_empirical(noisy.y_true, noisy.y_current, N))

# the nearest-mean rule is Bayes-optimal here, so it caps what any model can reach
bayes = data.bayes_accuracy(splits.test, data.blob_means(N, 16, seed))
print(f"Bayes test accuracy {bayes:.4f}")

cfg = TrainConfig(epochs=15, seed=seed)
fasten = train(cfg, splits)
vanilla = train_vanilla(cfg, splits)

print("\nepoch  test(fasten)  test(vanilla)  noise(fasten)  chi2(T_hat)")
for ef, ev in zip(fasten.history.epochs, vanilla.history.epochs):
    print(f"{ef.epoch:5d}  {ef.test_acc:12.4f}  {ev.test_acc:13.4f}  {ef.noise_level:13.4f}  {ef.chi2:11.5f}")

# the final estimate against the labels the model is actually training on
last = fasten.history.epochs[-1]
print("\nepoch-mean T_hat\n", last.T_hat_mean)
print("live-label T\n", last.T_true)
print(f"best-valid test accuracy: fasten {fasten.history.best.test_acc:.4f}, "
      f"vanilla {vanilla.history.best.test_acc:.4f}")
print(f"time: fasten {fasten.history.total_seconds:.1f}s, vanilla {vanilla.history.total_seconds:.1f}s")
