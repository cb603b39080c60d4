"""
How many clean samples per class does the estimator need?
=========================================================

With an ideal noisy head, one row of T_hat is an average of K one-hot
draws, so each entry obeys P(|T_hat_ij - T_ij| > eps) <= 2 exp(-2 eps^2 K).
Monte Carlo frequencies next to the bound, per entry and for the worst
entry. The bound is per entry; the worst of 16 entries may exceed it.

    python3 demos/concentration.py
"""
import numpy as np

from fasten.transition import estimate_transition, hoeffding_bound, mc_bound_check, oracle_symmetric

T = oracle_symmetric(4, 0.6)

# one batch by hand: K samples per class, noisy-head output = one-hot noisy label
rng = np.random.default_rng(0)
K = 10
y = np.repeat(np.arange(4), K)
noisy = np.array([rng.choice(4, p=T[c]) for c in y])
print("one batch, K=10\n", np.round(estimate_transition(y, np.eye(4)[noisy]), 2))

print("\n  eps     K   per-entry   max-entry   bound")
for eps in (0.05, 0.1, 0.2):
    for K in (5, 20, 100):
        one = mc_bound_check(T, K, eps, trials=4000, per_entry=True)
        worst = mc_bound_check(T, K, eps, trials=4000)
        print(f"{eps:5.2f} {K:5d} {one:11.4f} {worst:11.4f} {hoeffding_bound(eps, K, clip=True):7.4f}")
