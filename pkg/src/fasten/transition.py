"""Label transition matrices: estimation, oracles, diagnostics and bounds.

A transition matrix ``T`` is a plain ``(N, N)`` float array with
``T[i, j] = p(noisy = j | true = i)``; every row is a distribution.
"""
from __future__ import annotations

import io
import math

import numpy as np

CHI2_FLOOR = 1e-6


def check_row_stochastic(T, atol: float = 1e-9) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError(f"transition matrix must be square, got {T.shape}")
    if np.any(T < -atol) or not np.allclose(T.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise ValueError("transition matrix rows must be nonnegative and sum to 1")
    return T


def check_pairing(pairing, n_classes: int) -> np.ndarray:
    pairing = np.asarray(pairing, dtype=int)
    if sorted(pairing.tolist()) != list(range(n_classes)):
        raise ValueError(f"pairing {pairing.tolist()} is not a permutation of {n_classes} classes")
    fixed = np.flatnonzero(pairing == np.arange(n_classes))
    if fixed.size:
        raise ValueError(f"pairing has fixed points at classes {fixed.tolist()}")
    return pairing


def cyclic_pairing(n_classes: int) -> np.ndarray:
    return (np.arange(n_classes) + 1) % n_classes


def estimate_transition(labels, noisy_probs, n_classes: int | None = None) -> np.ndarray:
    """Per-class average of noisy-head outputs over a labelled clean batch.

    Computes ``(sum_x y f(x)^T) diag^{-1}(sum_x y)``, i.e. row ``i`` is the
    mean of ``noisy_probs`` over samples whose clean label is ``i``. Every
    class must appear at least once.
    """
    labels = np.asarray(labels, dtype=int)
    probs = np.asarray(noisy_probs, dtype=float)
    n = probs.shape[1] if n_classes is None else n_classes
    m = probs.shape[1]
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be nonnegative")
    counts = np.bincount(labels, minlength=n)
    if counts.size > n:
        raise ValueError(f"labels outside [0, {n})")
    # flat (class, column) bins; bincount adds in sample order
    sums = np.bincount((labels[:, None] * m + np.arange(m)).ravel(), weights=probs.ravel(),
                       minlength=n * m).reshape(n, m)
    if not counts.all():
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"clean batch has no samples of classes {missing}")
    return sums / counts[:, None]


def estimate_transition_grouped(noisy_probs, n_classes: int) -> np.ndarray:
    """:func:`estimate_transition` for a batch laid out class by class with the
    same number of samples per class (what the balanced clean sampler returns)."""
    probs = np.asarray(noisy_probs, dtype=float)
    if probs.shape[0] % n_classes or not probs.shape[0]:
        raise ValueError(f"{probs.shape[0]} rows do not split into {n_classes} equal class groups")
    k = probs.shape[0] // n_classes
    return probs.reshape(n_classes, k, probs.shape[1]).sum(axis=1) / k


def oracle_symmetric(n_classes: int, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma < 1.0:
        raise ValueError("symmetric noise level must lie in [0, 1)")
    T = np.full((n_classes, n_classes), gamma / n_classes)
    np.fill_diagonal(T, 1.0 - (n_classes - 1) / n_classes * gamma)
    return T


def oracle_asymmetric(n_classes: int, gamma: float, pairing=None) -> np.ndarray:
    if not 0.0 <= gamma < 0.5:
        raise ValueError("asymmetric noise level must lie in [0, 0.5)")
    pairing = cyclic_pairing(n_classes) if pairing is None else check_pairing(pairing, n_classes)
    T = np.eye(n_classes) * (1.0 - gamma)
    T[np.arange(n_classes), pairing] = gamma
    return T


def oracle(kind: str, n_classes: int, gamma: float, pairing=None) -> np.ndarray:
    if kind == "symmetric":
        return oracle_symmetric(n_classes, gamma)
    if kind == "asymmetric":
        return oracle_asymmetric(n_classes, gamma, pairing)
    raise ValueError(f"unknown noise kind {kind!r}")


def true_transition_empirical(y_true, y_current, n_classes: int) -> np.ndarray:
    """Frequency matrix of live labels given latent true labels."""
    y_true = np.asarray(y_true, dtype=int)
    y_current = np.asarray(y_current, dtype=int)
    counts = np.zeros((n_classes, n_classes))
    np.add.at(counts, (y_true, y_current), 1.0)
    rows = counts.sum(axis=1)
    if np.any(rows == 0):
        raise ValueError(f"true classes {np.flatnonzero(rows == 0).tolist()} are empty")
    return counts / rows[:, None]


def chi2_divergence(T_hat, T_true, floor: float = CHI2_FLOOR) -> float:
    """Row-wise Pearson chi-square ``sum_j (Th_ij - T_ij)^2 / T_ij``, averaged over rows."""
    T_hat = np.asarray(T_hat, dtype=float)
    T_true = np.asarray(T_true, dtype=float)
    if T_hat.shape != T_true.shape:
        raise ValueError(f"shape mismatch {T_hat.shape} vs {T_true.shape}")
    per_row = ((T_hat - T_true) ** 2 / np.maximum(T_true, floor)).sum(axis=1)
    return float(per_row.mean())


def mean_diagonal(T) -> float:
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError("mean_diagonal needs a square matrix")
    return float(np.trace(T) / T.shape[0])


def hoeffding_bound(epsilon: float, K: int, clip: bool = False) -> float:
    """``2 exp(-2 eps^2 K)``: tail bound on one estimated entry from K samples per class."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    b = 2.0 * math.exp(-2.0 * epsilon ** 2 * K)
    return min(b, 1.0) if clip else b


def accuracy_upper_bound(kind: str, gamma: float, n_classes: int | None = None) -> float:
    """Best achievable test accuracy of a classifier fit to labels with this noise."""
    if kind == "symmetric":
        if n_classes is None:
            raise ValueError("symmetric bound needs n_classes")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("symmetric noise level must lie in [0, 1]")
        c = (n_classes - 1) / n_classes
        return c * gamma ** 2 - 2 * c * gamma + 1
    if kind == "asymmetric":
        if not 0.0 <= gamma <= 0.5:
            raise ValueError("asymmetric noise level must lie in [0, 0.5]")
        return 2 * gamma ** 2 - 2 * gamma + 1
    raise ValueError(f"unknown noise kind {kind!r}")


def full_bound_formula() -> str:
    """Human-readable form of the estimation-error bound for a learned noisy head.

    Only the last (Hoeffding) term is computable here; the network-norm and
    Lipschitz constants are left symbolic.
    """
    return ("P(|T_hat_ij - T_ij| > eps) <= "
            "N*L*B*(sqrt(2*H*log 2) + 1) * Theta * prod_{h=1}^{H-1} Phi_h / sqrt(|D_noisy|)"
            " + sqrt(-log(eps)) / sqrt(2*|D_noisy|)"
            " + 2*exp(-2*eps^2*K)")


def mc_bound_check(T_oracle, K: int, epsilon: float, trials: int = 10_000, seed: int = 0,
                   draws: int = 1, per_entry: bool = False) -> float:
    """Monte Carlo exceedance frequency of the batch estimator in the ideal regime.

    Each synthetic clean sample of class ``i`` gets a noisy-head output equal
    to the average of ``draws`` one-hot labels drawn from row ``i`` of
    ``T_oracle``, so its expectation is exactly that row. A trial estimates
    ``T_hat`` from K samples per class.

    Returns the fraction of trials with ``max_ij |T_hat_ij - T_ij| > epsilon``,
    or with ``per_entry=True`` the largest single-entry exceedance frequency.
    """
    T = check_row_stochastic(T_oracle)
    if trials < 1:
        raise ValueError("trials must be positive")
    n = T.shape[0]
    rng = np.random.default_rng(seed)
    # sum of K*draws one-hot draws per class row; multinomial is the exact law
    counts = np.stack([rng.multinomial(K * draws, T[i], size=trials) for i in range(n)], axis=1)
    T_hat = counts / (K * draws)
    exceed = np.abs(T_hat - T) > epsilon
    if per_entry:
        return float(exceed.mean(axis=0).max())
    return float(exceed.any(axis=(1, 2)).mean())


def write_matrix_csv(T, path_or_buf=None) -> str | None:
    """Row-major CSV with header ``0,1,...,N-1``; floats use shortest round-trip repr."""
    T = np.asarray(T, dtype=float)
    lines = [",".join(str(j) for j in range(T.shape[1]))]
    lines += [",".join(repr(float(v)) for v in row) for row in T]
    text = "\n".join(lines) + "\n"
    if path_or_buf is None:
        return text
    if isinstance(path_or_buf, io.TextIOBase):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
    return None


def read_matrix_csv(path_or_buf) -> np.ndarray:
    if isinstance(path_or_buf, io.TextIOBase):
        text = path_or_buf.read()
    else:
        with open(path_or_buf) as fh:
            text = fh.read()
    rows = text.strip("\n").split("\n")
    header = rows[0].split(",")
    if header != [str(j) for j in range(len(header))]:
        raise ValueError(f"bad transition CSV header {rows[0]!r}")
    T = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    if T.shape != (len(header), len(header)):
        raise ValueError(f"transition CSV has shape {T.shape}, header says {len(header)}")
    return T
