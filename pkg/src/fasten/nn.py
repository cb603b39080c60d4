"""Two-head MLP classifier with hand-derived gradients and momentum SGD.

A shared ReLU feature extractor feeds two linear softmax heads: the clean
head (trained against the transition-corrected loss) and the noisy head
(trained to model the noisy label distribution). Everything operates on
batches of row vectors; a 1-D input is treated as a batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

PROB_FLOOR = 1e-12
_TINY = np.finfo(float).tiny

_ACTIVATIONS = ("relu", "linear")


class NumericError(FloatingPointError):
    """Raised when a forward or backward quantity stops being finite."""


@dataclass
class FeatureExtractorParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in _ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[0]} does not chain "
                                 f"from previous output {self.weights[i - 1].shape[1]}")

    @property
    def widths(self) -> list[int]:
        if not self.weights:
            return []
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def output_dim(self, input_dim: int) -> int:
        return self.weights[-1].shape[1] if self.weights else input_dim


@dataclass
class HeadParams:
    weight: np.ndarray  # (feature_dim, n_classes)
    bias: np.ndarray  # (n_classes,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"head weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]


@dataclass
class ModelParams:
    """Shared extractor ``phi`` plus clean head ``theta`` and noisy head ``theta_bar``.

    The same structure doubles as the gradient container (GradientSet) and
    the optimizer's velocity buffer.
    """

    extractor: FeatureExtractorParams
    clean: HeadParams
    noisy: HeadParams

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.extractor.weights, self.extractor.biases):
            out += [w, b]
        out += [self.clean.weight, self.clean.bias, self.noisy.weight, self.noisy.bias]
        return out

    def array_names(self) -> list[str]:
        names = []
        for i in range(len(self.extractor.weights)):
            names += [f"phi.W{i}", f"phi.b{i}"]
        return names + ["theta.W", "theta.b", "theta_bar.W", "theta_bar.b"]

    def map(self, fn) -> "ModelParams":
        ex = self.extractor
        return ModelParams(
            FeatureExtractorParams([fn(w) for w in ex.weights], [fn(b) for b in ex.biases],
                                   list(ex.activations)),
            HeadParams(fn(self.clean.weight), fn(self.clean.bias)),
            HeadParams(fn(self.noisy.weight), fn(self.noisy.bias)),
        )

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    @property
    def n_classes(self) -> int:
        return self.clean.n_classes


GradientSet = ModelParams


def init_params(input_dim: int, n_classes: int, hidden=(64, 64), seed=0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization, seeded."""
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return (rng.uniform(-bound, bound, (fan_in, fan_out)),
                rng.uniform(-bound, bound, fan_out))

    weights, biases = [], []
    widths = [input_dim, *hidden]
    for a, b in zip(widths[:-1], widths[1:]):
        w, bb = layer(a, b)
        weights.append(w)
        biases.append(bb)
    extractor = FeatureExtractorParams(weights, biases, ["relu"] * len(weights))
    clean = HeadParams(*layer(widths[-1], n_classes))
    noisy = HeadParams(*layer(widths[-1], n_classes))
    return ModelParams(extractor, clean, noisy)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ValueError(f"expected a vector or a batch of vectors, got shape {x.shape}")
    return x, False


def _extractor_pass(phi: FeatureExtractorParams, x: np.ndarray):
    """Run the extractor and keep the pre-activations needed for backprop."""
    if phi.weights and x.shape[1] != phi.weights[0].shape[0]:
        raise ValueError(f"input dimension {x.shape[1]} does not match "
                         f"first layer {phi.weights[0].shape[0]}")
    inputs, pre = [], []
    h = x
    for w, b, act in zip(phi.weights, phi.biases, phi.activations):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return h, inputs, pre


def forward_features(phi: FeatureExtractorParams, x) -> np.ndarray:
    xb, single = _as_batch(x)
    h, _, _ = _extractor_pass(phi, xb)
    return h[0] if single else h


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_forward(head: HeadParams, feats) -> np.ndarray:
    fb, single = _as_batch(feats)
    if fb.shape[1] != head.weight.shape[0]:
        raise ValueError(f"feature dimension {fb.shape[1]} does not match head "
                         f"input {head.weight.shape[0]}")
    p = softmax(fb @ head.weight + head.bias)
    return p[0] if single else p


def predict_proba(params: ModelParams, x, head: str = "clean") -> np.ndarray:
    h = forward_features(params.extractor, x)
    return head_forward(params.clean if head == "clean" else params.noisy, h)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"labels outside [0, {n_classes})")
    return np.eye(n_classes)[labels]


def _as_target(target, n_classes: int) -> np.ndarray:
    t = np.asarray(target)
    if t.dtype.kind in "iu":
        return one_hot(t, n_classes)
    return t.astype(float)


def cross_entropy(p, target) -> float:
    """Summed cross entropy ``-sum target * log(max(p, 1e-12))``.

    ``target`` may be one-hot/soft rows or integer class labels.
    """
    p = np.asarray(p, dtype=float)
    t = _as_target(target, p.shape[-1])
    return float(-(t * np.log(np.maximum(p, PROB_FLOOR))).sum())


@dataclass(frozen=True)
class JointLoss:
    """Which terms of ``L_clean + lam * L_noisy`` are active, and with which T-hat.

    ``clean_term``: CE of the clean head on the clean batch.
    ``corrected_term``: CE of ``T_hat.T @ p_clean`` on the noisy batch; with
    ``T_hat=None`` it degrades to plain clean-head CE on the noisy batch.
    ``lam``: weight of the noisy head's CE on the noisy batch.
    T_hat is a constant here: no gradient flows through it.
    """

    T_hat: np.ndarray | None = None
    lam: float = 0.5
    clean_term: bool = True
    corrected_term: bool = True

    @property
    def noisy_term(self) -> bool:
        return self.lam != 0.0


@dataclass
class Batch:
    clean_x: np.ndarray
    clean_y: np.ndarray  # int labels
    noisy_x: np.ndarray
    noisy_y: np.ndarray  # int labels (live, possibly corrected)

    @property
    def n_clean(self) -> int:
        return len(self.clean_y)

    @property
    def x(self) -> np.ndarray:
        if self.n_clean == 0:
            return self.noisy_x
        if len(self.noisy_y) == 0:
            return self.clean_x
        return np.concatenate([self.clean_x, self.noisy_x])


@dataclass
class ForwardCache:
    """Activations of one extractor traversal over ``[clean; noisy]`` samples."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    feats: np.ndarray
    p_clean: np.ndarray
    p_noisy: np.ndarray | None
    probs: np.ndarray | None = None  # (batch, 2, N) when both heads ran fused
    head_weight: np.ndarray | None = None  # [W_clean | W_noisy]


def forward_joint(params: ModelParams, x: np.ndarray, noisy_head: bool = True) -> ForwardCache:
    """One pass of the shared extractor; both heads read the same features."""
    feats, inputs, pre = _extractor_pass(params.extractor, x)
    if not noisy_head:
        return ForwardCache(inputs, pre, feats, softmax(feats @ params.clean.weight + params.clean.bias), None)
    # both heads in one product: logits laid out as (batch, head, class)
    w = np.concatenate([params.clean.weight, params.noisy.weight], axis=1)
    b = np.concatenate([params.clean.bias, params.noisy.bias])
    p = softmax((feats @ w + b).reshape(len(feats), 2, -1))
    return ForwardCache(inputs, pre, feats, p[:, 0], p[:, 1], p, w)


@dataclass
class LossParts:
    clean: float  # clean-batch CE + corrected noisy-batch CE
    noisy: float  # noisy-head CE (unweighted)
    total: float


def _labels(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype.kind not in "iu":
        raise TypeError("batch labels must be integers")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise IndexError(f"labels outside [0, {n_classes})")
    return y


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")


@lru_cache(maxsize=None)
def _eye(n: int) -> np.ndarray:
    e = np.eye(n)
    e.flags.writeable = False
    return e


@lru_cache(maxsize=256)
def _term_rows(nc: int, nn_: int, clean_rows: bool, noisy_rows: bool, head_rows: bool):
    """Rows of the (batch*2, N) stacked head outputs read by each CE term, in the
    order clean batch, corrected noisy batch, noisy head; plus the count of
    clean-head terms and the plain sample index of each term. Row 2i is sample
    i's clean head, 2i+1 its noisy head."""
    parts = []
    if clean_rows:
        parts.append(2 * np.arange(nc))
    if noisy_rows:
        parts.append(2 * np.arange(nc, nc + nn_))
    n_main = sum(len(x) for x in parts)
    if head_rows:
        parts.append(2 * np.arange(nc, nc + nn_) + 1)
    rows = np.concatenate(parts) if parts else np.zeros(0, dtype=int)
    samples = rows // 2
    rows.flags.writeable = samples.flags.writeable = False
    return rows, samples, n_main


def backward_joint(params: ModelParams, batch: Batch, loss: JointLoss,
                   cache: ForwardCache | None = None) -> tuple[LossParts, GradientSet]:
    """Loss value and exact gradients of the joint objective.

    Pass ``cache`` from :func:`forward_joint` on ``batch.x`` to reuse the
    extractor activations instead of recomputing them. The 1e-12 probability
    floor only clamps reported loss values; gradients are those of the
    unclamped log, as with a log-softmax.
    """
    n_cls = params.n_classes
    nc = batch.n_clean
    need_noisy = loss.noisy_term
    if cache is None:
        cache = forward_joint(params, batch.x, noisy_head=need_noisy)
    _check_finite(cache.feats, "extractor output")
    feats = cache.feats
    p = cache.p_clean
    # labels index the probability each CE term reads; one-hot targets never materialize
    cy = _labels(batch.clean_y, n_cls)
    ny = _labels(batch.noisy_y, n_cls)
    nn_ = len(ny)

    # Every active CE term is -log <p, t_y>: p is one head's output row and t_y the
    # column of the effective transition at the label (identity for the clean batch
    # and the noisy head, T_hat on the corrected rows). Gathering all terms at once
    # gives dz = p - p * t_y / q_y, which is exactly p - e_y on identity columns.
    clean_rows = loss.clean_term and nc > 0
    noisy_rows = loss.corrected_term and nn_ > 0
    head_rows = need_noisy and nn_ > 0
    n = len(p)
    fused = head_rows
    if fused:
        probs = cache.probs
        if probs is None:
            pb = softmax(feats @ params.noisy.weight + params.noisy.bias)
            probs = np.stack([p, pb], axis=1)
        flat = probs.reshape(2 * n, n_cls)
    else:
        flat = p
    rows, samples, n_main = _term_rows(nc, nn_, clean_rows, noisy_rows, head_rows)
    eye = _eye(n_cls)
    table = eye if loss.T_hat is None else np.concatenate([eye, np.asarray(loss.T_hat, dtype=float).T])
    off = 0 if loss.T_hat is None else n_cls
    cols = [cy] if clean_rows else []
    if noisy_rows:
        cols.append(ny + off)
    if head_rows:
        cols.append(ny)
    cols = np.concatenate(cols) if len(cols) > 1 else (cols[0] if cols else ny[:0])
    ps = flat[rows if fused else samples]
    ty = table[cols]
    qy = np.einsum("ij,ij->i", ps, ty)
    logq = np.log(np.maximum(qy, PROB_FLOOR))
    l_clean = -float(logq[:n_main].sum())
    l_noisy = -float(logq[n_main:].sum())
    d = ps - ps * ty / np.maximum(qy, _TINY)[:, None]
    if head_rows:
        d[n_main:] *= loss.lam

    if fused:
        dz2 = np.zeros((2 * n, n_cls))
        dz2[rows] = d
        dz2 = dz2.reshape(n, 2 * n_cls)
        gw_heads = feats.T @ dz2
        gb_heads = dz2.sum(axis=0)
        g_clean = HeadParams(gw_heads[:, :n_cls], gb_heads[:n_cls])
        g_noisy = HeadParams(gw_heads[:, n_cls:], gb_heads[n_cls:])
        w = cache.head_weight
        if w is None:
            w = np.concatenate([params.clean.weight, params.noisy.weight], axis=1)
        dh = dz2 @ w.T
    else:
        dz = np.zeros_like(p)
        dz[samples] = d
        g_clean = HeadParams(feats.T @ dz, dz.sum(axis=0))
        g_noisy = HeadParams(np.zeros_like(params.noisy.weight), np.zeros_like(params.noisy.bias))
        dh = dz @ params.clean.weight.T

    ex = params.extractor
    n_layers = len(ex.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if ex.activations[i] == "relu":
            dh = dh * (cache.pre[i] > 0)
        gw[i] = cache.inputs[i].T @ dh
        gb[i] = dh.sum(axis=0)
        if i:
            dh = dh @ ex.weights[i].T
    grads = ModelParams(FeatureExtractorParams(gw, gb, list(ex.activations)), g_clean, g_noisy)

    total = l_clean + loss.lam * l_noisy
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss (clean={l_clean}, noisy={l_noisy})")
    # cheap screen: any inf/nan makes the plain sum non-finite (overflow gets a full check)
    if not np.isfinite(sum(float(g.sum()) for g in grads.arrays())):
        for name, g in zip(grads.array_names(), grads.arrays()):
            _check_finite(g, f"gradient {name}")
    return LossParts(l_clean, l_noisy, total), grads


def joint_loss_value(params: ModelParams, batch: Batch, loss: JointLoss) -> float:
    """Forward-only evaluation of the joint objective (used by gradient checks)."""
    n_cls = params.n_classes
    nc = batch.n_clean
    feats = forward_features(params.extractor, batch.x)
    p = head_forward(params.clean, feats)
    total = 0.0
    if loss.clean_term and nc:
        total += cross_entropy(p[:nc], one_hot(batch.clean_y, n_cls))
    if loss.corrected_term and len(batch.noisy_y):
        pn = p[nc:] if loss.T_hat is None else p[nc:] @ loss.T_hat
        total += cross_entropy(pn, one_hot(batch.noisy_y, n_cls))
    if loss.noisy_term and len(batch.noisy_y):
        pb = head_forward(params.noisy, feats[nc:])
        total += loss.lam * cross_entropy(pb, one_hot(batch.noisy_y, n_cls))
    return total


def finite_diff_check(params: ModelParams, batch: Batch, loss: JointLoss, step: float = 1e-5,
                      n_params: int = 100, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a random subsample of ``n_params`` scalar parameters (all of them
    if the model is smaller).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, grads = backward_joint(params, batch, loss)
    work = params.copy()
    arrays = work.arrays()
    garrays = grads.arrays()
    sizes = np.array([a.size for a in arrays])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[k], arrays[k].shape)
        orig = arrays[k][idx]
        arrays[k][idx] = orig + step
        up = joint_loss_value(work, batch, loss)
        arrays[k][idx] = orig - step
        down = joint_loss_value(work, batch, loss)
        arrays[k][idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = garrays[k][idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return float(worst)


@dataclass
class SGD:
    """Classical momentum: ``v <- mu*v + g``, ``w <- w - lr*v``."""

    lr: float
    momentum: float = 0.9
    velocity: ModelParams | None = field(default=None, repr=False)

    def step(self, params: ModelParams, grads: GradientSet, lr: float | None = None) -> ModelParams:
        if self.velocity is None:
            self.velocity = params.zeros_like()
        return sgd_step(params, grads, self.velocity, self.lr if lr is None else lr,
                        self.momentum)


def sgd_step(params: ModelParams, grads: GradientSet, velocity: ModelParams, lr: float,
             momentum: float) -> ModelParams:
    """In-place momentum update of ``params`` and ``velocity``; returns ``params``."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    for w, g, v in zip(params.arrays(), grads.arrays(), velocity.arrays()):
        v *= momentum
        v += g
        w -= lr * v
    return params
