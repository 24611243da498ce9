"""Noise-robust spectral training.

A pluggable per-pixel classifier (default multilayer perceptron) trained in
two phases: warmup on hard pseudo-labels with class-balanced,
margin-weighted sampling, then refinement minimizing the three-term loss
over the random, confident, and hard sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hsilabel.mixture import (ClassGmmBank, ConfidenceSplit, PcaModel,
                              fit_class_bank, project, soft_labels,
                              split_confidence)
from hsilabel.prep import add_gaussian_noise
from hsilabel.pseudo import argmax_labels, bvsb
from hsilabel.ptf import IGNORE, load_ptf, save_ptf

#: Sampling-weight floor added to margins so no class degenerates to zero mass.
WEIGHT_FLOOR = 1e-6

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 15
    iters_per_epoch: int = 20
    n_per_class: int = 64
    lr0: float = 1e-3
    eta_min: float = 1e-5
    warmup_fraction: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 0.5
    noise_std: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pca_q: int = 8
    gmm_m: int = 2
    hidden: tuple[int, ...] = (128, 128)
    refine: bool = True
    rebuild_sets_each_epoch: bool = False

    def __post_init__(self):
        if not (0.0 < self.warmup_fraction < 1.0):
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if not (self.lr0 >= self.eta_min > 0):
            raise ValueError("require lr0 >= eta_min > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def total_iters(self) -> int:
        return self.epochs * self.iters_per_epoch

    @property
    def warmup_iters(self) -> int:
        return int(round(self.warmup_fraction * self.total_iters))


class MlpClassifier:
    """Fully connected ReLU network mapping spectra to K class scores."""

    def __init__(self, widths: list[int], rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = list(widths)
        self.dtype = np.dtype(dtype)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.weights.append(w.astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def num_classes(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "MlpClassifier":
        clone = MlpClassifier(self.widths, rng=None, dtype=self.dtype)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone


def mlp_forward(model: MlpClassifier, batch: np.ndarray):
    """Forward pass; returns per-sample class distributions and a cache."""
    x = np.asarray(batch, dtype=model.dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.widths[0]:
        raise ValueError(f"input dim {x.shape[1]} does not match model ({model.widths[0]})")
    acts = [x]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        x = np.maximum(x @ w + b, 0)
        acts.append(x)
    scores = x @ model.weights[-1] + model.biases[-1]
    s = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(s)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, (acts, probs)


def mlp_backward(model: MlpClassifier, cache, dscores: np.ndarray) -> list[np.ndarray]:
    """Gradients for all parameters given the loss gradient w.r.t. scores."""
    acts, _ = cache
    grads = [None] * (2 * len(model.weights))
    delta = np.asarray(dscores, dtype=model.dtype)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads[2 * layer] = acts[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ model.weights[layer].T
            delta = delta * (acts[layer] > 0)
    return grads


def cross_entropy_soft(probs: np.ndarray, targets: np.ndarray):
    """Mean soft-target cross entropy and its gradient w.r.t. raw scores."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    n = p.shape[0]
    loss = float(-np.sum(t * np.log(np.maximum(p, PROB_FLOOR))) / n)
    dscores = (p - t) / n
    return loss, dscores


def adam_init(params: list[np.ndarray]) -> dict:
    return {"t": 0,
            "m": [np.zeros_like(p, dtype=np.float64) for p in params],
            "v": [np.zeros_like(p, dtype=np.float64) for p in params]}


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """In-place adaptive-moment update with bias correction."""
    state["t"] += 1
    t = state["t"]
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        state["m"][i] = beta1 * state["m"][i] + (1 - beta1) * g
        state["v"][i] = beta2 * state["v"][i] + (1 - beta2) * g * g
        mhat = state["m"][i] / (1 - beta1**t)
        vhat = state["v"][i] / (1 - beta2**t)
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


def cosine_lr(t: int, total: int, lr0: float, eta_min: float) -> float:
    """Cosine-annealed learning rate from lr0 at t=0 to eta_min at t=total."""
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + np.cos(np.pi * t / total))


def sample_random_set(pseudo: np.ndarray, conf: np.ndarray, n_per_class: int,
                      rng: np.random.Generator, weight_floor: float = WEIGHT_FLOOR):
    """Class-balanced, margin-weighted sampling with replacement.

    Returns flat pixel indices and their hard pseudo-labels; each class
    present in the map contributes exactly n_per_class draws, with
    in-class probability proportional to (margin + floor).
    """
    flat_labels = np.asarray(pseudo).ravel()
    flat_conf = np.asarray(conf, dtype=np.float64).ravel()
    present = np.unique(flat_labels)
    present = present[present != IGNORE]
    if len(present) == 0:
        raise ValueError("pseudo-label map holds no labeled pixels")
    picks, labels = [], []
    for k in present:
        idx = np.flatnonzero(flat_labels == k)
        w = flat_conf[idx] + weight_floor
        p = w / w.sum()
        picks.append(rng.choice(idx, size=n_per_class, replace=True, p=p))
        labels.append(np.full(n_per_class, k, dtype=np.int64))
    return np.concatenate(picks), np.concatenate(labels)


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float64)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train_step(model: MlpClassifier, batches, cfg: TrainConfig, state: dict,
               lr: float):
    """One optimizer step over (inputs, targets, weight) triples.

    The total loss is the weighted sum of per-batch soft cross entropies;
    returns the individual losses in batch order.
    """
    total_grads = None
    losses = []
    for X, T, weight in batches:
        probs, cache = mlp_forward(model, X)
        loss, dscores = cross_entropy_soft(probs, T)
        losses.append(loss)
        if weight == 0.0:
            continue
        grads = mlp_backward(model, cache, weight * dscores)
        if total_grads is None:
            total_grads = grads
        else:
            total_grads = [a + b for a, b in zip(total_grads, grads)]
    if total_grads is not None:
        adam_step(model.parameters(), total_grads, state, lr,
                  beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    return losses


def warmup_train(model: MlpClassifier, spectra: np.ndarray, pseudo: np.ndarray,
                 conf: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
                 state: dict | None = None, log: list | None = None) -> dict:
    """First-phase training on hard pseudo-labels; returns the Adam state.

    The cosine schedule spans the FULL training length so refinement can
    continue it seamlessly.
    """
    state = state if state is not None else adam_init(model.parameters())
    T = cfg.total_iters
    for t in range(cfg.warmup_iters):
        idx, labels = sample_random_set(pseudo, conf, cfg.n_per_class, rng)
        X = add_gaussian_noise(spectra[idx], cfg.noise_std, rng)
        targets = _one_hot(labels, model.num_classes)
        lr = cosine_lr(t, T, cfg.lr0, cfg.eta_min)
        (loss,) = train_step(model, [(X, targets, 1.0)], cfg, state, lr)
        if log is not None:
            log.append((t, lr, loss, 0.0, 0.0, loss))
    return state


@dataclass
class TrainingSets:
    """Sampling material for the refinement loss.

    The random set is re-drawn from the original pseudo-labels each step;
    the confident and hard sets carry fixed indices with soft targets.
    """

    pseudo: np.ndarray
    conf: np.ndarray
    confident_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    confident_targets: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    hard_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    hard_targets: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))


def predict_map(model: MlpClassifier, cube_values: np.ndarray,
                chunk: int = 16384) -> np.ndarray:
    """Per-pixel class probabilities for an [H][W][B] cube; no augmentation."""
    h, w, b = cube_values.shape
    if b != model.widths[0]:
        raise ValueError(f"band count {b} does not match model input ({model.widths[0]})")
    flat = cube_values.reshape(-1, b)
    out = np.empty((flat.shape[0], model.num_classes), dtype=np.float32)
    for start in range(0, flat.shape[0], chunk):
        probs, _ = mlp_forward(model, flat[start:start + chunk])
        out[start:start + chunk] = probs
    return out.reshape(h, w, model.num_classes)


def build_training_sets(model: MlpClassifier, cube_values: np.ndarray,
                        pca: PcaModel, pseudo: np.ndarray, conf_pseudo: np.ndarray,
                        cfg: TrainConfig, rng: np.random.Generator
                        ) -> tuple[TrainingSets, ConfidenceSplit, ClassGmmBank]:
    """Derive the confident/hard sets and their soft labels from the model.

    Predicts the scene with the current model, splits each predicted class
    by its margin distribution, fits the per-class density bank on the
    confident pixels, and evaluates soft labels for both partitions. The
    random set stays tied to the original pseudo-labels.
    """
    probs = predict_map(model, cube_values)
    pred = argmax_labels(probs).ravel()
    margins = bvsb(probs).ravel()
    by_class = {}
    for k in np.unique(pred):
        idx = np.flatnonzero(pred == k)
        by_class[int(k)] = (idx, margins[idx])
    split = split_confidence(by_class, rng)

    flat = cube_values.reshape(-1, cube_values.shape[2])
    bank = fit_class_bank(flat, split, pca, model.num_classes, M=cfg.gmm_m, rng=rng)

    sets = TrainingSets(pseudo=pseudo, conf=conf_pseudo)
    conf_idx = np.concatenate([split.confident[k] for k in sorted(split.confident)]) \
        if split.confident else np.empty(0, dtype=np.int64)
    hard_idx = np.concatenate([split.hard[k] for k in sorted(split.hard)]) \
        if split.hard else np.empty(0, dtype=np.int64)
    if bank.models:
        if len(conf_idx):
            sets.confident_idx = conf_idx
            sets.confident_targets = soft_labels(bank, project(pca, flat[conf_idx]))
        if len(hard_idx):
            sets.hard_idx = hard_idx
            sets.hard_targets = soft_labels(bank, project(pca, flat[hard_idx]))
    return sets, split, bank


def refine_train(model: MlpClassifier, spectra: np.ndarray, sets: TrainingSets,
                 cfg: TrainConfig, rng: np.random.Generator, state: dict,
                 log: list | None = None) -> None:
    """Second-phase training with the three-term loss.

    Each step draws a fresh class-balanced random batch plus fixed-size
    uniform batches from the confident and hard sets. An empty hard set
    contributes zero to the loss.
    """
    T = cfg.total_iters
    for t in range(cfg.warmup_iters, T):
        idx, labels = sample_random_set(sets.pseudo, sets.conf, cfg.n_per_class, rng)
        Xr = add_gaussian_noise(spectra[idx], cfg.noise_std, rng)
        batches = [(Xr, _one_hot(labels, model.num_classes), 1.0)]
        loss_c = loss_h = 0.0
        if len(sets.confident_idx):
            pick = rng.integers(0, len(sets.confident_idx), size=cfg.n_per_class)
            Xc = add_gaussian_noise(spectra[sets.confident_idx[pick]], cfg.noise_std, rng)
            batches.append((Xc, sets.confident_targets[pick], cfg.lambda1))
        if len(sets.hard_idx):
            pick = rng.integers(0, len(sets.hard_idx), size=cfg.n_per_class)
            Xh = add_gaussian_noise(spectra[sets.hard_idx[pick]], cfg.noise_std, rng)
            batches.append((Xh, sets.hard_targets[pick], cfg.lambda2))
        lr = cosine_lr(t, T, cfg.lr0, cfg.eta_min)
        losses = train_step(model, batches, cfg, state, lr)
        loss_r = losses[0]
        j = 1
        if len(sets.confident_idx):
            loss_c = losses[j]
            j += 1
        if len(sets.hard_idx):
            loss_h = losses[j]
        total = loss_r + cfg.lambda1 * loss_c + cfg.lambda2 * loss_h
        if log is not None:
            log.append((t, lr, loss_r, loss_c, loss_h, total))


def save_checkpoint(model: MlpClassifier, cfg: TrainConfig, out_dir) -> None:
    """Serialize model parameters as PTF tensors plus a plain-text manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"widths = {','.join(str(w) for w in model.widths)}"]
    for key, val in sorted(vars(cfg).items()):
        if key == "hidden":
            val = ",".join(str(v) for v in val)
        lines.append(f"cfg.{key} = {val}")
    (out / "model.txt").write_text("\n".join(lines) + "\n")
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        save_ptf(w.astype(np.float32), out / f"layer{i}_w.ptf")
        save_ptf(b.astype(np.float32), out / f"layer{i}_b.ptf")


def load_checkpoint(in_dir) -> MlpClassifier:
    src = Path(in_dir)
    widths = None
    for line in (src / "model.txt").read_text().splitlines():
        if line.startswith("widths ="):
            widths = [int(v) for v in line.split("=", 1)[1].split(",")]
    if widths is None:
        raise ValueError("manifest missing layer widths")
    model = MlpClassifier(widths, rng=None)
    for i in range(len(widths) - 1):
        model.weights[i] = load_ptf(src / f"layer{i}_w.ptf")
        model.biases[i] = load_ptf(src / f"layer{i}_b.ptf")
    return model


def write_train_log(log: list, path) -> None:
    with open(path, "w") as f:
        f.write("iteration,lr,loss_r,loss_c,loss_h,total\n")
        for row in log:
            f.write(",".join(repr(float(v)) if i else str(v) for i, v in enumerate(row)) + "\n")
