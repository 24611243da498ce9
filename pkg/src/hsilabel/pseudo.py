"""Dense pseudo-label generation.

Tiled scoring with overlap averaging, multi-resolution probability fusion,
temperature softmax, best-versus-second-best confidence, and hard label
extraction. The dense scorer itself is an abstract capability so the
pretrained open-vocabulary backbone stays outside this package.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hsilabel.ptf import IGNORE, load_ptf
from hsilabel.resample import bicubic_resample, resample_to

DEFAULT_TAU = 0.01


@dataclass
class ClassVocabulary:
    """Ordered class names plus optional per-class scoring prompts."""

    names: list[str]
    aliases: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.names) < 1:
            raise ValueError("vocabulary needs at least one class")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        unknown = set(self.aliases) - set(self.names)
        if unknown:
            raise ValueError(f"aliases reference unknown classes: {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.names)

    def prompt(self, name: str) -> str:
        return self.aliases.get(name, name)


def load_vocabulary(classes_path, aliases_path=None) -> ClassVocabulary:
    """Read ``classes.txt`` (one name per line) and optional tab-separated aliases."""
    names = [line.strip() for line in open(classes_path) if line.strip()]
    aliases = {}
    if aliases_path is not None and Path(aliases_path).exists():
        for line in open(aliases_path):
            if line.strip():
                name, prompt = line.rstrip("\n").split("\t", 1)
                aliases[name] = prompt
    return ClassVocabulary(names, aliases)


def check_probmap(probs: np.ndarray, tol: float = 1e-5) -> None:
    if probs.ndim != 3:
        raise ValueError("probability map must be [H][W][K]")
    if np.any(probs < -tol):
        raise ValueError("probabilities must be non-negative")
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError("per-pixel probabilities must sum to 1")


def softmax_temperature(scores: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax over the class axis, max-subtracted for stability."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    s = scores.astype(np.float64) / tau
    s -= s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def bvsb(probs: np.ndarray) -> np.ndarray:
    """Margin between the top two class probabilities per pixel, in [0, 1]."""
    if probs.shape[-1] < 2:
        raise ValueError("confidence margin requires at least 2 classes")
    part = np.partition(probs, -2, axis=-1)
    out = (part[..., -1] - part[..., -2]).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    """Per-pixel most likely class; ties break to the lowest index."""
    return np.argmax(probs, axis=-1).astype(np.uint16)


class DenseScorer:
    """Scoring capability: an RGB window to a same-sized raw score map.

    ``origin`` is the window's top-left pixel in the full frame at the given
    ``scale``; implementations that precompute whole frames use it to crop.
    """

    def score(self, window: np.ndarray, vocab: ClassVocabulary,
              origin: tuple[int, int] = (0, 0), scale: float = 1.0) -> np.ndarray:
        raise NotImplementedError


class SyntheticScorer(DenseScorer):
    """Noise-corrupted oracle scorer for desk-scale tests.

    Emits score ``sharpness`` for the ground-truth class of each pixel, or
    for a uniformly drawn wrong class with probability ``flip_prob``, and 0
    elsewhere. Flip decisions are drawn once per ground-truth pixel so the
    scorer is consistent across scales and windows.
    """

    def __init__(self, gt: np.ndarray, num_classes: int, flip_prob: float,
                 sharpness: float, rng: np.random.Generator):
        if not (0.0 <= flip_prob <= 1.0):
            raise ValueError("flip_prob must lie in [0, 1]")
        if sharpness <= 0:
            raise ValueError("sharpness must be positive")
        gt = np.asarray(gt)
        if np.any(gt == IGNORE) or np.any(gt >= num_classes):
            raise ValueError("ground truth must be fully labeled with indices < K")
        self.num_classes = int(num_classes)
        self.sharpness = float(sharpness)
        h, w = gt.shape
        flips = rng.random((h, w)) < flip_prob
        if num_classes > 1:
            offs = rng.integers(1, num_classes, size=(h, w))
        else:
            offs = np.zeros((h, w), dtype=np.int64)
        noisy = gt.astype(np.int64).copy()
        noisy[flips] = (noisy[flips] + offs[flips]) % num_classes
        self.noisy_labels = noisy

    def score(self, window, vocab, origin=(0, 0), scale=1.0):
        if len(vocab) != self.num_classes:
            raise ValueError("vocabulary size does not match the oracle")
        h, w = window.shape[:2]
        gh, gw = self.noisy_labels.shape
        rows = np.clip(np.floor((np.arange(h) + origin[0] + 0.5) / scale - 0.5 + 0.5),
                       0, gh - 1).astype(np.int64)
        cols = np.clip(np.floor((np.arange(w) + origin[1] + 0.5) / scale - 0.5 + 0.5),
                       0, gw - 1).astype(np.int64)
        labels = self.noisy_labels[np.ix_(rows, cols)]
        scores = np.zeros((h, w, self.num_classes), dtype=np.float32)
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        scores[ii, jj, labels] = self.sharpness
        return scores


def make_synthetic_scorer(gt: np.ndarray, num_classes: int, flip_prob: float,
                          sharpness: float, rng: np.random.Generator) -> SyntheticScorer:
    return SyntheticScorer(gt, num_classes, flip_prob, sharpness, rng)


_SCORE_FILE = re.compile(r"scores_s([0-9.]+)\.ptf$")


class FileScorer(DenseScorer):
    """Scorer backed by precomputed full-frame score maps, one per scale.

    Input layout: ``scores_s{factor}.ptf`` files of dims [H_s][W_s][K] in a
    directory, with ``classes.txt`` defining class order and an optional
    tab-separated ``aliases.txt``. Windows are cropped from the frame whose
    scale matches the request.
    """

    def __init__(self, frames: dict[float, np.ndarray], vocab: ClassVocabulary):
        if not frames:
            raise ValueError("no score frames given")
        for s, fr in frames.items():
            if fr.ndim != 3 or fr.shape[2] != len(vocab):
                raise ValueError(f"frame for scale {s} has shape {fr.shape}, expected [H][W][{len(vocab)}]")
        self.frames = dict(frames)
        self.vocab = vocab

    @classmethod
    def from_dir(cls, path) -> "FileScorer":
        path = Path(path)
        vocab = load_vocabulary(path / "classes.txt", path / "aliases.txt")
        frames = {}
        for f in sorted(path.glob("scores_s*.ptf")):
            m = _SCORE_FILE.search(f.name)
            if m:
                frames[float(m.group(1))] = load_ptf(f).astype(np.float32)
        if not frames:
            raise FileNotFoundError(f"no scores_s*.ptf files in {path}")
        return cls(frames, vocab)

    def _frame(self, scale: float) -> np.ndarray:
        for s, fr in self.frames.items():
            if abs(s - scale) < 1e-9:
                return fr
        raise KeyError(f"no score frame for scale {scale}; have {sorted(self.frames)}")

    def score(self, window, vocab, origin=(0, 0), scale=1.0):
        if vocab.names != self.vocab.names:
            raise ValueError("vocabulary does not match the exported score maps")
        fr = self._frame(scale)
        h, w = window.shape[:2]
        r0, c0 = origin
        if r0 + h > fr.shape[0] or c0 + w > fr.shape[1]:
            raise ValueError("window exceeds the exported frame extent")
        return fr[r0:r0 + h, c0:c0 + w, :]


def _window_starts(extent: int, window: int, stride: int) -> list[int]:
    if window >= extent:
        return [0]
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def tiled_score(scorer: DenseScorer, rgb: np.ndarray, vocab: ClassVocabulary,
                window: int, stride: int, scale: float = 1.0) -> np.ndarray:
    """Score in overlapping windows; per pixel, average all covering windows.

    Windows are placed at stride offsets with final windows snapped to the
    image border so every pixel is covered.
    """
    if not (1 <= stride <= window):
        raise ValueError("stride must satisfy 1 <= stride <= window")
    h, w = rgb.shape[:2]
    wh, ww = min(window, h), min(window, w)
    acc = None
    count = np.zeros((h, w, 1), dtype=np.float64)
    for r0 in _window_starts(h, wh, stride):
        for c0 in _window_starts(w, ww, stride):
            chunk = scorer.score(rgb[r0:r0 + wh, c0:c0 + ww], vocab,
                                 origin=(r0, c0), scale=scale)
            if chunk.shape[:2] != (wh, ww):
                raise ValueError("scorer output dims must match the window")
            if acc is None:
                acc = np.zeros((h, w, chunk.shape[2]), dtype=np.float64)
            acc[r0:r0 + wh, c0:c0 + ww, :] += chunk
            count[r0:r0 + wh, c0:c0 + ww, :] += 1.0
    return (acc / count).astype(np.float32)


@dataclass
class ScaleSet:
    """Upsampling factors used for multi-resolution fusion."""

    factors: list[float]

    def __post_init__(self):
        if len(self.factors) < 1:
            raise ValueError("at least one scale factor required")
        if any(s <= 0 for s in self.factors):
            raise ValueError("scale factors must be positive")


def _renormalize(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs.astype(np.float64), 0.0, None)
    return (p / p.sum(axis=-1, keepdims=True)).astype(np.float32)


def fused_score(scorer: DenseScorer, rgb: np.ndarray, vocab: ClassVocabulary,
                scales: ScaleSet, tau: float = DEFAULT_TAU,
                window: int = 224, stride: int = 112) -> np.ndarray:
    """Average per-scale probability maps into one map at native resolution.

    Per scale: bicubic-upsample the image, run tiled scoring, temperature
    softmax, bicubic-downsample the probabilities back, clamp at 0 and
    renormalize. Identical factors are computed once and weighted by their
    multiplicity, so fusion over N copies of one scale reproduces the
    single-scale result exactly.
    """
    h, w = rgb.shape[:2]
    uniq: dict[float, int] = {}
    for s in scales.factors:
        uniq[float(s)] = uniq.get(float(s), 0) + 1
    total = len(scales.factors)

    if len(uniq) == 1 and abs(next(iter(uniq)) - 1.0) < 1e-12:
        return softmax_temperature(tiled_score(scorer, rgb, vocab, window, stride, scale=1.0), tau)

    acc = np.zeros((h, w, len(vocab)), dtype=np.float64)
    for s in sorted(uniq):
        up = rgb if s == 1.0 else bicubic_resample(rgb, s)
        probs = softmax_temperature(tiled_score(scorer, up, vocab, window, stride, scale=s), tau)
        if s != 1.0:
            probs = _renormalize(resample_to(probs, h, w))
        acc += (uniq[s] / total) * probs.astype(np.float64)
    return _renormalize(acc)
