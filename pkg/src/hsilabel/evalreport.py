"""Confusion-matrix metrics (OA, AA, kappa) and classification-map rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from hsilabel.ptf import IGNORE

#: Default rendering palette (RGB), cycled when K exceeds its length.
DEFAULT_PALETTE = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207), (174, 199, 232), (255, 187, 120),
]


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """K x K counts over non-ignored ground-truth pixels; rows = truth."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mask = gt != IGNORE
    g = gt[mask].astype(np.int64)
    p = pred[mask].astype(np.int64)
    if np.any(g >= num_classes) or np.any(p >= num_classes):
        raise ValueError("labels exceed the class count")
    cm = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return cm.reshape(num_classes, num_classes)


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    recalls: np.ndarray
    total: int


def metrics(cm: np.ndarray) -> MetricsReport:
    """Overall accuracy, average accuracy and kappa, all in percent.

    Classes absent from the ground truth (zero row sum) are excluded from
    the average accuracy; kappa is left unclamped and may be negative.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    trace = np.trace(cm)
    oa = 100.0 * trace / total
    with np.errstate(invalid="ignore", divide="ignore"):
        recalls = np.where(rows > 0, np.diag(cm) / np.maximum(rows, 1e-300), np.nan)
    aa = 100.0 * np.nanmean(recalls)
    p_o = trace / total
    p_e = float(np.sum(rows * cols)) / total**2
    if abs(1.0 - p_e) < 1e-15:
        kappa = 100.0 if abs(p_o - 1.0) < 1e-15 else 0.0
    else:
        kappa = 100.0 * (p_o - p_e) / (1.0 - p_e)
    return MetricsReport(oa=float(oa), aa=float(aa), kappa=float(kappa),
                         recalls=100.0 * recalls, total=int(total))


def render_map(labels: np.ndarray, palette=None, path=None) -> Image.Image:
    """Render a label map as a lossless RGB raster; ignored pixels are black."""
    labels = np.asarray(labels)
    valid = labels[labels != IGNORE]
    k = int(valid.max()) + 1 if len(valid) else 0
    if palette is None:
        palette = [DEFAULT_PALETTE[i % len(DEFAULT_PALETTE)] for i in range(max(k, 1))]
    if k > len(palette):
        raise ValueError(f"palette covers {len(palette)} classes, map needs {k}")
    rgb = np.zeros((*labels.shape, 3), dtype=np.uint8)
    for i, color in enumerate(palette):
        rgb[labels == i] = color
    img = Image.fromarray(rgb, mode="RGB")
    if path is not None:
        img.save(path, format="PNG")
    return img


def report_text(rep: MetricsReport) -> str:
    lines = [f"oa = {rep.oa!r}", f"aa = {rep.aa!r}", f"kappa = {rep.kappa!r}",
             f"pixels = {rep.total}"]
    for i, r in enumerate(rep.recalls):
        lines.append(f"recall.{i} = {float(r)!r}")
    return "\n".join(lines) + "\n"


def report_csv(rep: MetricsReport) -> str:
    """One CSV row matching the tables' column order: recalls, OA, AA, kappa."""
    header = ",".join([f"class{i}" for i in range(len(rep.recalls))] + ["OA", "AA", "kappa"])
    vals = [float(r) for r in rep.recalls] + [rep.oa, rep.aa, rep.kappa]
    return header + "\n" + ",".join(repr(v) for v in vals) + "\n"


def parse_report_csv(text: str) -> MetricsReport:
    lines = [ln for ln in text.strip().splitlines() if ln]
    vals = [float(v) for v in lines[1].split(",")]
    recalls = np.asarray(vals[:-3])
    return MetricsReport(oa=vals[-3], aa=vals[-2], kappa=vals[-1],
                         recalls=recalls, total=0)
