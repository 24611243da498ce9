"""Multi-scale score-map export in the file-scorer layout.

For each scale factor s the RGB image is bicubically resized to
floor(H*s + 0.5) x floor(W*s + 0.5), scored densely, and written as
``scores_s{factor}.ptf`` ([H_s][W_s][K], float32). ``classes.txt`` (and
``aliases.txt`` when prompts differ from names) are placed alongside so the
directory is self-describing.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from clipbridge.ptfio import write_ptf


def load_rgb(path) -> np.ndarray:
    """Read an image file as an [H][W][3] float array in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def load_classes(path) -> list[str]:
    names = [line.strip() for line in open(path) if line.strip()]
    if not names:
        raise ValueError(f"no class names in {path}")
    if len(set(names)) != len(names):
        raise ValueError("class names must be unique")
    return names


def load_aliases(path) -> dict[str, str]:
    aliases = {}
    for line in open(path):
        if line.strip():
            name, prompt = line.rstrip("\n").split("\t", 1)
            aliases[name] = prompt
    return aliases


def _resize(rgb: np.ndarray, factor: float) -> np.ndarray:
    h, w = rgb.shape[:2]
    out_h = int(np.floor(h * factor + 0.5))
    out_w = int(np.floor(w * factor + 0.5))
    if out_h < 1 or out_w < 1:
        raise ValueError(f"scale {factor} collapses a {h}x{w} image")
    if factor == 1.0:
        return rgb
    img = Image.fromarray((np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8))
    resized = img.resize((out_w, out_h), Image.BICUBIC)
    return np.asarray(resized, dtype=np.float64) / 255.0


def export_scores(rgb: np.ndarray, names: list[str], scales: list[float],
                  out_dir, backbone, aliases: dict[str, str] | None = None) -> list[Path]:
    """Score the image at every scale and write the output directory.

    Returns the paths of the written score maps.
    """
    if not scales:
        raise ValueError("at least one scale factor required")
    if any(s <= 0 for s in scales):
        raise ValueError("scale factors must be positive")
    aliases = aliases or {}
    unknown = set(aliases) - set(names)
    if unknown:
        raise ValueError(f"aliases reference unknown classes: {sorted(unknown)}")
    prompts = [aliases.get(n, n) for n in names]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in sorted(set(float(s) for s in scales)):
        scaled = _resize(rgb, s)
        scores = backbone.score(scaled, prompts)
        if scores.shape != (*scaled.shape[:2], len(names)):
            raise RuntimeError(f"backbone returned shape {scores.shape} at scale {s}")
        path = out / f"scores_s{s:g}.ptf"
        write_ptf(scores, path)
        written.append(path)
    (out / "classes.txt").write_text("".join(f"{n}\n" for n in names))
    if aliases:
        (out / "aliases.txt").write_text(
            "".join(f"{n}\t{aliases[n]}\n" for n in names if n in aliases))
    return written
