"""Dense scoring backbones.

A backbone maps an RGB image in [0, 1] plus a list of class prompts to a
raw [H][W][K] score map. The default ``prototype`` backbone is fully
offline and deterministic: each prompt is mapped to a color prototype
(keyword table with a hash fallback) and pixels are scored by negative
distance in a lightly smoothed RGB feature space. A ``clip:<model>``
backbone wraps a locally available vision-language checkpoint.
"""

from __future__ import annotations

import hashlib

import numpy as np


class BackboneError(RuntimeError):
    pass


#: Color prototypes for common land-cover terms (RGB in [0, 1]).
COLOR_KEYWORDS = {
    "water": (0.18, 0.35, 0.62),
    "river": (0.18, 0.35, 0.62),
    "lake": (0.18, 0.35, 0.62),
    "sea": (0.15, 0.30, 0.58),
    "vegetation": (0.20, 0.46, 0.18),
    "tree": (0.16, 0.40, 0.16),
    "grass": (0.35, 0.60, 0.25),
    "forest": (0.12, 0.35, 0.14),
    "crop": (0.45, 0.55, 0.25),
    "farmland": (0.45, 0.55, 0.25),
    "meadow": (0.35, 0.60, 0.25),
    "building": (0.56, 0.52, 0.50),
    "house": (0.60, 0.50, 0.45),
    "roof": (0.55, 0.35, 0.30),
    "road": (0.35, 0.35, 0.37),
    "asphalt": (0.30, 0.30, 0.32),
    "pavement": (0.55, 0.55, 0.55),
    "soil": (0.55, 0.45, 0.32),
    "bare": (0.60, 0.52, 0.40),
    "sand": (0.78, 0.70, 0.52),
    "snow": (0.92, 0.94, 0.96),
    "ice": (0.85, 0.90, 0.95),
    "shadow": (0.06, 0.06, 0.09),
    "cloud": (0.88, 0.88, 0.90),
}


def prompt_prototype(prompt: str) -> np.ndarray:
    """Deterministic RGB prototype for a class prompt."""
    text = prompt.lower()
    for keyword, rgb in COLOR_KEYWORDS.items():
        if keyword in text:
            return np.array(rgb, dtype=np.float64)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.array([b / 255.0 for b in digest[:3]], dtype=np.float64)


def _box_smooth(rgb: np.ndarray, radius: int) -> np.ndarray:
    """Edge-replicated box filter over the spatial axes."""
    if radius < 1:
        return rgb.astype(np.float64)
    pad = np.pad(rgb.astype(np.float64),
                 ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    size = 2 * radius + 1
    acc = np.zeros_like(rgb, dtype=np.float64)
    for dr in range(size):
        for dc in range(size):
            acc += pad[dr:dr + rgb.shape[0], dc:dc + rgb.shape[1]]
    return acc / (size * size)


class PrototypeBackbone:
    """Offline scorer: negative distance to per-prompt color prototypes."""

    def __init__(self, sharpness: float = 20.0, smooth_radius: int = 1):
        if sharpness <= 0:
            raise ValueError("sharpness must be positive")
        self.sharpness = float(sharpness)
        self.smooth_radius = int(smooth_radius)

    def score(self, rgb: np.ndarray, prompts: list[str]) -> np.ndarray:
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError("expected an [H][W][3] RGB image")
        feats = _box_smooth(rgb, self.smooth_radius)
        protos = np.stack([prompt_prototype(p) for p in prompts])
        d2 = np.sum((feats[:, :, None, :] - protos[None, None, :, :]) ** 2, axis=-1)
        return (-self.sharpness * d2).astype(np.float32)


class ClipBackbone:
    """Dense similarity scorer over a locally available CLIP checkpoint.

    Patch-token embeddings are projected into the joint space and compared
    against the encoded prompts; the patch-grid similarities are bilinearly
    upsampled to pixel resolution.
    """

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackboneError("clip backbone requires torch and transformers") from exc
        try:
            self.model = CLIPModel.from_pretrained(model_id)
            self.processor = CLIPProcessor.from_pretrained(model_id)
        except OSError as exc:
            raise BackboneError(
                f"could not load checkpoint {model_id!r}; pass a local path "
                f"or use the offline 'prototype' backbone") from exc
        self.torch = torch
        self.model.eval()

    def score(self, rgb: np.ndarray, prompts: list[str]) -> np.ndarray:
        torch = self.torch
        h, w = rgb.shape[:2]
        image = (np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
        with torch.no_grad():
            pixels = self.processor(images=image, return_tensors="pt")["pixel_values"]
            vision = self.model.vision_model(pixel_values=pixels)
            patches = self.model.vision_model.post_layernorm(vision.last_hidden_state[:, 1:])
            patches = self.model.visual_projection(patches)
            patches = patches / patches.norm(dim=-1, keepdim=True)

            tokens = self.processor(text=[f"a photo of {p}" for p in prompts],
                                    return_tensors="pt", padding=True)
            text = self.model.get_text_features(**tokens)
            text = text / text.norm(dim=-1, keepdim=True)

            sims = patches[0] @ text.T
            side = int(round(sims.shape[0] ** 0.5))
            grid = sims.reshape(1, side, side, -1).permute(0, 3, 1, 2)
            dense = torch.nn.functional.interpolate(
                grid, size=(h, w), mode="bilinear", align_corners=False)
        return dense[0].permute(1, 2, 0).numpy().astype(np.float32)


def load_backbone(name: str, sharpness: float = 20.0):
    """Resolve a backbone identifier: ``prototype`` or ``clip:<model>``."""
    if name == "prototype":
        return PrototypeBackbone(sharpness=sharpness)
    if name.startswith("clip:"):
        return ClipBackbone(name.split(":", 1)[1])
    raise BackboneError(f"unknown backbone {name!r}; use 'prototype' or 'clip:<model>'")
