"""Score-map exporter for the hsilabel pseudo-label pipeline.

Runs a dense open-vocabulary backbone over an RGB image at several scale
factors and writes the raw per-class score maps in the PTF file layout the
pipeline's file scorer consumes.
"""

from clipbridge.export import export_scores, load_rgb

__all__ = ["export_scores", "load_rgb"]
