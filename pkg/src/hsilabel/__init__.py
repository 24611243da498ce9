"""Zero-shot hyperspectral land-cover classification.

Two-stage batch pipeline: dense pseudo-label generation from an RGB proxy
(with multi-scale fusion and margin-based confidence), followed by
noise-robust spectral training with GMM soft-label refinement.
"""

from hsilabel.ptf import IGNORE, read_ptf, write_ptf

__all__ = ["IGNORE", "read_ptf", "write_ptf"]
