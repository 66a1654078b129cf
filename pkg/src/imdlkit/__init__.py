"""Image manipulation detection and localization for line-art imagery.

Subpackages: frequency feature extraction (freq), the dual-branch encoder
(encoder) and prediction heads (predictor) assembled in model, losses and
the training loop (training), the synthetic data forge (forge), metrics and
protocols (metrics, experiments), and a CLI (cli).
"""

__version__ = "0.1.0"
