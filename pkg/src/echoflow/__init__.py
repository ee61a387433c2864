"""Two-stream 3D residual network pipeline for echo-like video risk prediction.

Subpackages and modules:

- ``etns`` / ``video`` / ``manifest``: tensor container and preprocessing
- ``flow``: dense optical flow by polynomial expansion
- ``augment``: stochastic 3D clip augmentation
- ``net``: from-scratch layers, two-stream model, training loop
- ``saliency``: guided backpropagation and relevance propagation
- ``stats`` / ``impute``: ROC/PR/DeLong estimators, PMM imputation, pooling
- ``synth``: deterministic synthetic corpus generator
- ``config`` / ``cli``: pipeline configuration and command-line interface
"""

__version__ = "0.1.0"
