"""tasteeg: taste-EEG recognition pipeline.

Data augmentation by temporal/spatial block reconstruction, a
temporal-spatial CNN with multi-view channel attention, FIR preprocessing,
and the training/ablation protocol, all on a self-contained float64
autodiff engine with compiled conv/pool kernels.
"""

__version__ = "0.1.0"
