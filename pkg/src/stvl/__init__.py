"""stvl: grid-traffic forecasting toolkit.

Numeric token codec, grid tensor plumbing, frame imaging, dataset
generation, policy-gradient reward kernels, metrics, and baselines,
wired together by a small CLI.
"""

__version__ = "0.1.0"
