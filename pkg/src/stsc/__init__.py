"""Spatio-temporal traffic speed forecasting toolkit.

Pipeline stages: ingest and clean loop-detector speed records, pick
spatio-temporal neighbors per target sensor, assemble image-like training
samples, pre-train two convolutional auto-encoders, fine-tune the
cross-connected predictor, then evaluate against baselines with
rank-based significance tests.
"""

__version__ = "0.1.0"
