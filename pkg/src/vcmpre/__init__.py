"""Rate-accuracy video preprocessing testbed.

A neural preprocessor is trained against a differentiable codec surrogate so
that videos stay cheap to compress *and* easy for a frozen downstream
classifier to analyze.  Evaluation runs the preprocessed clips through a real
encoder (or the surrogate) and summarizes the rate-accuracy trade-off as
BD-rate deltas against the unprocessed anchor.
"""

__version__ = "0.1.0"
