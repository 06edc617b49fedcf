"""Short-answer scoring pipeline: features, training, tuning, stacking, evaluation."""

__version__ = "0.1.0"
