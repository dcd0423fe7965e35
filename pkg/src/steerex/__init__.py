"""steerex: steerable multichannel target speaker extraction.

Simulates reverberant multi-speaker scenes over a small microphone array,
trains a direction-conditioned adversarial extraction network (optionally
fed with frozen features from a discriminative spatial filter), and
evaluates signal quality and spatial selectivity.
"""

__version__ = "0.1.0"

from steerex.errors import ConfigError, TrainingFault

__all__ = ["ConfigError", "TrainingFault", "__version__"]
