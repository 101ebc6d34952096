"""multicue: multimodal communication-cue engine for adaptive XR training."""

__version__ = "0.1.0"
