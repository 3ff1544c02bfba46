"""ECG heartbeat augmentation with Wasserstein GANs and DTW screening."""

__version__ = "0.1.0"

CLASSES = ("P", "A", "L", "N", "R", "f", "j")
MINOR_CLASSES = ("f", "j")
BEAT_LENGTH = 256
