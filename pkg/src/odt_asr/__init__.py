"""Resource-aware on-device ASR personalisation at desk scale."""

__version__ = "0.1.0"
