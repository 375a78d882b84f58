"""Text-aware image compression: a learned text-quality assessor steers a
quality-map-conditioned codec."""

__version__ = "0.1.0"
