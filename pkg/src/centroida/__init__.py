"""Class-balanced resampling and centroid alignment for domain adaptation under label shift."""

__version__ = "0.1.0"
