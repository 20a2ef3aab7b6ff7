"""B-spline dictionary fitting for MR fingerprinting."""

__version__ = "0.1.0"
